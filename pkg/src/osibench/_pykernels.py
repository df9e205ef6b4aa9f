"""Pure numpy versions of the compiled kernels.

Reductions are written as explicit sequential accumulations (one vectorized
add per summand) so each output element sees exactly the same sequence of
roundings as the compiled loops.
"""
import numpy as np


def dot_block(tests, refs):
    tests = np.asarray(tests, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    if tests.shape[1] != refs.shape[1]:
        raise ValueError("dimension mismatch")
    n, w = tests.shape[0], refs.shape[0]
    refs_t = np.ascontiguousarray(refs.T)
    out = np.empty((n, w), dtype=np.float64)
    # row blocks keep the accumulator cache-resident; k still runs in order
    step = max(1, (1 << 16) // max(w, 1))
    for start in range(0, n, step):
        block_t = np.ascontiguousarray(tests[start : start + step].T)
        acc = np.zeros((block_t.shape[1], w), dtype=np.float64)
        tmp = np.empty_like(acc)
        for k in range(block_t.shape[0]):
            np.multiply(block_t[k][:, None], refs_t[k][None, :], out=tmp)
            acc += tmp
        out[start : start + step] = acc
    return out


def row_max_argmax(scores):
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[1] == 0:
        raise ValueError("empty score rows")
    # argmax returns the first occurrence, matching the strict-greater scan
    arg = np.argmax(scores, axis=1).astype(np.int64)
    return scores[np.arange(scores.shape[0]), arg], arg


def score_max(tests, refs):
    if len(refs) == 0:
        raise ValueError("empty reference set")
    return row_max_argmax(dot_block(tests, refs))


def topk_mean_std(scores, k):
    scores = np.asarray(scores, dtype=np.float64)
    if k < 1 or k > scores.shape[1]:
        raise ValueError("k out of range")
    top = np.sort(scores, axis=1)[:, ::-1][:, :k]
    # cumsum is a strictly sequential accumulation
    mean = np.cumsum(top, axis=1)[:, -1] / k
    dev = top - mean[:, None]
    std = np.sqrt(np.cumsum(dev * dev, axis=1)[:, -1] / k)
    return mean, std


def row_mean(scores):
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[1] == 0:
        raise ValueError("empty rows")
    return np.cumsum(scores, axis=1)[:, -1] / scores.shape[1]


def sweep_counts(targets, nontargets):
    targets = np.asarray(targets, dtype=np.float64)
    nontargets = np.asarray(nontargets, dtype=np.float64)
    thr = np.unique(np.concatenate([targets, nontargets]))
    tle = np.searchsorted(targets, thr, side="right").astype(np.int64)
    ngt = (len(nontargets) - np.searchsorted(nontargets, thr, side="right")).astype(np.int64)
    return thr, tle, ngt
