"""Time the compiled kernels against the numpy fallback on scoring-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from osibench import _pykernels

try:
    from osibench import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    tests = rng.standard_normal((4096, 128))
    enroll = rng.standard_normal((50, 128))
    cohort = rng.standard_normal((1000, 128))
    scores = rng.standard_normal((2048, 1000))
    targets = np.sort(rng.standard_normal(200_000) + 1)
    nontargets = np.sort(rng.standard_normal(1_000_000))
    return [
        ("score_max 4096x50x128", "score_max", (tests, enroll)),
        ("dot_block 4096x1000x128", "dot_block", (tests, cohort)),
        ("topk_mean_std 2048x1000 k=200", "topk_mean_std", (scores, 200)),
        ("sweep_counts 200k/1M", "sweep_counts", (targets, nontargets)),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = [("numpy", _pykernels)] + ([("cython", _kernels)] if _kernels else [])
    if _kernels is None:
        print("compiled kernels not built; timing the numpy fallback only")
    print(f"{'kernel':32s}" + "".join(f"{name:>12s}" for name, _ in backends) + "   identical")
    for label, fn, argv in cases(np.random.default_rng(0)):
        times, outs = [], []
        for _, mod in backends:
            f = getattr(mod, fn)
            outs.append(f(*argv))
            times.append(min(timeit.repeat(lambda: f(*argv), number=1, repeat=args.repeat)))
        same = all(
            all(np.array_equal(a, b) for a, b in zip(np.atleast_1d(o) if fn == "dot_block" else o,
                                                      np.atleast_1d(outs[0]) if fn == "dot_block" else outs[0]))
            for o in outs[1:]
        )
        print(f"{label:32s}" + "".join(f"{t * 1e3:10.1f}ms" for t in times) + f"   {same}")


if __name__ == "__main__":
    main()
