"""Adaptive score normalization against a top-k impostor cohort, and
unweighted score fusion across systems."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from osibench import kernels
from osibench.engine import (
    CHUNK,
    ScoreTable,
    ScoringError,
    resolve_trials,
    enrollment_matrix,
    map_chunks,
    split_segments,
)
from osibench.store import EmbeddingRecord, EmbeddingStore
from osibench.watchlist import SplitPlan, Trials

DEFAULT_TOPK = 1000


class CohortSet:
    """Held-out impostor embeddings plus the top-k size used for AS-Norm."""

    def __init__(self, store: EmbeddingStore, k: int = DEFAULT_TOPK):
        if k < 1:
            raise ValueError("top-k must be positive")
        if k > len(store):
            raise ValueError(f"top-k {k} exceeds cohort size {len(store)}")
        self.store = store
        self.k = k

    def __len__(self):
        return len(self.store)

    def check_disjoint(self, speakers):
        shared = set(self.store.speakers).intersection(speakers)
        if shared:
            raise ValueError(f"cohort shares speakers with the evaluation: {sorted(shared)[:5]}")

    def scores(self, vectors):
        """Clamped cosine scores of unit ``vectors`` (n x d) against every cohort member."""
        return np.clip(kernels.dot_block(vectors, self.store.unit), -1.0, 1.0)


@dataclass(frozen=True)
class CohortStats:
    mean: float
    stddev: float

    def __post_init__(self):
        if not self.stddev > 0:
            raise ValueError("degenerate cohort: zero variance among top-k scores")


def _batched(vectors, fn):
    parts = [fn(vectors[i : i + CHUNK]) for i in range(0, len(vectors), CHUNK)]
    if not parts:
        return tuple(np.zeros(0) for _ in range(2))
    return tuple(np.concatenate(cols) for cols in zip(*parts))


def cohort_stats_batch(vectors: np.ndarray, cohort: CohortSet):
    """Top-k mean and population stddev for each row of ``vectors``."""
    mean, std = _batched(
        np.ascontiguousarray(vectors, dtype=np.float64),
        lambda v: kernels.topk_mean_std(cohort.scores(v), cohort.k),
    )
    if (std <= 0).any():
        raise ValueError("degenerate cohort: zero variance among top-k scores")
    return mean, std


def cohort_stats(reference: EmbeddingRecord, cohort: CohortSet) -> CohortStats:
    if reference.dimension != cohort.store.dimension:
        raise ValueError("dimension mismatch between reference and cohort")
    mean, std = kernels.topk_mean_std(cohort.scores(reference.vector[None, :]), cohort.k)
    return CohortStats(float(mean[0]), float(std[0]))


def asnorm(raw: float, enroll_stats: CohortStats, test_stats: CohortStats) -> float:
    return 0.5 * (
        (raw - enroll_stats.mean) / enroll_stats.stddev
        + (raw - test_stats.mean) / test_stats.stddev
    )


def _stats_by_recording(rec_indices, store, cohort):
    uniq = np.unique(rec_indices)
    mean, std = cohort_stats_batch(store.unit[uniq], cohort)
    return uniq, mean, std


def _lookup(uniq, values, idx):
    return values[np.searchsorted(uniq, idx)]


def normalize_run(
    records: ScoreTable,
    plan: SplitPlan,
    store: EmbeddingStore,
    cohort: CohortSet,
    threads: int = 1,
) -> ScoreTable:
    """AS-Norm every per-speaker score of each trial, then re-take the maximum.

    Enrollment-side statistics are computed once per enrollment recording and
    test-side statistics once per test recording, before any trial is touched.
    """
    records = ScoreTable.from_records(records)
    cohort.check_disjoint(store.speakers)
    trials = records.trials()
    rec_idx = resolve_trials(plan, trials, store)
    segments = list(split_segments(trials.split_id))

    enroll = {}
    enroll_rec = set()
    for sid, pos in segments:
        split = plan.splits[sid]
        speakers, mat = enrollment_matrix(split, store)
        idx = store.indices_of(split.enrollment[s] for s in speakers)
        enroll[sid] = (speakers, mat, idx)
        enroll_rec.update(idx.tolist())
    e_uniq, e_mean, e_std = _stats_by_recording(np.array(sorted(enroll_rec), dtype=np.int64), store, cohort)
    t_uniq, t_mean, t_std = _stats_by_recording(rec_idx, store, cohort)

    def work(sid, pos):
        speakers, mat, eidx = enroll[sid]
        s = np.clip(kernels.dot_block(store.unit[rec_idx[pos]], mat), -1.0, 1.0)
        me, se = _lookup(e_uniq, e_mean, eidx), _lookup(e_uniq, e_std, eidx)
        tidx = rec_idx[pos]
        mt, st = _lookup(t_uniq, t_mean, tidx), _lookup(t_uniq, t_std, tidx)
        normed = 0.5 * ((s - me[None, :]) / se[None, :] + (s - mt[:, None]) / st[:, None])
        return kernels.row_max_argmax(normed)

    n = len(records)
    out = np.empty(n, dtype=np.float64)
    names = list(records.best_speaker)
    for pos, (best, arg) in map_chunks(work, segments, threads):
        out[pos] = best
        speakers = enroll[int(trials.split_id[pos[0]])][0]
        for p, a in zip(pos.tolist(), arg.tolist()):
            names[p] = speakers[a]
    return records.with_transformed(out, names)


# -- fusion ------------------------------------------------------------------------


def _mean_exact_identity(stack):
    """Arithmetic mean over axis 0; rows where all systems agree return that value."""
    total = stack[0].copy()
    for s in stack[1:]:
        total += s
    mean = total / len(stack)
    same = np.all(stack == stack[0], axis=0)
    return np.where(same, stack[0], mean)


def fuse(score_sets: Sequence[ScoreTable]) -> ScoreTable:
    """Average the final max scores of several systems trial by trial.

    Only s* is available in a score table, so this is the s*-level fallback;
    ``fuse_run`` averages per-speaker scores before taking the maximum. The
    fused best_speaker is the first system's.
    """
    tables = [ScoreTable.from_records(s) for s in score_sets]
    if not tables:
        raise ValueError("nothing to fuse")
    ref = tables[0]
    for k, t in enumerate(tables[1:], start=1):
        n = min(len(ref), len(t))
        for i in range(n):
            if (
                ref.split_id[i] != t.split_id[i]
                or ref.test_recording[i] != t.test_recording[i]
                or ref.is_inset[i] != t.is_inset[i]
            ):
                raise ValueError(f"system {k} misaligned at trial {i}")
        if len(t) != len(ref):
            raise ValueError(f"system {k} misaligned at trial {n} (length {len(t)} vs {len(ref)})")
    raw = _mean_exact_identity(np.stack([t.raw_score for t in tables]))
    transformed = None
    if all(t.has_transformed for t in tables):
        transformed = _mean_exact_identity(np.stack([t.transformed for t in tables]))
    return ScoreTable(ref.split_id, ref.test_recording, ref.best_speaker, raw, ref.is_inset, transformed)


def fuse_run(
    plan: SplitPlan,
    trials: Trials,
    stores: Sequence[EmbeddingStore],
    threads: int = 1,
) -> ScoreTable:
    """Score-level fusion before the max: average each watchlist speaker's
    cosine across systems, then take the maximum over speakers."""
    if not stores:
        raise ValueError("nothing to fuse")
    rec_idx = [resolve_trials(plan, trials, st) for st in stores]
    segments = list(split_segments(trials.split_id))
    enroll = {}
    for sid, pos in segments:
        try:
            enroll[sid] = [enrollment_matrix(plan.splits[sid], st) for st in stores]
        except ScoringError as exc:
            raise ScoringError(str(exc), int(pos[0])) from None

    def work(sid, pos):
        blocks = [
            np.clip(kernels.dot_block(st.unit[ri[pos]], mats[1]), -1.0, 1.0)
            for st, ri, mats in zip(stores, rec_idx, enroll[sid])
        ]
        return kernels.row_max_argmax(_mean_exact_identity(np.stack(blocks)))

    n = len(trials)
    raw = np.empty(n, dtype=np.float64)
    names = [None] * n
    for pos, (best, arg) in map_chunks(work, segments, threads):
        raw[pos] = best
        speakers = enroll[int(trials.split_id[pos[0]])][0][0]
        for p, a in zip(pos.tolist(), arg.tolist()):
            names[p] = speakers[a]
    return ScoreTable(trials.split_id, trials.test_recording, names, raw, trials.is_inset)
