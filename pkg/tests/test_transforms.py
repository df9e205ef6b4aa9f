import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from osibench.engine import ScoreRecord, ScoreTable, score_run
from osibench.store import EmbeddingStore
from osibench.synth import SynthConfig, generate
from osibench.transforms import (
    CohortSet,
    CohortStats,
    asnorm,
    cohort_stats,
    fuse,
    fuse_run,
    normalize_run,
)
from osibench.watchlist import INSET, OOS, build_kfold, make_trials, select_enrollment
from oracles import brute_max, brute_topk_stats, py_cosine


def cosine_store(values, prefix="c"):
    """Unit vectors whose cosine with [1, 0] is each given value."""
    vecs = [[v, np.sqrt(1 - v * v)] for v in values]
    return EmbeddingStore([f"{prefix}{i}" for i in range(len(values))],
                          [f"{prefix}{i}r" for i in range(len(values))], vecs)


def ref_store():
    return EmbeddingStore(["x"], ["x1"], [[1.0, 0.0]])


def test_cohort_stats_example():
    stats = cohort_stats(ref_store()["x1"], CohortSet(cosine_store([0.5, 0.3, 0.1]), 2))
    assert stats.mean == pytest.approx(0.4, abs=1e-15)
    assert stats.stddev == pytest.approx(0.1, abs=1e-15)


def test_cohort_stats_full_population():
    vals = [0.5, 0.3, 0.1, -0.2, 0.05]
    stats = cohort_stats(ref_store()["x1"], CohortSet(cosine_store(vals), len(vals)))
    assert stats.mean == pytest.approx(np.mean(vals), abs=1e-15)
    assert stats.stddev == pytest.approx(np.std(vals), abs=1e-15)


def test_cohort_degenerate_and_too_small():
    with pytest.raises(ValueError, match="zero variance"):
        cohort_stats(ref_store()["x1"], CohortSet(cosine_store([0.3, 0.3, 0.3]), 2))
    with pytest.raises(ValueError, match="exceeds"):
        CohortSet(cosine_store([0.3]), 2)


def test_asnorm_examples():
    assert asnorm(0.8, CohortStats(0.4, 0.1), CohortStats(0.5, 0.1)) == 3.5
    assert asnorm(0.3, CohortStats(0.3, 0.2), CohortStats(0.3, 0.7)) == 0.0
    st_ = CohortStats(0.1, 0.25)
    assert asnorm(0.6, st_, st_) == (0.6 - 0.1) / 0.25


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.01, 1), st.floats(0.01, 1))
def test_asnorm_increasing(a, b, se, st_):
    e, t = CohortStats(0.1, se), CohortStats(-0.2, st_)
    if a < b:
        assert asnorm(a, e, t) <= asnorm(b, e, t)


def brute_normalize(rec, plan, store, cohort_vecs, k):
    split = plan.splits[rec.split_id]
    test = store[rec.test_recording].vector.tolist()
    t_stats = CohortStats(*brute_topk_stats(test, cohort_vecs, k))
    normed = {}
    for spk, r in split.enrollment.items():
        e = store[r].vector.tolist()
        normed[spk] = asnorm(py_cosine(test, e), CohortStats(*brute_topk_stats(e, cohort_vecs, k)), t_stats)
    spk = min(normed, key=lambda s: (-normed[s], s))
    return normed[spk], spk


@pytest.mark.parametrize("W,k", [(1, 5), (2, 10), (5, 30)])
def test_normalize_run_brute_force(small_store, cohort_store, W, k):
    plan = select_enrollment(build_kfold(small_store.speakers, W, 4), small_store, 4)
    trials = make_trials(plan, small_store, 40, 4)
    raw = score_run(plan, trials, small_store)
    out = normalize_run(raw, plan, small_store, CohortSet(cohort_store, k))
    cohort_vecs = [v.tolist() for v in cohort_store.unit]
    assert np.array_equal(out.raw_score, raw.raw_score)
    for rec in out:
        value, spk = brute_normalize(rec, plan, small_store, cohort_vecs, k)
        assert abs(rec.transformed_score - value) <= 1e-12
        assert rec.best_speaker == spk


def test_normalize_singleton_watchlist(small_store, cohort_store):
    plan = select_enrollment(build_kfold(small_store.speakers, 1, 0), small_store, 0)
    trials = make_trials(plan, small_store, 20, 0)
    raw = score_run(plan, trials, small_store)
    cohort = CohortSet(cohort_store, 7)
    out = normalize_run(raw, plan, small_store, cohort)
    for r, n in zip(raw, out):
        enr = small_store[plan.splits[r.split_id].enrollment[r.best_speaker]]
        expect = asnorm(r.raw_score, cohort_stats(enr, cohort), cohort_stats(small_store[r.test_recording], cohort))
        assert n.transformed_score == pytest.approx(expect, abs=1e-12)
        assert n.best_speaker == r.best_speaker


def test_normalize_threads_identical(small_store, cohort_store):
    plan = select_enrollment(build_kfold(small_store.speakers, 5, 0), small_store, 0)
    raw = score_run(plan, make_trials(plan, small_store), small_store)
    cohort = CohortSet(cohort_store, 10)
    assert normalize_run(raw, plan, small_store, cohort, 1) == normalize_run(raw, plan, small_store, cohort, 4)


def test_normalize_rejects_shared_cohort(small_store):
    plan = select_enrollment(build_kfold(small_store.speakers, 5, 0), small_store, 0)
    raw = score_run(plan, make_trials(plan, small_store, 5, 0), small_store)
    with pytest.raises(ValueError, match="shares speakers"):
        normalize_run(raw, plan, small_store, CohortSet(small_store, 5))


def table(values, transformed=None):
    n = len(values)
    return ScoreTable([0] * n, [f"t{i}" for i in range(n)], ["A"] * n, values, [i % 2 == 0 for i in range(n)], transformed)


def test_fuse_examples():
    assert fuse([table([0.4]), table([0.6])]).raw_score.tolist() == [0.5]
    assert fuse([table([0.1]), table([0.2]), table([0.6])]).raw_score[0] == pytest.approx(0.3, abs=1e-15)
    t = table([0.1, 0.7, -0.3], [1.0, 2.0, 3.0])
    assert fuse([t, t, t]) == t
    assert fuse([t]) == t


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=20), st.integers(1, 7))
def test_fuse_copies_is_identity(values, m):
    t = table(values)
    assert fuse([t] * m) == t


def test_fuse_misalignment():
    a = table([0.1, 0.2, 0.3])
    b = ScoreTable([0, 0, 0], ["t0", "t1", "zz"], ["A"] * 3, [0.1, 0.2, 0.3], [True, False, True])
    with pytest.raises(ValueError, match="trial 2"):
        fuse([a, b])
    with pytest.raises(ValueError, match="trial 2"):
        fuse([a, table([0.1, 0.2])])


def test_fuse_run_matches_brute_force():
    cfg = dict(n_speakers=12, recordings_per_speaker=3, dim=8, within_spread=0.4, seed=5)
    s0, s1 = generate(SynthConfig(**cfg, system=0)), generate(SynthConfig(**cfg, system=1))
    plan = select_enrollment(build_kfold(s0.speakers, 3, 0), s0, 0)
    trials = make_trials(plan, s0)
    out = fuse_run(plan, trials, [s0, s1])
    for rec in out:
        split = plan.splits[rec.split_id]
        fused = {}
        for spk, r in split.enrollment.items():
            a = py_cosine(s0[rec.test_recording].vector.tolist(), s0[r].vector.tolist())
            b = py_cosine(s1[rec.test_recording].vector.tolist(), s1[r].vector.tolist())
            fused[spk] = a if a == b else (a + b) / 2
        best = min(fused, key=lambda s: (-fused[s], s))
        assert rec.best_speaker == best
        assert rec.raw_score == fused[best]
    assert fuse_run(plan, trials, [s0, s0]) == score_run(plan, trials, s0)
