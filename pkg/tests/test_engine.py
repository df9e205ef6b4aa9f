import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from osibench.engine import (
    ScoreRecord,
    ScoreTable,
    ScoringError,
    detect,
    identify,
    load_scores,
    save_scores,
    score_block,
    score_run,
    score_trial,
)
from osibench.store import EmbeddingStore
from osibench.watchlist import (
    INSET,
    OOS,
    SplitPlan,
    Trials,
    WatchlistSplit,
    build_kfold,
    make_trials,
    select_enrollment,
)
from oracles import brute_max


def store_from(vectors):
    """{recording: (speaker, vector)} -> store."""
    recs = list(vectors)
    return EmbeddingStore([vectors[r][0] for r in recs], recs, [vectors[r][1] for r in recs])


def one_split(store, enrollment):
    inset = tuple(sorted(enrollment))
    oos = tuple(s for s in store.speakers if s not in enrollment)
    split = WatchlistSplit(0, inset, oos, dict(enrollment))
    return split, SplitPlan("kfold", len(inset), 0, tuple(store.speakers), (split,))


def angle(deg):
    r = np.deg2rad(deg)
    return [np.cos(r), np.sin(r)]


def test_best_of_three():
    # cosines against the test vector [1, 0] are 0.2, 0.5, 0.1
    store = store_from({
        "A1": ("A", [0.2, np.sqrt(1 - 0.04)]),
        "B1": ("B", [0.5, np.sqrt(1 - 0.25)]),
        "C1": ("C", [0.1, -np.sqrt(1 - 0.01)]),
        "T": ("X", [1.0, 0.0]),
    })
    split, _ = one_split(store, {"A": "A1", "B": "B1", "C": "C1"})
    rec = score_trial(split, store["T"], store)
    assert rec.best_speaker == "B" and identify(rec) == "B"
    assert rec.raw_score == pytest.approx(0.5, abs=1e-15)  # renormalization rounding
    assert rec.label == OOS


def test_tie_goes_to_smallest_id():
    store = store_from({"B1": ("B", [0.4, 0.6]), "A1": ("A", [0.4, -0.6]), "T": ("A", [1.0, 0.0])})
    split, _ = one_split(store, {"B": "B1", "A": "A1"})
    rec = score_trial(split, store["T"], store)
    assert rec.best_speaker == "A"
    assert rec.label == INSET


def test_singleton_watchlist():
    store = store_from({"A1": ("A", angle(60)), "T": ("Z", angle(0))})
    split, _ = one_split(store, {"A": "A1"})
    rec = score_trial(split, store["T"], store)
    assert rec.best_speaker == "A"
    assert rec.raw_score == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("s,theta,out", [(0.5, 0.4, INSET), (0.4, 0.4, OOS), (-1.0, 0.0, OOS)])
def test_detect(s, theta, out):
    assert detect(ScoreRecord(0, "t", "A", s, OOS), theta) == out


def test_detect_uses_transformed():
    rec = ScoreRecord(0, "t", "A", 0.1, OOS, transformed_score=2.0)
    assert detect(rec, 1.0) == INSET


def test_score_run_empty_and_order(small_store):
    plan = select_enrollment(build_kfold(small_store.speakers, 5, 0), small_store, 0)
    assert len(score_run(plan, Trials([], [], []), small_store)) == 0
    trials = make_trials(plan, small_store)
    pick = Trials([3, 0], [trials.test_recording[-1], trials.test_recording[0]], [False, False])
    out = score_run(plan, pick, small_store)
    assert out.test_recording == pick.test_recording
    assert out.split_id.tolist() == [3, 0]


def test_score_run_matches_brute_force(small_store):
    plan = select_enrollment(build_kfold(small_store.speakers, 4, 1), small_store, 1)
    trials = make_trials(plan, small_store, 150, 1)
    out = score_run(plan, trials, small_store)
    for rec in out:
        split = plan.splits[rec.split_id]
        enroll = {s: small_store[r].vector.tolist() for s, r in split.enrollment.items()}
        best, spk = brute_max(small_store[rec.test_recording].vector.tolist(), enroll)
        assert (rec.raw_score, rec.best_speaker) == (best, spk)


def test_score_run_threads_identical(small_store, tmp_path, monkeypatch):
    import osibench.engine as engine

    monkeypatch.setattr(engine, "CHUNK", 7)
    plan = select_enrollment(build_kfold(small_store.speakers, 5, 0), small_store, 0)
    trials = make_trials(plan, small_store)
    a = score_run(plan, trials, small_store, threads=1)
    b = score_run(plan, trials, small_store, threads=8)
    assert a == b
    save_scores(a, tmp_path / "a.tsv")
    save_scores(b, tmp_path / "b.tsv")
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_argmax_invariant_under_monotone_map(seed):
    rng = np.random.default_rng(seed)
    vecs = rng.standard_normal((9, 8))
    store = EmbeddingStore([f"s{i}" for i in range(6)] + ["t", "t", "t"], [f"r{i}" for i in range(9)], vecs)
    split, _ = one_split(store, {f"s{i}": f"r{i}" for i in range(6)})
    speakers, S = score_block(split, store.unit[6:], store)
    for f in (np.exp, np.arctan, lambda x: x ** 3 + 2 * x):
        assert np.array_equal(np.argmax(f(S), axis=1), np.argmax(S, axis=1))
    for i in range(3):
        rec = score_trial(split, store[f"r{6 + i}"], store)
        assert rec.best_speaker == speakers[int(np.argmax(np.exp(S[i])))]


def test_nested_watchlists_never_lower_score(small_store):
    order = list(small_store.speakers)
    enroll = {s: small_store.speaker_index[s][0] for s in order}
    tests = [small_store.speaker_index[s][1] for s in order]
    prev = np.full(len(tests), -np.inf)
    for W in range(1, len(order) + 1):
        split = WatchlistSplit(0, tuple(sorted(order[:W])), tuple(order[W:]), {s: enroll[s] for s in order[:W]})
        plan = SplitPlan("kfold", W, 0, tuple(order), (split,))
        scores = score_run(plan, Trials([0] * len(tests), tests, [False] * len(tests)), small_store).raw_score
        assert (scores >= prev).all()
        prev = scores


def test_errors_name_trial(small_store):
    plan = select_enrollment(build_kfold(small_store.speakers, 5, 0), small_store, 0)
    with pytest.raises(ScoringError, match="trial 1"):
        score_run(plan, Trials([0, 0], [small_store.recording_ids[0], "nope"], [False, False]), small_store)
    with pytest.raises(ScoringError, match="trial 0"):
        score_run(plan, Trials([99], [small_store.recording_ids[0]], [False]), small_store)


def test_dimension_mismatch():
    store = store_from({"A1": ("A", [1.0, 0.0])})
    other = EmbeddingStore(["Z"], ["T"], [[1.0, 0.0, 0.0]])
    split, _ = one_split(store, {"A": "A1"})
    with pytest.raises(ScoringError, match="dimension"):
        score_trial(split, other["T"], store)


def test_score_file_roundtrip(tmp_path, small_store):
    plan = select_enrollment(build_kfold(small_store.speakers, 5, 0), small_store, 0)
    table = score_run(plan, make_trials(plan, small_store), small_store)
    save_scores(table, tmp_path / "s.tsv")
    assert load_scores(tmp_path / "s.tsv") == table
    t2 = table.with_transformed(table.raw_score * 3.0)
    save_scores(t2, tmp_path / "t.tsv")
    assert load_scores(tmp_path / "t.tsv") == t2
    assert "transformed_score" in (tmp_path / "t.tsv").read_text().splitlines()[0]
    assert ScoreTable.from_records(list(t2)) == t2
