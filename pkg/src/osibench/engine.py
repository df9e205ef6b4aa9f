"""Max-score open-set detection: score a test against every enrolled speaker,
keep the maximum and the speaker attaining it, compare with a threshold."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from osibench import kernels
from osibench.store import EmbeddingRecord, EmbeddingStore
from osibench.watchlist import INSET, OOS, SplitPlan, Trials, WatchlistSplit

CHUNK = 2048


class ScoringError(ValueError):
    def __init__(self, message, trial_index=None):
        if trial_index is not None:
            message = f"trial {trial_index}: {message}"
        super().__init__(message)
        self.trial_index = trial_index


@dataclass(frozen=True)
class ScoreRecord:
    split_id: int
    test_recording: str
    best_speaker: str
    raw_score: float
    label: str
    transformed_score: Optional[float] = None

    @property
    def score(self):
        """The score used for decisions: transformed if present, raw otherwise."""
        return self.raw_score if self.transformed_score is None else self.transformed_score


class ScoreTable:
    """Columnar sequence of ScoreRecords; NaN in ``transformed`` means absent."""

    def __init__(self, split_id, test_recording, best_speaker, raw_score, is_inset, transformed=None):
        self.split_id = np.asarray(split_id, dtype=np.int64)
        self.test_recording = tuple(test_recording)
        self.best_speaker = tuple(best_speaker)
        self.raw_score = np.asarray(raw_score, dtype=np.float64)
        self.is_inset = np.asarray(is_inset, dtype=bool)
        n = len(self.test_recording)
        self.transformed = (
            np.full(n, np.nan) if transformed is None else np.asarray(transformed, dtype=np.float64)
        )
        lengths = {len(self.split_id), len(self.best_speaker), len(self.raw_score),
                   len(self.is_inset), len(self.transformed), n}
        if len(lengths) != 1:
            raise ValueError("score columns differ in length")

    @classmethod
    def from_records(cls, records: Iterable[ScoreRecord]):
        if isinstance(records, ScoreTable):
            return records
        records = list(records)
        return cls(
            [r.split_id for r in records],
            [r.test_recording for r in records],
            [r.best_speaker for r in records],
            [r.raw_score for r in records],
            [r.label == INSET for r in records],
            [np.nan if r.transformed_score is None else r.transformed_score for r in records],
        )

    def __len__(self):
        return len(self.test_recording)

    def __getitem__(self, i):
        t = self.transformed[i]
        return ScoreRecord(
            int(self.split_id[i]),
            self.test_recording[i],
            self.best_speaker[i],
            float(self.raw_score[i]),
            INSET if self.is_inset[i] else OOS,
            None if math.isnan(t) else float(t),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, ScoreTable):
            return NotImplemented
        return (
            np.array_equal(self.split_id, other.split_id)
            and self.test_recording == other.test_recording
            and self.best_speaker == other.best_speaker
            and np.array_equal(self.raw_score, other.raw_score)
            and np.array_equal(self.is_inset, other.is_inset)
            and np.array_equal(self.transformed, other.transformed, equal_nan=True)
        )

    __hash__ = None

    @property
    def has_transformed(self):
        return bool(len(self)) and not np.isnan(self.transformed).any()

    def trials(self) -> Trials:
        return Trials(self.split_id, self.test_recording, self.is_inset)

    def with_transformed(self, transformed, best_speaker=None):
        return ScoreTable(
            self.split_id,
            self.test_recording,
            self.best_speaker if best_speaker is None else best_speaker,
            self.raw_score,
            self.is_inset,
            transformed,
        )


# -- per-trial operations -------------------------------------------------------------


def enrollment_matrix(split: WatchlistSplit, store: EmbeddingStore):
    """(speakers, W x d unit vectors) with speakers in lexicographic order."""
    speakers = split.inset
    try:
        idx = [store.index_of(split.enrollment[s]) for s in speakers]
    except KeyError as exc:
        raise ScoringError(f"split {split.split_id}: missing enrollment embedding ({exc})") from None
    if not idx:
        raise ScoringError(f"split {split.split_id}: empty watchlist")
    return speakers, np.ascontiguousarray(store.unit[idx])


def _clamped_max(tests, enroll):
    best, arg = kernels.score_max(tests, enroll)
    off = (best > 1.0) | (best < -1.0)
    if off.any():
        # cosine is clamped to [-1, 1] before the max so ties resolve the same way
        b2, a2 = kernels.row_max_argmax(np.clip(kernels.dot_block(tests[off], enroll), -1.0, 1.0))
        best[off], arg[off] = b2, a2
    return best, arg


def score_block(split: WatchlistSplit, tests: np.ndarray, store: EmbeddingStore):
    """Full per-speaker cosine matrix (n x W) for test unit vectors against a split."""
    speakers, enroll = enrollment_matrix(split, store)
    return speakers, np.clip(kernels.dot_block(tests, enroll), -1.0, 1.0)


def score_trial(split: WatchlistSplit, test: EmbeddingRecord, store: EmbeddingStore) -> ScoreRecord:
    speakers, enroll = enrollment_matrix(split, store)
    if test.dimension != enroll.shape[1]:
        raise ScoringError(f"dimension mismatch: {test.dimension} vs {enroll.shape[1]}")
    best, arg = _clamped_max(test.vector[None, :], enroll)
    label = INSET if test.speaker_id in set(split.inset) else OOS
    return ScoreRecord(split.split_id, test.recording_id, speakers[arg[0]], float(best[0]), label)


def detect(record: ScoreRecord, theta: float) -> str:
    """In-set iff the decision score strictly exceeds theta."""
    return INSET if record.score > theta else OOS


def identify(record: ScoreRecord) -> str:
    return record.best_speaker


# -- batch driver --------------------------------------------------------------------


def split_segments(split_ids: np.ndarray):
    """Yield (split_id, positions) for each split, positions in input order."""
    order = np.argsort(split_ids, kind="stable")
    sorted_ids = split_ids[order]
    bounds = np.flatnonzero(np.diff(sorted_ids)) + 1
    for seg in np.split(order, bounds):
        if len(seg):
            yield int(split_ids[seg[0]]), seg


def resolve_trials(plan: SplitPlan, trials: Trials, store: EmbeddingStore):
    rec_idx = np.empty(len(trials), dtype=np.int64)
    for i, rec in enumerate(trials.test_recording):
        try:
            rec_idx[i] = store.index_of(rec)
        except KeyError:
            raise ScoringError(f"unknown test recording {rec!r}", i) from None
    bad = (trials.split_id < 0) | (trials.split_id >= len(plan.splits))
    if bad.any():
        i = int(np.argmax(bad))
        raise ScoringError(f"unknown split_id {int(trials.split_id[i])}", i)
    return rec_idx


def map_chunks(fn, segments, threads):
    """Run ``fn(split_id, positions)`` over chunked segments, results in task order."""
    tasks = [(sid, pos[i : i + CHUNK]) for sid, pos in segments for i in range(0, len(pos), CHUNK)]
    if threads <= 1 or len(tasks) <= 1:
        return [(pos, fn(sid, pos)) for sid, pos in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = pool.map(lambda t: fn(*t), tasks)
        return [(t[1], r) for t, r in zip(tasks, results)]


def score_run(plan: SplitPlan, trials: Trials, store: EmbeddingStore, threads: int = 1) -> ScoreTable:
    """Score every trial; output order equals trial order for any thread count."""
    if isinstance(trials, list):
        trials = Trials.from_list(trials)
    rec_idx = resolve_trials(plan, trials, store)
    n = len(trials)
    raw = np.empty(n, dtype=np.float64)
    best_names = [None] * n
    segments = list(split_segments(trials.split_id))
    enroll = {}
    for sid, pos in segments:
        try:
            enroll[sid] = enrollment_matrix(plan.splits[sid], store)
        except ScoringError as exc:
            raise ScoringError(str(exc), int(pos[0])) from None

    def work(sid, pos):
        return _clamped_max(store.unit[rec_idx[pos]], enroll[sid][1])

    for pos, (best, arg) in map_chunks(work, segments, threads):
        raw[pos] = best
        speakers = enroll[int(trials.split_id[pos[0]])][0]
        for p, a in zip(pos.tolist(), arg.tolist()):
            best_names[p] = speakers[a]
    return ScoreTable(trials.split_id, trials.test_recording, best_names, raw, trials.is_inset)


# -- score file ----------------------------------------------------------------------

SCORE_COLUMNS = ["split_id", "test_recording", "best_speaker", "raw_score", "label"]


def _fmt(x):
    return format(float(x), ".17g")


def save_scores(table: ScoreTable, path):
    with_t = table.has_transformed
    cols = SCORE_COLUMNS + (["transformed_score"] if with_t else [])
    lines = ["\t".join(cols)]
    for i in range(len(table)):
        rec, spk = table.test_recording[i], table.best_speaker[i]
        for text in (rec, spk):
            if "\t" in text or "\n" in text:
                raise ValueError(f"identifier {text!r} contains a tab or newline")
        row = [str(int(table.split_id[i])), rec, spk, _fmt(table.raw_score[i]),
               INSET if table.is_inset[i] else OOS]
        if with_t:
            row.append(_fmt(table.transformed[i]))
        lines.append("\t".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_scores(path) -> ScoreTable:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header not in (SCORE_COLUMNS, SCORE_COLUMNS + ["transformed_score"]):
            raise ValueError(f"unexpected score header {header}")
        with_t = len(header) == 6
        sids, recs, spks, raws, labs, trans = [], [], [], [], [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != len(header) or parts[4] not in (INSET, OOS):
                raise ValueError(f"line {lineno}: malformed score row")
            sids.append(int(parts[0]))
            recs.append(parts[1])
            spks.append(parts[2])
            raws.append(float(parts[3]))
            labs.append(parts[4] == INSET)
            trans.append(float(parts[5]) if with_t else np.nan)
    return ScoreTable(sids, recs, spks, raws, labs, trans)
