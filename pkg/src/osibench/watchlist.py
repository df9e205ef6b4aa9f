"""Watchlist splits, enrollment selection and trial lists."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from osibench.rng import SplitMix64, derive_seed
from osibench.store import EmbeddingStore

INSET = "inset"
OOS = "oos"


@dataclass(frozen=True)
class WatchlistSplit:
    split_id: int
    inset: tuple  # sorted speaker ids
    oos: tuple  # population order
    enrollment: dict = field(default_factory=dict, compare=True)

    def __post_init__(self):
        if set(self.inset) & set(self.oos):
            raise ValueError(f"split {self.split_id}: in-set and OOS speakers overlap")


@dataclass(frozen=True)
class SplitPlan:
    mode: str
    watchlist_size: int
    seed: int
    population: tuple
    splits: tuple

    @property
    def has_enrollment(self):
        return all(len(s.enrollment) == len(s.inset) for s in self.splits)

    def split(self, split_id):
        if not 0 <= split_id < len(self.splits):
            raise KeyError(f"unknown split_id {split_id}")
        return self.splits[split_id]


def _check_population(population):
    population = tuple(population)
    if len(set(population)) != len(population):
        raise ValueError("population contains duplicate speaker ids")
    return population


def build_kfold(population: Sequence[str], W: int, seed: int) -> SplitPlan:
    """Shuffle once, then slice consecutive blocks of W speakers.

    The ``N mod W`` leftover speakers are in-set nowhere and stay OOS in every split.
    """
    population = _check_population(population)
    n = len(population)
    if W < 1:
        raise ValueError("watchlist size must be positive")
    if W > n:
        raise ValueError(f"watchlist size {W} exceeds population size {n}")
    order = SplitMix64(seed).shuffle(list(population))
    splits = []
    for i in range(n // W):
        block = set(order[i * W : (i + 1) * W])
        oos = tuple(s for s in population if s not in block)
        splits.append(WatchlistSplit(i, tuple(sorted(block)), oos))
    return SplitPlan("kfold", W, seed, population, tuple(splits))


def build_loso(population: Sequence[str], seed: int) -> SplitPlan:
    """One split per speaker: everyone else is in-set, that speaker is OOS."""
    population = _check_population(population)
    n = len(population)
    if n < 2:
        raise ValueError("leave-one-speaker-out needs at least 2 speakers")
    ordered = sorted(population)
    rank = {s: i for i, s in enumerate(ordered)}
    splits = []
    for i, left_out in enumerate(population):
        k = rank[left_out]
        splits.append(WatchlistSplit(i, tuple(ordered[:k] + ordered[k + 1 :]), (left_out,)))
    return SplitPlan("loso", n - 1, seed, population, tuple(splits))


def select_enrollment(plan: SplitPlan, store: EmbeddingStore, seed: int) -> SplitPlan:
    """Pick one enrollment recording per in-set speaker.

    The pick depends only on (seed, speaker_id), so a speaker keeps the same
    enrollment recording in every split.
    """
    chosen = {}
    for split in plan.splits:
        for spk in split.inset:
            if spk in chosen:
                continue
            recs = store.speaker_index.get(spk)
            if recs is None:
                raise ValueError(f"speaker {spk!r} not present in store")
            if len(recs) < 2:
                raise ValueError(
                    f"speaker {spk!r} has {len(recs)} recording(s); at least 2 are needed"
                )
            chosen[spk] = recs[SplitMix64(derive_seed(seed, spk)).below(len(recs))]
    splits = tuple(
        replace(s, enrollment={spk: chosen[spk] for spk in s.inset}) for s in plan.splits
    )
    return replace(plan, splits=splits)


# -- trials ----------------------------------------------------------------------


@dataclass(frozen=True)
class Trial:
    split_id: int
    test_recording: str
    label: str


class Trials:
    """Columnar trial list: split ids, test recording ids and in-set flags."""

    def __init__(self, split_id, test_recording, is_inset):
        self.split_id = np.asarray(split_id, dtype=np.int64)
        self.test_recording = tuple(test_recording)
        self.is_inset = np.asarray(is_inset, dtype=bool)
        if not (len(self.split_id) == len(self.test_recording) == len(self.is_inset)):
            raise ValueError("trial columns differ in length")

    @classmethod
    def from_list(cls, trials: Iterable[Trial]):
        trials = list(trials)
        for t in trials:
            if t.label not in (INSET, OOS):
                raise ValueError(f"bad label {t.label!r}")
        return cls(
            [t.split_id for t in trials],
            [t.test_recording for t in trials],
            [t.label == INSET for t in trials],
        )

    def __len__(self):
        return len(self.test_recording)

    def __getitem__(self, i):
        return Trial(int(self.split_id[i]), self.test_recording[i], INSET if self.is_inset[i] else OOS)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, Trials):
            return NotImplemented
        return (
            np.array_equal(self.split_id, other.split_id)
            and self.test_recording == other.test_recording
            and np.array_equal(self.is_inset, other.is_inset)
        )

    __hash__ = None

    def counts(self):
        n_in = int(self.is_inset.sum())
        return {INSET: n_in, OOS: len(self) - n_in}


def make_trials(
    plan: SplitPlan,
    store: EmbeddingStore,
    max_trials_per_label: Optional[int] = None,
    seed: int = 0,
) -> Trials:
    """Enumerate in-set and OOS trials for every split, optionally sub-sampled.

    In-set trials are the non-enrollment recordings of in-set speakers; OOS
    trials are all recordings of OOS speakers. Within a split, trials follow
    store order; splits are concatenated by split_id.
    """
    if not plan.has_enrollment:
        raise ValueError("plan has no enrollment; run select_enrollment first")
    code = {s: i for i, s in enumerate(store.speakers)}
    rec_codes = store.speaker_codes
    n_spk = len(store.speakers)

    split_cols, rec_cols, lab_cols = [], [], []
    for split in plan.splits:
        inset_mask = np.zeros(n_spk, dtype=bool)
        oos_mask = np.zeros(n_spk, dtype=bool)
        for s in split.inset:
            if s not in code:
                raise ValueError(f"speaker {s!r} not present in store")
            inset_mask[code[s]] = True
        for s in split.oos:
            if s in code:
                oos_mask[code[s]] = True
        is_in = inset_mask[rec_codes]
        is_in[store.indices_of(split.enrollment.values())] = False
        is_oos = oos_mask[rec_codes]
        idx = np.flatnonzero(is_in | is_oos)
        split_cols.append(np.full(len(idx), split.split_id, dtype=np.int64))
        rec_cols.append(idx)
        lab_cols.append(is_in[idx])

    split_id = np.concatenate(split_cols) if split_cols else np.zeros(0, np.int64)
    rec_idx = np.concatenate(rec_cols) if rec_cols else np.zeros(0, np.int64)
    labels = np.concatenate(lab_cols) if lab_cols else np.zeros(0, bool)

    if max_trials_per_label is not None:
        if max_trials_per_label < 0:
            raise ValueError("max_trials_per_label must be non-negative")
        keep = np.zeros(len(labels), dtype=bool)
        for name, flag in ((INSET, True), (OOS, False)):
            pos = np.flatnonzero(labels == flag)
            if len(pos) <= max_trials_per_label:
                keep[pos] = True
            else:
                rng = SplitMix64(derive_seed(seed, name))
                keep[pos[rng.sample_indices(len(pos), max_trials_per_label)]] = True
        split_id, rec_idx, labels = split_id[keep], rec_idx[keep], labels[keep]

    recs = store.recording_ids
    return Trials(split_id, [recs[i] for i in rec_idx], labels)


# -- file formats ------------------------------------------------------------------


def plan_to_json(plan: SplitPlan) -> str:
    obj = {
        "mode": plan.mode,
        "watchlist_size": plan.watchlist_size,
        "seed": plan.seed,
        "splits": [
            {"split_id": s.split_id, "inset": list(s.inset), "enrollment": dict(s.enrollment)}
            for s in plan.splits
        ],
    }
    return json.dumps(obj, separators=(",", ":")) + "\n"


def plan_from_json(text: str, population: Sequence[str]) -> SplitPlan:
    """Parse a plan; OOS sets are re-derived as ``population`` minus the in-set."""
    obj = json.loads(text)
    population = _check_population(population)
    splits = []
    for i, s in enumerate(obj["splits"]):
        if s["split_id"] != i:
            raise ValueError(f"split ids must be 0..n-1 in order; got {s['split_id']} at {i}")
        inset = tuple(sorted(s["inset"]))
        members = set(inset)
        unknown = members.difference(population)
        if unknown:
            raise ValueError(f"split {i}: in-set speakers outside population: {sorted(unknown)[:3]}")
        enrollment = {k: s["enrollment"][k] for k in inset if k in s.get("enrollment", {})}
        splits.append(
            WatchlistSplit(i, inset, tuple(p for p in population if p not in members), enrollment)
        )
    return SplitPlan(obj["mode"], int(obj["watchlist_size"]), int(obj["seed"]), population, tuple(splits))


def save_plan(plan: SplitPlan, path):
    Path(path).write_text(plan_to_json(plan), encoding="utf-8")


def load_plan(path, population: Sequence[str]) -> SplitPlan:
    return plan_from_json(Path(path).read_text(encoding="utf-8"), population)


def _check_field(text):
    if "\t" in text or "\n" in text:
        raise ValueError(f"identifier {text!r} contains a tab or newline")
    return text


def save_trials(trials: Trials, path):
    lines = ["split_id\ttest_recording\tlabel"]
    for sid, rec, flag in zip(trials.split_id.tolist(), trials.test_recording, trials.is_inset.tolist()):
        lines.append(f"{sid}\t{_check_field(rec)}\t{INSET if flag else OOS}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_trials(path) -> Trials:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["split_id", "test_recording", "label"]:
            raise ValueError(f"unexpected trial header {header}")
        sids, recs, labs = [], [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or parts[2] not in (INSET, OOS):
                raise ValueError(f"line {lineno}: malformed trial {line!r}")
            sids.append(int(parts[0]))
            recs.append(parts[1])
            labs.append(parts[2] == INSET)
    return Trials(sids, recs, labs)
