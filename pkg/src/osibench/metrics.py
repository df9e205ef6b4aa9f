"""Detection metrics over labeled max scores.

Conventions match the strict-greater detection rule: at threshold t a trial is
accepted iff its score > t, so FAR(t) = #{nontarget > t} / Nn and
FRR(t) = #{target <= t} / Nt. The sweep visits t = -inf and every distinct
score, which is every distinct operating point.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from osibench import kernels
from osibench.engine import ScoreTable

DEFAULT_FAR = 0.005
DEFAULT_FRR = 0.05


@dataclass(frozen=True)
class ScorePartition:
    target_scores: np.ndarray
    nontarget_scores: np.ndarray

    def __post_init__(self):
        for arr in (self.target_scores, self.nontarget_scores):
            if len(arr) == 0:
                raise ValueError("need at least one target and one nontarget score")
            if np.isnan(arr).any():
                raise ValueError("scores contain NaN")
            if (np.diff(arr) < 0).any():
                raise ValueError("partition scores must be sorted ascending")

    @classmethod
    def from_scores(cls, targets, nontargets):
        return cls(np.sort(np.asarray(targets, dtype=np.float64)),
                   np.sort(np.asarray(nontargets, dtype=np.float64)))


def partition(records, use_transformed: bool = False) -> ScorePartition:
    table = ScoreTable.from_records(records)
    if not len(table):
        raise ValueError("no score records; no rates computable")
    if use_transformed:
        missing = np.isnan(table.transformed)
        if missing.any():
            i = int(np.argmax(missing))
            raise ValueError(
                f"record {i} ({table.test_recording[i]!r}, split {int(table.split_id[i])}) "
                "has no transformed_score"
            )
        scores = table.transformed
    else:
        scores = table.raw_score
    return ScorePartition.from_scores(scores[table.is_inset], scores[~table.is_inset])


@dataclass(frozen=True)
class Sweep:
    thresholds: np.ndarray  # first entry is -inf
    far: np.ndarray
    frr: np.ndarray


def sweep(p: ScorePartition) -> Sweep:
    thr, tle, ngt = kernels.sweep_counts(p.target_scores, p.nontarget_scores)
    nt, nn = len(p.target_scores), len(p.nontarget_scores)
    return Sweep(
        np.concatenate([[-np.inf], thr]),
        np.concatenate([[1.0], ngt / nn]),
        np.concatenate([[0.0], tle / nt]),
    )


def eer_from_rates(far, frr):
    """Crossing of FAR and FRR, linearly interpolated between bracketing points."""
    d = far - frr
    j = int(np.argmax(d <= 0))
    if d[j] == 0:
        return float(far[j])
    alpha = d[j - 1] / (d[j - 1] - d[j])
    return float(far[j - 1] + alpha * (far[j] - far[j - 1]))


def eer(p: ScorePartition) -> float:
    s = sweep(p)
    return eer_from_rates(s.far, s.frr)


def rate_at(p: ScorePartition, fixed: str, level: float) -> float:
    """The other error rate at the first operating point where ``fixed`` reaches ``level``.

    FRR fixed: smallest threshold with FRR >= level, report FAR there.
    FAR fixed: largest threshold with FAR >= level, report FRR there.
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    s = sweep(p)
    if fixed == "frr":
        return float(s.far[int(np.argmax(s.frr >= level))])
    if fixed == "far":
        j = len(s.far) - 1 - int(np.argmax(s.far[::-1] >= level))
        return float(s.frr[j])
    raise ValueError(f"fixed must be 'far' or 'frr', got {fixed!r}")


def det_curve(p: ScorePartition, max_points: Optional[int] = None):
    """(far, frr) for every operating point, in increasing-FRR order.

    With ``max_points`` the curve is thinned to evenly spaced sweep positions,
    always keeping both endpoints.
    """
    s = sweep(p)
    idx = np.arange(len(s.far))
    if max_points is not None:
        if max_points < 2:
            raise ValueError("max_points must be at least 2")
        if len(idx) > max_points:
            idx = np.unique(np.round(np.linspace(0, len(s.far) - 1, max_points)).astype(np.int64))
    return [(float(s.far[i]), float(s.frr[i])) for i in idx]


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    underflow: int
    overflow: int


def histogram(scores, bins: int, range: tuple) -> Histogram:
    """Equal-width bins, each [lo, hi) except the last, which also takes ``hi``."""
    lo, hi = float(range[0]), float(range[1])
    if bins < 1:
        raise ValueError("bins must be at least 1")
    if not lo < hi:
        raise ValueError(f"invalid histogram range ({lo}, {hi})")
    x = np.asarray(scores, dtype=np.float64).reshape(-1)
    if np.isnan(x).any():
        raise ValueError("scores contain NaN")
    edges = np.linspace(lo, hi, bins + 1)
    under = x < lo
    over = x > hi
    inside = x[~under & ~over]
    idx = np.minimum(np.searchsorted(edges, inside, side="right") - 1, bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(np.int64)
    return Histogram(edges, counts, int(under.sum()), int(over.sum()))


# -- report ------------------------------------------------------------------------------


@dataclass
class OperatingPointReport:
    eer: float
    frr_at_far: dict
    far_at_frr: dict
    n_target: int
    n_nontarget: int
    det_points: list = field(default_factory=list, repr=False)

    def to_json(self) -> str:
        return json.dumps(
            {
                "eer": self.eer,
                "frr_at_far": {str(k): v for k, v in self.frr_at_far.items()},
                "far_at_frr": {str(k): v for k, v in self.far_at_frr.items()},
                "n_target": self.n_target,
                "n_nontarget": self.n_nontarget,
            },
            indent=2,
        ) + "\n"


def evaluate(
    p: ScorePartition,
    far_levels: Sequence[float] = (DEFAULT_FAR,),
    frr_levels: Sequence[float] = (DEFAULT_FRR,),
    det_max_points: Optional[int] = None,
) -> OperatingPointReport:
    return OperatingPointReport(
        eer=eer(p),
        frr_at_far={lvl: rate_at(p, "far", lvl) for lvl in far_levels},
        far_at_frr={lvl: rate_at(p, "frr", lvl) for lvl in frr_levels},
        n_target=len(p.target_scores),
        n_nontarget=len(p.nontarget_scores),
        det_points=det_curve(p, det_max_points),
    )


def _fmt(x):
    return format(float(x), ".17g")


def write_det_csv(points, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["far", "frr"])
        for far, frr in points:
            w.writerow([_fmt(far), _fmt(frr)])


def write_histogram_csv(h: Histogram, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        w.writerow(["-inf", _fmt(h.edges[0]), h.underflow])
        for i, c in enumerate(h.counts.tolist()):
            w.writerow([_fmt(h.edges[i]), _fmt(h.edges[i + 1]), c])
        w.writerow([_fmt(h.edges[-1]), "inf", h.overflow])
