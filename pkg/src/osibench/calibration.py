"""Quality-measure score calibration.

A calibrated score is an affine function of the raw max score and a small
vector of per-trial quality measures, ``w0*s + sum(w_k*q_k) + b``, with the
weights fit by L2-regularized logistic regression on held-out trials.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from osibench import kernels
from osibench.engine import CHUNK, ScoreTable, resolve_trials
from osibench.store import EmbeddingRecord, EmbeddingStore
from osibench.transforms import CohortSet
from osibench.watchlist import SplitPlan

MAG_MAX = "mag_max"
MAG_MIN = "mag_min"
IMP_ENROLL = "imp_mean_enroll"
IMP_TEST = "imp_mean_test"
SNR_ENROLL = "snr_enroll"
SNR_TEST = "snr_test"
DURATION = "duration_min"

DEFAULT_MEASURES = (MAG_MAX, MAG_MIN, IMP_ENROLL, IMP_TEST, SNR_ENROLL, SNR_TEST)
ALL_MEASURES = DEFAULT_MEASURES + (DURATION,)
DEFAULT_L2 = 1e-4
MAX_ITER = 10_000
GRAD_TOL = 1e-8


class ConvergenceError(RuntimeError):
    pass


class MissingMetadata(ValueError):
    pass


@dataclass(frozen=True)
class QualityVector:
    names: tuple
    values: tuple

    def __post_init__(self):
        if len(self.names) != len(self.values):
            raise ValueError("quality names and values differ in length")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("quality measures must be finite")

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class CalibratorWeights:
    w0: float
    w: tuple
    b: float
    measure_names: tuple
    l2: float = DEFAULT_L2
    seed: int = 0
    iterations: int = 0
    loss_history: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if len(self.w) != len(self.measure_names):
            raise ValueError("weight and measure-name counts differ")

    @classmethod
    def identity(cls, measure_names: Sequence[str] = ()):
        return cls(1.0, (0.0,) * len(measure_names), 0.0, tuple(measure_names))

    def to_json(self) -> str:
        return json.dumps(
            {
                "w0": self.w0,
                "w": list(self.w),
                "b": self.b,
                "measure_names": list(self.measure_names),
                "l2": self.l2,
                "seed": self.seed,
                "iterations": self.iterations,
            },
            indent=2,
        ) + "\n"

    @classmethod
    def from_json(cls, text: str):
        obj = json.loads(text)
        unknown = set(obj["measure_names"]) - set(ALL_MEASURES)
        if unknown:
            raise ValueError(f"unknown quality measures {sorted(unknown)}")
        return cls(
            float(obj["w0"]),
            tuple(float(v) for v in obj["w"]),
            float(obj["b"]),
            tuple(obj["measure_names"]),
            float(obj.get("l2", DEFAULT_L2)),
            int(obj.get("seed", 0)),
            int(obj.get("iterations", 0)),
        )

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


# -- quality measures ---------------------------------------------------------------


def available_measures(store: EmbeddingStore, with_duration=False):
    """The default measure set minus families whose metadata the store lacks."""
    names = [MAG_MAX, MAG_MIN, IMP_ENROLL, IMP_TEST]
    if store.has_snr():
        names += [SNR_ENROLL, SNR_TEST]
    if with_duration and store.has_duration():
        names.append(DURATION)
    return tuple(names)


def _impostor_means(vectors, cohort: CohortSet):
    vectors = np.ascontiguousarray(vectors, dtype=np.float64)
    parts = [kernels.row_mean(cohort.scores(vectors[i : i + CHUNK])) for i in range(0, len(vectors), CHUNK)]
    return np.concatenate(parts) if parts else np.zeros(0)


def _require(values, name, side):
    bad = np.isnan(values)
    if bad.any():
        raise MissingMetadata(f"missing {name}({side}) required by the configured measures")
    return values


def _features(names, mag_e, mag_t, imp_e, imp_t, snr_e, snr_t, dur_e, dur_t):
    cols = []
    for name in names:
        if name == MAG_MAX:
            cols.append(np.maximum(mag_e, mag_t))
        elif name == MAG_MIN:
            cols.append(np.minimum(mag_e, mag_t))
        elif name == IMP_ENROLL:
            cols.append(imp_e())
        elif name == IMP_TEST:
            cols.append(imp_t())
        elif name == SNR_ENROLL:
            cols.append(_require(snr_e, "snr_db", "enroll"))
        elif name == SNR_TEST:
            cols.append(_require(snr_t, "snr_db", "test"))
        elif name == DURATION:
            cols.append(np.minimum(_require(dur_e, "duration_s", "enroll"), _require(dur_t, "duration_s", "test")))
        else:
            raise ValueError(f"unknown quality measure {name!r}")
    return cols


def quality_vector(
    enroll: EmbeddingRecord,
    test: EmbeddingRecord,
    cohort: CohortSet,
    measures: Sequence[str] = DEFAULT_MEASURES,
) -> QualityVector:
    """Quality measures of one (enrollment, test) pair.

    Impostor means average over the whole cohort, not its top-k.
    """
    def nan(v):
        return np.array([np.nan if v is None else v], dtype=np.float64)

    cols = _features(
        measures,
        np.array([enroll.raw_magnitude]),
        np.array([test.raw_magnitude]),
        lambda: _impostor_means(enroll.vector[None, :], cohort),
        lambda: _impostor_means(test.vector[None, :], cohort),
        nan(enroll.snr_db),
        nan(test.snr_db),
        nan(enroll.duration_s),
        nan(test.duration_s),
    )
    return QualityVector(tuple(measures), tuple(float(c[0]) for c in cols))


def quality_matrix(
    records: ScoreTable,
    plan: SplitPlan,
    store: EmbeddingStore,
    cohort: CohortSet,
    measures: Sequence[str] = DEFAULT_MEASURES,
) -> np.ndarray:
    """(n, K) quality measures, pairing each test with its best speaker's enrollment."""
    records = ScoreTable.from_records(records)
    t_idx = resolve_trials(plan, records.trials(), store)
    e_idx = np.empty(len(records), dtype=np.int64)
    for i, (sid, spk) in enumerate(zip(records.split_id.tolist(), records.best_speaker)):
        try:
            e_idx[i] = store.index_of(plan.splits[sid].enrollment[spk])
        except KeyError:
            raise ValueError(f"trial {i}: no enrollment for best speaker {spk!r} in split {sid}") from None

    def per_recording(idx):
        def compute():
            uniq, inv = np.unique(idx, return_inverse=True)
            return _impostor_means(store.unit[uniq], cohort)[inv]
        return compute

    cols = _features(
        measures,
        store.magnitude[e_idx],
        store.magnitude[t_idx],
        per_recording(e_idx),
        per_recording(t_idx),
        store.snr_db[e_idx],
        store.snr_db[t_idx],
        store.duration_s[e_idx],
        store.duration_s[t_idx],
    )
    return np.column_stack(cols) if cols else np.zeros((len(records), 0))


# -- apply ------------------------------------------------------------------------------


def calibrate_apply(s: float, qv: QualityVector, weights: CalibratorWeights) -> float:
    if tuple(qv.names) != tuple(weights.measure_names):
        raise ValueError(
            f"quality measures {list(qv.names)} do not match calibrator {list(weights.measure_names)}"
        )
    out = weights.w0 * s
    for wk, qk in zip(weights.w, qv.values):
        out += wk * qk
    return out + weights.b


def apply_matrix(scores: np.ndarray, quality: np.ndarray, weights: CalibratorWeights) -> np.ndarray:
    """Vectorized calibrate_apply with the same evaluation order."""
    scores = np.asarray(scores, dtype=np.float64)
    quality = np.asarray(quality, dtype=np.float64).reshape(len(scores), -1)
    if quality.shape[1] != len(weights.w):
        raise ValueError(f"expected {len(weights.w)} quality measures, got {quality.shape[1]}")
    out = weights.w0 * scores
    for k, wk in enumerate(weights.w):
        out = out + wk * quality[:, k]
    return out + weights.b


def calibrate_run(
    records: ScoreTable,
    plan: SplitPlan,
    store: EmbeddingStore,
    cohort: CohortSet,
    weights: CalibratorWeights,
) -> ScoreTable:
    records = ScoreTable.from_records(records)
    if not len(records):
        return records
    q = quality_matrix(records, plan, store, cohort, weights.measure_names)
    return records.with_transformed(apply_matrix(records.raw_score, q, weights))


# -- training ---------------------------------------------------------------------------


def objective(params, Z, y, l2):
    """Mean logistic loss plus ``l2 * ||v||^2`` and its gradient.

    ``params`` is ``[v..., c]``: weights on the columns of Z, then the bias.
    """
    v, c = params[:-1], params[-1]
    a = Z @ v + c
    loss = np.mean(np.logaddexp(0.0, a) - y * a) + l2 * float(v @ v)
    r = _sigmoid(a) - y
    grad = np.empty_like(params)
    grad[:-1] = Z.T @ r / len(y) + 2.0 * l2 * v
    grad[-1] = r.mean()
    return float(loss), grad


def _sigmoid(a):
    return np.exp(-np.logaddexp(0.0, -a))


def _hessian(params, Z, l2):
    a = Z @ params[:-1] + params[-1]
    p = _sigmoid(a)
    wgt = p * (1.0 - p)
    X = np.column_stack([Z, np.ones(len(Z))])
    H = (X * wgt[:, None]).T @ X / len(Z)
    H[np.arange(Z.shape[1]), np.arange(Z.shape[1])] += 2.0 * l2
    return H


def calibrate_train(
    scores,
    quality,
    labels,
    measure_names: Sequence[str] = (),
    l2: float = DEFAULT_L2,
    seed: int = 0,
    max_iter: int = MAX_ITER,
    tol: float = GRAD_TOL,
) -> CalibratorWeights:
    """Fit the calibrator by damped Newton iterations on standardized features.

    ``labels`` are 1 for in-set and 0 for OOS. Stops when the gradient
    max-norm falls below ``tol``; raises ConvergenceError otherwise.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    q = np.asarray(quality, dtype=np.float64).reshape(len(s), -1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if q.shape[1] != len(measure_names):
        raise ValueError(f"{q.shape[1]} quality columns but {len(measure_names)} measure names")
    if len(y) != len(s):
        raise ValueError("labels and scores differ in length")
    if l2 < 0:
        raise ValueError("l2 must be non-negative")
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise ValueError("labels must be 0 or 1")
    if len(np.unique(y)) < 2:
        raise ValueError("calibration needs both in-set and OOS trials")
    X = np.column_stack([s, q])
    if not np.isfinite(X).all():
        raise ValueError("non-finite calibration features")

    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0  # constant column: its standardized value is 0
    Z = (X - mu) / sd

    params = np.zeros(X.shape[1] + 1)
    prior = y.mean()
    params[-1] = math.log(prior / (1.0 - prior))
    loss, grad = objective(params, Z, y, l2)
    history = [loss]
    it = 0
    while np.max(np.abs(grad)) >= tol:
        if it >= max_iter:
            raise ConvergenceError(
                f"no convergence after {it} iterations; gradient max-norm {np.max(np.abs(grad)):.3e}"
            )
        H = _hessian(params, Z, l2)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = params - t * step
            new_loss, new_grad = objective(cand, Z, y, l2)
            if new_loss <= loss:
                break
            t *= 0.5
            if t < 1e-16:
                raise ConvergenceError(
                    f"line search stalled at iteration {it}; gradient max-norm {np.max(np.abs(grad)):.3e}"
                )
        assert new_loss <= loss, "objective increased"
        params, loss, grad = cand, new_loss, new_grad
        history.append(loss)
        it += 1

    v, c = params[:-1], params[-1]
    w_all = v / sd
    b = float(c - np.sum(v * mu / sd))
    return CalibratorWeights(
        w0=float(w_all[0]),
        w=tuple(float(x) for x in w_all[1:]),
        b=b,
        measure_names=tuple(measure_names),
        l2=float(l2),
        seed=int(seed),
        iterations=it,
        loss_history=tuple(history),
    )


def train_from_run(
    records: ScoreTable,
    plan: SplitPlan,
    store: EmbeddingStore,
    cohort: CohortSet,
    measures: Optional[Sequence[str]] = None,
    l2: float = DEFAULT_L2,
    seed: int = 0,
) -> CalibratorWeights:
    records = ScoreTable.from_records(records)
    measures = available_measures(store) if measures is None else tuple(measures)
    q = quality_matrix(records, plan, store, cohort, measures)
    return calibrate_train(records.raw_score, q, records.is_inset.astype(float), measures, l2, seed)
