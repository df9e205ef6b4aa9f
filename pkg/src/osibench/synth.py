"""Synthetic speaker populations on the unit sphere.

Each speaker is a random unit centroid; each recording is
``normalize(centroid + eps * z)`` with isotropic Gaussian ``z``. A per-recording
latent noise level scales ``eps`` and drives the synthetic SNR and embedding
magnitude, so quality-based calibration has something to find.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from osibench.engine import score_run
from osibench.metrics import DEFAULT_FAR, DEFAULT_FRR, evaluate, partition
from osibench.rng import derive_seed
from osibench.store import EmbeddingStore
from osibench.watchlist import build_kfold, make_trials, select_enrollment


@dataclass(frozen=True)
class SynthConfig:
    n_speakers: int
    recordings_per_speaker: int = 4
    dim: int = 128
    within_spread: float = 0.1
    magnitude_model: tuple = (20.0, 3.0)  # (mean, spread)
    snr_model: tuple = (20.0, 6.0)  # (mean_db, spread_db)
    duration_to_spread: Optional[dict] = None  # duration_s -> multiplier on within_spread
    spread_variation: float = 0.0  # stddev of log(eps) across recordings
    quality_correlation: float = 0.5
    seed: int = 0
    system: int = 0  # noise stream; same seed, different system = same centroids
    prefix: str = "spk"

    def __post_init__(self):
        if self.n_speakers < 1:
            raise ValueError("n_speakers must be positive")
        if self.recordings_per_speaker < 2:
            raise ValueError("recordings_per_speaker must be at least 2")
        if self.dim < 2:
            raise ValueError("dim must be at least 2")
        if not self.within_spread > 0:
            raise ValueError("within_spread must be positive")
        if self.spread_variation < 0:
            raise ValueError("spread_variation must be non-negative")
        if not 0.0 <= self.quality_correlation <= 1.0:
            raise ValueError("quality_correlation must lie in [0, 1]")
        if self.magnitude_model[0] <= 0 or self.magnitude_model[1] < 0:
            raise ValueError("magnitude model needs a positive mean and non-negative spread")
        if self.snr_model[1] < 0:
            raise ValueError("snr spread must be non-negative")
        if self.duration_to_spread is not None:
            if not self.duration_to_spread:
                raise ValueError("duration_to_spread must not be empty")
            for d, m in self.duration_to_spread.items():
                if d < 0 or m <= 0:
                    raise ValueError("durations must be >= 0 and multipliers > 0")


def _rng(*keys):
    return np.random.Generator(np.random.PCG64(derive_seed(*keys)))


def generate(config: SynthConfig) -> EmbeddingStore:
    n, r, d = config.n_speakers, config.recordings_per_speaker, config.dim
    width = max(5, len(str(n - 1)))
    rho = config.quality_correlation
    resid = math.sqrt(1.0 - rho * rho)
    mag_mean, mag_spread = config.magnitude_model
    snr_mean, snr_spread = config.snr_model
    durations = None
    if config.duration_to_spread is not None:
        durations = sorted(config.duration_to_spread)
        multipliers = np.array([config.duration_to_spread[k] for k in durations], dtype=np.float64)

    speakers, recordings = [], []
    raw = np.empty((n * r, d), dtype=np.float32)
    snr = np.empty(n * r)
    dur = np.full(n * r, np.nan)
    for s in range(n):
        spk = f"{config.prefix}{s:0{width}d}"
        centroid = _rng(config.seed, s, "centroid").standard_normal(d)
        centroid /= np.linalg.norm(centroid)

        # recording quality is shared by every system; noise is per system
        qrng = _rng(config.seed, s, "quality")
        u = qrng.standard_normal(r)
        v_mag = qrng.standard_normal(r)
        v_snr = qrng.standard_normal(r)
        eps = config.within_spread * np.exp(config.spread_variation * u)
        if durations is not None:
            pick = qrng.integers(len(durations), size=r)
            eps = eps * multipliers[pick]
            dur[s * r : (s + 1) * r] = np.array(durations, dtype=np.float64)[pick]

        z = _rng(config.seed, s, "noise", config.system).standard_normal((r, d))
        direction = centroid[None, :] + eps[:, None] * z
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)

        # noisier recordings get lower magnitude and SNR
        mag = mag_mean - mag_spread * (rho * u + resid * v_mag)
        mag = np.maximum(mag, 1e-3 * mag_mean)
        raw[s * r : (s + 1) * r] = direction * mag[:, None]
        snr[s * r : (s + 1) * r] = snr_mean - snr_spread * (rho * u + resid * v_snr)
        speakers.extend([spk] * r)
        recordings.extend(f"{spk}-{j:03d}" for j in range(r))

    # metadata goes through float32 like the binary format, so a written
    # store re-ingests identically
    snr = snr.astype(np.float32).astype(np.float64)
    dur = dur.astype(np.float32).astype(np.float64)
    return EmbeddingStore(
        speakers,
        recordings,
        raw.astype(np.float64),
        snr.tolist(),
        [None if math.isnan(x) else x for x in dur.tolist()],
    )


def independent_far_oracle(per_speaker_far: float, W: int) -> float:
    """Group false-alarm probability for W independent, identically thresholded comparisons."""
    if not 0.0 <= per_speaker_far <= 1.0:
        raise ValueError("per_speaker_far must be a probability")
    if W < 1:
        raise ValueError("W must be positive")
    if per_speaker_far == 1.0:
        return 1.0
    return -math.expm1(W * math.log1p(-per_speaker_far))


@dataclass(frozen=True)
class SweepRow:
    W: int
    eer: float
    frr_at_far: float
    far_at_frr: float
    n_target: int
    n_nontarget: int


def sweep(
    source: Union[SynthConfig, EmbeddingStore],
    sizes: Sequence[int],
    seed: int = 0,
    max_trials_per_label: Optional[int] = None,
    far_level: float = DEFAULT_FAR,
    frr_level: float = DEFAULT_FRR,
    threads: int = 1,
):
    """Run build -> enroll -> trials -> score -> eval for each watchlist size
    on one shared population."""
    store = generate(source) if isinstance(source, SynthConfig) else source
    rows = []
    for W in sizes:
        plan = build_kfold(store.speakers, W, seed)
        plan = select_enrollment(plan, store, seed)
        trials = make_trials(plan, store, max_trials_per_label, seed)
        report = evaluate(partition(score_run(plan, trials, store, threads)), (far_level,), (frr_level,))
        rows.append(
            SweepRow(
                W,
                report.eer,
                report.frr_at_far[far_level],
                report.far_at_frr[frr_level],
                report.n_target,
                report.n_nontarget,
            )
        )
    return rows


def write_sweep_csv(rows, path, far_level=DEFAULT_FAR, frr_level=DEFAULT_FRR):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["W", "eer", f"frr_at_far_{far_level:g}", f"far_at_frr_{frr_level:g}",
                    "n_target", "n_nontarget"])
        for row in rows:
            w.writerow([row.W, format(row.eer, ".17g"), format(row.frr_at_far, ".17g"),
                        format(row.far_at_frr, ".17g"), row.n_target, row.n_nontarget])
