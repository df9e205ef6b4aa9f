"""Speaker embedding storage: ingestion, validation, and the two on-disk formats.

Vectors are length-normalized on ingestion. The pre-normalization vector is
kept (as float64) so the binary format round-trips exactly and the raw
magnitude stays available as a calibration quality measure.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from osibench import kernels

MAGIC = b"OSIE"
VERSION = 1
FLAG_SNR = 0x01
FLAG_DURATION = 0x02


class IngestError(ValueError):
    """A record failed validation; ``index`` is its 0-based position."""

    def __init__(self, message, index=None):
        if index is not None:
            message = f"record {index}: {message}"
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class EmbeddingRecord:
    speaker_id: str
    recording_id: str
    vector: np.ndarray
    raw_magnitude: float
    snr_db: Optional[float] = None
    duration_s: Optional[float] = None

    @property
    def dimension(self):
        return self.vector.shape[0]


def _readonly(a):
    a.flags.writeable = False
    return a


class EmbeddingStore:
    """Immutable, columnar collection of embeddings keyed by recording id."""

    def __init__(self, speaker_ids, recording_ids, raw, snr_db=None, duration_s=None):
        speaker_ids = [str(s) for s in speaker_ids]
        recording_ids = [str(r) for r in recording_ids]
        raw = np.array(raw, dtype=np.float64, copy=True)
        n = len(recording_ids)
        if raw.ndim != 2 or raw.shape[0] != n or len(speaker_ids) != n:
            raise IngestError("ids and vectors disagree in length")
        if n and raw.shape[1] == 0:
            raise IngestError("zero-dimensional vectors", 0)

        self._index = {}
        for i, rid in enumerate(recording_ids):
            if rid in self._index:
                raise IngestError(f"duplicate recording_id {rid!r}", i)
            self._index[rid] = i

        finite = np.isfinite(raw).all(axis=1)
        if not finite.all():
            raise IngestError("non-finite vector component", int(np.argmin(finite)))
        magnitude = np.sqrt(np.einsum("ij,ij->i", raw, raw))
        if n and (magnitude <= 0).any():
            raise IngestError("zero-norm vector", int(np.argmax(magnitude <= 0)))

        self.snr_db = _readonly(self._meta(snr_db, n, "snr_db"))
        self.duration_s = _readonly(self._meta(duration_s, n, "duration_s"))
        if (self.duration_s < 0).any():
            raise IngestError("negative duration_s", int(np.argmax(self.duration_s < 0)))

        self.speaker_ids = tuple(speaker_ids)
        self.recording_ids = tuple(recording_ids)
        self.raw = _readonly(raw)
        self.magnitude = _readonly(magnitude)
        self.unit = _readonly(raw / magnitude[:, None] if n else raw.copy())

        self.speakers = tuple(dict.fromkeys(speaker_ids))
        self.speaker_index = {s: [] for s in self.speakers}
        for sid, rid in zip(speaker_ids, recording_ids):
            self.speaker_index[sid].append(rid)
        code = {s: i for i, s in enumerate(self.speakers)}
        self.speaker_codes = _readonly(np.array([code[s] for s in speaker_ids], dtype=np.int64))

    @staticmethod
    def _meta(values, n, name):
        if values is None:
            return np.full(n, np.nan)
        out = np.array([np.nan if v is None else float(v) for v in values], dtype=np.float64)
        if out.shape != (n,):
            raise IngestError(f"{name} length mismatch")
        if np.isinf(out).any():
            raise IngestError(f"non-finite {name}", int(np.argmax(np.isinf(out))))
        return out

    @property
    def dimension(self):
        return self.raw.shape[1] if self.raw.ndim == 2 else 0

    def __len__(self):
        return len(self.recording_ids)

    def __contains__(self, recording_id):
        return recording_id in self._index

    def index_of(self, recording_id):
        try:
            return self._index[recording_id]
        except KeyError:
            raise KeyError(f"unknown recording_id {recording_id!r}") from None

    def indices_of(self, recording_ids: Iterable[str]) -> np.ndarray:
        return np.array([self.index_of(r) for r in recording_ids], dtype=np.int64)

    def record(self, key):
        i = key if isinstance(key, (int, np.integer)) else self.index_of(key)
        snr = self.snr_db[i]
        dur = self.duration_s[i]
        return EmbeddingRecord(
            speaker_id=self.speaker_ids[i],
            recording_id=self.recording_ids[i],
            vector=self.unit[i],
            raw_magnitude=float(self.magnitude[i]),
            snr_db=None if math.isnan(snr) else float(snr),
            duration_s=None if math.isnan(dur) else float(dur),
        )

    __getitem__ = record

    def __iter__(self):
        return (self.record(i) for i in range(len(self)))

    def has_snr(self):
        return bool(len(self)) and not np.isnan(self.snr_db).any()

    def has_duration(self):
        return bool(len(self)) and not np.isnan(self.duration_s).any()

    def __eq__(self, other):
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return (
            self.speaker_ids == other.speaker_ids
            and self.recording_ids == other.recording_ids
            and np.array_equal(self.raw, other.raw)
            and np.array_equal(self.snr_db, other.snr_db, equal_nan=True)
            and np.array_equal(self.duration_s, other.duration_s, equal_nan=True)
        )

    __hash__ = None


def cosine(a: EmbeddingRecord, b: EmbeddingRecord) -> float:
    """Cosine similarity of two stored (unit) vectors, clamped to [-1, 1]."""
    if a.dimension != b.dimension:
        raise ValueError(f"dimension mismatch: {a.dimension} vs {b.dimension}")
    s = float(kernels.dot_block(a.vector[None, :], b.vector[None, :])[0, 0])
    return min(1.0, max(-1.0, s))


# -- binary format -------------------------------------------------------------


def write_binary(store: EmbeddingStore, path):
    header = MAGIC + struct.pack("<II", VERSION, store.dimension)
    chunks = [header]
    vec_fmt = f"<{store.dimension}f"
    for i in range(len(store)):
        for text in (store.speaker_ids[i], store.recording_ids[i]):
            data = text.encode("utf-8")
            if len(data) > 0xFFFF:
                raise ValueError(f"record {i}: identifier longer than 65535 bytes")
            chunks.append(struct.pack("<H", len(data)))
            chunks.append(data)
        chunks.append(struct.pack(vec_fmt, *store.raw[i]))
        snr, dur = store.snr_db[i], store.duration_s[i]
        flags = (0 if math.isnan(snr) else FLAG_SNR) | (0 if math.isnan(dur) else FLAG_DURATION)
        chunks.append(bytes([flags]))
        if flags & FLAG_SNR:
            chunks.append(struct.pack("<f", snr))
        if flags & FLAG_DURATION:
            chunks.append(struct.pack("<f", dur))
    Path(path).write_bytes(b"".join(chunks))


def read_binary(path) -> EmbeddingStore:
    buf = Path(path).read_bytes()
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise IngestError("not an OSIE file (bad magic)")
    version, dim = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise IngestError(f"unsupported OSIE version {version}")
    if dim == 0:
        raise IngestError("dimension must be positive")
    vec = struct.Struct(f"<{dim}f")
    f32 = struct.Struct("<f")
    speakers, recordings, vectors, snrs, durs = [], [], [], [], []
    pos = 12
    index = 0
    try:
        while pos < len(buf):
            ids = []
            for _ in range(2):
                (n,) = struct.unpack_from("<H", buf, pos)
                pos += 2
                if pos + n > len(buf):
                    raise struct.error("truncated identifier")
                ids.append(buf[pos : pos + n].decode("utf-8"))
                pos += n
            vectors.append(vec.unpack_from(buf, pos))
            pos += vec.size
            flags = buf[pos]
            pos += 1
            if flags & ~(FLAG_SNR | FLAG_DURATION):
                raise struct.error(f"unknown flag bits {flags:#x}")
            snr = dur = None
            if flags & FLAG_SNR:
                (snr,) = f32.unpack_from(buf, pos)
                pos += 4
            if flags & FLAG_DURATION:
                (dur,) = f32.unpack_from(buf, pos)
                pos += 4
            speakers.append(ids[0])
            recordings.append(ids[1])
            snrs.append(snr)
            durs.append(dur)
            index += 1
    except (struct.error, IndexError, UnicodeDecodeError) as exc:
        raise IngestError(f"malformed record ({exc})", index) from None
    raw = np.array(vectors, dtype=np.float32).astype(np.float64).reshape(len(vectors), dim)
    return EmbeddingStore(speakers, recordings, raw, snrs, durs)


# -- JSONL format --------------------------------------------------------------


def read_jsonl(path) -> EmbeddingStore:
    speakers, recordings, vectors, snrs, durs = [], [], [], [], []
    dim = None
    with open(path, encoding="utf-8") as fh:
        index = 0
        for line in fh:
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                speaker, recording, vector = obj["speaker"], obj["recording"], obj["vector"]
                vector = [float(v) for v in vector]
                snr, dur = obj.get("snr_db"), obj.get("duration_s")
                snr = None if snr is None else float(snr)
                dur = None if dur is None else float(dur)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise IngestError(f"malformed record ({exc!r})", index) from None
            if not isinstance(speaker, str) or not isinstance(recording, str):
                raise IngestError("speaker and recording must be strings", index)
            if dim is None:
                dim = len(vector)
            elif len(vector) != dim:
                raise IngestError(f"dimension mismatch: expected {dim}, got {len(vector)}", index)
            speakers.append(speaker)
            recordings.append(recording)
            vectors.append(vector)
            snrs.append(snr)
            durs.append(dur)
            index += 1
    raw = np.array(vectors, dtype=np.float64).reshape(len(vectors), dim or 0)
    return EmbeddingStore(speakers, recordings, raw, snrs, durs)


def write_jsonl(store: EmbeddingStore, path):
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(store)):
            obj = {
                "speaker": store.speaker_ids[i],
                "recording": store.recording_ids[i],
                "vector": store.raw[i].tolist(),
            }
            if not math.isnan(store.snr_db[i]):
                obj["snr_db"] = float(store.snr_db[i])
            if not math.isnan(store.duration_s[i]):
                obj["duration_s"] = float(store.duration_s[i])
            fh.write(json.dumps(obj) + "\n")


def detect_format(path):
    with open(path, "rb") as fh:
        return "binary" if fh.read(4) == MAGIC else "jsonl"


def ingest(path, format: Optional[str] = None) -> EmbeddingStore:
    """Load a store from ``path``; ``format`` is ``"binary"``, ``"jsonl"`` or sniffed."""
    fmt = format or detect_format(path)
    if fmt == "binary":
        return read_binary(path)
    if fmt == "jsonl":
        return read_jsonl(path)
    raise ValueError(f"unknown store format {fmt!r}")


def serialize(store: EmbeddingStore, path, format="binary"):
    if format == "binary":
        write_binary(store, path)
    elif format == "jsonl":
        write_jsonl(store, path)
    else:
        raise ValueError(f"unknown store format {format!r}")
