"""Core data types and file ingestion for sessions, clips, features, and ratings.

A session is a set of time-aligned per-speaker audio tracks. Clips are 7 s
windows around a marked time point (3 s before, 4 s after). Per-domain
feature matrices, rater records, and the CSV schemas tying everything
together live here as well.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.io import wavfile

log = logging.getLogger(__name__)

PRE_MARK_S = 3.0
POST_MARK_S = 4.0
CLIP_LEN_S = PRE_MARK_S + POST_MARK_S

TRIGGER_KINDS = ("silence", "overlap")
EVENT_CATEGORIES = ("interrupt", "backchannel", "gap", "unrelated_sound", "none")
CORE_EVENTS = ("backchannel", "gap", "interrupt")

# Fixed feature dimensionality per domain. Motion is one column per
# participant stream; the remaining domains are per-clip matrices.
DOMAIN_DIMS = {
    "vggish": 128,
    "yamnet": 1024,
    "wav2vec2": 768,
    "face_au": 17,
    "motion_distance": 1,
}

# Native frame duration of each uniformly framed domain (seconds).
DOMAIN_FRAME_S = {
    "vggish": 0.96,
    "yamnet": 0.48,
    "wav2vec2": 1.00,
    "face_au": 0.98,
}


class SchemaError(ValueError):
    """Raised when an input file or record violates its declared schema."""


@dataclass(frozen=True)
class SpeakerTrack:
    """One speaker's mono audio, normalized to [-1, 1]."""

    speaker_id: str
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise SchemaError(f"sample_rate must be positive, got {self.sample_rate}")
        if len(self.samples) == 0:
            raise SchemaError(f"track {self.speaker_id!r} has no samples")
        if not np.all(np.isfinite(self.samples)):
            raise SchemaError(f"track {self.speaker_id!r} contains non-finite samples")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class Session:
    """Aligned per-speaker tracks; the grouping unit for cross-validation."""

    session_id: str
    tracks: tuple[SpeakerTrack, ...]

    def __post_init__(self):
        if len(self.tracks) < 2:
            raise SchemaError(
                f"session {self.session_id!r} needs >=2 tracks, got {len(self.tracks)}"
            )
        rates = {t.sample_rate for t in self.tracks}
        if len(rates) > 1:
            raise SchemaError(
                f"sample rate mismatch in session {self.session_id!r}: {sorted(rates)}"
            )
        lengths = {len(t.samples) for t in self.tracks}
        if len(lengths) > 1:
            raise SchemaError(
                f"track length mismatch in session {self.session_id!r}: {sorted(lengths)}"
            )

    @property
    def sample_rate(self) -> int:
        return self.tracks[0].sample_rate

    @property
    def n_samples(self) -> int:
        return len(self.tracks[0].samples)

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass(frozen=True)
class ClipWindow:
    """A marked time point with its [-3 s, +4 s] extraction bounds."""

    clip_id: str
    session_id: str
    t_mark: float
    trigger: str

    def __post_init__(self):
        if self.trigger not in TRIGGER_KINDS:
            raise SchemaError(f"unknown trigger {self.trigger!r}")
        if self.t_mark < PRE_MARK_S:
            raise SchemaError(
                f"clip {self.clip_id!r}: window would start at {self.t_start:.3f} s"
            )

    @property
    def t_start(self) -> float:
        return self.t_mark - PRE_MARK_S

    @property
    def t_end(self) -> float:
        return self.t_mark + POST_MARK_S


@dataclass(frozen=True)
class FeatureFrameMatrix:
    """Per-clip, per-domain time x dimension matrix on a uniform frame grid.

    Missing values are NaN. Frame k spans
    [t0 + k*frame_duration_s, t0 + (k+1)*frame_duration_s).
    """

    clip_id: str
    domain: str
    frames: np.ndarray
    frame_duration_s: float
    t0: float = 0.0

    def __post_init__(self):
        if self.domain not in DOMAIN_DIMS:
            raise SchemaError(f"unknown feature domain {self.domain!r}")
        if self.frame_duration_s <= 0:
            raise SchemaError("frame_duration_s must be positive")
        want = DOMAIN_DIMS[self.domain]
        if self.frames.ndim != 2 or self.frames.shape[1] != want:
            raise SchemaError(
                f"clip {self.clip_id!r}: domain {self.domain!r} expects {want} dims, "
                f"got shape {self.frames.shape}"
            )

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def frame_start(self, k: int) -> float:
        return self.t0 + k * self.frame_duration_s


@dataclass(frozen=True)
class RatingRecord:
    """One rater's response to one clip."""

    rater_id: str
    clip_id: str
    fluidity: int
    enjoyment: int
    event: str
    is_reliability_block: bool = False

    def __post_init__(self):
        for name, value in (("fluidity", self.fluidity), ("enjoyment", self.enjoyment)):
            if value not in (1, 2, 3, 4, 5):
                raise SchemaError(f"{name} rating must be in 1..5, got {value}")
        if self.event not in EVENT_CATEGORIES:
            raise SchemaError(f"unknown event category {self.event!r}")


@dataclass(frozen=True)
class LabeledClip:
    """A fused fixed-length feature vector with optional task labels.

    Binary labels are 0 (low) / 1 (high); None means the label is absent.
    The session id is the cross-validation group key.
    """

    clip_id: str
    session_id: str
    features: np.ndarray
    fluidity_label: int | None = None
    enjoyment_label: int | None = None
    event_label: str | None = None

    def __post_init__(self):
        if self.event_label is not None and self.event_label not in CORE_EVENTS:
            raise SchemaError(f"event label must be one of {CORE_EVENTS}")


# ---------------------------------------------------------------------------
# Audio ingestion
# ---------------------------------------------------------------------------

_INT_SCALES = {np.dtype(np.int16): 32768.0, np.dtype(np.int32): 2147483648.0}


def _normalize_wav(data: np.ndarray, path: Path) -> np.ndarray:
    if data.dtype in _INT_SCALES:
        return data.astype(np.float64) / _INT_SCALES[data.dtype]
    if data.dtype in (np.dtype(np.float32), np.dtype(np.float64)):
        out = data.astype(np.float64)
        if not np.all(np.isfinite(out)):
            raise SchemaError(f"{path}: non-finite samples")
        return out
    raise SchemaError(f"{path}: unsupported WAV sample format {data.dtype}")


def load_session(audio_paths: Sequence[str | Path], session_id: str) -> Session:
    """Load one session from per-speaker WAV files.

    Mono files contribute one track each; a multichannel file contributes one
    track per channel. All files must share a sample rate. Tracks are
    truncated to the shortest common length so they stay time-aligned.
    """
    if not audio_paths:
        raise SchemaError("no audio paths given")
    raw: list[tuple[str, np.ndarray, int]] = []
    for p in map(Path, audio_paths):
        rate, data = wavfile.read(p)
        if data.size == 0:
            raise SchemaError(f"{p}: empty audio file")
        norm = _normalize_wav(data, p)
        if norm.ndim == 1:
            raw.append((p.stem, norm, rate))
        else:
            for ch in range(norm.shape[1]):
                raw.append((f"{p.stem}_ch{ch}", norm[:, ch], rate))

    rates = {r for _, _, r in raw}
    if len(rates) > 1:
        raise SchemaError(f"sample rate mismatch across inputs: {sorted(rates)}")

    lengths = [len(s) for _, s, _ in raw]
    n = min(lengths)
    if max(lengths) != n:
        log.warning(
            "session %s: truncating tracks to %d samples (max was %d)",
            session_id, n, max(lengths),
        )
    tracks = tuple(
        SpeakerTrack(speaker_id=sid, samples=s[:n], sample_rate=rate)
        for sid, s, rate in raw
    )
    return Session(session_id=session_id, tracks=tracks)


def write_wav_pcm16(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    """Write [-1, 1] float samples as 16-bit PCM (round-trips bit-exactly)."""
    q = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767)
    wavfile.write(path, sample_rate, q.astype(np.int16))


def write_wav_float32(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    wavfile.write(path, sample_rate, np.asarray(samples, dtype=np.float32))


def slice_clip(session: Session, window: ClipWindow) -> np.ndarray:
    """Extract the window's samples for every speaker.

    Returns an (n_speakers, round(7 s * rate)) array; slices are
    time-aligned across speakers. Raises ValueError when the window falls
    outside the session.
    """
    rate = session.sample_rate
    n_slice = int(round(CLIP_LEN_S * rate))
    start = int(round(window.t_start * rate))
    if start < 0 or start + n_slice > session.n_samples:
        raise ValueError(
            f"clip {window.clip_id!r}: window out of bounds "
            f"[{window.t_start:.3f}, {window.t_end:.3f}] s in a "
            f"{session.duration_s:.3f} s session"
        )
    return np.stack([t.samples[start : start + n_slice] for t in session.tracks])


# ---------------------------------------------------------------------------
# Feature CSV (header: clip_id,frame_index,t0,f0,...,f{D-1})
# ---------------------------------------------------------------------------


def _parse_cell(cell: str, path: Path, line: int) -> float:
    if cell == "":
        return math.nan
    try:
        v = float(cell)
    except ValueError as exc:
        raise SchemaError(f"{path}:{line}: bad value {cell!r}") from exc
    if not math.isfinite(v):
        raise SchemaError(f"{path}:{line}: non-finite value {cell!r}")
    return v


def iter_feature_rows(
    path: str | Path, n_dims: int
) -> Iterator[tuple[str, int, float, np.ndarray]]:
    """Yield (clip_id, frame_index, t0, values) rows from a feature CSV.

    Rejects rows whose value count differs from n_dims. Missing cells become
    NaN; literal inf/nan cells are rejected.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["clip_id", "frame_index", "t0"] + [f"f{i}" for i in range(n_dims)]
        if header != expected:
            raise SchemaError(
                f"{path}: bad header (expected {len(expected)} columns "
                f"'clip_id,frame_index,t0,f0,...', got {header[:4] if header else None}...)"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3 + n_dims:
                raise SchemaError(
                    f"{path}:{lineno}: expected {3 + n_dims} columns, got {len(row)}"
                )
            clip_id = row[0]
            try:
                frame_index = int(row[1])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: bad frame_index {row[1]!r}") from exc
            t0 = _parse_cell(row[2], path, lineno)
            if math.isnan(t0):
                raise SchemaError(f"{path}:{lineno}: t0 is required")
            values = np.array([_parse_cell(c, path, lineno) for c in row[3:]])
            yield clip_id, frame_index, t0, values


def read_feature_csv(path: str | Path, domain: str) -> dict[str, FeatureFrameMatrix]:
    """Read a uniformly framed feature CSV into per-clip matrices."""
    if domain not in DOMAIN_FRAME_S:
        raise SchemaError(f"domain {domain!r} is not uniformly framed")
    n_dims = DOMAIN_DIMS[domain]
    by_clip: dict[str, list[tuple[int, float, np.ndarray]]] = {}
    for clip_id, idx, t0, values in iter_feature_rows(path, n_dims):
        by_clip.setdefault(clip_id, []).append((idx, t0, values))

    out = {}
    for clip_id, rows in by_clip.items():
        rows.sort(key=lambda r: r[0])
        indices = [r[0] for r in rows]
        if indices != list(range(len(rows))):
            raise SchemaError(
                f"{path}: clip {clip_id!r} frame indices are not contiguous from 0"
            )
        starts = [r[1] for r in rows]
        if len(rows) >= 2:
            duration = starts[1] - starts[0]
        else:
            duration = DOMAIN_FRAME_S[domain]
        out[clip_id] = FeatureFrameMatrix(
            clip_id=clip_id,
            domain=domain,
            frames=np.stack([r[2] for r in rows]),
            frame_duration_s=duration,
            t0=starts[0],
        )
    return out


def write_feature_csv(path: str | Path, matrices: Iterable[FeatureFrameMatrix]) -> None:
    matrices = list(matrices)
    if not matrices:
        raise SchemaError("nothing to write")
    n_dims = DOMAIN_DIMS[matrices[0].domain]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip_id", "frame_index", "t0"] + [f"f{i}" for i in range(n_dims)])
        for m in matrices:
            if m.domain != matrices[0].domain:
                raise SchemaError("mixed domains in one feature file")
            for k in range(m.n_frames):
                cells = ["" if math.isnan(v) else repr(float(v)) for v in m.frames[k]]
                writer.writerow([m.clip_id, k, repr(float(m.frame_start(k)))] + cells)


# ---------------------------------------------------------------------------
# Ratings CSV (header: rater_id,clip_id,fluidity,enjoyment,event,is_reliability_block)
# ---------------------------------------------------------------------------

_RATINGS_HEADER = ["rater_id", "clip_id", "fluidity", "enjoyment", "event",
                   "is_reliability_block"]


def read_ratings_csv(path: str | Path) -> list[RatingRecord]:
    path = Path(path)
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _RATINGS_HEADER:
            raise SchemaError(f"{path}: bad ratings header {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise SchemaError(f"{path}:{lineno}: expected 6 columns")
            try:
                records.append(
                    RatingRecord(
                        rater_id=row[0],
                        clip_id=row[1],
                        fluidity=int(row[2]),
                        enjoyment=int(row[3]),
                        event=row[4],
                        is_reliability_block=row[5].strip().lower() in ("1", "true"),
                    )
                )
            except (ValueError, SchemaError) as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return records


def write_ratings_csv(path: str | Path, records: Iterable[RatingRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_RATINGS_HEADER)
        for r in records:
            writer.writerow(
                [r.rater_id, r.clip_id, r.fluidity, r.enjoyment, r.event,
                 "1" if r.is_reliability_block else "0"]
            )


# ---------------------------------------------------------------------------
# Clip manifest CSV (header: clip_id,session_id,t_mark,trigger)
# ---------------------------------------------------------------------------

_MANIFEST_HEADER = ["clip_id", "session_id", "t_mark", "trigger"]


def read_manifest_csv(path: str | Path) -> list[ClipWindow]:
    path = Path(path)
    windows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _MANIFEST_HEADER:
            raise SchemaError(f"{path}: bad manifest header {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise SchemaError(f"{path}:{lineno}: expected 4 columns")
            try:
                windows.append(
                    ClipWindow(clip_id=row[0], session_id=row[1],
                               t_mark=float(row[2]), trigger=row[3])
                )
            except (ValueError, SchemaError) as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return windows


def write_manifest_csv(path: str | Path, windows: Iterable[ClipWindow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_MANIFEST_HEADER)
        for w in windows:
            writer.writerow([w.clip_id, w.session_id, repr(float(w.t_mark)), w.trigger])
