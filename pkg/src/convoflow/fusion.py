"""Fuse per-domain feature frames into one fixed-length vector per clip.

Embedding and action-unit frames are kept on their native grid, truncated to
the frames fully inside the chosen horizon (all 7 s, or the 3 s before the
mark), padded with missing values up to the expected count, and flattened
time-major. The motion-coupling scalar occupies the final slot when present.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .sessions import (
    CLIP_LEN_S,
    CORE_EVENTS,
    DOMAIN_DIMS,
    DOMAIN_FRAME_S,
    FeatureFrameMatrix,
    LabeledClip,
    SchemaError,
)

log = logging.getLogger(__name__)

HORIZON_S = {"full_7s": CLIP_LEN_S, "pre_3s": 3.0}
FUSABLE_DOMAINS = ("vggish", "yamnet", "wav2vec2", "face_au", "gc")
FACE_AU_FRAME_S = DOMAIN_FRAME_S["face_au"]


def expected_frames(domain: str, horizon: str) -> int:
    """Frames of `domain` fully contained in the horizon."""
    return int(math.floor(HORIZON_S[horizon] / DOMAIN_FRAME_S[domain] + 1e-9))


@dataclass(frozen=True)
class FusionSpec:
    """Ordered feature domains plus the temporal horizon and pooling mode."""

    domains: tuple[str, ...]
    horizon: str = "full_7s"
    pool: str = "flatten"

    def __post_init__(self):
        if self.horizon not in HORIZON_S:
            raise ValueError(f"unknown horizon {self.horizon!r}")
        if self.pool not in ("flatten", "mean"):
            raise ValueError(f"unknown pooling mode {self.pool!r}")
        if len(set(self.domains)) != len(self.domains):
            raise ValueError("duplicate domains")
        for d in self.domains:
            if d not in FUSABLE_DOMAINS:
                raise ValueError(f"unknown domain {d!r}")
        if "gc" in self.domains and self.horizon == "pre_3s":
            raise ValueError("the coupling scalar needs the full clip; drop gc for pre_3s")
        if not self.domains:
            raise ValueError("no domains selected")

    @property
    def frame_domains(self) -> tuple[str, ...]:
        return tuple(d for d in self.domains if d != "gc")

    def segment_length(self, domain: str) -> int:
        if domain == "gc":
            return 1
        if self.pool == "mean":
            return DOMAIN_DIMS[domain]
        return expected_frames(domain, self.horizon) * DOMAIN_DIMS[domain]

    def layout(self) -> "FeatureLayout":
        segments = {}
        offset = 0
        for d in self.domains:
            length = self.segment_length(d)
            segments[d] = (offset, length)
            offset += length
        return FeatureLayout(spec=self, segments=segments, total_length=offset)


@dataclass(frozen=True)
class FeatureLayout:
    """Slot offsets per domain; identical for every clip in a dataset."""

    spec: FusionSpec
    segments: dict[str, tuple[int, int]]
    total_length: int

    @property
    def layout_id(self) -> str:
        blob = json.dumps(
            {
                "domains": list(self.spec.domains),
                "horizon": self.spec.horizon,
                "pool": self.spec.pool,
                "segments": {d: list(ol) for d, ol in self.segments.items()},
                "total": self.total_length,
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def slot(self, domain: str) -> slice:
        offset, length = self.segments[domain]
        return slice(offset, offset + length)

    def to_json(self) -> dict:
        return {
            "domains": list(self.spec.domains),
            "horizon": self.spec.horizon,
            "pool": self.spec.pool,
            "segments": {
                d: {"offset": o, "length": n} for d, (o, n) in self.segments.items()
            },
            "total_length": self.total_length,
            "layout_id": self.layout_id,
        }


def average_face_aus(
    per_participant: Sequence[FeatureFrameMatrix],
    clip_id: str | None = None,
    clip_len_s: float = CLIP_LEN_S,
) -> FeatureFrameMatrix:
    """Average each participant's action units into shared 0.98 s frames.

    Source matrices at a finer rate are window-averaged by frame start time;
    matrices already on the 0.98 s grid pass through. Participants are then
    averaged per frame and unit, ignoring missing values; frames nobody
    covers stay missing. The trailing partial window is dropped.
    """
    n_out = int(math.floor(clip_len_s / FACE_AU_FRAME_S + 1e-9))
    n_units = DOMAIN_DIMS["face_au"]
    if clip_id is None:
        if not per_participant:
            raise ValueError("need a clip_id when no participants are given")
        clip_id = per_participant[0].clip_id

    framed = []
    for m in per_participant:
        if m.domain != "face_au":
            raise SchemaError(f"expected face_au input, got {m.domain!r}")
        if abs(m.frame_duration_s - FACE_AU_FRAME_S) < 1e-9:
            grid = np.full((n_out, n_units), np.nan)
            usable = min(n_out, m.n_frames)
            grid[:usable] = m.frames[:usable]
            framed.append(grid)
            continue
        starts = m.t0 + np.arange(m.n_frames) * m.frame_duration_s
        which = np.floor(starts / FACE_AU_FRAME_S + 1e-9).astype(int)
        grid = np.full((n_out, n_units), np.nan)
        for k in range(n_out):
            rows = m.frames[which == k]
            if rows.size:
                with np.errstate(invalid="ignore"):
                    grid[k] = np.nanmean(rows, axis=0)
        framed.append(grid)

    if framed:
        with np.errstate(invalid="ignore"):
            fused = np.nanmean(np.stack(framed), axis=0)
    else:
        fused = np.full((n_out, n_units), np.nan)
    return FeatureFrameMatrix(
        clip_id=clip_id,
        domain="face_au",
        frames=fused,
        frame_duration_s=FACE_AU_FRAME_S,
        t0=0.0,
    )


def pool_embeddings(frames: FeatureFrameMatrix, spec: FusionSpec) -> np.ndarray:
    """One clip's frames -> the flat segment for its domain slot."""
    if frames.domain not in spec.frame_domains:
        raise ValueError(f"domain {frames.domain!r} is not part of this fusion spec")
    want = expected_frames(frames.domain, spec.horizon)
    kept = frames.frames
    if frames.n_frames > want:
        if spec.horizon == "full_7s":
            log.warning(
                "clip %s: %d %s frames, expected %d; truncating",
                frames.clip_id, frames.n_frames, frames.domain, want,
            )
        kept = kept[:want]
    elif frames.n_frames < want:
        pad = np.full((want - frames.n_frames, kept.shape[1]), np.nan)
        kept = np.vstack([kept, pad]) if kept.size else pad
    if spec.pool == "mean":
        with np.errstate(invalid="ignore"):
            return np.nanmean(kept, axis=0)
    return kept.reshape(-1)


def assemble(
    clip_id: str,
    segments: Mapping[str, np.ndarray],
    gc: float | None,
    spec: FusionSpec,
) -> np.ndarray:
    """Concatenate domain segments in spec order; the gc slot comes last."""
    layout = spec.layout()
    vector = np.full(layout.total_length, np.nan)
    for d in spec.frame_domains:
        if d not in segments:
            raise ValueError(f"clip {clip_id!r}: missing segment for domain {d!r}")
        seg = segments[d]
        want = layout.segments[d][1]
        if seg.shape != (want,):
            raise SchemaError(
                f"clip {clip_id!r}: segment {d!r} has length {seg.shape}, expected {want}"
            )
        vector[layout.slot(d)] = seg
    if "gc" in spec.domains and gc is not None and not math.isnan(gc):
        vector[layout.slot("gc")] = gc
    return vector


# ---------------------------------------------------------------------------
# Dataset assembly and IO
# ---------------------------------------------------------------------------


@dataclass
class FusedDataset:
    """Fixed-layout feature matrix plus labels and the session group key."""

    clip_ids: list[str]
    session_ids: list[str]
    features: np.ndarray
    layout: FeatureLayout
    fluidity: np.ndarray = field(default_factory=lambda: np.array([]))
    enjoyment: np.ndarray = field(default_factory=lambda: np.array([]))
    event: list[str | None] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.clip_ids)

    def clip(self, i: int) -> LabeledClip:
        def as_label(v: float) -> int | None:
            return None if math.isnan(v) else int(v)

        return LabeledClip(
            clip_id=self.clip_ids[i],
            session_id=self.session_ids[i],
            features=self.features[i],
            fluidity_label=as_label(self.fluidity[i]),
            enjoyment_label=as_label(self.enjoyment[i]),
            event_label=self.event[i],
        )

    def task_labels(self, task: str):
        if task == "fluidity":
            return self.fluidity
        if task == "enjoyment":
            return self.enjoyment
        if task == "event":
            return self.event
        raise ValueError(f"unknown task {task!r}")


def build_dataset(
    clips: Sequence[tuple[str, str]],
    frames_by_domain: Mapping[str, Mapping[str, FeatureFrameMatrix]],
    couplings: Mapping[str, float],
    spec: FusionSpec,
    fluidity_labels: Mapping[str, int] | None = None,
    enjoyment_labels: Mapping[str, int] | None = None,
    event_labels: Mapping[str, str] | None = None,
) -> FusedDataset:
    """Assemble (clip_id, session_id) pairs into a fixed-layout dataset.

    Clips missing a domain's frames get an all-missing segment for that slot.
    """
    fluidity_labels = fluidity_labels or {}
    enjoyment_labels = enjoyment_labels or {}
    event_labels = event_labels or {}
    layout = spec.layout()

    rows = []
    for clip_id, _ in clips:
        segments = {}
        for d in spec.frame_domains:
            m = frames_by_domain.get(d, {}).get(clip_id)
            if m is None:
                segments[d] = np.full(layout.segments[d][1], np.nan)
            else:
                segments[d] = pool_embeddings(m, spec)
        rows.append(assemble(clip_id, segments, couplings.get(clip_id), spec))

    return FusedDataset(
        clip_ids=[c for c, _ in clips],
        session_ids=[s for _, s in clips],
        features=np.vstack(rows) if rows else np.empty((0, layout.total_length)),
        layout=layout,
        fluidity=np.array([float(fluidity_labels.get(c, math.nan)) for c, _ in clips]),
        enjoyment=np.array([float(enjoyment_labels.get(c, math.nan)) for c, _ in clips]),
        event=[event_labels.get(c) for c, _ in clips],
    )


def write_dataset(dataset: FusedDataset, csv_path: str | Path) -> None:
    """Write the fused CSV plus a .layout.json sidecar next to it."""
    csv_path = Path(csv_path)
    n = dataset.layout.total_length
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["clip_id", "session_id", "label_fluidity", "label_enjoyment", "label_event"]
            + [f"f{i}" for i in range(n)]
        )
        for i in range(len(dataset)):
            def binlabel(v: float) -> str:
                return "" if math.isnan(v) else str(int(v))

            cells = ["" if math.isnan(v) else repr(float(v)) for v in dataset.features[i]]
            writer.writerow(
                [
                    dataset.clip_ids[i],
                    dataset.session_ids[i],
                    binlabel(dataset.fluidity[i]),
                    binlabel(dataset.enjoyment[i]),
                    dataset.event[i] or "",
                ]
                + cells
            )
    sidecar = csv_path.with_suffix(csv_path.suffix + ".layout.json")
    sidecar.write_text(json.dumps(dataset.layout.to_json(), sort_keys=True, indent=2))


def _layout_from_json(blob: dict) -> FeatureLayout:
    spec = FusionSpec(
        domains=tuple(blob["domains"]), horizon=blob["horizon"], pool=blob["pool"]
    )
    layout = spec.layout()
    stored = {d: (s["offset"], s["length"]) for d, s in blob["segments"].items()}
    if stored != layout.segments or blob["total_length"] != layout.total_length:
        raise SchemaError("layout sidecar does not match its own fusion spec")
    return layout


def read_dataset(csv_path: str | Path) -> FusedDataset:
    csv_path = Path(csv_path)
    sidecar = csv_path.with_suffix(csv_path.suffix + ".layout.json")
    if not sidecar.exists():
        raise SchemaError(f"missing layout sidecar {sidecar}")
    layout = _layout_from_json(json.loads(sidecar.read_text()))

    clip_ids, session_ids, rows = [], [], []
    fluidity, enjoyment, event = [], [], []
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        n = layout.total_length
        expected = ["clip_id", "session_id", "label_fluidity", "label_enjoyment",
                    "label_event"] + [f"f{i}" for i in range(n)]
        if header != expected:
            raise SchemaError(f"{csv_path}: header does not match layout sidecar")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5 + n:
                raise SchemaError(f"{csv_path}:{lineno}: expected {5 + n} columns")
            clip_ids.append(row[0])
            session_ids.append(row[1])
            fluidity.append(float(row[2]) if row[2] else math.nan)
            enjoyment.append(float(row[3]) if row[3] else math.nan)
            if row[4] and row[4] not in CORE_EVENTS:
                raise SchemaError(f"{csv_path}:{lineno}: bad event label {row[4]!r}")
            event.append(row[4] or None)
            rows.append([math.nan if c == "" else float(c) for c in row[5:]])

    return FusedDataset(
        clip_ids=clip_ids,
        session_ids=session_ids,
        features=np.array(rows) if rows else np.empty((0, layout.total_length)),
        layout=layout,
        fluidity=np.array(fluidity),
        enjoyment=np.array(enjoyment),
        event=event,
    )
