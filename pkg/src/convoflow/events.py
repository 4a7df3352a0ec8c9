"""Silence/overlap turn-taking event detection from per-speaker audio.

Per-speaker frame RMS against a fixed amplitude threshold gives a boolean
activity matrix; silence marks start maximal all-inactive runs of at least
the minimum duration, overlap marks sit where the active-speaker count
crosses from <=1 to >=2.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .sessions import ClipWindow, PRE_MARK_S, POST_MARK_S, Session, TRIGGER_KINDS

log = logging.getLogger(__name__)

DEFAULT_RMS_THRESHOLD = 0.05
DEFAULT_FRAME_LEN_S = 0.050
DEFAULT_FRAME_HOP_S = 0.025
DEFAULT_MIN_SILENCE_S = 0.75


@dataclass(frozen=True)
class ActivityMatrix:
    """Frame-level speaker activity (frame RMS >= threshold)."""

    session_id: str
    frame_hop_s: float
    active: np.ndarray  # (n_frames, n_speakers) bool
    rms_threshold: float

    @property
    def n_frames(self) -> int:
        return self.active.shape[0]

    @property
    def n_speakers(self) -> int:
        return self.active.shape[1]


@dataclass(frozen=True)
class EventMark:
    session_id: str
    t_mark: float
    kind: str


@dataclass(frozen=True)
class WindowSample:
    """Sampled clip windows plus a flag for categories that came up short."""

    windows: list[ClipWindow]
    complete: bool


def compute_activity(
    session: Session,
    frame_len_s: float = DEFAULT_FRAME_LEN_S,
    frame_hop_s: float = DEFAULT_FRAME_HOP_S,
    rms_threshold: float = DEFAULT_RMS_THRESHOLD,
) -> ActivityMatrix:
    """Binarize per-speaker frame RMS; the trailing partial frame is dropped."""
    if not (frame_len_s >= frame_hop_s > 0):
        raise ValueError("need frame_len_s >= frame_hop_s > 0")
    rate = session.sample_rate
    frame_len = int(round(frame_len_s * rate))
    hop = int(round(frame_hop_s * rate))
    n_frames = (session.n_samples - frame_len) // hop + 1
    if n_frames <= 0:
        raise ValueError("session shorter than one frame")

    active = np.empty((n_frames, len(session.tracks)), dtype=bool)
    for s, track in enumerate(session.tracks):
        offsets = np.arange(n_frames) * hop
        idx = offsets[:, None] + np.arange(frame_len)[None, :]
        rms = np.sqrt(np.mean(track.samples[idx] ** 2, axis=1))
        active[:, s] = rms >= rms_threshold
    return ActivityMatrix(
        session_id=session.session_id,
        frame_hop_s=frame_hop_s,
        active=active,
        rms_threshold=rms_threshold,
    )


def detect_marks(
    activity: ActivityMatrix, min_silence_s: float = DEFAULT_MIN_SILENCE_S
) -> list[EventMark]:
    """Emit silence and overlap marks, sorted by time.

    A silence mark starts each maximal all-inactive run whose span
    (frames * hop) reaches min_silence_s. An overlap mark sits at each frame
    where the active-speaker count crosses from <=1 to >=2; the first frame
    has no predecessor, so a recording that opens mid-overlap is not marked.
    """
    hop = activity.frame_hop_s
    counts = activity.active.sum(axis=1)
    marks: list[EventMark] = []

    inactive = counts == 0
    padded = np.concatenate(([False], inactive, [False]))
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    for start, end in zip(edges[::2], edges[1::2]):
        if (end - start) * hop >= min_silence_s:
            marks.append(EventMark(activity.session_id, float(start * hop), "silence"))

    many = counts >= 2
    for f in 1 + np.flatnonzero(many[1:] & ~many[:-1]):
        marks.append(EventMark(activity.session_id, float(f * hop), "overlap"))

    marks.sort(key=lambda m: (m.t_mark, m.kind))
    return marks


def sample_and_window(
    marks: list[EventMark],
    n_per_kind: int,
    durations: dict[str, float],
    seed: int,
) -> WindowSample:
    """Sample marks per kind and emit 7 s clip windows.

    Marks whose window would leave the session (t_mark < 3 s or
    t_mark > duration - 4 s) are discarded first. Sampling is uniform without
    replacement and deterministic for a given seed. When a category has fewer
    eligible marks than requested, all of them are returned and the result is
    flagged incomplete.
    """
    eligible: dict[str, list[EventMark]] = {k: [] for k in TRIGGER_KINDS}
    for m in marks:
        duration = durations[m.session_id]
        if PRE_MARK_S <= m.t_mark <= duration - POST_MARK_S:
            eligible[m.kind].append(m)

    rng = np.random.default_rng(seed)
    complete = True
    chosen: list[EventMark] = []
    for kind in TRIGGER_KINDS:
        pool = sorted(eligible[kind], key=lambda m: (m.session_id, m.t_mark))
        if len(pool) < n_per_kind:
            log.warning(
                "only %d eligible %s marks (requested %d); keeping all",
                len(pool), kind, n_per_kind,
            )
            complete = False
            chosen.extend(pool)
        else:
            picks = rng.choice(len(pool), size=n_per_kind, replace=False)
            chosen.extend(pool[i] for i in sorted(picks))

    chosen.sort(key=lambda m: (m.session_id, m.kind, m.t_mark))
    counters: dict[tuple[str, str], int] = {}
    windows = []
    for m in chosen:
        key = (m.session_id, m.kind)
        index = counters.get(key, 0)
        counters[key] = index + 1
        windows.append(
            ClipWindow(
                clip_id=f"{m.session_id}_{m.kind}_{index}",
                session_id=m.session_id,
                t_mark=m.t_mark,
                trigger=m.kind,
            )
        )
    return WindowSample(windows=windows, complete=complete)
