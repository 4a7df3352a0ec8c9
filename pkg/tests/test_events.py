import numpy as np
import pytest

from convoflow.events import (
    ActivityMatrix,
    EventMark,
    compute_activity,
    detect_marks,
    sample_and_window,
)
from convoflow.sessions import Session, SpeakerTrack, load_session

from conftest import RATE, tone


def naive_detect(active: np.ndarray, hop: float, min_silence: float):
    """Straight-line reference scanner: explicit loops, no vector tricks."""
    n_frames, n_speakers = active.shape
    counts = [sum(1 for s in range(n_speakers) if active[f][s]) for f in range(n_frames)]
    marks = []
    f = 0
    while f < n_frames:
        if counts[f] == 0:
            start = f
            while f < n_frames and counts[f] == 0:
                f += 1
            if (f - start) * hop >= min_silence:
                marks.append((start * hop, "silence"))
        else:
            f += 1
    for f in range(1, n_frames):
        if counts[f] >= 2 and counts[f - 1] <= 1:
            marks.append((f * hop, "overlap"))
    marks.sort()
    return marks


def _marks_as_tuples(marks):
    return [(m.t_mark, m.kind) for m in marks]


def test_constant_amplitude_all_active(make_session_wavs):
    paths = make_session_wavs("s1", {"a": [(0.0, 10.0)], "b": [(0.0, 10.0)]}, 10.0)
    session = load_session(paths, "s1")
    activity = compute_activity(session)
    assert activity.active.all()


def test_silent_session_nothing_active(make_session_wavs):
    paths = make_session_wavs("s1", {"a": [], "b": []}, 10.0)
    session = load_session(paths, "s1")
    assert not compute_activity(session).active.any()


def test_sine_below_rms_threshold():
    # Peak 0.05 -> RMS 0.05/sqrt(2) = 0.0354, under the 0.05 threshold.
    quiet = tone(5.0, amp=0.05)
    session = Session(
        "s1",
        (SpeakerTrack("a", quiet, RATE), SpeakerTrack("b", np.zeros(len(quiet)), RATE)),
    )
    assert not compute_activity(session).active.any()


def test_partial_trailing_frame_dropped(make_session_wavs):
    paths = make_session_wavs("s1", {"a": [(0.0, 1.0)], "b": [(0.0, 1.0)]}, 1.03)
    session = load_session(paths, "s1")
    activity = compute_activity(session, frame_len_s=0.05, frame_hop_s=0.025)
    # (16480 - 800) // 400 + 1 frames
    assert activity.n_frames == (session.n_samples - 800) // 400 + 1


def test_single_silence_mark_at_run_start():
    active = np.zeros((80, 2), dtype=bool)
    active[:20, 0] = True  # speaker 0 alone carries the conversation
    active[40:, 0] = True  # inactive run spans frames [1.0 s, 2.0 s) at hop 0.05
    marks = detect_marks(
        ActivityMatrix("s1", 0.05, active, 0.05), min_silence_s=0.75
    )
    assert _marks_as_tuples(marks) == [(pytest.approx(1.0), "silence")]


def test_overlap_mark_at_transition(make_session_wavs):
    paths = make_session_wavs(
        "s1", {"a": [(0.0, 5.0)], "b": [(2.0, 3.0)]}, 5.0
    )
    session = load_session(paths, "s1")
    marks = detect_marks(compute_activity(session))
    overlaps = [m for m in marks if m.kind == "overlap"]
    assert len(overlaps) == 1
    assert overlaps[0].t_mark == pytest.approx(2.0, abs=0.05)
    assert not [m for m in marks if m.kind == "silence"]


def test_always_active_no_marks():
    active = np.ones((100, 3), dtype=bool)
    assert detect_marks(ActivityMatrix("s1", 0.05, active, 0.05)) == []


def test_short_silence_not_marked():
    active = np.zeros((100, 2), dtype=bool)
    active[:, 0] = True
    active[10:24, 0] = False  # 14 frames * 0.05 = 0.70 s < 0.75
    marks = detect_marks(ActivityMatrix("s1", 0.05, active, 0.05))
    assert marks == []


def test_opening_mid_overlap_not_marked():
    # The first frame has no predecessor, so it is never a transition.
    active = np.ones((10, 2), dtype=bool)
    marks = detect_marks(ActivityMatrix("s1", 0.05, active, 0.05))
    assert marks == []


def test_equivalence_with_naive_scanner():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n_frames = int(rng.integers(1, 200))
        n_speakers = int(rng.integers(1, 6))
        active = rng.random((n_frames, n_speakers)) < rng.uniform(0.2, 0.8)
        hop = float(rng.choice([0.025, 0.05, 0.1]))
        min_silence = float(rng.choice([0.5, 0.75, 1.0]))
        got = _marks_as_tuples(
            detect_marks(ActivityMatrix("s", hop, active, 0.05), min_silence)
        )
        assert got == naive_detect(active, hop, min_silence)


def test_no_two_silence_marks_in_one_run():
    rng = np.random.default_rng(8)
    for _ in range(50):
        active = rng.random((150, 3)) < 0.5
        marks = detect_marks(ActivityMatrix("s", 0.05, active, 0.05), 0.3)
        silence_frames = [int(round(m.t_mark / 0.05)) for m in marks
                          if m.kind == "silence"]
        counts = active.sum(axis=1)
        for a, b in zip(silence_frames, silence_frames[1:]):
            assert counts[a:b].sum() > 0  # an active frame separates the runs


def test_threshold_monotonicity(make_session_wavs):
    paths = make_session_wavs(
        "s1", {"a": [(0.0, 2.0), (4.0, 6.0)], "b": [(1.0, 3.0)]}, 8.0
    )
    session = load_session(paths, "s1")
    previous = None
    for threshold in (0.01, 0.05, 0.1, 0.2, 0.5):
        inactive = (~compute_activity(session, rms_threshold=threshold).active).sum()
        if previous is not None:
            assert inactive >= previous
        previous = inactive


def _mark(session, t, kind):
    return EventMark(session, t, kind)


def test_sample_and_window_full_sample_deterministic():
    marks = [_mark("s1", 3.0 + i, "silence") for i in range(10)]
    marks += [_mark("s1", 20.0 + i, "overlap") for i in range(10)]
    durations = {"s1": 60.0}
    first = sample_and_window(marks, 10, durations, seed=5)
    second = sample_and_window(marks, 10, durations, seed=5)
    assert first.complete and len(first.windows) == 20
    assert first == second


def test_sample_and_window_bounds_filtering():
    marks = [_mark("s1", 1.0, "silence"), _mark("s1", 58.0, "silence"),
             _mark("s1", 10.0, "silence")]
    result = sample_and_window(marks, 5, {"s1": 60.0}, seed=0)
    assert not result.complete
    assert [w.t_mark for w in result.windows] == [10.0]
    assert result.windows[0].clip_id == "s1_silence_0"


def test_sample_and_window_windows_inside_session():
    rng = np.random.default_rng(4)
    marks = [_mark("s1", float(t), "overlap") for t in rng.uniform(0, 30, 50)]
    result = sample_and_window(marks, 12, {"s1": 30.0}, seed=1)
    for w in result.windows:
        assert w.t_start >= 0.0
        assert w.t_end <= 30.0
        assert w.t_end - w.t_start == pytest.approx(7.0)
