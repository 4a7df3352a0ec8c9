import numpy as np
import pytest

from convoflow.sessions import (
    ClipWindow,
    FeatureFrameMatrix,
    RatingRecord,
    SchemaError,
    load_session,
    read_feature_csv,
    read_manifest_csv,
    read_ratings_csv,
    slice_clip,
    write_feature_csv,
    write_manifest_csv,
    write_ratings_csv,
    write_wav_float32,
    write_wav_pcm16,
)

RATE = 16000


def _write(tmp_path, name, samples, rate=RATE, float32=False):
    p = tmp_path / name
    (write_wav_float32 if float32 else write_wav_pcm16)(p, samples, rate)
    return p


def test_load_session_truncates_to_min_length(tmp_path):
    a = _write(tmp_path, "a.wav", np.zeros(RATE * 10))
    b = _write(tmp_path, "b.wav", np.zeros(RATE * 10 + RATE // 5))
    session = load_session([a, b], "s1")
    assert session.duration_s == pytest.approx(10.0)
    assert all(len(t.samples) == RATE * 10 for t in session.tracks)


def test_load_session_sample_rate_mismatch(tmp_path):
    a = _write(tmp_path, "a.wav", np.zeros(16000), rate=16000)
    b = _write(tmp_path, "b.wav", np.zeros(44100), rate=44100)
    with pytest.raises(SchemaError, match="sample rate mismatch"):
        load_session([a, b], "s1")


def test_load_session_silent_tracks(tmp_path):
    paths = [_write(tmp_path, f"sp{i}.wav", np.zeros(RATE * 60)) for i in range(5)]
    session = load_session(paths, "s1")
    assert len(session.tracks) == 5
    assert all(np.all(t.samples == 0.0) for t in session.tracks)


def test_load_session_empty_file_rejected(tmp_path):
    import scipy.io.wavfile as wavfile

    p = tmp_path / "empty.wav"
    wavfile.write(p, RATE, np.zeros(0, dtype=np.int16))
    q = _write(tmp_path, "b.wav", np.zeros(RATE))
    with pytest.raises(SchemaError, match="empty"):
        load_session([p, q], "s1")


def test_load_session_multichannel_splits_tracks(tmp_path):
    import scipy.io.wavfile as wavfile

    stereo = np.stack([np.zeros(RATE), 0.5 * np.ones(RATE)], axis=1)
    p = tmp_path / "pair.wav"
    wavfile.write(p, RATE, stereo.astype(np.float32))
    session = load_session([p], "s1")
    assert [t.speaker_id for t in session.tracks] == ["pair_ch0", "pair_ch1"]


def test_wav_roundtrip_pcm16_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    original = np.round(rng.uniform(-1, 1, size=RATE) * 32768)
    original = np.clip(original, -32768, 32767) / 32768.0
    p = _write(tmp_path, "rt.wav", original)
    q = _write(tmp_path, "other.wav", np.zeros(RATE))
    session = load_session([p, q], "s1")
    assert np.array_equal(session.tracks[0].samples, original)


def test_float32_wav_accepted(tmp_path):
    a = _write(tmp_path, "a.wav", 0.25 * np.ones(RATE), float32=True)
    b = _write(tmp_path, "b.wav", np.zeros(RATE), float32=True)
    session = load_session([a, b], "s1")
    assert session.tracks[0].samples[0] == pytest.approx(0.25)


def _session(tmp_path, seconds=20.0):
    rng = np.random.default_rng(1)
    paths = [
        _write(tmp_path, f"t{i}.wav", rng.uniform(-0.5, 0.5, int(RATE * seconds)))
        for i in range(2)
    ]
    return load_session(paths, "s1")


def test_slice_clip_length_and_alignment(tmp_path):
    session = _session(tmp_path)
    window = ClipWindow("c1", "s1", t_mark=10.0, trigger="silence")
    slices = slice_clip(session, window)
    assert slices.shape == (2, 112000)
    start = int(round(7.0 * RATE))
    assert np.array_equal(slices[0], session.tracks[0].samples[start : start + 112000])


def test_slice_clip_out_of_bounds(tmp_path):
    session = _session(tmp_path)
    with pytest.raises(SchemaError):
        ClipWindow("c1", "s1", t_mark=2.0, trigger="silence")
    late = ClipWindow("c1", "s1", t_mark=17.0, trigger="silence")
    with pytest.raises(ValueError, match="out of bounds"):
        slice_clip(session, late)


def test_slice_clip_boundary_inclusion(tmp_path):
    session = _session(tmp_path, seconds=20.0)
    window = ClipWindow("c1", "s1", t_mark=16.0, trigger="overlap")
    slices = slice_clip(session, window)
    assert slices.shape[1] == 112000


def test_slice_length_constant_across_marks(tmp_path):
    session = _session(tmp_path, seconds=30.0)
    lengths = {
        slice_clip(session, ClipWindow("c", "s1", t, "silence")).shape[1]
        for t in np.linspace(3.0, 26.0, 17)
    }
    assert lengths == {112000}


def test_feature_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    frames = rng.normal(size=(7, 17))
    frames[2, 5] = np.nan
    m = FeatureFrameMatrix("clip1", "face_au", frames, 0.98, t0=0.0)
    path = tmp_path / "au.csv"
    write_feature_csv(path, [m])
    loaded = read_feature_csv(path, "face_au")["clip1"]
    assert np.array_equal(loaded.frames, frames, equal_nan=True)
    assert loaded.frame_duration_s == pytest.approx(0.98)


def test_feature_csv_rejects_wrong_dimension_count(tmp_path):
    path = tmp_path / "bad.csv"
    header = "clip_id,frame_index,t0," + ",".join(f"f{i}" for i in range(17))
    row = "c1,0,0.0," + ",".join("1.0" for _ in range(16))  # one short
    path.write_text(header + "\n" + row + "\n")
    with pytest.raises(SchemaError, match="columns"):
        list(read_feature_csv(path, "face_au"))


def test_feature_csv_rejects_non_finite(tmp_path):
    path = tmp_path / "bad.csv"
    header = "clip_id,frame_index,t0," + ",".join(f"f{i}" for i in range(17))
    cells = ["1.0"] * 17
    cells[3] = "inf"
    path.write_text(header + "\n" + "c1,0,0.0," + ",".join(cells) + "\n")
    with pytest.raises(SchemaError, match="non-finite"):
        list(read_feature_csv(path, "face_au"))


def test_ratings_csv_roundtrip(tmp_path):
    records = [
        RatingRecord("r1", "c1", 4, 5, "backchannel", False),
        RatingRecord("r2", "c1", 1, 2, "gap", True),
    ]
    path = tmp_path / "ratings.csv"
    write_ratings_csv(path, records)
    assert read_ratings_csv(path) == records


def test_rating_record_validation():
    with pytest.raises(SchemaError):
        RatingRecord("r", "c", 0, 3, "gap")
    with pytest.raises(SchemaError):
        RatingRecord("r", "c", 3, 3, "chitchat")


def test_manifest_csv_roundtrip(tmp_path):
    windows = [
        ClipWindow("s1_silence_0", "s1", 12.5, "silence"),
        ClipWindow("s1_overlap_0", "s1", 33.25, "overlap"),
    ]
    path = tmp_path / "clips.csv"
    write_manifest_csv(path, windows)
    loaded = read_manifest_csv(path)
    assert loaded == windows
    assert loaded[0].t_end - loaded[0].t_start == pytest.approx(7.0)
