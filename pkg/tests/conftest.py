"""Shared synthetic fixtures: audio sessions with known events, planted datasets."""

from __future__ import annotations

import numpy as np
import pytest

from convoflow.fusion import FusionSpec, build_dataset
from convoflow.sessions import FeatureFrameMatrix, write_wav_pcm16

RATE = 16000


def tone(duration_s: float, amp: float = 0.3, freq: float = 440.0, rate: int = RATE):
    t = np.arange(int(round(duration_s * rate))) / rate
    return amp * np.sin(2 * np.pi * freq * t)


def speech_pattern(segments: list[tuple[float, float]], total_s: float,
                   amp: float = 0.3, rate: int = RATE) -> np.ndarray:
    """Zeros everywhere except tone bursts over [start, end) pairs."""
    out = np.zeros(int(round(total_s * rate)))
    for start, end in segments:
        burst = tone(end - start, amp=amp, rate=rate)
        i = int(round(start * rate))
        out[i : i + len(burst)] = burst
    return out


def write_session_wavs(tmp_path, session_id: str,
                       patterns: dict[str, list[tuple[float, float]]],
                       total_s: float) -> list:
    paths = []
    for speaker, segments in patterns.items():
        p = tmp_path / f"{session_id}_{speaker}.wav"
        write_wav_pcm16(p, speech_pattern(segments, total_s), RATE)
        paths.append(p)
    return paths


def planted_dataset(n_sessions: int = 40, clips_per_session: int = 16, seed: int = 0,
                    shuffle_labels: bool = False, label_noise: float = 0.0):
    """Sessions of clips whose labels are recoverable from the vggish slots.

    label_noise > 0 adds irreducible label randomness so the achievable
    ROC-AUC sits below 1.
    """
    rng = np.random.default_rng(seed)
    clips, vgg, face, couplings, fluidity = [], {}, {}, {}, {}
    for s in range(n_sessions):
        sid = f"s{s:02d}"
        for c in range(clips_per_session):
            cid = f"{sid}_c{c}"
            latent = rng.normal()
            frames = rng.normal(size=(7, 128))
            frames[:, :16] += 2.0 * latent
            vgg[cid] = FeatureFrameMatrix(cid, "vggish", frames, 0.96)
            face[cid] = FeatureFrameMatrix(cid, "face_au", rng.normal(size=(7, 17)), 0.98)
            couplings[cid] = float(abs(rng.normal()) * 0.1)
            fluidity[cid] = int(latent + label_noise * rng.normal() > 0)
            clips.append((cid, sid))
    if shuffle_labels:
        ids = [c for c, _ in clips]
        values = np.array([fluidity[c] for c in ids])
        perm = np.random.default_rng(seed + 999).permutation(len(values))
        fluidity = {c: int(values[p]) for c, p in zip(ids, perm)}
    spec = FusionSpec(domains=("vggish", "face_au", "gc"), horizon="full_7s")
    return build_dataset(
        clips, {"vggish": vgg, "face_au": face}, couplings, spec,
        fluidity_labels=fluidity,
    )


@pytest.fixture
def make_session_wavs(tmp_path):
    def _make(session_id, patterns, total_s):
        return write_session_wavs(tmp_path, session_id, patterns, total_s)

    return _make
