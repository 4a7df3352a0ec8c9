"""Pairwise Granger-causality coupling of body-motion series per clip.

Each participant's face-to-camera distance series is window-averaged to
8 Hz, first-differenced, and z-normalized; directed coupling from series j
to series i is the log ratio of i's residual variance without vs. with j's
lagged history in a vector-autoregressive fit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .sessions import CLIP_LEN_S, SchemaError, iter_feature_rows

DEFAULT_TARGET_RATE_HZ = 8.0
DEFAULT_GC_ORDER = 12
DEFAULT_GC_RIDGE = 1e-4
MIN_WINDOW_COVERAGE = 0.8
GC_MODES = ("bivariate", "conditional")

# Log-ratio estimates a hair below zero are round-off from the ridge term,
# not real negative coupling.
_NEG_EPS = 1e-10


class RankDeficientVarError(RuntimeError):
    """Unregularized VAR fit on a rank-deficient design."""


@dataclass(frozen=True)
class MotionSeries:
    """One participant's distance samples over a clip, clip-relative times."""

    clip_id: str
    participant_id: str
    samples: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        if len(self.samples) != len(self.timestamps):
            raise SchemaError("samples and timestamps must align")
        if len(self.timestamps) >= 2 and not np.all(np.diff(self.timestamps) > 0):
            raise SchemaError(
                f"clip {self.clip_id!r}/{self.participant_id!r}: "
                "timestamps must be strictly increasing"
            )
        if not np.all(np.isfinite(self.samples)):
            raise SchemaError("motion samples must be finite")


@dataclass(frozen=True)
class PreparedPanel:
    """Time x participant matrix at the target rate, differenced and z-scored."""

    clip_id: str
    matrix: np.ndarray
    participant_ids: tuple[str, ...]
    valid: np.ndarray  # per-participant bool mask

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())


@dataclass(frozen=True)
class VarFit:
    """coeffs[l, i, j] moves series j at lag l+1 into series i."""

    coeffs: np.ndarray
    sigma: np.ndarray
    order: int


@dataclass(frozen=True)
class GcResult:
    clip_id: str
    pairwise: np.ndarray  # (P, P), F[target, source]; NaN where undefined
    mean_coupling: float
    order: int


def preprocess_motion(
    series: Sequence[MotionSeries],
    target_rate_hz: float = DEFAULT_TARGET_RATE_HZ,
    clip_len_s: float = CLIP_LEN_S,
) -> PreparedPanel:
    """Window-average, difference, and z-normalize each participant's series.

    Windows are time-based (125 ms at 8 Hz) so fractional samples-per-window
    source rates stay exact. Participants covering fewer than 80% of the
    windows, or whose differenced series has zero variance, are masked
    invalid; their column is NaN.
    """
    if not series:
        raise ValueError("no motion series given")
    clip_id = series[0].clip_id
    window_s = 1.0 / target_rate_hz
    n_windows = int(math.floor(clip_len_s / window_s + 1e-9))
    if n_windows < 2:
        raise ValueError("clip too short for the target rate")

    n_t = n_windows - 1
    cols = []
    valid = []
    for s in series:
        if s.clip_id != clip_id:
            raise ValueError("mixed clips in one panel")
        sums = np.zeros(n_windows)
        counts = np.zeros(n_windows)
        w = np.floor(s.timestamps / window_s).astype(int)
        in_clip = (w >= 0) & (w < n_windows)
        np.add.at(sums, w[in_clip], s.samples[in_clip])
        np.add.at(counts, w[in_clip], 1)

        covered = counts > 0
        if covered.mean() < MIN_WINDOW_COVERAGE:
            cols.append(np.full(n_t, np.nan))
            valid.append(False)
            continue
        means = np.full(n_windows, np.nan)
        means[covered] = sums[covered] / counts[covered]
        if not covered.all():
            centers = (np.arange(n_windows) + 0.5) * window_s
            means = np.interp(centers, centers[covered], means[covered])

        diff = np.diff(means)
        std = diff.std()
        # A derivative that is constant up to windowing jitter (e.g. a linear
        # ramp sampled at a rate not divisible by the target rate) would
        # z-normalize into pure quantization noise; treat it as degenerate.
        trend_dominated = std > 0 and abs(diff.mean()) > 10.0 * std
        if std <= 0 or not np.isfinite(std) or trend_dominated:
            cols.append(np.full(n_t, np.nan))
            valid.append(False)
            continue
        cols.append((diff - diff.mean()) / std)
        valid.append(True)

    return PreparedPanel(
        clip_id=clip_id,
        matrix=np.column_stack(cols),
        participant_ids=tuple(s.participant_id for s in series),
        valid=np.array(valid),
    )


def _lagged_design(panel: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    t, k = panel.shape
    y = panel[order:]
    x = np.empty((t - order, k * order))
    for lag in range(1, order + 1):
        x[:, (lag - 1) * k : lag * k] = panel[order - lag : t - lag]
    return x, y


def fit_var(
    panel: np.ndarray, order: int, ridge: float = 0.0
) -> VarFit:
    """Per-equation least squares of x_t on lags 1..order.

    The input is expected to be (approximately) zero-mean; no intercept is
    fitted. The residual covariance uses denominator T - order.
    """
    panel = np.asarray(panel, dtype=float)
    if panel.ndim == 1:
        panel = panel[:, None]
    t, k = panel.shape
    if t <= order:
        raise ValueError(f"need more than {order} observations, got {t}")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    n_obs, n_reg = t - order, k * order
    if ridge == 0 and n_obs < n_reg:
        raise RankDeficientVarError(
            f"{n_obs} observations cannot identify {n_reg} regressors without ridge"
        )

    x, y = _lagged_design(panel, order)
    if ridge == 0:
        if np.linalg.matrix_rank(x) < n_reg:
            raise RankDeficientVarError("rank-deficient VAR design")
        b, *_ = np.linalg.lstsq(x, y, rcond=None)
    else:
        gram = x.T @ x + ridge * np.eye(n_reg)
        b = np.linalg.solve(gram, x.T @ y)

    resid = y - x @ b
    sigma = resid.T @ resid / n_obs
    coeffs = b.reshape(order, k, k).transpose(0, 2, 1)
    return VarFit(coeffs=coeffs, sigma=sigma, order=order)


def _residual_variance(panel: np.ndarray, order: int, ridge: float, eq: int) -> float:
    return fit_var(panel, order, ridge).sigma[eq, eq]


def pairwise_gc(
    panel: PreparedPanel,
    order: int = DEFAULT_GC_ORDER,
    mode: str = "bivariate",
    ridge: float = DEFAULT_GC_RIDGE,
) -> GcResult | None:
    """Directed coupling F[source -> target] for every valid ordered pair.

    Bivariate mode fits each pair in isolation; conditional mode keeps all
    valid participants in both the full and the reduced model. Returns None
    when fewer than two participants are valid.
    """
    if mode not in GC_MODES:
        raise ValueError(f"mode must be one of {GC_MODES}")
    if mode == "conditional" and ridge <= 0:
        raise ValueError("conditional mode requires ridge > 0")
    idx = np.flatnonzero(panel.valid)
    if len(idx) < 2:
        return None
    t = panel.matrix.shape[0]
    if t <= order + 1:
        raise ValueError(f"panel length {t} too short for order {order}")

    p = panel.matrix.shape[1]
    pair = np.full((p, p), np.nan)
    try:
        if mode == "bivariate":
            own = {
                i: _residual_variance(panel.matrix[:, [i]], order, ridge, 0)
                for i in idx
            }
            for i in idx:
                for j in idx:
                    if i == j:
                        continue
                    full = _residual_variance(panel.matrix[:, [i, j]], order, ridge, 0)
                    pair[i, j] = math.log(own[i] / full)
        else:
            cols = list(idx)
            fit_full = fit_var(panel.matrix[:, cols], order, ridge)
            for jpos, j in enumerate(cols):
                reduced_cols = [c for c in cols if c != j]
                fit_red = fit_var(panel.matrix[:, reduced_cols], order, ridge)
                for ipos_red, i in enumerate(reduced_cols):
                    ipos_full = cols.index(i)
                    pair[i, j] = math.log(
                        fit_red.sigma[ipos_red, ipos_red]
                        / fit_full.sigma[ipos_full, ipos_full]
                    )
    except RankDeficientVarError as exc:
        raise RankDeficientVarError(f"clip {panel.clip_id!r}: {exc}") from exc

    defined = ~np.isnan(pair)
    with np.errstate(invalid="ignore"):
        tiny_neg = defined & (pair < 0) & (pair > -_NEG_EPS)
    pair[tiny_neg] = 0.0
    return GcResult(
        clip_id=panel.clip_id,
        pairwise=pair,
        mean_coupling=float(pair[defined].mean()),
        order=order,
    )


# ---------------------------------------------------------------------------
# IO
# ---------------------------------------------------------------------------


def read_motion_csv(path: str | Path, participant_id: str) -> dict[str, MotionSeries]:
    """Read one participant's motion_distance CSV into per-clip series."""
    by_clip: dict[str, list[tuple[int, float, float]]] = {}
    for clip_id, idx, t0, values in iter_feature_rows(path, 1):
        by_clip.setdefault(clip_id, []).append((idx, t0, values[0]))
    out = {}
    for clip_id, rows in by_clip.items():
        rows.sort(key=lambda r: r[0])
        kept = [(t, v) for _, t, v in rows if not math.isnan(v)]
        out[clip_id] = MotionSeries(
            clip_id=clip_id,
            participant_id=participant_id,
            samples=np.array([v for _, v in kept]),
            timestamps=np.array([t for t, _ in kept]),
        )
    return out


def compute_clip_couplings(
    per_participant: dict[str, dict[str, MotionSeries]],
    order: int = DEFAULT_GC_ORDER,
    mode: str = "bivariate",
    ridge: float = DEFAULT_GC_RIDGE,
) -> dict[str, float]:
    """Mean pairwise coupling per clip; NaN where undefined."""
    clip_ids = sorted({c for streams in per_participant.values() for c in streams})
    out = {}
    for clip_id in clip_ids:
        series = [
            per_participant[pid][clip_id]
            for pid in sorted(per_participant)
            if clip_id in per_participant[pid]
        ]
        if len(series) < 2:
            out[clip_id] = math.nan
            continue
        panel = preprocess_motion(series)
        result = pairwise_gc(panel, order=order, mode=mode, ridge=ridge)
        out[clip_id] = math.nan if result is None else result.mean_coupling
    return out


def write_coupling_csv(path: str | Path, couplings: dict[str, float]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip_id", "mean_gc"])
        for clip_id in sorted(couplings):
            v = couplings[clip_id]
            writer.writerow([clip_id, "" if math.isnan(v) else repr(float(v))])


def read_coupling_csv(path: str | Path) -> dict[str, float]:
    path = Path(path)
    out: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["clip_id", "mean_gc"]:
            raise SchemaError(f"{path}: bad coupling header {header}")
        for row in reader:
            if not row:
                continue
            out[row[0]] = math.nan if row[1] == "" else float(row[1])
    return out
