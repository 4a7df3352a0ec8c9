"""Hyperparameter search: Gaussian-process surrogate + expected improvement.

The surrogate uses a Matern-5/2 kernel on inputs normalized to the unit
cube, with a small fixed noise term; the acquisition is maximized by a
quasi-random scan followed by local refinement. Everything is deterministic
for a given seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import erf

log = logging.getLogger(__name__)

N_INITIAL_PROBES = 10
N_SCAN_CANDIDATES = 1024
N_INCUMBENT_CANDIDATES = 256
REFINE_ROUNDS = ((128, 0.05), (128, 0.02), (128, 0.008))
LENGTH_SCALES = (0.05, 0.1, 0.2, 0.4)
NOISE_VARIANCE = 1e-6

_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29)


def _halton(n: int, dims: int, start: int = 0) -> np.ndarray:
    """Unscrambled Halton points; callers rotate them for seeding."""
    if dims > len(_PRIMES):
        raise ValueError(f"at most {len(_PRIMES)} dimensions supported")
    out = np.empty((n, dims))
    for d in range(dims):
        base = _PRIMES[d]
        for i in range(n):
            index = start + i + 1
            f, value = 1.0, 0.0
            while index > 0:
                f /= base
                value += f * (index % base)
                index //= base
            out[i, d] = value
    return out


def _matern52(dist: np.ndarray, length_scale: float) -> np.ndarray:
    a = math.sqrt(5.0) * dist / length_scale
    return (1.0 + a + a * a / 3.0) * np.exp(-a)


def _cdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return np.sqrt(np.maximum(d2, 0.0))


@dataclass
class _GpPosterior:
    x: np.ndarray
    alpha: np.ndarray
    chol: np.ndarray
    length_scale: float
    noise: float
    y_mean: float
    y_std: float

    def predict(self, candidates: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k_star = _matern52(_cdist(candidates, self.x), self.length_scale)
        mean = k_star @ self.alpha
        v = solve_triangular(self.chol, k_star.T, lower=True)
        var = 1.0 + self.noise - (v**2).sum(axis=0)
        var = np.maximum(var, 1e-12)
        return mean * self.y_std + self.y_mean, np.sqrt(var) * self.y_std


def _fit_gp(x: np.ndarray, y: np.ndarray) -> _GpPosterior:
    y_mean = float(y.mean())
    y_std = float(y.std())
    if y_std <= 0:
        y_std = 1.0
    yn = (y - y_mean) / y_std
    # The noise term lives on the raw objective scale; for a deterministic
    # objective it is pure numerical jitter, so it shrinks under standardization.
    noise = max(NOISE_VARIANCE / y_std**2, 1e-10)

    best = None
    dist = _cdist(x, x)
    for ls in LENGTH_SCALES:
        k = _matern52(dist, ls) + noise * np.eye(len(x))
        chol = None
        for jitter in (0.0, 1e-8, 1e-6):
            try:
                chol = np.linalg.cholesky(k + jitter * np.eye(len(x)))
                break
            except np.linalg.LinAlgError:
                continue
        if chol is None:
            continue
        alpha = solve_triangular(
            chol.T, solve_triangular(chol, yn, lower=True), lower=False
        )
        lml = (
            -0.5 * float(yn @ alpha)
            - float(np.log(np.diag(chol)).sum())
            - 0.5 * len(x) * math.log(2 * math.pi)
        )
        if best is None or lml > best[0]:
            best = (lml, ls, chol, alpha)
    if best is None:
        raise np.linalg.LinAlgError("surrogate covariance is not positive definite")
    _, ls, chol, alpha = best
    return _GpPosterior(x=x, alpha=alpha, chol=chol, length_scale=ls, noise=noise,
                        y_mean=y_mean, y_std=y_std)


def _expected_improvement(
    mean: np.ndarray, std: np.ndarray, incumbent: float
) -> np.ndarray:
    z = (mean - incumbent) / std
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    cdf = 0.5 * (1.0 + erf(z / math.sqrt(2.0)))
    return (mean - incumbent) * cdf + std * pdf


@dataclass(frozen=True)
class Evaluation:
    params: dict[str, float]
    value: float
    failed: bool = False


@dataclass(frozen=True)
class BayesOptResult:
    best_params: dict[str, float]
    best_value: float
    trace: list[Evaluation]


def bayes_optimize(
    objective: Callable[[dict[str, float]], float],
    bounds: Mapping[str, tuple[float, float]],
    iterations: int = 600,
    seed: int = 0,
    n_initial: int = N_INITIAL_PROBES,
) -> BayesOptResult:
    """Maximize a black-box objective over a box of named parameters.

    The first n_initial points are quasi-random probes; the rest maximize
    expected improvement under the surrogate. A failing objective records
    the worst value seen so far and the search continues.
    """
    names = list(bounds)
    lo = np.array([bounds[n][0] for n in names], dtype=float)
    hi = np.array([bounds[n][1] for n in names], dtype=float)
    if np.any(hi <= lo):
        raise ValueError("each bound needs hi > lo")
    dims = len(names)
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    n_initial = min(n_initial, iterations)

    rot = np.random.default_rng(np.random.SeedSequence([seed, 0xC0FFEE])).uniform(
        size=dims
    )
    initial = (_halton(n_initial, dims) + rot) % 1.0

    xs: list[np.ndarray] = []
    ys: list[float] = []
    trace: list[Evaluation] = []

    def run_point(unit: np.ndarray) -> None:
        params = {n: float(lo[i] + unit[i] * (hi[i] - lo[i])) for i, n in enumerate(names)}
        try:
            value = float(objective(params))
            failed = not math.isfinite(value)
        except Exception:  # noqa: BLE001 - search must survive bad configs
            log.warning("objective failed at %s; recording worst", params, exc_info=True)
            value, failed = math.nan, True
        if failed:
            value = min(ys) if ys else 0.0
        xs.append(unit.copy())
        ys.append(value)
        trace.append(Evaluation(params=params, value=value, failed=failed))

    for u in initial:
        run_point(u)

    for it in range(n_initial, iterations):
        rng = np.random.default_rng(np.random.SeedSequence([seed, it]))
        gp = _fit_gp(np.vstack(xs), np.array(ys))
        incumbent = max(ys)

        candidates = (_halton(N_SCAN_CANDIDATES, dims, start=it * N_SCAN_CANDIDATES)
                      + rng.uniform(size=dims)) % 1.0
        # Exploitation pool around the incumbent sharpens the final coordinates.
        around_best = np.clip(
            xs[int(np.argmax(ys))]
            + rng.normal(size=(N_INCUMBENT_CANDIDATES, dims))
            * rng.choice([0.01, 0.03, 0.1], size=(N_INCUMBENT_CANDIDATES, 1)),
            0.0, 1.0,
        )
        candidates = np.vstack([candidates, around_best])
        # Every fourth pick exploits the posterior mean outright; the rest
        # maximize expected improvement.
        exploit = (it - n_initial) % 4 == 3

        def score(points: np.ndarray) -> np.ndarray:
            mean, std = gp.predict(points)
            if exploit:
                return mean
            return _expected_improvement(mean, std, incumbent)

        value = score(candidates)
        best_u = candidates[int(np.argmax(value))]
        best_value = float(value.max())
        for n_local, sigma in REFINE_ROUNDS:
            local = np.clip(
                best_u + rng.normal(scale=sigma, size=(n_local, dims)), 0.0, 1.0
            )
            value = score(local)
            if float(value.max()) > best_value:
                best_value = float(value.max())
                best_u = local[int(np.argmax(value))]

        if any(np.abs(best_u - x).max() < 1e-10 for x in xs):
            best_u = rng.uniform(size=dims)
        run_point(best_u)

    best_i = int(np.argmax(ys))
    return BayesOptResult(
        best_params=trace[best_i].params, best_value=ys[best_i], trace=trace
    )
