"""Fit-on-train-only preprocessing: imputation, standardization, PCA.

Missing values are imputed with the training median (mode for the event
task), features are z-normalized, and a truncated SVD basis keeps the
smallest component count reaching the requested explained variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PcaBasis:
    """Full SVD of the standardized training matrix, cut to order later.

    Splitting the (data-dependent) SVD from the (config-dependent) component
    count lets a hyperparameter search reuse one decomposition per fold.
    """

    components: np.ndarray  # (rank, n_features) rows = principal axes
    explained_variance: np.ndarray  # per-component, descending

    def n_for_target(self, target: float) -> int:
        total = self.explained_variance.sum()
        if len(self.explained_variance) == 0 or total <= 0:
            return 1
        cumulative = np.cumsum(self.explained_variance) / total
        return int(np.searchsorted(cumulative, target - 1e-12) + 1)


@dataclass(frozen=True)
class Preprocessor:
    """Frozen imputation/standardization/projection parameters."""

    impute_values: np.ndarray
    never_observed: np.ndarray  # features with no training observation
    means: np.ndarray
    scales: np.ndarray
    basis: PcaBasis
    n_components: int
    pca_target: float

    @property
    def components(self) -> np.ndarray:
        return self.basis.components[: self.n_components]

    def transform(self, x: np.ndarray) -> np.ndarray:
        filled = np.where(np.isnan(x), self.impute_values, x)
        standardized = (filled - self.means) / self.scales
        return standardized @ self.components.T

    def with_target(self, pca_target: float) -> "Preprocessor":
        """Same fitted statistics, different explained-variance cutoff."""
        n = min(self.basis.n_for_target(pca_target), len(self.basis.explained_variance))
        return Preprocessor(
            impute_values=self.impute_values,
            never_observed=self.never_observed,
            means=self.means,
            scales=self.scales,
            basis=self.basis,
            n_components=max(n, 1),
            pca_target=pca_target,
        )


def _column_median(column: np.ndarray) -> float:
    observed = column[~np.isnan(column)]
    return float(np.median(observed)) if observed.size else 0.0


def _column_mode(column: np.ndarray) -> float:
    observed = column[~np.isnan(column)]
    if not observed.size:
        return 0.0
    values, counts = np.unique(observed, return_counts=True)
    return float(values[np.argmax(counts)])  # unique() sorts, so ties go low


def _svd_flip(u: np.ndarray, vt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Pin the sign of each component to its largest-magnitude loading.
    signs = np.sign(vt[np.arange(vt.shape[0]), np.argmax(np.abs(vt), axis=1)])
    signs[signs == 0] = 1.0
    return u * signs, vt * signs[:, None]


def fit_preprocessor(
    x_train: np.ndarray, task: str, pca_target: float
) -> Preprocessor:
    """Fit imputation, standardization, and the PCA basis on training rows.

    Event classification imputes the per-feature mode; the binary tasks use
    the median. Zero-variance features keep scale 1. The retained component
    count is the smallest whose cumulative explained variance reaches
    pca_target.
    """
    x_train = np.asarray(x_train, dtype=float)
    if x_train.ndim != 2 or x_train.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least 2 training rows")
    if not 0.0 < pca_target <= 1.0:
        raise ValueError("pca_target must be in (0, 1]")

    fill = _column_mode if task == "event" else _column_median
    impute_values = np.array([fill(x_train[:, j]) for j in range(x_train.shape[1])])
    never_observed = np.all(np.isnan(x_train), axis=0)

    filled = np.where(np.isnan(x_train), impute_values, x_train)
    means = filled.mean(axis=0)
    scales = filled.std(axis=0)
    scales = np.where(scales == 0.0, 1.0, scales)
    standardized = (filled - means) / scales

    u, s, vt = np.linalg.svd(standardized, full_matrices=False)
    u, vt = _svd_flip(u, vt)
    explained = s**2 / (x_train.shape[0] - 1)
    keep = s > s[0] * 1e-12 if s.size and s[0] > 0 else np.zeros(len(s), dtype=bool)
    rank = max(int(keep.sum()), 1)

    basis = PcaBasis(components=vt[:rank], explained_variance=explained[:rank])
    n = min(basis.n_for_target(pca_target), rank)
    return Preprocessor(
        impute_values=impute_values,
        never_observed=never_observed,
        means=means,
        scales=scales,
        basis=basis,
        n_components=max(n, 1),
        pca_target=pca_target,
    )
