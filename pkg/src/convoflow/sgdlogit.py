"""Elastic-net logistic regression trained by per-sample gradient descent.

Class weights N/(K*N_c) balance the loss; the L1 part of the penalty is
applied as a proximal (soft-threshold) step so weights can become exactly
zero. Multi-class problems train one-vs-rest heads sharing the sample
weights of the full problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .preprocess import Preprocessor

MAX_EPOCHS = 1000
LEARNING_RATE_0 = 0.01
LEARNING_RATE_POWER = 0.25
EARLY_STOP_TOL = 1e-4
EARLY_STOP_PATIENCE = 5


@dataclass(frozen=True)
class SgdConfig:
    alpha: float
    l1_ratio: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.l1_ratio <= 1.0:
            raise ValueError("l1_ratio must be in [0, 1]")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


@dataclass(frozen=True)
class LinearHead:
    weights: np.ndarray
    intercept: float
    epochs_run: int


@dataclass(frozen=True)
class TrainedModel:
    """Fitted preprocessing plus linear classifier heads.

    Binary tasks have one head scoring the positive class; the event task
    has one head per class. layout_id must match at prediction time.
    """

    task: str
    classes: tuple
    heads: tuple[LinearHead, ...]
    preprocessor: Preprocessor
    config: SgdConfig
    layout_id: str

    def decision_values(self, z: np.ndarray) -> np.ndarray:
        return np.column_stack([z @ h.weights + h.intercept for h in self.heads])

    def predict_scores(self, x_raw: np.ndarray, layout_id: str | None = None) -> np.ndarray:
        """Raw features -> class probability scores.

        Binary tasks return the positive-class probability (n,); the event
        task returns softmax-normalized one-vs-rest scores (n, K).
        """
        if layout_id is not None and layout_id != self.layout_id:
            raise ValueError(
                f"feature layout mismatch: model has {self.layout_id}, data has {layout_id}"
            )
        x_raw = np.atleast_2d(np.asarray(x_raw, dtype=float))
        z = self.preprocessor.transform(x_raw)
        values = self.decision_values(z)
        if len(self.heads) == 1:
            return _sigmoid(values[:, 0])
        shifted = values - values.max(axis=1, keepdims=True)
        expv = np.exp(shifted)
        return expv / expv.sum(axis=1, keepdims=True)

    def predict_classes(self, x_raw: np.ndarray, layout_id: str | None = None):
        scores = self.predict_scores(x_raw, layout_id)
        if scores.ndim == 1:
            return np.array([self.classes[int(s >= 0.5)] for s in scores])
        return np.array([self.classes[i] for i in scores.argmax(axis=1)])


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def balanced_class_weights(y: Sequence) -> dict:
    """w_c = N / (K * N_c): every class carries equal total loss weight."""
    y = list(y)
    classes = sorted(set(y), key=str)
    n, k = len(y), len(classes)
    return {c: n / (k * sum(1 for v in y if v == c)) for c in classes}


def _objective(
    x: np.ndarray, y01: np.ndarray, sw: np.ndarray,
    w: np.ndarray, b: float, alpha: float, l1_ratio: float,
) -> float:
    margin = x @ w + b
    # log(1 + exp(-m*y')) with y' in {-1, +1}, numerically stable
    signed = np.where(y01 == 1, margin, -margin)
    loss = np.logaddexp(0.0, -signed)
    penalty = alpha * (
        l1_ratio * np.abs(w).sum() + (1 - l1_ratio) * 0.5 * float(w @ w)
    )
    return float((sw * loss).sum() / sw.size) + penalty


def _fit_binary_head(
    x: np.ndarray,
    y01: np.ndarray,
    sample_weights: np.ndarray,
    config: SgdConfig,
    seed_stream: np.random.Generator,
) -> LinearHead:
    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    alpha, l1 = config.alpha, config.l1_ratio
    best = math.inf
    stale = 0
    t = 0
    epochs = 0
    for epoch in range(MAX_EPOCHS):
        epochs = epoch + 1
        for i in seed_stream.permutation(n):
            t += 1
            eta = LEARNING_RATE_0 / t**LEARNING_RATE_POWER
            p = 0.5 * (1.0 + math.tanh(0.5 * (float(x[i] @ w) + b)))
            g = sample_weights[i] * (p - y01[i])
            w -= eta * (g * x[i] + alpha * (1 - l1) * w)
            if alpha * l1 > 0:
                w = np.sign(w) * np.maximum(np.abs(w) - eta * alpha * l1, 0.0)
            b -= eta * g
        loss = _objective(x, y01, sample_weights, w, b, alpha, l1)
        if loss < best - EARLY_STOP_TOL:
            best = loss
            stale = 0
        else:
            stale += 1
            if stale >= EARLY_STOP_PATIENCE:
                break
    return LinearHead(weights=w, intercept=b, epochs_run=epochs)


def train_sgd_logistic(
    z_train: np.ndarray,
    y_train: Sequence,
    config: SgdConfig,
    task: str = "fluidity",
    preprocessor: Preprocessor | None = None,
    layout_id: str = "",
) -> TrainedModel:
    """Train the elastic-net logistic model on transformed features.

    Deterministic for a given config seed. Binary targets train a single
    positive-class head; other targets train one-vs-rest heads.
    """
    z = np.asarray(z_train, dtype=float)
    y = list(y_train)
    classes = sorted(set(y), key=str)
    if len(classes) < 2:
        raise ValueError("need at least 2 classes in y_train")

    weights_by_class = balanced_class_weights(y)
    sample_weights = np.array([weights_by_class[v] for v in y])

    heads = []
    if len(classes) == 2:
        y01 = np.array([1.0 if v == classes[1] else 0.0 for v in y])
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
        heads.append(_fit_binary_head(z, y01, sample_weights, config, rng))
    else:
        for ci, c in enumerate(classes):
            y01 = np.array([1.0 if v == c else 0.0 for v in y])
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, ci]))
            heads.append(_fit_binary_head(z, y01, sample_weights, config, rng))

    if preprocessor is None:
        # Identity placeholder keeps predict_scores usable on z-space inputs.
        d = z.shape[1]
        from .preprocess import PcaBasis

        preprocessor = Preprocessor(
            impute_values=np.zeros(d),
            never_observed=np.zeros(d, dtype=bool),
            means=np.zeros(d),
            scales=np.ones(d),
            basis=PcaBasis(components=np.eye(d), explained_variance=np.ones(d)),
            n_components=d,
            pca_target=1.0,
        )
    return TrainedModel(
        task=task,
        classes=tuple(classes),
        heads=tuple(heads),
        preprocessor=preprocessor,
        config=config,
        layout_id=layout_id,
    )
