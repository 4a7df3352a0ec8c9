"""Cross-validated training with hyperparameter search, and cross-task scoring.

The objective Bayesian optimization maximizes is the mean macro ROC-AUC over
5 session-grouped folds; imputation, standardization, and the PCA basis are
fit inside each training fold only. Per-fold hold-out scores are kept so a
model tuned for one target can be scored against another.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .bayesopt import BayesOptResult, Evaluation, bayes_optimize
from .folds import FoldPlan, stratified_group_kfold
from .fusion import FusedDataset
from .metrics import Metrics, evaluate
from .preprocess import Preprocessor, fit_preprocessor
from .sgdlogit import SgdConfig, TrainedModel, train_sgd_logistic

TASKS = ("fluidity", "enjoyment", "event")
DEFAULT_BOUNDS = {
    "pca": (0.50, 0.99),
    "log10_alpha": (-10.0, 0.0),
    "l1_ratio": (0.0, 1.0),
}


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    iterations: int = 600
    k: int = 5
    seed: int = 0
    bounds: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_BOUNDS)
    )

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if set(self.bounds) != set(DEFAULT_BOUNDS):
            raise ValueError(f"bounds must name exactly {sorted(DEFAULT_BOUNDS)}")


@dataclass
class FoldOutcome:
    fold: int
    model: TrainedModel
    test_rows: np.ndarray  # indices into the full dataset
    scores: np.ndarray
    metrics: Metrics


@dataclass
class CvResult:
    task: str
    layout_id: str
    config: ExperimentConfig
    fold_plan: FoldPlan
    best_params: dict[str, float]
    best_objective: float
    folds: list[FoldOutcome]
    trace: list[Evaluation]

    @property
    def classes(self) -> tuple:
        return self.folds[0].metrics.classes

    def mean_metric(self, name: str) -> float | None:
        values = [getattr(f.metrics, name) for f in self.folds]
        values = [v for v in values if v is not None]
        return float(np.mean(values)) if values else None

    def total_confusion(self) -> np.ndarray:
        return np.sum([f.metrics.confusion for f in self.folds], axis=0)

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "layout_id": self.layout_id,
            "k": self.config.k,
            "iterations": self.config.iterations,
            "seed": self.config.seed,
            "best_params": dict(sorted(self.best_params.items())),
            "best_alpha": 10.0 ** self.best_params["log10_alpha"],
            "best_objective": self.best_objective,
            "classes": [str(c) for c in self.classes],
            "folds": [
                {"fold": f.fold, "n_test": int(len(f.test_rows)),
                 "metrics": f.metrics.to_json()}
                for f in self.folds
            ],
            "mean": {
                name: self.mean_metric(name)
                for name in ("roc_auc", "average_precision", "f1", "balanced_accuracy")
            },
            "confusion_total": self.total_confusion().tolist(),
            "trace": [
                {"params": dict(sorted(e.params.items())), "value": e.value,
                 "failed": e.failed}
                for e in self.trace
            ],
        }


def _derived_seed(seed: int, *parts: int) -> int:
    ss = np.random.SeedSequence([seed, *parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2**63))


def task_rows(dataset: FusedDataset, task: str):
    """Row indices carrying the task's label, plus those labels."""
    if task in ("fluidity", "enjoyment"):
        raw = dataset.task_labels(task)
        rows = np.flatnonzero(~np.isnan(raw))
        labels = [int(raw[i]) for i in rows]
    elif task == "event":
        rows = np.array([i for i, e in enumerate(dataset.event) if e is not None],
                        dtype=int)
        labels = [dataset.event[i] for i in rows]
    else:
        raise ValueError(f"unknown task {task!r}")
    return rows, labels


def _fit_fold_models(
    dataset: FusedDataset,
    rows: np.ndarray,
    labels: Sequence,
    plan: FoldPlan,
    task: str,
    params: Mapping[str, float],
    seed: int,
    base_preprocessors: list[Preprocessor],
) -> list[FoldOutcome]:
    groups = [dataset.session_ids[i] for i in rows]
    outcomes = []
    for fold in range(plan.k):
        train_local = plan.train_indices(groups, fold)
        test_local = plan.test_indices(groups, fold)
        pre = base_preprocessors[fold].with_target(params["pca"])
        x = dataset.features[rows]
        y_train = [labels[i] for i in train_local]
        z_train = pre.transform(x[train_local])
        model = train_sgd_logistic(
            z_train,
            y_train,
            SgdConfig(
                alpha=10.0 ** params["log10_alpha"],
                l1_ratio=params["l1_ratio"],
                seed=_derived_seed(seed, fold),
            ),
            task=task,
            preprocessor=pre,
            layout_id=dataset.layout.layout_id,
        )
        scores = model.predict_scores(x[test_local], dataset.layout.layout_id)
        y_test = [labels[i] for i in test_local]
        outcomes.append(
            FoldOutcome(
                fold=fold,
                model=model,
                test_rows=rows[test_local],
                scores=scores,
                metrics=evaluate(scores, y_test, model.classes),
            )
        )
    return outcomes


def run_cv_experiment(dataset: FusedDataset, config: ExperimentConfig) -> CvResult:
    """Optimize hyperparameters against grouped-CV ROC-AUC, then report.

    Preprocessing statistics are fit on each training fold only; the SVD
    basis per fold is cached and re-cut per candidate, which is equivalent
    to refitting at each explained-variance target.
    """
    rows, labels = task_rows(dataset, config.task)
    if len(rows) == 0:
        raise ValueError(f"dataset has no labels for task {config.task!r}")
    groups = [dataset.session_ids[i] for i in rows]
    plan = stratified_group_kfold(
        groups, labels, k=config.k, seed=_derived_seed(config.seed, 0xF01D)
    )

    x = dataset.features[rows]
    base_preprocessors = []
    for fold in range(config.k):
        train_local = plan.train_indices(groups, fold)
        base_preprocessors.append(
            fit_preprocessor(x[train_local], config.task, pca_target=1.0)
        )

    def objective(params: dict[str, float]) -> float:
        outcomes = _fit_fold_models(
            dataset, rows, labels, plan, config.task, params, config.seed,
            base_preprocessors,
        )
        aucs = [o.metrics.roc_auc for o in outcomes]
        if any(a is None for a in aucs):
            raise RuntimeError("ROC-AUC undefined on a fold (single-class hold-out)")
        return float(np.mean([a for a in aucs if a is not None]))

    search: BayesOptResult = bayes_optimize(
        objective,
        config.bounds,
        iterations=config.iterations,
        seed=_derived_seed(config.seed, 0x0B0),
    )

    folds = _fit_fold_models(
        dataset, rows, labels, plan, config.task, search.best_params, config.seed,
        base_preprocessors,
    )
    return CvResult(
        task=config.task,
        layout_id=dataset.layout.layout_id,
        config=config,
        fold_plan=plan,
        best_params=search.best_params,
        best_objective=search.best_value,
        folds=folds,
        trace=search.trace,
    )


def cross_predict(result: CvResult, dataset: FusedDataset, other_task: str) -> dict:
    """Score one target's fold models against another binary target's labels.

    Each fold's hold-out scores are evaluated against the other task's labels
    on the clips that have them; fold metrics are aggregated as usual.
    """
    if other_task not in ("fluidity", "enjoyment"):
        raise ValueError("cross-prediction target must be a binary task")
    if result.layout_id != dataset.layout.layout_id:
        raise ValueError("feature layout mismatch between model and dataset")
    if len(result.classes) != 2:
        raise ValueError("cross-prediction needs a binary source model")

    other = dataset.task_labels(other_task)
    fold_reports = []
    per_fold_metrics: list[Metrics] = []
    for outcome in result.folds:
        keep = [
            (j, int(other[row]))
            for j, row in enumerate(outcome.test_rows)
            if not math.isnan(other[row])
        ]
        if not keep:
            continue
        idx = np.array([j for j, _ in keep], dtype=int)
        y_other = [y for _, y in keep]
        m = evaluate(outcome.scores[idx], y_other, (0, 1))
        per_fold_metrics.append(m)
        fold_reports.append(
            {"fold": outcome.fold, "n_test": len(keep), "metrics": m.to_json()}
        )
    if not per_fold_metrics:
        raise ValueError(f"no labels for task {other_task!r} on held-out clips")

    def mean_of(name: str):
        vals = [getattr(m, name) for m in per_fold_metrics]
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    return {
        "source_task": result.task,
        "target_task": other_task,
        "layout_id": result.layout_id,
        "folds": fold_reports,
        "mean": {
            name: mean_of(name)
            for name in ("roc_auc", "average_precision", "f1", "balanced_accuracy")
        },
        "confusion_total": np.sum(
            [m.confusion for m in per_fold_metrics], axis=0
        ).tolist(),
    }
