import json
import math

import numpy as np
import pytest

from convoflow.experiment import (
    ExperimentConfig,
    cross_predict,
    run_cv_experiment,
    task_rows,
)
from convoflow.folds import stratified_group_kfold
from convoflow.preprocess import fit_preprocessor

from conftest import planted_dataset


@pytest.fixture(scope="module")
def small_result():
    ds = planted_dataset(n_sessions=10, clips_per_session=6, seed=3)
    config = ExperimentConfig(task="fluidity", iterations=12, k=5, seed=21)
    return ds, run_cv_experiment(ds, config)


def test_experiment_recovers_planted_signal(small_result):
    _, result = small_result
    assert result.mean_metric("roc_auc") > 0.8
    assert result.best_objective > 0.8
    assert len(result.trace) == 12


def test_group_integrity_in_folds(small_result):
    ds, result = small_result
    rows, _ = task_rows(ds, "fluidity")
    groups = [ds.session_ids[i] for i in rows]
    for fold in range(result.fold_plan.k):
        train = {groups[i] for i in result.fold_plan.train_indices(groups, fold)}
        test = {groups[i] for i in result.fold_plan.test_indices(groups, fold)}
        assert not train & test
    covered = sorted(
        int(r) for outcome in result.folds for r in outcome.test_rows
    )
    assert covered == sorted(int(r) for r in rows)


def test_experiment_deterministic(small_result):
    ds, first = small_result
    config = ExperimentConfig(task="fluidity", iterations=12, k=5, seed=21)
    second = run_cv_experiment(ds, config)
    assert json.dumps(first.to_json(), sort_keys=True) == json.dumps(
        second.to_json(), sort_keys=True
    )


def test_report_json_structure(small_result):
    _, result = small_result
    blob = result.to_json()
    assert blob["task"] == "fluidity"
    assert len(blob["folds"]) == 5
    assert set(blob["mean"]) == {"roc_auc", "average_precision", "f1",
                                 "balanced_accuracy"}
    assert len(blob["trace"]) == 12
    for point in blob["trace"]:
        assert 0.5 <= point["params"]["pca"] <= 0.99
        assert -10 <= point["params"]["log10_alpha"] <= 0
        assert 0 <= point["params"]["l1_ratio"] <= 1
    confusion = np.array(blob["confusion_total"])
    rows, labels = task_rows(planted_dataset(10, 6, seed=3), "fluidity")
    assert confusion.sum() == len(rows)


def test_no_leakage_perturbing_heldout_row():
    ds = planted_dataset(n_sessions=8, clips_per_session=5, seed=5)
    rows, labels = task_rows(ds, "fluidity")
    groups = [ds.session_ids[i] for i in rows]
    plan = stratified_group_kfold(groups, labels, k=4, seed=0)
    x = ds.features[rows]
    fold = 0
    train_idx = plan.train_indices(groups, fold)
    test_idx = plan.test_indices(groups, fold)

    before = fit_preprocessor(x[train_idx], "fluidity", 0.9)
    x_tampered = x.copy()
    x_tampered[test_idx[0]] += 1e6  # held-out row must not matter
    after = fit_preprocessor(x_tampered[train_idx], "fluidity", 0.9)
    assert np.array_equal(before.impute_values, after.impute_values)
    assert np.array_equal(before.means, after.means)
    assert np.array_equal(before.scales, after.scales)
    assert np.array_equal(before.components, after.components)


def test_cross_predict_identity(small_result):
    ds, result = small_result
    report = cross_predict(result, ds, "fluidity")
    assert report["mean"]["roc_auc"] == pytest.approx(result.mean_metric("roc_auc"))
    assert report["mean"]["f1"] == pytest.approx(result.mean_metric("f1"))


def test_cross_predict_negation_complements_auc(small_result):
    ds, result = small_result
    flipped = ds.__class__(
        clip_ids=ds.clip_ids,
        session_ids=ds.session_ids,
        features=ds.features,
        layout=ds.layout,
        fluidity=ds.fluidity,
        enjoyment=1.0 - ds.fluidity,  # negated labels in the enjoyment slot
        event=ds.event,
    )
    direct = cross_predict(result, flipped, "fluidity")
    negated = cross_predict(result, flipped, "enjoyment")
    assert negated["mean"]["roc_auc"] == pytest.approx(
        1.0 - direct["mean"]["roc_auc"], abs=1e-12
    )


def test_cross_predict_noisy_labels_close():
    # Label noise keeps the base ROC-AUC below 1, and folds are big enough
    # that a 10% flip moves the mean by its analytic ~0.08 rather than by
    # single-clip noise.
    ds = planted_dataset(n_sessions=20, clips_per_session=12, seed=17, label_noise=0.7)
    result = run_cv_experiment(
        ds, ExperimentConfig(task="fluidity", iterations=8, k=5, seed=4)
    )
    rng = np.random.default_rng(11)
    noisy = ds.fluidity.copy()
    flip = rng.random(len(noisy)) < 0.10
    noisy[flip] = 1.0 - noisy[flip]
    other = ds.__class__(
        clip_ids=ds.clip_ids, session_ids=ds.session_ids, features=ds.features,
        layout=ds.layout, fluidity=ds.fluidity, enjoyment=noisy, event=ds.event,
    )
    report = cross_predict(result, other, "enjoyment")

    # independent recomputation: same scores, flipped labels, fold by fold
    from convoflow.metrics import evaluate

    aucs = []
    for outcome in result.folds:
        y = [int(noisy[r]) for r in outcome.test_rows]
        if len(set(y)) < 2:
            continue
        aucs.append(evaluate(outcome.scores, y, (0, 1)).roc_auc)
    assert report["mean"]["roc_auc"] == pytest.approx(float(np.mean(aucs)))
    assert abs(report["mean"]["roc_auc"] - result.mean_metric("roc_auc")) < 0.1


def test_cross_predict_rejects_layout_mismatch(small_result):
    ds, result = small_result
    other = planted_dataset(n_sessions=6, clips_per_session=5, seed=9)
    from convoflow.fusion import FusionSpec

    reshaped = other.__class__(
        clip_ids=other.clip_ids, session_ids=other.session_ids,
        features=other.features[:, :120],
        layout=FusionSpec(domains=("face_au", "gc")).layout(),
        fluidity=other.fluidity, enjoyment=other.enjoyment, event=other.event,
    )
    with pytest.raises(ValueError, match="layout"):
        cross_predict(result, reshaped, "fluidity")


def test_event_task_three_classes():
    rng = np.random.default_rng(13)
    ds = planted_dataset(n_sessions=10, clips_per_session=6, seed=13)
    events = ["gap", "interrupt", "backchannel"]
    ds.event = [events[int(rng.integers(0, 3))] for _ in ds.clip_ids]
    config = ExperimentConfig(task="event", iterations=11, k=5, seed=2)
    result = run_cv_experiment(ds, config)
    assert result.classes == ("backchannel", "gap", "interrupt")
    assert result.total_confusion().shape == (3, 3)
    assert 0.15 < result.mean_metric("balanced_accuracy") < 0.55  # labels are noise


def test_missing_task_labels_rejected():
    ds = planted_dataset(n_sessions=6, clips_per_session=4, seed=1)
    with pytest.raises(ValueError, match="no labels"):
        run_cv_experiment(ds, ExperimentConfig(task="event", iterations=5, k=5, seed=0))
