"""Stratified group k-fold assignment.

Whole groups (sessions) stay inside one fold; groups are shuffled by seed
and greedily placed where they least disturb the global class distribution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: dict[Hashable, int]
    seed: int

    def test_indices(self, groups: Sequence[Hashable], fold: int) -> np.ndarray:
        return np.array(
            [i for i, g in enumerate(groups) if self.assignments[g] == fold], dtype=int
        )

    def train_indices(self, groups: Sequence[Hashable], fold: int) -> np.ndarray:
        return np.array(
            [i for i, g in enumerate(groups) if self.assignments[g] != fold], dtype=int
        )


def _distribution_deviation(counts: np.ndarray, global_dist: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return float(np.abs(global_dist).sum())
    return float(np.abs(counts / total - global_dist).sum())


def stratified_group_kfold(
    groups: Sequence[Hashable],
    labels: Sequence[Hashable],
    k: int = 5,
    seed: int = 0,
) -> FoldPlan:
    """Assign each group to one of k folds, stratifying on class counts.

    Groups are visited in seed-shuffled order; each goes to the fold whose
    resulting class distribution deviates least (L1) from the global one,
    ties broken toward the smallest fold, then the lowest index. Folds are
    guaranteed nonempty whenever there are at least k groups.
    """
    if len(groups) != len(labels):
        raise ValueError("groups and labels must align")
    unique_groups = sorted(set(groups), key=str)
    if len(unique_groups) < k:
        raise ValueError(f"need at least {k} groups, got {len(unique_groups)}")
    if k < 2:
        raise ValueError("k must be >= 2")

    classes = sorted(set(labels), key=str)
    class_index = {c: i for i, c in enumerate(classes)}
    group_counts: dict[Hashable, np.ndarray] = {
        g: np.zeros(len(classes)) for g in unique_groups
    }
    for g, y in zip(groups, labels):
        group_counts[g][class_index[y]] += 1
    global_counts = sum(group_counts.values())
    global_dist = global_counts / global_counts.sum()

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(unique_groups))

    fold_counts = np.zeros((k, len(classes)))
    fold_groups = np.zeros(k, dtype=int)
    assignments: dict[Hashable, int] = {}
    remaining = len(unique_groups)
    for pos in order:
        g = unique_groups[pos]
        empty = np.flatnonzero(fold_groups == 0)
        # Keep every fold fillable: once spare groups run out, only empty
        # folds may take new ones.
        if 0 < len(empty) and remaining <= len(empty):
            candidates = empty
        else:
            candidates = np.arange(k)
        best_fold, best_key = -1, None
        for f in candidates:
            dev = _distribution_deviation(fold_counts[f] + group_counts[g], global_dist)
            key = (dev, fold_counts[f].sum(), f)
            if best_key is None or key < best_key:
                best_fold, best_key = f, key
        assignments[g] = int(best_fold)
        fold_counts[best_fold] += group_counts[g]
        fold_groups[best_fold] += 1
        remaining -= 1

    return FoldPlan(k=k, assignments=assignments, seed=seed)


def plan_deviation(
    plan: FoldPlan, groups: Sequence[Hashable], labels: Sequence[Hashable]
) -> float:
    """Total L1 deviation of fold class distributions from the global one."""
    classes = sorted(set(labels), key=str)
    class_index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((plan.k, len(classes)))
    for g, y in zip(groups, labels):
        counts[plan.assignments[g], class_index[y]] += 1
    global_dist = counts.sum(axis=0) / counts.sum()
    return sum(_distribution_deviation(counts[f], global_dist) for f in range(plan.k))
