import itertools
from fractions import Fraction

import numpy as np
import pytest

from erann.errors import InvalidInput, InvalidPlan
from erann.metrics import (
    accuracy,
    average_precision,
    cross_validate,
    grouped_folds,
    holdout_plan,
    mean_average_precision,
    official_folds,
)


def ap_oracle(ranked_labels):
    """Exact AP as a sum over rank cutoffs of precision times recall gain."""
    n_pos = sum(ranked_labels)
    total = Fraction(0)
    for k in range(1, len(ranked_labels) + 1):
        recall_gain = Fraction(ranked_labels[k - 1], n_pos)
        precision = Fraction(sum(ranked_labels[:k]), k)
        total += precision * recall_gain
    return total


def test_ap_exhaustive_rankings():
    rng = np.random.default_rng(0)
    checked = 0
    for n in range(1, 9):
        for labels in itertools.product((0, 1), repeat=n):
            if not any(labels):
                continue
            # present the ranking in shuffled order with distinct scores
            perm = rng.permutation(n)
            scores = np.empty(n)
            scores[perm] = np.arange(n, 0, -1)
            positives = np.empty(n, dtype=int)
            positives[perm] = labels
            assert average_precision(scores, positives) == pytest.approx(float(ap_oracle(labels)), abs=1e-12)
            checked += 1
    assert checked == sum(2**n - 1 for n in range(1, 9))


def test_ap_examples():
    assert average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(5 / 6)
    assert average_precision([0.1, 0.9, 0.8, 0.2], [0, 1, 1, 0]) == 1.0
    assert average_precision([0.3], [1]) == 1.0
    with pytest.raises(InvalidInput):
        average_precision([0.3, 0.2], [0, 0])


def test_ap_ties_keep_input_order():
    assert average_precision([0.5, 0.5], [0, 1]) == pytest.approx(0.5)
    assert average_precision([0.5, 0.5], [1, 0]) == 1.0


def test_map_against_per_class_oracle(rng):
    scores = rng.random((5, 4))
    targets = np.array([[1, 0, 0, 1], [0, 1, 0, 1], [1, 1, 0, 0], [0, 0, 1, 0], [0, 0, 1, 1]])
    per = []
    for k in range(4):
        order = np.argsort(-scores[:, k])
        per.append(ap_oracle(targets[order, k].tolist()))
    assert mean_average_precision(scores, targets) == pytest.approx(float(sum(per) / 4))


def test_map_skips_empty_classes():
    scores = np.array([[0.9, 0.1, 0.3], [0.2, 0.8, 0.4]])
    targets = np.array([[1, 0, 0], [0, 1, 0]])
    rep = mean_average_precision(scores, targets, report=True)
    assert rep.value == 1.0 and rep.skipped == [2]
    assert mean_average_precision(scores[:, :1], targets[:, :1]) == average_precision(scores[:, 0], targets[:, 0])
    with pytest.raises(InvalidInput):
        mean_average_precision(scores, np.zeros((2, 3)))


def test_accuracy_examples():
    assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    assert accuracy([1, 2, 0], [0, 1, 2]) == 0.0
    assert accuracy([0, 1, 1, 1], [0, 1, 1, 0]) == 0.75
    assert accuracy(np.eye(3), [0, 1, 2]) == 1.0
    with pytest.raises(InvalidInput):
        accuracy([], [])


def test_constant_model_cross_validation():
    labels = np.array([0, 1] * 10)
    plan = official_folds(np.repeat(np.arange(1, 6), 4))
    result = cross_validate(20, plan, lambda tr, te, seed: accuracy(np.zeros(len(te), int), labels[te]), repeats=2)
    assert all(v == 0.5 for v in result.per_fold.values())
    assert result.mean == 0.5
    assert len(result.per_fold) == 10
    assert list(result.lines())[-1] == "mean=0.500000"


def test_official_fold_checks():
    with pytest.raises(InvalidPlan):
        official_folds([1, 2, None])
    with pytest.raises(InvalidPlan):
        official_folds([1, 2, 4], expected=3)


def test_grouped_folds_keep_actors_together():
    actors = [f"actor{i % 10}" for i in range(60)] + ["actor3"] * 5
    plan = grouped_folds(actors, k=4)
    for a in set(actors):
        assert len({plan.assignments[i] for i, g in enumerate(actors) if g == a}) == 1
    assert plan.folds == [0, 1, 2, 3]
    with pytest.raises(InvalidPlan):
        grouped_folds(["a", "b"], k=4)


def test_holdout_and_plan_size():
    plan = holdout_plan(10, 0.3, seed=1)
    assert plan.assignments.sum() == 3
    seen = []
    cross_validate(10, plan, lambda tr, te, seed: seen.append(len(te)) or 0.0)
    assert seen == [3]
    with pytest.raises(InvalidPlan):
        cross_validate(11, plan, lambda tr, te, seed: 0.0)
