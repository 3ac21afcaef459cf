"""Ranking and classification metrics, and cross-validation drivers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidInput, InvalidPlan


def average_precision(scores, positives) -> float:
    """Non-interpolated AP over the score-descending ranking.

    Ties keep input order (stable sort). Raises ``InvalidInput`` when there
    is no positive item.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(positives).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise InvalidInput(f"scores {s.shape} and positives {y.shape} must be equal 1-D shapes")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise InvalidInput("average precision is undefined without positives")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    # recall steps by 1/n_pos exactly at each positive
    return float(precision[hits].sum() / n_pos)


@dataclass
class MapReport:
    value: float
    per_class: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)


def mean_average_precision(scores, targets, report: bool = False):
    """Unweighted mean AP over classes that have at least one positive.

    With ``report=True`` returns a :class:`MapReport` listing skipped classes.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(targets) > 0.5
    if s.shape != y.shape or s.ndim != 2:
        raise InvalidInput(f"scores {s.shape} and targets {y.shape} must be equal 2-D shapes")
    per_class, skipped = {}, []
    for k in range(s.shape[1]):
        if y[:, k].any():
            per_class[k] = average_precision(s[:, k], y[:, k])
        else:
            skipped.append(k)
    if not per_class:
        raise InvalidInput("no class has a positive example")
    value = float(np.mean(list(per_class.values())))
    if report:
        return MapReport(value, per_class, skipped)
    return value


def accuracy(predictions, targets) -> float:
    """Fraction of rows whose argmax matches the target.

    Either argument may be a label vector or a score/one-hot matrix; argmax
    ties resolve to the lowest class index.
    """
    p = np.asarray(predictions)
    t = np.asarray(targets)
    if p.ndim == 2:
        p = p.argmax(axis=1)
    if t.ndim == 2:
        t = t.argmax(axis=1)
    if p.shape != t.shape:
        raise InvalidInput(f"predictions {p.shape} and targets {t.shape} differ")
    if p.size == 0:
        raise InvalidInput("accuracy of an empty set is undefined")
    return float(np.mean(p == t))


# --------------------------------------------------------------------------
# fold plans


SCHEMES = ("official", "grouped", "holdout")


@dataclass
class FoldPlan:
    scheme: str
    assignments: np.ndarray  # fold id per clip

    @property
    def folds(self) -> list:
        return sorted(int(f) for f in np.unique(self.assignments))

    def split(self, fold: int):
        test = np.flatnonzero(self.assignments == fold)
        train = np.flatnonzero(self.assignments != fold)
        return train, test

    def validate(self, n_folds: Optional[int] = None) -> None:
        folds = self.folds
        if n_folds is not None and len(folds) != n_folds:
            raise InvalidPlan(f"expected {n_folds} folds, plan has {len(folds)}")
        for f in folds:
            if not np.any(self.assignments == f):
                raise InvalidPlan(f"fold {f} is empty")


def official_folds(fold_column: Sequence, expected: Optional[int] = None) -> FoldPlan:
    """Plan from a per-clip fold column (e.g. 5 folds for ESC-50, 10 for US8K)."""
    if any(f is None for f in fold_column):
        raise InvalidPlan("every clip needs a fold id for the official scheme")
    plan = FoldPlan("official", np.asarray(fold_column, dtype=np.int64))
    if expected is not None:
        found = plan.folds
        if found != list(range(found[0], found[0] + expected)) or len(found) != expected:
            raise InvalidPlan(f"expected {expected} consecutive fold ids, found {found}")
    return plan


def grouped_folds(groups: Sequence, k: int = 4) -> FoldPlan:
    """Assign whole groups (e.g. speakers) to ``k`` folds, balancing clip counts.

    Groups are placed largest first into the currently smallest fold; ties are
    broken by group key and then by fold index, so the plan is deterministic.
    """
    keys = [str(g) for g in groups]
    uniq = sorted(set(keys))
    if len(uniq) < k:
        raise InvalidPlan(f"{len(uniq)} groups cannot fill {k} folds")
    sizes = {g: keys.count(g) for g in uniq}
    load = [0] * k
    fold_of = {}
    for g in sorted(uniq, key=lambda g: (-sizes[g], g)):
        f = min(range(k), key=lambda i: (load[i], i))
        fold_of[g] = f
        load[f] += sizes[g]
    return FoldPlan("grouped", np.array([fold_of[g] for g in keys], dtype=np.int64))


def holdout_plan(n: int, test_fraction: float = 0.2, seed: int = 0) -> FoldPlan:
    """Single split: fold 1 is the held-out set, fold 0 the rest."""
    if not 0 < test_fraction < 1:
        raise InvalidPlan("test_fraction must be in (0, 1)")
    rng = np.random.Generator(np.random.PCG64(seed))
    n_test = max(1, int(round(n * test_fraction)))
    assign = np.zeros(n, dtype=np.int64)
    assign[rng.permutation(n)[:n_test]] = 1
    return FoldPlan("holdout", assign)


@dataclass
class CrossValResult:
    per_fold: dict  # (repeat, fold) -> metric
    per_repeat: list
    mean: float

    def lines(self):
        for (rep, fold), v in sorted(self.per_fold.items()):
            yield f"repeat={rep} fold={fold} metric={v:.6f}"
        for rep, v in enumerate(self.per_repeat):
            yield f"repeat={rep} mean={v:.6f}"
        yield f"mean={self.mean:.6f}"


def cross_validate(
    n_items: int,
    plan: FoldPlan,
    train_and_score: Callable[[np.ndarray, np.ndarray, int], float],
    repeats: int = 1,
    seed: int = 0,
) -> CrossValResult:
    """Run every fold of ``plan`` ``repeats`` times.

    ``train_and_score(train_idx, test_idx, seed)`` trains on ``train_idx``
    and returns the metric on ``test_idx``. Seeds are ``seed + repeat``.
    """
    if len(plan.assignments) != n_items:
        raise InvalidPlan(f"plan covers {len(plan.assignments)} clips, dataset has {n_items}")
    plan.validate()
    folds = plan.folds if plan.scheme != "holdout" else [1]
    per_fold = {}
    per_repeat = []
    for rep in range(repeats):
        values = []
        for fold in folds:
            train_idx, test_idx = plan.split(fold)
            if len(test_idx) == 0 or len(train_idx) == 0:
                raise InvalidPlan(f"fold {fold} leaves an empty train or test split")
            v = float(train_and_score(train_idx, test_idx, seed + rep))
            per_fold[(rep, fold)] = v
            values.append(v)
        per_repeat.append(float(np.mean(values)))
    return CrossValResult(per_fold, per_repeat, float(np.mean(per_repeat)))
