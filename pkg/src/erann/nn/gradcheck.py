"""Central finite-difference verification of adjoints."""

from __future__ import annotations

from contextlib import nullcontext
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .ops import KinkPattern
from .tensor import Tensor


@dataclass
class ParamReport:
    name: str
    checked: int
    max_rel_err: float
    max_abs_err: float


@dataclass
class GradCheckReport:
    tolerance: float
    params: list = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((p.max_rel_err for p in self.params), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def lines(self):
        for p in self.params:
            flag = "ok" if p.max_rel_err < self.tolerance else "FAIL"
            yield f"{p.name:40s} n={p.checked:4d} rel={p.max_rel_err:.3e} abs={p.max_abs_err:.3e} {flag}"


def relative_error(analytic, numeric, floor: float) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)`` elementwise.

    ``floor`` keeps coordinates whose true gradient is ~0 from dividing by
    roundoff.
    """
    a, n = np.asarray(analytic, np.float64), np.asarray(numeric, np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(
    loss_fn: Callable[[dict], Tensor],
    params: dict,
    eps: float = 1e-3,
    tolerance: Optional[float] = None,
    floor: Optional[float] = None,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    freeze_kinks: bool = False,
    numeric_dtype=None,
) -> GradCheckReport:
    """Compare backprop gradients of ``loss_fn`` against central differences.

    ``loss_fn`` receives a dict of :class:`Tensor` (same keys as ``params``)
    and returns a scalar tensor. It must be a pure function of those values.
    ``max_coords`` limits how many coordinates per parameter are probed
    (chosen with ``rng``); ``None`` probes all of them. With
    ``freeze_kinks`` the perturbed evaluations reuse the ReLU masks and
    pooling argmaxes of the unperturbed pass (see :class:`ops.KinkPattern`),
    which keeps large networks from straddling a kink within ``eps``.
    ``numeric_dtype`` evaluates the finite differences at the same values
    cast to a wider type, so a float32 backward pass can be judged without
    float32 roundoff in the differences.
    """
    dtype = next(iter(params.values())).dtype
    double = dtype == np.float64
    if tolerance is None:
        tolerance = 1e-5 if double else 1e-2
    if floor is None:
        floor = 1e-7 if double else 1e-3
    rng = rng or np.random.default_rng(0)

    pattern = KinkPattern()
    leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
    with pattern.recording() if freeze_kinks else nullcontext():
        loss = loss_fn(leaves)
    loss.backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}

    probe = params if numeric_dtype is None else {k: v.astype(numeric_dtype) for k, v in params.items()}

    def evaluate():
        with pattern.replaying() if freeze_kinks else nullcontext():
            return float(loss_fn({k: Tensor(v) for k, v in probe.items()}).data)

    report = GradCheckReport(tolerance)
    for name, arr in probe.items():
        flat = arr.reshape(-1)
        if max_coords is None or flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        numeric = np.empty(len(coords))
        for i, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + eps
            up = evaluate()
            flat[c] = orig - eps
            down = evaluate()
            flat[c] = orig
            numeric[i] = (up - down) / (2 * eps)
        a = analytic[name].reshape(-1)[coords]
        rel = relative_error(a, numeric, floor)
        report.params.append(
            ParamReport(name, len(coords), float(rel.max(initial=0.0)), float(np.abs(a - numeric).max(initial=0.0)))
        )
    return report
