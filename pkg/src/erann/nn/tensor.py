"""Reverse-mode autodiff core.

A :class:`Tensor` wraps a numpy array. Operators in :mod:`erann.nn.ops`
create new tensors that remember their parents, a backward function and
whatever forward values that function needs (``cache``). Calling
:meth:`Tensor.backward` on a scalar walks the graph in reverse topological
order and accumulates ``.grad`` on every leaf that requires it.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import InternalError, InvalidShape


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "cache", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.parents: tuple = ()
        self.backward_fn: Optional[Callable] = None
        self.cache = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other: "Tensor") -> "Tensor":
        from .ops import add

        return add(self, other)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None, retain_graph: bool = False) -> None:
        """Accumulate gradients of this tensor into every reachable leaf.

        Forward caches are released afterwards unless ``retain_graph`` is set;
        a second backward through a released node raises ``InternalError``.
        """
        if grad is None:
            if self.data.size != 1:
                raise InvalidShape("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node.backward_fn(node, g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            if not retain_graph:
                node.cache = None


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def make_node(data, parents: Sequence[Tensor], backward_fn: Callable, op: str, cache=None) -> Tensor:
    """Create an operator output; graph links are kept only if a parent needs grad."""
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        out.cache = cache
    return out


def require_cache(node: Tensor):
    if node.cache is None:
        raise InternalError(
            f"backward through '{node.op}' has no forward cache (graph already released?)"
        )
    return node.cache


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
