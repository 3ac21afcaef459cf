"""Differentiable operators used by the network.

Layout is ``(batch, channels, freq, time)`` throughout. Reductions that feed
statistics (batch norm moments, pooling means, losses) accumulate in float64
and cast back to the input dtype.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import InvalidInput, InvalidShape
from .tensor import Tensor, as_tensor, make_node, require_cache


class KinkPattern:
    """Record, then replay, the branch taken at every non-smooth point.

    Inside ``with pattern.recording():`` each leaky ReLU sign mask and each
    pooling argmax is stored in call order; inside ``with pattern.replaying():``
    the same calls reuse the stored choices. Finite differences taken while
    replaying measure the derivative of the smooth piece that contains the
    unperturbed point, which equals the true derivative there.
    """

    def __init__(self):
        self.choices: list = []
        self.mode = None
        self._pos = 0

    @contextmanager
    def _scope(self, mode):
        global _ACTIVE_PATTERN
        if mode == "record":
            self.choices = []
        self.mode, self._pos = mode, 0
        _ACTIVE_PATTERN = self
        try:
            yield self
        finally:
            _ACTIVE_PATTERN, self.mode = None, None

    def recording(self):
        return self._scope("record")

    def replaying(self):
        return self._scope("replay")

    def choose(self, computed: np.ndarray) -> np.ndarray:
        if self.mode == "record":
            self.choices.append(computed)
            return computed
        stored = self.choices[self._pos]
        self._pos += 1
        if stored.shape != computed.shape:
            raise InvalidShape("replayed kink pattern does not match the graph")
        return stored


_ACTIVE_PATTERN = None


def _branch(computed: np.ndarray) -> np.ndarray:
    return computed if _ACTIVE_PATTERN is None else _ACTIVE_PATTERN.choose(computed)


def _pair(v):
    return (v, v) if np.isscalar(v) else tuple(v)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two tensors of identical shape (no broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise InvalidShape(f"add: shapes differ, {a.shape} vs {b.shape}")
    return make_node(a.data + b.data, (a, b), lambda node, g: (g, g), "add")


def _columns(xp: np.ndarray, kf: int, kt: int, sf: int, st: int, fo: int, to: int) -> np.ndarray:
    """im2col matrix shaped ``(C*kf*kt, B*fo*to)``; rows copy contiguous time runs."""
    b, c = xp.shape[:2]
    s = xp.strides
    view = as_strided(
        xp,
        shape=(c, kf, kt, b, fo, to),
        strides=(s[1], s[2], s[3], s[0], s[2] * sf, s[3] * st),
        writeable=False,
    )
    return view.reshape(c * kf * kt, b * fo * to)


def conv2d(x: Tensor, w: Tensor, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """2-D cross-correlation without bias.

    ``w`` is shaped ``(out_ch, in_ch, kf, kt)``; stride and padding are given
    per axis as ``(freq, time)``.
    """
    x, w = as_tensor(x), as_tensor(w)
    sf, st = _pair(stride)
    pf, pt = _pair(padding)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise InvalidShape(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    b, c, f, t = x.shape
    o, ci, kf, kt = w.shape
    if ci != c:
        raise InvalidShape(f"conv2d: input has {c} channels, weight expects {ci}")
    fo = conv_output_size(f, kf, sf, pf)
    to = conv_output_size(t, kt, st, pt)
    if fo < 1 or to < 1:
        raise InvalidShape(
            f"conv2d: kernel {kf}x{kt} does not fit padded input {f + 2 * pf}x{t + 2 * pt}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (pf, pf), (pt, pt))) if (pf or pt) else x.data
    cols = _columns(xp, kf, kt, sf, st, fo, to)
    out = (w.data.reshape(o, -1) @ cols).reshape(o, b, fo, to).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out)
    cache = {"xp": xp, "geom": (sf, st, pf, pt, fo, to)}
    return make_node(out, (x, w), _conv2d_backward, "conv2d", cache)


def _conv2d_backward(node: Tensor, g: np.ndarray):
    cache = require_cache(node)
    x, w = node.parents
    xp = cache["xp"]
    sf, st, pf, pt, fo, to = cache["geom"]
    b, c, fp, tp = xp.shape
    o, _, kf, kt = w.shape
    g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, -1)
    dw = dx = None
    if w.requires_grad:
        dw = (g2 @ _columns(xp, kf, kt, sf, st, fo, to).T).reshape(w.shape)
    if x.requires_grad:
        dcols = (w.data.reshape(o, -1).T @ g2).reshape(c, kf, kt, b, fo, to)
        dxp = np.zeros((c, b, fp, tp), dtype=g.dtype)
        for i in range(kf):
            for j in range(kt):
                dxp[:, :, i : i + sf * fo : sf, j : j + st * to : st] += dcols[:, i, j]
        dx = dxp[:, :, pf : fp - pf, pt : tp - pt].transpose(1, 0, 2, 3)
    return dx, dw


def conv2d_backward(node: Tensor, grad: np.ndarray):
    """Adjoint of :func:`conv2d`: ``(d_input, d_weight)`` for upstream ``grad``."""
    return _conv2d_backward(node, grad)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    x = as_tensor(x)
    positive = x.data >= 0
    if _ACTIVE_PATTERN is None and slope <= 1:
        out = np.maximum(x.data, x.data * x.data.dtype.type(slope))
    else:
        positive = _branch(positive)
        out = np.where(positive, x.data, x.data * x.data.dtype.type(slope))

    def backward(node, g):
        pos = require_cache(node)
        return (np.where(pos, g, g * g.dtype.type(slope)),)

    return make_node(out, (x,), backward, "leaky_relu", positive)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over ``(batch, freq, time)``.

    In training mode batch moments normalize the input and the running
    statistics are updated in place (unbiased variance). In eval mode the
    running statistics are read only.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[1]
    if gamma.shape != (c,) or running_mean.shape != (c,):
        raise InvalidShape(f"batchnorm2d: {c} channels but parameters shaped {gamma.shape}")
    xd = x.data.astype(np.float64)
    if training:
        n = xd.size // c
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        unbiased = var * n / max(n - 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.astype(running_var.dtype)
    else:
        mean = running_mean.astype(np.float64)
        var = np.maximum(running_var.astype(np.float64), 0.0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean[None, :, None, None]) * inv_std[None, :, None, None]
    g64 = gamma.data.astype(np.float64)
    out = xhat * g64[None, :, None, None] + beta.data.astype(np.float64)[None, :, None, None]
    out = out.astype(x.dtype)

    def backward(node, grad):
        xhat, inv_std, g64, training = require_cache(node)
        gd = grad.astype(np.float64)
        dbeta = gd.sum(axis=(0, 2, 3))
        dgamma = (gd * xhat).sum(axis=(0, 2, 3))
        dxhat = gd * g64[None, :, None, None]
        if training:
            n = gd.size // gd.shape[1]
            dx = (
                inv_std[None, :, None, None]
                / n
                * (
                    n * dxhat
                    - dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
                    - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
                )
            )
        else:
            dx = dxhat * inv_std[None, :, None, None]
        dt = grad.dtype
        return dx.astype(dt), dgamma.astype(dt), dbeta.astype(dt)

    return make_node(out, (x, gamma, beta), backward, "batchnorm2d", (xhat, inv_std, g64, training))


def swap_channels_freq(x: Tensor) -> Tensor:
    """Exchange the channel and frequency axes."""
    x = as_tensor(x)
    out = np.ascontiguousarray(x.data.transpose(0, 2, 1, 3))
    return make_node(out, (x,), lambda node, g: (g.transpose(0, 2, 1, 3),), "swap_channels_freq")


def global_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean plus spatial max, shape ``(batch, channels)``."""
    x = as_tensor(x)
    b, c, f, t = x.shape
    flat = x.data.reshape(b, c, f * t)
    arg = _branch(flat.argmax(axis=2))
    mx = np.take_along_axis(flat, arg[..., None], axis=2)[..., 0]
    out = (flat.mean(axis=2, dtype=np.float64) + mx).astype(x.dtype)

    def backward(node, g):
        arg = require_cache(node)
        d = np.broadcast_to((g / (f * t))[..., None], (b, c, f * t)).copy()
        np.put_along_axis(d, arg[..., None], np.take_along_axis(d, arg[..., None], 2) + g[..., None], 2)
        return (d.reshape(b, c, f, t),)

    return make_node(out, (x,), backward, "global_pool", arg)


def linear(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """``x @ w.T + bias`` with ``w`` shaped ``(out, in)``."""
    x, w, bias = as_tensor(x), as_tensor(w), as_tensor(bias)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise InvalidShape(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if bias.shape != (w.shape[0],):
        raise InvalidShape(f"linear: bias shape {bias.shape} != ({w.shape[0]},)")
    out = x.data @ w.data.T + bias.data

    def backward(node, g):
        x, w, _ = node.parents
        return g @ w.data, g.T @ x.data, g.sum(axis=0)

    return make_node(out, (x, w, bias), backward, "linear")


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(x * weights)``; a smooth probe loss for gradient checks."""
    x = as_tensor(x)
    out = np.asarray((x.data.astype(np.float64) * weights).sum(), dtype=x.dtype)
    return make_node(out, (x,), lambda node, g: ((g * weights).astype(x.dtype),), "weighted_sum")


def _check_targets(targets: np.ndarray, logits: Tensor) -> np.ndarray:
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.shape:
        raise InvalidShape(f"targets shaped {t.shape}, logits {logits.shape}")
    if np.any(t < 0) or np.any(t > 1) or not np.all(np.isfinite(t)):
        raise InvalidInput("targets must lie in [0, 1]")
    return t


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def sigmoid_bce(logits: Tensor, targets) -> Tensor:
    """Binary cross-entropy on sigmoid outputs, averaged over all entries."""
    logits = as_tensor(logits)
    y = _check_targets(targets, logits)
    z = logits.data.astype(np.float64)
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray(loss.mean(), dtype=logits.dtype)

    def backward(node, g):
        return ((g * (sigmoid(z) - y) / z.size).astype(logits.dtype),)

    return make_node(out, (logits,), backward, "sigmoid_bce")


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Cross-entropy against (possibly soft) target rows, averaged over the batch."""
    logits = as_tensor(logits)
    y = _check_targets(targets, logits)
    z = logits.data.astype(np.float64)
    shifted = z - z.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = np.asarray(-(y * log_p).sum(axis=1).mean(), dtype=logits.dtype)

    def backward(node, g):
        p = np.exp(log_p)
        d = (p * y.sum(axis=1, keepdims=True) - y) / z.shape[0]
        return ((g * d).astype(logits.dtype),)

    return make_node(out, (logits,), backward, "softmax_cross_entropy")
