"""Finite-difference verification suite for every operator and a whole model.

Shared by the ``gradcheck`` command and the test suite.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .model import ErannConfig, build, forward_graph
from .nn import ops
from .nn.gradcheck import GradCheckReport, grad_check

# Operator step sizes. float32 adjoints are judged against float64
# differences taken at the same float32 values: pure float32 differences are
# roundoff-bound near the tolerance once a gradient coordinate is small.
EPS = {np.dtype(np.float64): 1e-6, np.dtype(np.float32): 1e-3}
# Whole-model step; differences are always taken in float64.
MODEL_EPS = 1e-5


def _away_from_zero(a: np.ndarray, margin: float) -> np.ndarray:
    """Push values away from the leaky-ReLU kink so differences stay one-sided."""
    return np.where(a >= 0, a + margin, a - margin)


def _cases(dtype, rng: np.random.Generator) -> dict:
    """name -> (loss_fn, params) for each differentiable operator."""

    def arr(*shape, margin=0.0):
        a = rng.standard_normal(shape)
        if margin:
            a = _away_from_zero(a, margin)
        return a.astype(dtype)

    def probe(shape):
        w = rng.standard_normal(shape)
        return lambda t: ops.weighted_sum(t, w)

    cases = {}

    out = probe((2, 3, 5, 4))
    cases["add"] = (lambda p, out=out: out(ops.add(p["a"], p["b"])), {"a": arr(2, 3, 5, 4), "b": arr(2, 3, 5, 4)})

    for name, k, s, pad in (
        ("conv2d_3x3_s1", 3, (1, 1), (1, 1)),
        ("conv2d_3x3_s2x4", 3, (2, 4), (1, 1)),
        ("conv2d_6x6_s4", 6, (4, 4), (1, 1)),
        ("conv2d_5x5_p2", 5, (1, 1), (2, 2)),
        ("conv2d_1x1_s2", 1, (2, 2), (0, 0)),
    ):
        x = arr(2, 2, 8, 12)
        w = arr(3, 2, k, k)
        fo = ops.conv_output_size(8, k, s[0], pad[0])
        to = ops.conv_output_size(12, k, s[1], pad[1])
        out_c = probe((2, 3, fo, to))
        cases[name] = (
            lambda p, s=s, pad=pad, out_c=out_c: out_c(ops.conv2d(p["x"], p["w"], s, pad)),
            {"x": x, "w": w},
        )

    out = probe((2, 3, 4, 5))
    cases["leaky_relu"] = (lambda p, out=out: out(ops.leaky_relu(p["x"], 0.01)), {"x": arr(2, 3, 4, 5, margin=0.2)})

    for training in (True, False):
        rm = rng.standard_normal(3).astype(dtype)
        rv = (rng.random(3) + 0.5).astype(dtype)
        out_b = probe((4, 3, 3, 5))

        def bn_loss(p, training=training, rm=rm, rv=rv, out_b=out_b):
            return out_b(ops.batchnorm2d(p["x"], p["gamma"], p["beta"], rm.copy(), rv.copy(), training))

        cases[f"batchnorm2d_{'train' if training else 'eval'}"] = (
            bn_loss,
            {"x": arr(4, 3, 3, 5), "gamma": arr(3) + 1.5, "beta": arr(3)},
        )

    out = probe((2, 5, 3, 4))
    cases["swap_channels_freq"] = (lambda p, out=out: out(ops.swap_channels_freq(p["x"])), {"x": arr(2, 3, 5, 4)})

    # lift each channel's maximum 1.0 above the rest so no step of size eps
    # changes the argmax, while keeping the loss O(1) for float32 roundoff
    pool_x = arr(2, 3, 4, 5) * 0.3
    flat = pool_x.reshape(2, 3, 20)
    np.put_along_axis(flat, flat.argmax(axis=2)[..., None], flat.max(axis=2, keepdims=True) + 1.0, 2)
    out = probe((2, 3))
    cases["global_pool"] = (lambda p, out=out: out(ops.global_pool(p["x"])), {"x": pool_x})

    out = probe((4, 3))
    cases["linear"] = (
        lambda p, out=out: out(ops.linear(p["x"], p["w"], p["b"])),
        {"x": arr(4, 6), "w": arr(3, 6), "b": arr(3)},
    )

    y_multi = rng.integers(0, 2, size=(4, 5)).astype(np.float64)
    cases["sigmoid_bce"] = (lambda p: ops.sigmoid_bce(p["z"], y_multi), {"z": arr(4, 5)})
    y_soft = rng.dirichlet(np.ones(5), size=4)
    cases["softmax_cross_entropy"] = (lambda p: ops.softmax_cross_entropy(p["z"], y_soft), {"z": arr(4, 5)})
    return cases


def operator_reports(dtype=np.float64, seed: int = 0) -> dict:
    """Check every operator's adjoint; returns ``{case name: GradCheckReport}``."""
    dtype = np.dtype(dtype)
    rng = np.random.default_rng(seed)
    return {
        name: grad_check(fn, params, eps=EPS[dtype], numeric_dtype=np.float64)
        for name, (fn, params) in _cases(dtype, rng).items()
    }


def model_report(
    dtype=np.float64,
    W: int = 1,
    s_m: int = 0,
    n_classes: int = 4,
    batch: int = 2,
    frames: int = 128,
    coords_per_tensor: int = 2,
    seed: int = 0,
) -> GradCheckReport:
    """Check gradients of a whole ERANN (train-mode forward) w.r.t. every tensor.

    A few coordinates of every learnable tensor are probed. The ~10^6
    activations always put some leaky-ReLU input within ``eps`` of zero, so
    perturbed passes replay the unperturbed kink pattern.
    """
    dtype = np.dtype(dtype)
    config = ErannConfig(W, s_m, n_classes, "sigmoid").validate()
    state = build(config, seed=seed, dtype=dtype)
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal((batch, 1, 128, frames)).astype(dtype)
    w = rng.standard_normal((batch, n_classes))

    def loss(tensors):
        xin = x.astype(tensors["fc1.weight"].data.dtype)
        return ops.weighted_sum(forward_graph(state, xin, True, tensors), w)

    # float32 differences through 17 blocks are roundoff-bound near 1e-2, so
    # the float32 backward pass is compared with float64 differences taken at
    # the same float32 values.
    return grad_check(
        loss,
        {k: v.copy() for k, v in state.params.items()},
        eps=MODEL_EPS,
        max_coords=coords_per_tensor,
        rng=np.random.default_rng(seed + 2),
        freeze_kinks=True,
        numeric_dtype=np.float64,
    )


def run_suite(include_model: bool = True, emit: Callable[[str], None] = print) -> bool:
    """Run every check in both precisions, printing one line per case."""
    ok = True
    for dtype in (np.float64, np.float32):
        for name, rep in operator_reports(dtype).items():
            ok &= rep.passed
            emit(f"{np.dtype(dtype).name:8s} {name:24s} max_rel={rep.max_rel_err:.3e} tol={rep.tolerance:g} "
                 f"{'ok' if rep.passed else 'FAIL'}")
    if include_model:
        for dtype in (np.float64, np.float32):
            rep = model_report(dtype)
            ok &= rep.passed
            emit(f"{np.dtype(dtype).name:8s} {'erann_W1':24s} max_rel={rep.max_rel_err:.3e} "
                 f"tol={rep.tolerance:g} {'ok' if rep.passed else 'FAIL'}")
    return bool(ok)
