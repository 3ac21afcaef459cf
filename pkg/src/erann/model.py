"""ERANN network: configuration, block layout, parameters, forward pass, EMA.

The network is a stack of pre-activation residual blocks (ARBs) in five
stages, widened by ``W``. ``s_m`` selects how many of stages 1-3 use a
temporal stride of 4 instead of 2, which shrinks every later feature map.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dsp import LogMelSpec
from .errors import IncompatibleCheckpoint, InvalidConfig, InvalidShape
from .nn import ops
from .nn.tensor import Tensor

N_MELS = 128
STAGE_WIDTHS = (8, 16, 32, 64, 128)
BLOCKS_PER_STAGE = 4
HEADS = ("sigmoid", "softmax")


@dataclass(frozen=True)
class ErannConfig:
    W: int
    s_m: int
    n_classes: int
    head: str = "sigmoid"
    leaky_slope: float = 0.01

    def validate(self) -> "ErannConfig":
        if not isinstance(self.W, (int, np.integer)) or self.W < 1:
            raise InvalidConfig(f"W must be a positive integer, got {self.W!r}")
        if self.s_m not in (0, 1, 2, 3):
            raise InvalidConfig(f"s_m must be one of 0..3, got {self.s_m!r}")
        if self.n_classes < 1:
            raise InvalidConfig(f"n_classes must be >= 1, got {self.n_classes}")
        if self.head not in HEADS:
            raise InvalidConfig(f"head must be one of {HEADS}, got {self.head!r}")
        return self

    @property
    def name(self) -> str:
        return f"ERANN-{self.s_m}-{self.W}"


def stride_schedule(s_m: int) -> tuple:
    """Temporal strides of the first block in stages 1..3."""
    if s_m not in (0, 1, 2, 3):
        raise InvalidConfig(f"s_m must be one of 0..3, got {s_m!r}")
    return tuple(4 if i <= s_m else 2 for i in (1, 2, 3))


def temporal_sizes(t0: int, s_m: int) -> tuple:
    """Time extent after stages 1..4 for an input of ``t0`` frames."""
    if t0 <= 0 or t0 % 128:
        raise InvalidConfig(f"input frame count must be a positive multiple of 128, got {t0}")
    sizes, t = [], t0
    for s in stride_schedule(s_m) + (2,):
        t //= s
        sizes.append(t)
    return tuple(sizes)


def arb_kernel_params(z: int) -> tuple:
    """``(K1, K2, P)`` for a block whose stride along an axis is ``z``."""
    if z in (1, 2):
        return (3, 3, 1)
    if z == 4:
        return (6, 5, 2)
    raise InvalidConfig(f"ARB stride must be 1, 2 or 4, got {z!r}")


@dataclass(frozen=True)
class ArbSpec:
    name: str
    stride_f: int
    stride_t: int
    in_ch: int
    out_ch: int
    pre_activation: bool = True

    @property
    def shortcut(self) -> str:
        if (self.stride_f, self.stride_t) != (1, 1) or self.in_ch != self.out_ch:
            return "projection"
        return "identity"

    @property
    def conv1_kernel(self):
        return arb_kernel_params(self.stride_f)[0], arb_kernel_params(self.stride_t)[0]

    @property
    def conv2_kernel(self):
        return arb_kernel_params(self.stride_f)[1], arb_kernel_params(self.stride_t)[1]

    @property
    def conv2_padding(self):
        return arb_kernel_params(self.stride_f)[2], arb_kernel_params(self.stride_t)[2]


def arb_specs(config: ErannConfig) -> list:
    """Every residual block in execution order."""
    config.validate()
    specs = []
    strides_t = (1,) + stride_schedule(config.s_m) + (2,)
    in_ch = 1
    for stage, width in enumerate(STAGE_WIDTHS):
        out_ch = width * config.W
        for block in range(BLOCKS_PER_STAGE):
            first = block == 0
            sf = 2 if first and stage > 0 else 1
            st = strides_t[stage] if first else 1
            specs.append(
                ArbSpec(
                    name=f"stage{stage}.block{block}",
                    stride_f=sf,
                    stride_t=st,
                    in_ch=in_ch,
                    out_ch=out_ch,
                    pre_activation=not (stage == 0 and first),
                )
            )
            in_ch = out_ch
    return specs


def parameter_shapes(config: ErannConfig) -> dict:
    """Name -> shape for every learnable tensor, in a fixed order."""
    shapes = {"input_bn.gamma": (N_MELS,), "input_bn.beta": (N_MELS,)}
    for spec in arb_specs(config):
        p = spec.name
        if spec.pre_activation:
            shapes[f"{p}.bn1.gamma"] = (spec.in_ch,)
            shapes[f"{p}.bn1.beta"] = (spec.in_ch,)
        shapes[f"{p}.conv1.weight"] = (spec.out_ch, spec.in_ch) + spec.conv1_kernel
        shapes[f"{p}.bn2.gamma"] = (spec.out_ch,)
        shapes[f"{p}.bn2.beta"] = (spec.out_ch,)
        shapes[f"{p}.conv2.weight"] = (spec.out_ch, spec.out_ch) + spec.conv2_kernel
        if spec.shortcut == "projection":
            shapes[f"{p}.shortcut.weight"] = (spec.out_ch, spec.in_ch, 1, 1)
    width = STAGE_WIDTHS[-1] * config.W
    shapes["fc1.weight"] = (width, width)
    shapes["fc1.bias"] = (width,)
    shapes["fc2.weight"] = (config.n_classes, width)
    shapes["fc2.bias"] = (config.n_classes,)
    return shapes


def buffer_shapes(config: ErannConfig) -> dict:
    """Batch-norm running statistics (not learnable)."""
    out = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gamma"):
            base = name[: -len(".gamma")]
            out[f"{base}.running_mean"] = shape
            out[f"{base}.running_var"] = shape
    return out


@dataclass
class ModelState:
    config: ErannConfig
    params: dict
    buffers: dict

    def copy(self) -> "ModelState":
        return ModelState(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))


def _init_tensor(name: str, shape, rng: np.random.Generator, dtype) -> np.ndarray:
    if name.endswith(".gamma"):
        return np.ones(shape, dtype)
    if name.endswith(".beta") or name.endswith(".bias"):
        return np.zeros(shape, dtype)
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)  # variance 2 / fan_in
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_params(config: ErannConfig, rng, dtype=np.float32) -> ModelState:
    """Fresh parameters: He-uniform weights, unit gamma, zero beta and bias."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.PCG64(rng))
    params = {
        name: _init_tensor(name, shape, rng, dtype)
        for name, shape in parameter_shapes(config).items()
    }
    buffers = {}
    for name, shape in buffer_shapes(config).items():
        fill = np.ones if name.endswith("running_var") else np.zeros
        buffers[name] = fill(shape, dtype)
    return ModelState(config, params, buffers)


def build(config: ErannConfig, seed: int = 0, dtype=np.float32) -> ModelState:
    return init_params(config.validate(), np.random.Generator(np.random.PCG64(seed)), dtype)


# --------------------------------------------------------------------------
# forward


def as_batch(specs, dtype=np.float32) -> np.ndarray:
    """Coerce LogMelSpec lists or 2/3/4-D arrays to ``(batch, 1, 128, T)``."""
    if isinstance(specs, LogMelSpec):
        specs = [specs]
    if isinstance(specs, (list, tuple)):
        specs = np.stack([s.values if isinstance(s, LogMelSpec) else np.asarray(s) for s in specs])
    x = np.asarray(specs)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[:, None]
    if x.ndim != 4 or x.shape[1] != 1:
        raise InvalidShape(f"expected (batch, 1, mels, frames), got {x.shape}")
    if x.shape[2] != N_MELS:
        raise InvalidShape(f"expected {N_MELS} mel bins, got {x.shape[2]}")
    if x.shape[3] == 0 or x.shape[3] % 128:
        raise InvalidShape(f"frame count must be a positive multiple of 128, got {x.shape[3]}")
    return x.astype(dtype, copy=False)


def _bn(x, state, tensors, prefix, training):
    return ops.batchnorm2d(
        x,
        tensors[f"{prefix}.gamma"],
        tensors[f"{prefix}.beta"],
        state.buffers[f"{prefix}.running_mean"],
        state.buffers[f"{prefix}.running_var"],
        training,
    )


def _arb(x, spec: ArbSpec, state, tensors, training, slope):
    p = spec.name
    h = x
    if spec.pre_activation:
        h = ops.leaky_relu(_bn(h, state, tensors, f"{p}.bn1", training), slope)
    h = ops.conv2d(h, tensors[f"{p}.conv1.weight"], (spec.stride_f, spec.stride_t), (1, 1))
    h = ops.leaky_relu(_bn(h, state, tensors, f"{p}.bn2", training), slope)
    h = ops.conv2d(h, tensors[f"{p}.conv2.weight"], (1, 1), spec.conv2_padding)
    if spec.shortcut == "projection":
        res = ops.conv2d(x, tensors[f"{p}.shortcut.weight"], (spec.stride_f, spec.stride_t), (0, 0))
    else:
        res = x
    return ops.add(h, res)


def forward_graph(
    state: ModelState,
    x: np.ndarray,
    training: bool,
    tensors: Optional[dict] = None,
    trace: Optional[list] = None,
) -> Tensor:
    """Build the graph and return logits ``(batch, n_classes)``.

    ``tensors`` maps parameter names to :class:`Tensor` leaves (pass leaves
    with ``requires_grad`` to collect gradients); by default constant
    tensors wrap ``state.params``. When ``trace`` is a list, ``(name, shape)``
    pairs for every block output are appended to it, with shapes written as
    ``(freq, time, channels)``.
    """
    cfg = state.config
    if tensors is None:
        tensors = {k: Tensor(v) for k, v in state.params.items()}
    slope = cfg.leaky_slope

    def record(name, t):
        if trace is not None:
            b, c, f, tt = t.shape
            trace.append((name, (f, tt, c)))

    h = Tensor(x)
    h = ops.swap_channels_freq(h)
    h = _bn(h, state, tensors, "input_bn", training)
    h = ops.swap_channels_freq(h)
    record("extraction", h)
    for spec in arb_specs(cfg):
        h = _arb(h, spec, state, tensors, training, slope)
        record(spec.name, h)
    h = ops.global_pool(h)
    record("pool", Tensor(h.data[:, :, None, None]))
    h = ops.leaky_relu(ops.linear(h, tensors["fc1.weight"], tensors["fc1.bias"]), slope)
    h = ops.linear(h, tensors["fc2.weight"], tensors["fc2.bias"])
    return h


def activate(logits: np.ndarray, head: str) -> np.ndarray:
    if head == "softmax":
        return ops.softmax(logits)
    return ops.sigmoid(np.asarray(logits, dtype=np.float64))


def forward(state: ModelState, specs, mode: str = "eval", trace: Optional[list] = None) -> np.ndarray:
    """Head-activated predictions ``(batch, n_classes)``.

    ``mode='train'`` normalizes with batch statistics and updates the
    running averages; ``'eval'`` leaves the state untouched.
    """
    if mode not in ("train", "eval"):
        raise InvalidConfig(f"mode must be 'train' or 'eval', got {mode!r}")
    dtype = next(iter(state.params.values())).dtype
    x = as_batch(specs, dtype)
    logits = forward_graph(state, x, mode == "train", trace=trace)
    return activate(logits.data, state.config.head)


def stage_shapes(config: ErannConfig, t0: int) -> list:
    """Expected ``(freq, time, channels)`` after extraction and each stage."""
    times = (t0, t0) + temporal_sizes(t0, config.s_m)
    freqs = (N_MELS, N_MELS, 64, 32, 16, 8)
    chans = (1,) + tuple(w * config.W for w in STAGE_WIDTHS)
    names = ["extraction"] + [f"stage{i}" for i in range(5)]
    return [(n, (f, t, c)) for n, f, t, c in zip(names, freqs, times, chans)]


# --------------------------------------------------------------------------
# EMA and transfer


@dataclass
class EmaState:
    decay: float = 0.999
    shadow: dict = field(default_factory=dict)

    def copy(self) -> "EmaState":
        return EmaState(self.decay, {k: v.copy() for k, v in self.shadow.items()})


def ema_update(ema: EmaState, state: ModelState, iteration: int) -> EmaState:
    """Shadow <- params at iteration 0, else decay*shadow + (1-decay)*params."""
    if iteration == 0 or not ema.shadow:
        ema.shadow = {k: v.copy() for k, v in state.params.items()}
        return ema
    beta = ema.decay
    for name, theta in state.params.items():
        s = ema.shadow[name]
        s *= beta
        s += (1.0 - beta) * theta
    return ema


def apply_ema(state: ModelState, ema: EmaState) -> ModelState:
    """Copy of ``state`` whose learnable tensors are the EMA shadow."""
    out = state.copy()
    for name in out.params:
        out.params[name] = ema.shadow[name].copy()
    return out


def transfer_load(
    checkpoint: ModelState,
    new_config: ErannConfig,
    seed: int = 0,
    reinit_head: Optional[bool] = None,
) -> ModelState:
    """Start a new task from pretrained weights.

    Every tensor is copied except the output layer, which is freshly
    initialized when the class count changes (or when ``reinit_head`` is
    true). The head activation may change freely.
    """
    old = checkpoint.config
    new_config.validate()
    if old.W != new_config.W or old.s_m != new_config.s_m:
        raise IncompatibleCheckpoint(
            f"checkpoint is {old.name}, requested {new_config.name}; only N and head may differ"
        )
    if reinit_head is None:
        reinit_head = old.n_classes != new_config.n_classes
    dtype = next(iter(checkpoint.params.values())).dtype
    fresh = init_params(new_config, np.random.Generator(np.random.PCG64(seed)), dtype)
    state = ModelState(
        new_config,
        {k: v.copy() for k, v in checkpoint.params.items()},
        {k: v.copy() for k, v in checkpoint.buffers.items()},
    )
    if reinit_head:
        for name in ("fc2.weight", "fc2.bias"):
            state.params[name] = fresh.params[name]
    return state


def count_allocated(state: ModelState) -> int:
    """Learnable-parameter count by enumerating the state's tensors."""
    return state.num_parameters()


def predict_in_batches(state: ModelState, specs: Sequence, batch_size: int = 32) -> np.ndarray:
    """Eval-mode predictions for spectrograms that may differ in length."""
    out = [None] * len(specs)
    by_width = {}
    for i, s in enumerate(specs):
        v = s.values if isinstance(s, LogMelSpec) else np.asarray(s)
        by_width.setdefault(v.shape[-1], []).append(i)
    for idx in by_width.values():
        for start in range(0, len(idx), batch_size):
            chunk = idx[start : start + batch_size]
            probs = forward(state, [specs[i] for i in chunk])
            for i, p in zip(chunk, probs):
                out[i] = p
    return np.stack(out)
