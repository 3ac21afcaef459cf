"""Mini-batch training: sampling, augmentation pipeline, Adam, EMA, early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import augment as aug
from .dsp import AudioClip, LogMelSpec, MelConfig, log_mel
from .errors import InvalidConfig, InvalidInput, NumericFailure
from .metrics import accuracy, mean_average_precision
from .model import (
    EmaState,
    ErannConfig,
    ModelState,
    apply_ema,
    ema_update,
    forward_graph,
    predict_in_batches,
    transfer_load,
)
from .nn import ops
from .nn.optim import AdamState, adam_step
from .nn.tensor import Tensor

log = logging.getLogger(__name__)

LR_POLICIES = ("one-cycle", "constant")
TASKS = ("tagging", "classification")
SAMPLERS = ("uniform", "balanced")


@dataclass
class TrainConfig:
    batch_size: int = 32
    total_iterations: int = 1000
    lr_policy: str = "one-cycle"
    lr: float = 0.001  # peak for one-cycle, value for constant
    warmup_fraction: float = 0.3
    start_divisor: float = 25.0
    final_divisor: float = 1e4
    eval_interval: int = 5000
    ema_decay: float = 0.999
    sampler: str = "uniform"
    task: str = "classification"
    augment: aug.AugmentConfig = field(default_factory=aug.AugmentConfig)
    mel: MelConfig = field(default_factory=MelConfig)
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if self.total_iterations < 0:
            raise InvalidConfig("total_iterations must be >= 0")
        if self.eval_interval < 1:
            raise InvalidConfig("eval_interval must be >= 1")
        if self.lr_policy not in LR_POLICIES:
            raise InvalidConfig(f"lr_policy must be one of {LR_POLICIES}, got {self.lr_policy!r}")
        if self.lr < 0:
            raise InvalidConfig("lr must be nonnegative")
        if not 0 < self.warmup_fraction < 1:
            raise InvalidConfig("warmup_fraction must be in (0, 1)")
        if not 0 <= self.ema_decay < 1:
            raise InvalidConfig("ema_decay must be in [0, 1)")
        if self.sampler not in SAMPLERS:
            raise InvalidConfig(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.task not in TASKS:
            raise InvalidConfig(f"task must be one of {TASKS}, got {self.task!r}")
        self.augment.validate()
        self.mel.validate()
        return self


def lr_at(cfg: TrainConfig, iteration: int, total: Optional[int] = None) -> float:
    """Learning rate for a 0-based iteration.

    One-cycle ramps linearly from ``lr / start_divisor`` to ``lr`` over the
    first ``warmup_fraction`` of training, then decays linearly to
    ``lr / final_divisor`` at the last iteration.
    """
    if cfg.lr_policy == "constant":
        return cfg.lr
    total = cfg.total_iterations if total is None else total
    peak = cfg.lr
    lo, end = peak / cfg.start_divisor, peak / cfg.final_divisor
    warm = cfg.warmup_fraction * total
    if iteration <= warm:
        frac = iteration / warm if warm > 0 else 1.0
        return lo + (peak - lo) * frac
    span = max(total - 1 - warm, 1e-12)
    frac = min((iteration - warm) / span, 1.0)
    return peak + (end - peak) * frac


# --------------------------------------------------------------------------
# data


@dataclass
class Dataset:
    clips: list
    targets: np.ndarray  # (n, N) in [0, 1]
    class_names: Sequence[str] = ()
    folds: Optional[list] = None
    groups: Optional[list] = None

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.targets.ndim != 2 or len(self.targets) != len(self.clips):
            raise InvalidInput(
                f"targets shaped {self.targets.shape} do not match {len(self.clips)} clips"
            )

    def __len__(self):
        return len(self.clips)

    @property
    def n_classes(self) -> int:
        return self.targets.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = [int(i) for i in idx]
        pick = lambda seq: None if seq is None else [seq[i] for i in idx]  # noqa: E731
        return Dataset(
            [self.clips[i] for i in idx],
            self.targets[idx],
            self.class_names,
            pick(self.folds),
            pick(self.groups),
        )


class UniformSampler:
    """Shuffled passes over the dataset."""

    def __init__(self, n: int, rng: np.random.Generator):
        if n == 0:
            raise InvalidInput("cannot sample from an empty dataset")
        self.n, self.rng = n, rng
        self._queue = np.empty(0, dtype=np.int64)

    def next_batch(self, batch_size: int) -> np.ndarray:
        while len(self._queue) < batch_size:
            self._queue = np.concatenate([self._queue, self.rng.permutation(self.n)])
        out, self._queue = self._queue[:batch_size], self._queue[batch_size:]
        return out


class BalancedSampler:
    """Draw a class uniformly, then a clip uniformly among that class's clips.

    Multi-label clips are listed under every class they carry.
    """

    def __init__(self, targets: np.ndarray, rng: np.random.Generator):
        targets = np.asarray(targets)
        if targets.shape[0] == 0:
            raise InvalidInput("cannot sample from an empty dataset")
        self.by_class = [np.flatnonzero(targets[:, k] > 0) for k in range(targets.shape[1])]
        empty = [k for k, idx in enumerate(self.by_class) if len(idx) == 0]
        if empty:
            raise InvalidInput(f"balanced sampling needs clips for every class; empty: {empty[:10]}")
        self.rng = rng

    def next_batch(self, batch_size: int) -> np.ndarray:
        classes = self.rng.integers(0, len(self.by_class), size=batch_size)
        return np.array(
            [self.by_class[k][self.rng.integers(0, len(self.by_class[k]))] for k in classes],
            dtype=np.int64,
        )


def make_sampler(cfg: TrainConfig, dataset: Dataset, rng: np.random.Generator):
    if cfg.sampler == "balanced":
        return BalancedSampler(dataset.targets, rng)
    return UniformSampler(len(dataset), rng)


def batch_rng(seed: int, iteration: int) -> np.random.Generator:
    """Independent stream per (seed, batch index)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, iteration])))


def _pad_to(clip: AudioClip, n: int) -> AudioClip:
    if len(clip) >= n:
        return clip
    return clip.replace(np.concatenate([clip.samples, np.zeros(n - len(clip))]))


class BatchBuilder:
    """Turns clip indices into a feature batch, applying the augmentation chain.

    Order: crop -> pitch shift -> waveform mixup -> log-mel -> SpecAugment ->
    spectrogram mixup. Without any waveform augmentation the log-mel of every
    clip is computed once and reused.
    """

    def __init__(self, dataset: Dataset, cfg: TrainConfig):
        self.dataset, self.cfg = dataset, cfg
        self.max_len = max(len(c) for c in dataset.clips)
        self._feature_cache: dict = {}

    def _features(self, i: int) -> np.ndarray:
        v = self._feature_cache.get(i)
        if v is None:
            clip = _pad_to(self.dataset.clips[i], self.max_len)
            v = log_mel(clip, self.cfg.mel).values
            self._feature_cache[i] = v
        return v

    def build(self, idx: np.ndarray, rng: np.random.Generator):
        acfg = self.cfg.augment
        ds = self.dataset
        targets = ds.targets[idx].copy()
        variant = acfg.mixup_variant
        b = len(idx)

        if acfg.waveform_augments:
            clips = []
            for i, y in zip(idx, targets):
                c = AudioClip(ds.clips[i].samples, ds.clips[i].sample_rate, y)
                if acfg.t_c is not None:
                    c = aug.temporal_crop(c, acfg.t_c, rng)
                else:
                    c = _pad_to(c, self.max_len)
                if acfg.pitch_shift_on:
                    c = aug.pitch_shift(c, rng, acfg)
                clips.append(c)
            if variant in (aug.MixupVariant.STANDARD_WAVEFORM, aug.MixupVariant.MODIFIED_WAVEFORM):
                perm = rng.permutation(b)
                r = rng.beta(acfg.mixup_alpha, acfg.mixup_alpha, size=b)
                r = np.clip(r, 1e-6, 1 - 1e-6)
                clips = [aug.mixup(clips[k], clips[perm[k]], r[k], variant) for k in range(b)]
            targets = np.stack([c.labels for c in clips])
            specs = [log_mel(c, self.cfg.mel) for c in clips]
        else:
            specs = [
                aug_spec(self._features(int(i)), y) for i, y in zip(idx, targets)
            ]

        if acfg.specaugment_on:
            specs = [aug.spec_augment(s, acfg, rng) for s in specs]
        if variant is aug.MixupVariant.MODIFIED_SPECTROGRAM:
            perm = rng.permutation(b)
            r = np.clip(rng.beta(acfg.mixup_alpha, acfg.mixup_alpha, size=b), 1e-6, 1 - 1e-6)
            specs = [aug.mixup_spec(specs[k], specs[perm[k]], r[k]) for k in range(b)]
            targets = np.stack([s.labels for s in specs])

        x = np.stack([s.values for s in specs])[:, None].astype(np.float32)
        return x, targets


def aug_spec(values: np.ndarray, labels: np.ndarray) -> LogMelSpec:
    return LogMelSpec(values, values.shape[1] // 128, labels)


# --------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    state: ModelState
    ema: EmaState
    losses: list
    trace: list
    best_iteration: Optional[int] = None
    best_metric: Optional[float] = None
    best_state: Optional[ModelState] = None


def task_loss(logits: Tensor, targets: np.ndarray, task: str) -> Tensor:
    if task == "tagging":
        return ops.sigmoid_bce(logits, targets)
    return ops.softmax_cross_entropy(logits, targets)


def dataset_features(dataset: Dataset, mel: MelConfig) -> list:
    """Full-length log-mels (no cropping), one per clip."""
    return [log_mel(c, mel) for c in dataset.clips]


def evaluate(state: ModelState, dataset: Dataset, task: str, mel: MelConfig = MelConfig(), features=None) -> float:
    """mAP for tagging, accuracy for classification, on full-length clips."""
    feats = features if features is not None else dataset_features(dataset, mel)
    scores = predict_in_batches(state, feats)
    if task == "tagging":
        return mean_average_precision(scores, dataset.targets)
    return accuracy(scores, dataset.targets)


def format_trace_record(rec: dict) -> str:
    return " ".join(f"{k}={v}" for k, v in rec.items())


def train(
    state: ModelState,
    dataset: Dataset,
    cfg: TrainConfig,
    val: Optional[Dataset] = None,
    trace_path=None,
    stop_when: Optional[Callable[[int, ModelState, EmaState], bool]] = None,
) -> TrainResult:
    """Optimize ``state`` in place on ``dataset``.

    Every ``eval_interval`` iterations (and after the last one) the EMA
    model is scored on ``val`` (the training clips when ``val`` is None) and
    the best-scoring snapshot is kept. ``stop_when(iteration, state, ema)`` is
    consulted after every step and can end training early.
    """
    cfg.validate()
    if dataset.n_classes != state.config.n_classes:
        raise InvalidInput(
            f"dataset has {dataset.n_classes} classes, model expects {state.config.n_classes}"
        )
    val = val if val is not None else dataset
    val_feats = dataset_features(val, cfg.mel)
    sampler = make_sampler(cfg, dataset, batch_rng(cfg.seed, 0xFFFFFFFF))
    builder = BatchBuilder(dataset, cfg)
    adam = AdamState()
    ema = ema_update(EmaState(cfg.ema_decay), state, 0)

    losses, trace = [], []
    best = TrainResult(state, ema, losses, trace)
    window = []
    trace_file = open(trace_path, "w") if trace_path is not None else None
    try:
        for it in range(cfg.total_iterations):
            idx = sampler.next_batch(cfg.batch_size)
            x, y = builder.build(idx, batch_rng(cfg.seed, it))
            leaves = {k: Tensor(v, requires_grad=True) for k, v in state.params.items()}
            logits = forward_graph(state, x, True, leaves)
            loss = task_loss(logits, y, cfg.task)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericFailure(f"non-finite loss {value} at iteration {it}")
            loss.backward()
            lr = lr_at(cfg, it)
            adam_step(state.params, {k: t.grad for k, t in leaves.items()}, adam, lr)
            ema_update(ema, state, it + 1)
            losses.append(value)
            window.append(value)

            done = it + 1 == cfg.total_iterations
            stop = stop_when is not None and stop_when(it, state, ema)
            if (it + 1) % cfg.eval_interval == 0 or done or stop:
                scored = apply_ema(state, ema)
                metric = evaluate(scored, val, cfg.task, cfg.mel, val_feats)
                rec = {
                    "iteration": it + 1,
                    "lr": f"{lr:.6g}",
                    "train_loss": f"{np.mean(window):.6f}",
                    "val_metric": f"{metric:.6f}",
                }
                window = []
                trace.append(rec)
                if trace_file:
                    trace_file.write(format_trace_record(rec) + "\n")
                    trace_file.flush()
                log.info(format_trace_record(rec))
                if best.best_metric is None or metric > best.best_metric:
                    best.best_metric, best.best_iteration, best.best_state = metric, it + 1, scored
            if stop:
                break
    finally:
        if trace_file:
            trace_file.close()
    if cfg.total_iterations == 0 and trace_path is not None:
        Path(trace_path).write_text("")
    return TrainResult(state, ema, losses, trace, best.best_iteration, best.best_metric, best.best_state)


def best_from_trace(trace: list) -> int:
    """Iteration whose validation metric is highest (first on ties)."""
    if not trace:
        raise InvalidInput("empty trace")
    metrics = [float(r["val_metric"]) for r in trace]
    return int(trace[int(np.argmax(metrics))]["iteration"])


def fine_tune(
    checkpoint: ModelState,
    dataset: Dataset,
    cfg: Optional[TrainConfig] = None,
    head: Optional[str] = None,
    val: Optional[Dataset] = None,
    trace_path=None,
    stop_when=None,
) -> TrainResult:
    """Transfer every tensor but the output layer, then train all parameters.

    Defaults to a constant learning rate of 1e-4.
    """
    if cfg is None:
        cfg = TrainConfig(lr_policy="constant", lr=1e-4)
    new_config = replace(
        checkpoint.config,
        n_classes=dataset.n_classes,
        head=head or checkpoint.config.head,
    )
    state = transfer_load(checkpoint, new_config, seed=cfg.seed)
    return train(state, dataset, cfg, val=val, trace_path=trace_path, stop_when=stop_when)


def head_for_task(task: str) -> str:
    return "sigmoid" if task == "tagging" else "softmax"


def task_for_head(head: str) -> str:
    return "tagging" if head == "sigmoid" else "classification"


def config_for_task(W: int, s_m: int, n_classes: int, task: str) -> ErannConfig:
    return ErannConfig(W, s_m, n_classes, head_for_task(task)).validate()
