"""Run configuration as flat ``section.key=value`` text.

Example::

    # ERANN-1-2 on a small corpus
    model.W=2
    model.s_m=1
    model.n_classes=10
    model.head=softmax
    train.total_iterations=2000
    augment.mixup_variant=modified-spectrogram
    seed=0

Blank lines and ``#`` comments are ignored. ``none`` spells an unset
optional value.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

from .augment import AugmentConfig
from .dsp import MelConfig
from .errors import InvalidConfig
from .model import ErannConfig
from .training import TrainConfig, head_for_task

SECTIONS = ("model", "train", "features", "augment")
_NESTED_TRAIN = ("augment", "mel", "seed")


@dataclass
class RunConfig:
    model: ErannConfig = field(default_factory=lambda: ErannConfig(1, 0, 1, "softmax"))
    train: TrainConfig = field(default_factory=TrainConfig)
    features: MelConfig = field(default_factory=MelConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0

    def validate(self) -> "RunConfig":
        """Validate every section; errors are prefixed with the section name."""
        for name in SECTIONS:
            try:
                getattr(self, name).validate()
            except InvalidConfig as exc:
                raise InvalidConfig(f"{name}: {exc}") from exc
        if self.model.head != head_for_task(self.train.task):
            raise InvalidConfig(
                f"model.head={self.model.head} does not fit train.task={self.train.task} "
                f"(tagging uses sigmoid, classification softmax)"
            )
        return self

    def train_config(self) -> TrainConfig:
        """TrainConfig with the augment, features and seed sections folded in."""
        return dataclasses.replace(self.train, augment=self.augment, mel=self.features, seed=self.seed)


def _section_fields(section: str, obj) -> list:
    names = [f.name for f in dataclasses.fields(obj)]
    if section == "train":
        names = [n for n in names if n not in _NESTED_TRAIN]
    return names


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _coerce(key: str, text: str, hint):
    text = text.strip()
    args = typing.get_args(hint)
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType) and type(None) in args:
        if text.lower() == "none":
            return None
        hint = next(a for a in args if a is not type(None))
    try:
        if hint is bool:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if isinstance(hint, type) and issubclass(hint, Enum):
            return hint(text)
        if hint is str:
            return text
    except ValueError as exc:
        raise InvalidConfig(f"{key}: cannot parse {text!r} as {getattr(hint, '__name__', hint)}") from exc
    raise InvalidConfig(f"{key}: unsupported value type {hint}")


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def apply_overrides(cfg: RunConfig, items: Iterable[tuple]) -> RunConfig:
    """Return a copy of ``cfg`` with ``(key, text)`` pairs applied in order."""
    updates: dict = {s: {} for s in SECTIONS}
    seed = cfg.seed
    for key, text in items:
        key = key.strip()
        if key == "seed":
            seed = _coerce(key, text, int)
            continue
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise InvalidConfig(f"{key}: unknown key (expected seed or one of {SECTIONS} prefixes)")
        obj = getattr(cfg, section)
        if section == "model" and name == "N":
            name = "n_classes"
        if name not in _section_fields(section, obj):
            raise InvalidConfig(f"{key}: unknown key")
        updates[section][name] = _coerce(key, text, _hints(type(obj))[name])
    out = {s: dataclasses.replace(getattr(cfg, s), **updates[s]) for s in SECTIONS}
    return RunConfig(seed=seed, **out)


def parse_config(text: str) -> RunConfig:
    items = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        items.append((key, value))
    return apply_overrides(RunConfig(), items)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for section in SECTIONS:
        obj = getattr(cfg, section)
        for name in _section_fields(section, obj):
            lines.append(f"{section}.{name}={_format(getattr(obj, name))}")
    lines.append(f"seed={cfg.seed}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
