# config.py

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, NamedTuple, Sequence, Tuple

from dotenv import dotenv_values

from .augment import default_dropout_probs
from .constants import AugMode
from .data import SyntheticKind, SyntheticSpec, blobs_hard
from .helper.errors import AppError, ConfigError, StorageError
from .losses import Level

logger = logging.getLogger(__name__)


# ============================================================================
# Typed sections
# ============================================================================


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    warmup_epochs: int = 8
    batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    lr_milestones: Tuple[int, ...] = (35, 45, 55)
    lr_decay: float = 0.1
    seed: int = 0
    n_views: int = 5
    # empty means 0.2, 0.25, 0.3, ... one per view
    dropout_probs: Tuple[float, ...] = ()
    tau_Z: float = 4.0
    tau_C: float = 0.07
    gamma_init: float = 0.2
    tau_feat: float = 0.07
    level: Level = Level.BOTH
    aug_mode: AugMode = AugMode.ANGULAR
    ensemble_weights: Tuple[float, ...] = ()
    teacher_epochs: int = 40
    teacher_hidden: Tuple[int, ...] = (128, 128)
    teacher_dim: int = 64
    student_hidden: Tuple[int, ...] = (32, 32)
    student_dim: int = 32
    distill_level: Level = Level.BOTH
    noise_sigma: float = 0.1
    use_inter: bool = True
    use_intra: bool = True
    use_constraint: bool = True
    use_diversity: bool = True
    orthogonal_init: bool = True
    head_dropout: bool = True

    def __post_init__(self):
        object.__setattr__(self, "level", Level(self.level))
        object.__setattr__(self, "distill_level", Level(self.distill_level))
        object.__setattr__(self, "aug_mode", AugMode(self.aug_mode))
        for name in ("lr_milestones", "dropout_probs", "ensemble_weights", "teacher_hidden", "student_hidden"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

        if self.epochs < 1 or self.teacher_epochs < 0:
            raise ConfigError("epochs must be >= 1 and teacher_epochs >= 0")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(f"warmup_epochs must be in [0, epochs), got {self.warmup_epochs}")
        milestones = self.lr_milestones
        if any(b <= a for a, b in zip(milestones, milestones[1:])):
            raise ConfigError(f"lr_milestones must be strictly increasing, got {list(milestones)}")
        if milestones and (milestones[0] < 0 or milestones[-1] >= self.epochs):
            raise ConfigError(f"lr_milestones must lie in [0, epochs), got {list(milestones)}")
        if self.batch_size < 1 or self.n_views < 0:
            raise ConfigError("batch_size must be >= 1 and n_views >= 0")
        if self.dropout_probs and len(self.dropout_probs) != self.n_views:
            raise ConfigError(
                f"dropout_probs has {len(self.dropout_probs)} entries for n_views={self.n_views}"
            )
        if self.ensemble_weights and len(self.ensemble_weights) != self.n_views + 1:
            raise ConfigError(f"ensemble_weights needs n_views + 1 = {self.n_views + 1} entries")
        if min(self.tau_Z, self.tau_C, self.tau_feat, self.lr) <= 0:
            raise ConfigError("temperatures and lr must be positive")
        if not 0.0 <= self.gamma_init <= 1.0:
            raise ConfigError(f"gamma_init must be in [0, 1], got {self.gamma_init}")

    @classmethod
    def full_schedule(cls, **overrides) -> TrainConfig:
        return cls(epochs=240, warmup_epochs=30, lr_milestones=(150, 180, 210), **overrides)

    @classmethod
    def scaled_to(cls, epochs: int, **overrides) -> TrainConfig:
        """Full schedule compressed to ``epochs``, milestones and warm-up floored."""
        full = cls.full_schedule()
        factor = epochs / full.epochs
        milestones = sorted({math.floor(m * factor) for m in full.lr_milestones} - {0})
        return cls(
            epochs=epochs,
            warmup_epochs=min(max(1, math.floor(full.warmup_epochs * factor)), epochs - 1),
            lr_milestones=tuple(m for m in milestones if m < epochs),
            **overrides,
        )

    def head_dropout_probs(self) -> List[float]:
        if not self.head_dropout:
            return [0.0] * self.n_views
        return list(self.dropout_probs) if self.dropout_probs else default_dropout_probs(self.n_views)

    @property
    def uses_heads(self) -> bool:
        return self.aug_mode is AugMode.ANGULAR and self.n_views > 0


@dataclass(frozen=True)
class DataConfig:
    data_source: str = "synthetic"
    idx_train_images: str = ""
    idx_train_labels: str = ""
    idx_test_images: str = ""
    idx_test_labels: str = ""
    imbalance_classes: Tuple[int, ...] = ()
    imbalance_cap: int = 50
    train_fraction: float = 1.0
    standardize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "imbalance_classes", tuple(self.imbalance_classes))
        if self.data_source not in ("synthetic", "idx"):
            raise ConfigError(f"data_source must be synthetic or idx, got {self.data_source}")
        if self.data_source == "idx" and not all(
            (self.idx_train_images, self.idx_train_labels, self.idx_test_images, self.idx_test_labels)
        ):
            raise ConfigError("data_source=idx needs all four idx_* paths")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1], got {self.train_fraction}")


@dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: SyntheticSpec = field(default_factory=blobs_hard)
    data: DataConfig = field(default_factory=DataConfig)

    def with_train(self, **changes) -> ExperimentConfig:
        return replace(self, train=replace(self.train, **changes))


# ============================================================================
# Flat key=value codec
# ============================================================================


class _Codec(NamedTuple):
    parse: Callable[[str], Any]
    format: Callable[[Any], str]


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered not in ("true", "false"):
        raise ValueError(f"expected true or false, got {text!r}")
    return lowered == "true"


def _parse_list(item: Callable[[str], Any]) -> Callable[[str], Tuple[Any, ...]]:
    return lambda text: tuple(item(part.strip()) for part in text.split(",") if part.strip())


_INT = _Codec(int, str)
_FLOAT = _Codec(float, repr)
_BOOL = _Codec(_parse_bool, lambda value: "true" if value else "false")
_STR = _Codec(str.strip, str)
_INTS = _Codec(_parse_list(int), lambda values: ",".join(str(v) for v in values))
_FLOATS = _Codec(_parse_list(float), lambda values: ",".join(repr(float(v)) for v in values))


def _enum(cls) -> _Codec:
    return _Codec(lambda text: cls(text.strip()), lambda value: str(value))


_CODECS = {
    "int": _INT,
    "float": _FLOAT,
    "bool": _BOOL,
    "str": _STR,
    "Tuple[int, ...]": _INTS,
    "Tuple[float, ...]": _FLOATS,
    "Level": _enum(Level),
    "AugMode": _enum(AugMode),
    "SyntheticKind": _enum(SyntheticKind),
}


class _Key(NamedTuple):
    key: str
    section: str
    attr: str
    codec: _Codec


def _keys_for(section: str, cls, renames: Mapping[str, str] | None = None) -> List[_Key]:
    keys = []
    for spec in fields(cls):
        codec = _CODECS.get(spec.type)
        if codec is None:
            raise TypeError(f"no config codec for {cls.__name__}.{spec.name}: {spec.type}")
        keys.append(_Key((renames or {}).get(spec.name, spec.name), section, spec.name, codec))
    return keys


# Fixed dump order: train keys, then synthetic keys, then data-protocol keys.
CONFIG_KEYS: List[_Key] = (
    _keys_for("train", TrainConfig)
    + _keys_for("synthetic", SyntheticSpec, {"seed": "data_seed"})
    + _keys_for("data", DataConfig)
)
_BY_KEY = {entry.key: entry for entry in CONFIG_KEYS}


def to_flat(cfg: ExperimentConfig) -> Dict[str, str]:
    return {
        entry.key: entry.codec.format(getattr(getattr(cfg, entry.section), entry.attr))
        for entry in CONFIG_KEYS
    }


def from_flat(values: Mapping[str, str | None], base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    unknown = sorted(set(values) - set(_BY_KEY))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    sections: Dict[str, Dict[str, Any]] = {"train": {}, "synthetic": {}, "data": {}}
    for key, raw in values.items():
        entry = _BY_KEY[key]
        if raw is None:
            raise ConfigError(f"config key {key} has no value")
        try:
            sections[entry.section][entry.attr] = entry.codec.parse(raw)
        except ValueError as exc:
            raise ConfigError(f"invalid value for {key}: {raw!r} ({exc})") from exc

    try:
        return ExperimentConfig(
            train=replace(base.train, **sections["train"]),
            synthetic=replace(base.synthetic, **sections["synthetic"]),
            data=replace(base.data, **sections["data"]),
        )
    except ConfigError:
        raise
    except AppError as exc:
        raise ConfigError(exc.message, details=exc.details) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = dotenv_values(path, interpolate=False)
    cfg = from_flat(values)
    logger.info("Loaded experiment config from %s (%d keys)", path, len(values))
    return cfg


def parse_override(text: str) -> Tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like key=value, got {text!r}")
    return key.strip(), value.strip()


def apply_overrides(cfg: ExperimentConfig, overrides: Sequence[str]) -> ExperimentConfig:
    if not overrides:
        return cfg
    return from_flat(dict(parse_override(item) for item in overrides), base=cfg)


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{key}={value}\n" for key, value in to_flat(cfg).items())


def save_config(cfg: ExperimentConfig, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.write_text(dump_config(cfg), encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write config {path}: {exc}") from exc
    return path
