"""Flat key-value experiment configuration.

The on-disk format is one `section.key = value` assignment per line with
`#` comments. Every key has a default, unknown keys are rejected with a
line number, and parse -> render -> parse is a fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass

from .fields import BoundaryMode
from .network import NetworkConfig


class ConfigError(Exception):
    pass


@dataclass
class LossConfig:
    lam: float = 10.0           # weight on the image-similarity term
    weight_decay: float = 1e-5  # weight on the squared parameter norm
    num_squarings: int = 6
    boundary: BoundaryMode = BoundaryMode.CLAMP

    def __post_init__(self):
        self.boundary = BoundaryMode(self.boundary)
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.num_squarings < 1:
            raise ValueError("num_squarings must be >= 1")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16
    epochs: int = 500
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    checkpoint_every: int = 100
    mode: str = "tlrn"  # tlrn | baseline

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.mode not in ("tlrn", "baseline"):
            raise ValueError(f"mode must be 'tlrn' or 'baseline', got {self.mode!r}")


@dataclass
class DataConfig:
    kind: str = "lemniscate"  # lemniscate | ring
    image_size: int = 64
    T: int = 11
    train_count: int = 1000
    val_count: int = 200
    test_count: int = 200
    seed: int = 0
    a: float = 18.0
    sigma: float = 2.0
    scale_min: float = 0.85
    scale_max: float = 1.25
    rotation_max: float = 0.35
    translation_max: float = 6.0

    def __post_init__(self):
        if self.kind not in ("lemniscate", "ring"):
            raise ValueError(f"kind must be 'lemniscate' or 'ring', got {self.kind!r}")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if min(self.train_count, self.val_count, self.test_count) < 1:
            raise ValueError("split sizes must be >= 1")


# schema: flat key -> (section object attr, type)
_SECTIONS = {
    "network": NetworkConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "data": DataConfig,
}

# keys whose config name differs from the dataclass attribute
_ALIASES = {("loss", "lambda"): "lam"}
_ALIASES_INV = {("loss", "lam"): "lambda"}


@dataclass
class ExperimentConfig:
    network: NetworkConfig
    loss: LossConfig
    train: TrainConfig
    data: DataConfig

    @classmethod
    def default(cls) -> "ExperimentConfig":
        return cls(NetworkConfig(), LossConfig(), TrainConfig(), DataConfig())

    def validate(self) -> None:
        if self.network.image_size != self.data.image_size:
            raise ConfigError(
                f"network.image_size ({self.network.image_size}) != "
                f"data.image_size ({self.data.image_size})")


def _coerce(section: str, key: str, value: str, current):
    if isinstance(current, BoundaryMode):
        try:
            return BoundaryMode(value)
        except ValueError:
            raise ConfigError(f"{section}.{key}: invalid boundary mode {value!r}")
    if isinstance(current, bool):
        if value in ("true", "false"):
            return value == "true"
        raise ConfigError(f"{section}.{key}: expected true/false, got {value!r}")
    if isinstance(current, int):
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{section}.{key}: expected integer, got {value!r}")
    if isinstance(current, float):
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{section}.{key}: expected number, got {value!r}")
    return value


def apply_assignments(cfg: ExperimentConfig, assignments: dict[str, str],
                      where: dict[str, int] | None = None) -> ExperimentConfig:
    """Apply `section.key -> raw value` assignments onto a config."""
    for full_key, raw in assignments.items():
        lineinfo = f" (line {where[full_key]})" if where and full_key in where else ""
        if "." not in full_key:
            raise ConfigError(f"key {full_key!r} missing section prefix{lineinfo}")
        section, key = full_key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section {section!r} in key {full_key!r}{lineinfo}")
        attr = _ALIASES.get((section, key), key)
        obj = getattr(cfg, section)
        if not hasattr(obj, attr) or attr.startswith("_"):
            raise ConfigError(f"unknown key {full_key!r}{lineinfo}")
        current = getattr(obj, attr)
        try:
            setattr(obj, attr, _coerce(section, key, raw, current))
        except ConfigError:
            raise
    # re-run dataclass validation
    for section, typ in _SECTIONS.items():
        obj = getattr(cfg, section)
        try:
            obj.__post_init__()
        except ValueError as e:
            raise ConfigError(str(e))
    return cfg


def parse(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse config text over defaults (or over a given base config)."""
    cfg = base if base is not None else ExperimentConfig.default()
    assignments: dict[str, str] = {}
    where: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        assignments[key.strip()] = value.strip()
        where[key.strip()] = lineno
    return apply_assignments(cfg, assignments, where)


def _format_value(v) -> str:
    if isinstance(v, BoundaryMode):
        return v.value
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render(cfg: ExperimentConfig) -> str:
    """Canonical text form: sorted `section.key = value` lines."""
    lines = []
    for section in sorted(_SECTIONS):
        obj = getattr(cfg, section)
        for attr in sorted(vars(obj)):
            if attr.startswith("_"):
                continue
            key = _ALIASES_INV.get((section, attr), attr)
            lines.append(f"{section}.{key} = {_format_value(getattr(obj, attr))}")
    return "\n".join(lines) + "\n"


def load(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse(f.read())


# --- presets ---------------------------------------------------------------

PRESETS: dict[str, dict[str, str]] = {
    # desk-scale lemniscate runs: small images, short sequences, CPU-friendly
    "lemniscate-desk": {
        "data.kind": "lemniscate",
        "data.image_size": "32",
        "data.T": "7",
        "data.train_count": "200",
        "data.val_count": "50",
        "data.test_count": "50",
        "data.a": "8.0",
        "data.sigma": "1.4",
        "network.image_size": "32",
        "train.epochs": "500",
        "train.batch_size": "16",
    },
    # the full-size recipe: 64^2, T+1 = 12, 1000/200/200 split
    "lemniscate-paper": {
        "data.kind": "lemniscate",
        "data.image_size": "64",
        "data.T": "11",
        "data.train_count": "1000",
        "data.val_count": "200",
        "data.test_count": "200",
        "network.image_size": "64",
        "train.epochs": "20000",
        "train.batch_size": "32",
    },
    # contracting-ring sequences with ground-truth masks
    "ring-desk": {
        "data.kind": "ring",
        "data.image_size": "32",
        "data.T": "7",
        "data.train_count": "100",
        "data.val_count": "25",
        "data.test_count": "25",
        "network.image_size": "32",
        "train.epochs": "300",
        "train.batch_size": "16",
    },
}


def from_preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return apply_assignments(ExperimentConfig.default(), PRESETS[name])
