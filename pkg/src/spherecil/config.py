"""Run configuration: flat key=value text format, validation, digest."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

from .anchors import fnv1a64
from .errors import ConfigError

VARIANTS = ("full", "cosine", "sim_only", "single_task", "pca")


@dataclass(frozen=True)
class Config:
    d_in: int = 128
    d: int = 32
    K: int = 8
    B: int = 5
    classes_per_task: int = 4
    samples_per_class: int = 50
    spread_sigma: float = 0.05
    min_class_angle: float = 0.5
    epochs: int = 20
    batch_size: int = 64
    lr_init: float = 0.05
    lambda_int: float = 0.8
    lambda_comp: float = 1.0
    tau_cont: float = 0.07
    epsilon: float = 0.1
    tau_route: float = 0.05
    M: int = 3
    rho_min: float = 0.02
    rho_max: float = 0.4
    seed: int = 1993
    variant: str = "full"

    def __post_init__(self):
        for name in ("d_in", "d", "K", "B", "classes_per_task", "samples_per_class",
                     "epochs", "batch_size", "M"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        for name in ("spread_sigma",):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        for name in ("min_class_angle", "lr_init", "lambda_int", "lambda_comp",
                     "tau_cont", "epsilon", "tau_route"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not (0.0 < self.rho_min < self.rho_max < 1.0):
            raise ConfigError("need 0 < rho_min < rho_max < 1")
        if self.d_in < 4:
            raise ConfigError("d_in must be at least 4 (occlusion contract)")
        if self.d > self.d_in:
            raise ConfigError("embedding dimension d cannot exceed d_in")
        if self.K > self.d - 1:
            raise ConfigError("K cannot exceed the tangent dimension d - 1")
        if self.min_class_angle >= 3.0:
            raise ConfigError("min_class_angle must be below pi")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}"
            )

    def canonical_text(self) -> str:
        """Flat `key = value` lines in field order; parse-stable."""
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> int:
        return fnv1a64(self.canonical_text().encode("utf-8"))


def conservative_weights(config: Config) -> Config:
    """Alternate preset with the conservative regularizer weights."""
    return replace(config, lambda_int=0.1, lambda_comp=0.3)


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _parse_value(name: str, raw: str):
    default = getattr(Config(), name)
    try:
        if isinstance(default, bool):
            raise ConfigError(f"unexpected boolean field {name}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config_text(text: str) -> Config:
    """Parse flat `key = value` lines; '#' comments; unknown keys rejected."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        values[key] = _parse_value(key, raw)
    return Config(**values)


def load_config(path: str) -> Config:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def config_overrides(config: Config, **kwargs) -> Config:
    unknown = set(kwargs) - set(asdict(config))
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return replace(config, **kwargs)
