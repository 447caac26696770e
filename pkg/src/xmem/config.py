"""Run configuration: a fixed key set parsed from plain `key = value` files
with `#` comments, overridable from the command line, plus the full-scale
preset for users bringing their own precomputed features.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace

from .errors import ConfigError

PRECISIONS = ("f32", "f64")
ALIGNMENT_MODES = ("wgan_gp", "logistic")

# full-scale settings for externally precomputed features
FULL_SCALE_PRESET = {
    "d": 1024,
    "batch_size": 64,
    "lr": 1e-4,
    "lambda1": 0.005,
    "lambda2": 0.002,
}


@dataclass
class HyperParams:
    """Everything a training run needs; field names are exactly the config
    file keys. Desk-scale defaults keep a full run in the seconds range."""

    d: int = 16
    d_img: int = 32
    d_rcp: int = 48
    grid_g: int = 8
    alpha: float = 0.3
    lambda1: float = 0.05
    lambda2: float = 0.05
    lambda_gp: float = 10.0
    critic_steps: int = 5
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 50
    seed: int = 7
    normalize_embeddings: bool = True
    alignment_mode: str = "wgan_gp"
    use_hard_mining: bool = True
    use_ma: bool = True
    use_r2i: bool = True
    use_i2r: bool = True
    precision: str = "f64"

    def validate(self) -> None:
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda_gp < 0:
            raise ConfigError("lambda1, lambda2 and lambda_gp must be >= 0")
        if self.critic_steps < 1:
            raise ConfigError(f"critic_steps must be >= 1, got {self.critic_steps}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0 or self.eps <= 0:
            raise ConfigError("lr and eps must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")
        if self.alignment_mode not in ALIGNMENT_MODES:
            raise ConfigError(
                f"alignment_mode must be one of {ALIGNMENT_MODES}, got {self.alignment_mode!r}"
            )
        if min(self.d, self.d_img, self.d_rcp, self.grid_g) < 1:
            raise ConfigError("dimensions must be positive")


CONFIG_KEYS = [f.name for f in fields(HyperParams)]
_FIELD_TYPES = {f.name: f.type for f in fields(HyperParams)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "bool":
        lowered = raw.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigError(f"key {key!r}: expected a boolean, got {raw!r}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: {exc}") from exc
    return raw


def parse_config_text(text: str, base: HyperParams | None = None) -> HyperParams:
    hp = replace(base) if base is not None else HyperParams()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw_line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"config line {lineno}: unknown config key {key!r}")
        setattr(hp, key, _parse_value(key, value))
    hp.validate()
    return hp


def load_config(path, base: HyperParams | None = None) -> HyperParams:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_config_text(text, base)


def apply_overrides(hp: HyperParams, overrides: list[str]) -> HyperParams:
    """Apply `key=value` strings from the command line."""
    hp = replace(hp)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(hp, key, _parse_value(key, value))
    hp.validate()
    return hp


def apply_full_scale_preset(hp: HyperParams) -> HyperParams:
    return replace(hp, **FULL_SCALE_PRESET)


def apply_env(hp: HyperParams) -> HyperParams:
    """Environment override: XMEM_PRECISION in {f32, f64}."""
    value = os.environ.get("XMEM_PRECISION")
    if value is None:
        return hp
    if value not in PRECISIONS:
        raise ConfigError(f"XMEM_PRECISION must be one of {PRECISIONS}, got {value!r}")
    out = replace(hp, precision=value)
    out.validate()
    return out


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(hp: HyperParams) -> str:
    return "\n".join(f"{key} = {_format_value(getattr(hp, key))}" for key in CONFIG_KEYS) + "\n"
