"""YAML config loading with unit normalisation.

Keys match :class:`~ocfmine.model.SystemParams` field names. Values are
written in the units of the reference parameter table and converted to SI
here:

==================  ===========
key                 file unit
==================  ===========
noise_power         dBm
bandwidth           MHz
ecp_freq            GHz
cycles_per_nonce    Mega cycles
avg_block_time      s
tx_power            W
header_size         bit
==================  ===========

An optional ``pricing`` mapping carries ``eps`` and ``step0`` for the price
search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from .model import ConfigError, SystemParams

_TO_SI = {
    "bandwidth": lambda v: v * 1e6,
    "ecp_freq": lambda v: v * 1e9,
    "cycles_per_nonce": lambda v: v * 1e6,
    "noise_power": lambda v: 10.0 ** ((v - 30.0) / 10.0),
}
_FROM_SI = {
    "bandwidth": lambda v: v / 1e6,
    "ecp_freq": lambda v: v / 1e9,
    "cycles_per_nonce": lambda v: v / 1e6,
    "noise_power": lambda v: 10.0 * math.log10(v) + 30.0,
}

DEFAULT_EPS = 1e-3
DEFAULT_STEP0 = 0.25


@dataclass(frozen=True)
class PricingConfig:
    eps: float = DEFAULT_EPS
    step0: float = DEFAULT_STEP0

    def __post_init__(self) -> None:
        if not self.eps > 0:
            raise ConfigError("pricing.eps", "must be > 0")
        if not 0 < self.step0 <= 1:
            raise ConfigError("pricing.step0", "must lie in (0, 1]")


@dataclass(frozen=True)
class Config:
    params: SystemParams
    pricing: PricingConfig


def params_from_mapping(raw: dict) -> SystemParams:
    known = {f.name for f in fields(SystemParams)}
    values = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(key, "unknown parameter")
        if key == "fee_range":
            if not isinstance(value, (list, tuple)) or len(value) != 2:
                raise ConfigError(key, "expected [min, max]")
            value = tuple(float(v) for v in value)
        elif not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(key, f"expected a number, got {value!r}")
        elif key in _TO_SI:
            value = _TO_SI[key](float(value))
        values[key] = value
    return SystemParams(**values)


def params_to_mapping(params: SystemParams) -> dict:
    out = {}
    for key, value in params.as_dict().items():
        if key in _FROM_SI:
            value = _FROM_SI[key](value)
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


def load_config(path: str | Path) -> Config:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ConfigError(str(path), "top level must be a mapping")
    pricing_raw = raw.pop("pricing", None) or {}
    unknown = set(pricing_raw) - {"eps", "step0"}
    if unknown:
        raise ConfigError(f"pricing.{sorted(unknown)[0]}", "unknown pricing option")
    return Config(params_from_mapping(raw), PricingConfig(**pricing_raw))
