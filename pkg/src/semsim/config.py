"""Simulation configuration and its YAML file form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import yaml

from semsim.errors import ConfigError

SCHEMES = ("none", "sdsm", "baseline16")
DIT_MODES = ("off", "dmt", "dbmt", "dmee")
ADVERSARIES = (None, "flip-data", "replay-seed")


@dataclass(frozen=True)
class SimConfig:
    nodes: int = 16
    scheme: str = "sdsm"
    dit: str = "off"
    alu_cycles: int = 1
    mem_cycles: int = 100
    hop_cycles: int = 100
    kb_cycles: int = 80
    cache_lines: int = 512
    fifo_capacity: int = 10
    rng_seed: int = 0
    adversary: str | None = None
    baseline16_buffer: int = 10
    heat_window: int = 10_000
    functional_crypto: bool = False
    check_values: bool = False

    def __post_init__(self):
        validate(self)

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


def validate(cfg: SimConfig):
    if not isinstance(cfg.nodes, int) or cfg.nodes < 1:
        raise ConfigError(f"nodes must be a positive integer, got {cfg.nodes!r}")
    if cfg.scheme not in SCHEMES:
        raise ConfigError(f"scheme must be one of {SCHEMES}, got {cfg.scheme!r}")
    if cfg.dit not in DIT_MODES:
        raise ConfigError(f"dit must be one of {DIT_MODES}, got {cfg.dit!r}")
    if cfg.adversary not in ADVERSARIES:
        raise ConfigError(f"adversary must be one of {ADVERSARIES[1:]} or unset, "
                          f"got {cfg.adversary!r}")
    if cfg.adversary is not None and not (cfg.functional_crypto and cfg.scheme != "none"):
        raise ConfigError("an in-flight adversary needs a secure scheme and functional_crypto")
    for name in ("alu_cycles", "mem_cycles", "hop_cycles", "kb_cycles", "heat_window"):
        v = getattr(cfg, name)
        if not isinstance(v, int) or v < 0:
            raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")
    for name in ("cache_lines", "fifo_capacity", "baseline16_buffer"):
        v = getattr(cfg, name)
        if not isinstance(v, int) or v < 1:
            raise ConfigError(f"{name} must be a positive integer, got {v!r}")


CONFIG_KEYS = tuple(f.name for f in dataclasses.fields(SimConfig))


def config_from_dict(data: dict | None) -> SimConfig:
    data = dict(data or {})
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return SimConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> SimConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping of config keys")
    return config_from_dict(data)


def dump_config(cfg: SimConfig) -> str:
    return yaml.safe_dump(dataclasses.asdict(cfg), sort_keys=True)
