"""Scenario configuration."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

__all__ = ["ScenarioConfig", "ConfigError", "NAMED_CONFIGS", "load_config", "save_config"]


class ConfigError(ValueError):
    pass


def _grid(lo: float, hi: float, step: float) -> list[float]:
    n = int(round((hi - lo) / step))
    return [lo + i * step for i in range(n + 1)]


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce a sweep.

    Angles are in degrees. ``hotspots = 0`` drops users uniformly over the
    sector; otherwise users are split evenly over that many hotspot centres
    drawn uniformly in the sector and jittered by ±``hotspot_width_deg``.
    """

    num_antennas: int = 32
    num_users: int = 20
    sector_halfwidth_deg: float = 60.0
    angular_spread_deg: float = 5.0
    antenna_spacing: float = 0.5
    hotspots: int = 4
    hotspot_width_deg: float = 3.0
    dol_threshold: float = 0.95
    snr_db: tuple[float, ...] = tuple(_grid(-10.0, 30.0, 5.0))
    alpha_db: tuple[float, ...] = tuple(_grid(-10.0, 30.0, 2.5))
    policy: str = "round-robin"
    pivot_repeats: int = 32
    lp_mode: str = "auto"
    drops: int = 20
    mc_trials: int = 10_000
    seed: int = 2018
    dominant_modes: str | int = "group_size"
    outer_dim: str | int = "full"
    nulling: str = "agreement"
    output_dir: str = "results"

    def __post_init__(self) -> None:
        for name in ("num_antennas", "num_users", "drops", "mc_trials", "pivot_repeats"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.hotspots < 0:
            raise ConfigError("hotspots must be >= 0")
        if not self.angular_spread_deg > 0:
            raise ConfigError("angular_spread_deg must be positive")
        if not 0 < self.dol_threshold < 1:
            raise ConfigError("dol_threshold must lie in (0, 1)")
        if len(self.snr_db) == 0 or len(self.alpha_db) == 0:
            raise ConfigError("snr_db and alpha_db grids must be nonempty")
        if self.policy not in ("max-utility", "round-robin"):
            raise ConfigError(f"unknown policy {self.policy!r}")
        if self.lp_mode not in ("auto", "full", "lazy"):
            raise ConfigError(f"unknown lp_mode {self.lp_mode!r}")
        if self.nulling not in ("agreement", "active"):
            raise ConfigError(f"unknown nulling rule {self.nulling!r}")
        if not (self.dominant_modes == "group_size" or isinstance(self.dominant_modes, int)):
            raise ConfigError("dominant_modes must be 'group_size' or an integer")
        if not (self.outer_dim in ("full", "streams") or isinstance(self.outer_dim, int)):
            raise ConfigError("outer_dim must be 'full', 'streams' or an integer")
        object.__setattr__(self, "snr_db", tuple(float(x) for x in self.snr_db))
        object.__setattr__(self, "alpha_db", tuple(float(x) for x in self.alpha_db))

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["snr_db"] = list(self.snr_db)
        d["alpha_db"] = list(self.alpha_db)
        return d

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScenarioConfig":
        flat = _flatten(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(flat) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**flat)
        except TypeError as e:
            raise ConfigError(str(e)) from e


def _flatten(d: dict[str, Any]) -> dict[str, Any]:
    # nested sections are namespaces only: {"array": {"num_antennas": 32}} -> num_antennas
    out: dict[str, Any] = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v))
        else:
            out[k.replace("-", "_")] = v
    return out


NAMED_CONFIGS: dict[str, ScenarioConfig] = {
    "desk": ScenarioConfig(),
    "full": ScenarioConfig(
        num_antennas=128,
        num_users=80,
        hotspots=0,
        drops=20,
    ),
    "validate": ScenarioConfig(
        num_antennas=64,
        num_users=8,
        angular_spread_deg=20.0,
        snr_db=(10.0,),
        mc_trials=10_000,
    ),
}


def load_config(path: str | Path) -> ScenarioConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    base = data.pop("base", None)
    if base is not None:
        if base not in NAMED_CONFIGS:
            raise ConfigError(f"unknown base config {base!r}")
        merged = NAMED_CONFIGS[base].to_dict()
        merged.update(_flatten(data))
        data = merged
    return ScenarioConfig.from_dict(data)


def save_config(cfg: ScenarioConfig, path: str | Path) -> None:
    d = cfg.to_dict()
    sections = {
        "array": {k: d.pop(k) for k in ("num_antennas", "antenna_spacing")},
        "users": {
            k: d.pop(k)
            for k in ("num_users", "sector_halfwidth_deg", "angular_spread_deg", "hotspots", "hotspot_width_deg")
        },
        "clustering": {k: d.pop(k) for k in ("dol_threshold", "pivot_repeats", "lp_mode")},
        "scheduling": {k: d.pop(k) for k in ("alpha_db", "policy", "dominant_modes", "outer_dim", "nulling")},
    }
    sections.update(d)
    with open(path, "w") as fh:
        yaml.safe_dump(sections, fh, sort_keys=False)
