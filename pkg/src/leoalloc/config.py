"""Scenario configuration.

Configs are plain frozen dataclasses. The JSON file format carries explicit
units in every key (``altitude_km``, ``bandwidth_mhz`` ...) and all dB
quantities are entered in dB; they are converted to SI/linear once here.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised for invalid or inconsistent configuration values."""


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class ConstellationConfig:
    total_satellites: int = 1584
    orbital_planes: int = 72
    altitude: float = 550e3
    inclination: float = 53.0
    inter_plane_phasing: float = 0.0
    earth_radius: float = 6371e3
    gravitational_parameter: float = 3.986004418e14
    earth_rotation_rate: float = 7.2921159e-5
    epoch: float = 0.0

    def __post_init__(self):
        if self.total_satellites <= 0 or self.orbital_planes <= 0:
            raise ConfigError("satellite and plane counts must be positive")
        if self.total_satellites % self.orbital_planes:
            raise ConfigError(
                f"total_satellites={self.total_satellites} is not divisible by "
                f"orbital_planes={self.orbital_planes}"
            )
        if self.altitude <= 0:
            raise ConfigError("altitude must be positive")
        if not 0.0 <= self.inclination <= 180.0:
            raise ConfigError("inclination must lie in [0, 180] degrees")

    @property
    def sats_per_plane(self) -> int:
        return self.total_satellites // self.orbital_planes

    @property
    def orbit_radius(self) -> float:
        return self.earth_radius + self.altitude

    @property
    def period(self) -> float:
        return 2.0 * math.pi * math.sqrt(self.orbit_radius**3 / self.gravitational_parameter)


@dataclass(frozen=True)
class GridSpec:
    lat_min: float = 40.0
    lat_max: float = 55.0
    lon_min: float = 5.0
    lon_max: float = 30.0
    resolution: float = 0.25

    def __post_init__(self):
        if not self.lat_min < self.lat_max:
            raise ConfigError("empty grid: lat_min must be < lat_max")
        if not self.lon_min < self.lon_max:
            raise ConfigError("empty grid: lon_min must be < lon_max")
        if self.resolution <= 0:
            raise ConfigError("grid resolution must be positive")


@dataclass(frozen=True)
class LinkConfig:
    """Link parameters, stored linear/SI. Use :meth:`from_db` for dB inputs."""

    carrier_frequency: float = 2e9
    tx_power: float = 75.35
    sat_antenna_gain: float = db_to_linear(30.0)
    user_antenna_gain: float = db_to_linear(0.0)
    atmospheric_loss: float = db_to_linear(0.5)
    pointing_loss: float = db_to_linear(3.0)
    bandwidth: float = 30e6
    noise_power: float = db_to_linear(-122.20)
    speed_of_light: float = 299_792_458.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ConfigError(f"link parameter {name} must be strictly positive, got {value}")

    @classmethod
    def from_db(
        cls,
        carrier_frequency_ghz: float = 2.0,
        tx_power_w: float = 75.35,
        sat_antenna_gain_dbi: float = 30.0,
        user_antenna_gain_dbi: float = 0.0,
        atmospheric_loss_db: float = 0.5,
        pointing_loss_db: float = 3.0,
        bandwidth_mhz: float = 30.0,
        noise_power_dbw: float = -122.20,
        speed_of_light_m_s: float = 299_792_458.0,
    ) -> LinkConfig:
        return cls(
            carrier_frequency=carrier_frequency_ghz * 1e9,
            tx_power=tx_power_w,
            sat_antenna_gain=db_to_linear(sat_antenna_gain_dbi),
            user_antenna_gain=db_to_linear(user_antenna_gain_dbi),
            atmospheric_loss=db_to_linear(atmospheric_loss_db),
            pointing_loss=db_to_linear(pointing_loss_db),
            bandwidth=bandwidth_mhz * 1e6,
            noise_power=db_to_linear(noise_power_dbw),
            speed_of_light=speed_of_light_m_s,
        )


@dataclass(frozen=True)
class TimingConfig:
    slot_duration: float = 10.0
    frame_duration: float = 10e-3
    beams_per_satellite: int = 10
    num_slots: int = 100

    def __post_init__(self):
        if self.slot_duration <= 0 or self.frame_duration <= 0:
            raise ConfigError("slot and frame durations must be positive")
        ratio = self.slot_duration / self.frame_duration
        if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
            raise ConfigError(
                f"slot_duration/frame_duration = {ratio} is not a positive integer"
            )
        if self.beams_per_satellite < 1:
            raise ConfigError("beams_per_satellite must be >= 1")
        if self.num_slots < 1:
            raise ConfigError("num_slots must be >= 1")

    @property
    def frames_per_slot(self) -> int:
        return int(round(self.slot_duration / self.frame_duration))

    @property
    def satellite_budget(self) -> int:
        return self.frames_per_slot * self.beams_per_satellite


@dataclass(frozen=True)
class SolverConfig:
    """Reweighting and inner-solver settings.

    ``beta=None`` resolves per slot to ``beta_price_fraction`` times the mean
    budget price ``sum U / sum(N_T N_B)``, which is the scale of the objective
    gradient. ``beta_rule="median_users"`` uses the median of the active users
    over populated cells instead. ``pg_tolerance=None`` means a tolerance
    relative to the same price scale (see :func:`leoalloc.solver.default_tolerance`).
    """

    beta: float | None = None
    beta_rule: str = "price"
    beta_price_fraction: float = 0.3
    tau: float = 1.0
    n_iter: int = 1
    pg_max_steps: int = 5000
    pg_tolerance: float | None = None
    pg_step_rule: str = "backtracking"

    def __post_init__(self):
        if self.beta is not None and self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.beta_rule not in ("price", "median_users"):
            raise ConfigError(f"unknown beta_rule {self.beta_rule!r}")
        if not self.beta_price_fraction >= 0:
            raise ConfigError("beta_price_fraction must be >= 0")
        if not self.tau > 0:
            raise ConfigError("tau must be > 0")
        if self.n_iter < 1:
            raise ConfigError("n_iter must be >= 1")
        if self.pg_tolerance is not None and not self.pg_tolerance > 0:
            raise ConfigError("pg_tolerance must be > 0")
        if self.pg_step_rule not in ("fixed", "backtracking"):
            raise ConfigError(f"unknown pg_step_rule {self.pg_step_rule!r}")


@dataclass(frozen=True)
class MatchingConfig:
    weight_rule: str = "penalized_rate"

    def __post_init__(self):
        if self.weight_rule not in ("penalized_rate", "raw_rate", "rate_per_user"):
            raise ConfigError(f"unknown matching weight_rule {self.weight_rule!r}")


@dataclass(frozen=True)
class PopulationSource:
    """Either a raster path or a synthetic model with its parameters."""

    raster: str | None = None
    model: str = "lognormal"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.raster is None and self.model not in ("uniform", "lognormal", "clustered"):
            raise ConfigError(f"unknown synthetic population model {self.model!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    population: PopulationSource = field(
        default_factory=lambda: PopulationSource(model="lognormal", params=dict(EUROPE_LOGNORMAL))
    )
    alpha: float = 1e-3
    constellation: ConstellationConfig = field(default_factory=ConstellationConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    timing: TimingConfig = field(default_factory=TimingConfig)
    handover_cost: float = 0.0
    algorithm: str = "global"
    solver: SolverConfig = field(default_factory=SolverConfig)
    matching: MatchingConfig = field(default_factory=MatchingConfig)
    conflict_score: str = "penalized"
    elevation_mask: float = 30.0
    visibility_rule: str = "service_area"
    seed: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if not 0.0 <= self.handover_cost < 1.0:
            raise ConfigError("handover_cost must lie in [0, 1)")
        if self.algorithm not in ("global", "distributed"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.conflict_score not in ("penalized", "literal"):
            raise ConfigError(f"unknown conflict_score {self.conflict_score!r}")
        if self.visibility_rule not in ("service_area", "elevation"):
            raise ConfigError(f"unknown visibility_rule {self.visibility_rule!r}")
        if not -90.0 <= self.elevation_mask <= 90.0:
            raise ConfigError("elevation_mask must lie in [-90, 90] degrees")

    def with_overrides(self, **kw: Any) -> ScenarioConfig:
        """Return a copy with top-level or ``solver.*`` fields replaced."""
        solver_kw = {k[len("solver."):]: kw.pop(k) for k in list(kw) if k.startswith("solver.")}
        cfg = replace(self, **kw)
        if solver_kw:
            cfg = replace(cfg, solver=replace(cfg.solver, **solver_kw))
        return cfg

    def fingerprint(self) -> str:
        """Stable hash of every field that influences the episode outputs."""
        d = asdict(self)
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# Log-Gaussian field tuned to a central-European look: ~50k people per
# 0.25 deg cell median, heavy tail, ~12% empty (sea / uninhabited) cells.
EUROPE_LOGNORMAL = {
    "mu": 10.3,
    "sigma": 1.6,
    "correlation_cells": 6.0,
    "zero_fraction": 0.125,
}


# -- JSON loading -------------------------------------------------------------

_CONSTELLATION_KEYS = {
    "total_satellites": ("total_satellites", 1),
    "orbital_planes": ("orbital_planes", 1),
    "altitude_km": ("altitude", 1e3),
    "inclination_deg": ("inclination", 1),
    "phasing_deg": ("inter_plane_phasing", 1),
    "earth_radius_km": ("earth_radius", 1e3),
    "mu_m3_s2": ("gravitational_parameter", 1),
    "earth_rotation_rad_s": ("earth_rotation_rate", 1),
    "epoch_s": ("epoch", 1),
}

_GRID_KEYS = {
    "lat_min_deg": "lat_min",
    "lat_max_deg": "lat_max",
    "lon_min_deg": "lon_min",
    "lon_max_deg": "lon_max",
    "resolution_deg": "resolution",
}

_TIMING_KEYS = {
    "slot_duration_s": ("slot_duration", 1),
    "frame_duration_ms": ("frame_duration", 1e-3),
    "beams_per_satellite": ("beams_per_satellite", 1),
    "num_slots": ("num_slots", 1),
}

_SOLVER_KEYS = {
    "beta": "beta",
    "beta_rule": "beta_rule",
    "beta_price_fraction": "beta_price_fraction",
    "tau_frames": "tau",
    "n_iter": "n_iter",
    "pg_max_steps": "pg_max_steps",
    "pg_tolerance": "pg_tolerance",
    "pg_step_rule": "pg_step_rule",
}


def _take(section: dict, mapping: dict, where: str) -> dict:
    unknown = set(section) - set(mapping)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    out = {}
    for key, spec in mapping.items():
        if key in section:
            if isinstance(spec, tuple):
                name, scale = spec
                value = section[key]
                out[name] = value * scale if scale != 1 else value
            else:
                out[spec] = section[key]
    return out


def config_from_dict(d: dict, base_dir: Path | None = None) -> ScenarioConfig:
    known = {
        "grid", "population", "alpha", "constellation", "link", "timing",
        "handover_cost", "algorithm", "solver", "matching", "conflict_score",
        "elevation_mask_deg", "visibility_rule", "seed", "output_dir",
    }
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")

    kw: dict[str, Any] = {}
    if "grid" in d:
        kw["grid"] = GridSpec(**_take(d["grid"], _GRID_KEYS, "grid"))
    if "population" in d:
        pop = dict(d["population"])
        raster = pop.pop("raster", None)
        if raster is not None:
            path = Path(raster)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            kw["population"] = PopulationSource(raster=str(path))
        else:
            model = pop.pop("model", "lognormal")
            kw["population"] = PopulationSource(model=model, params=pop)
    if "constellation" in d:
        kw["constellation"] = ConstellationConfig(
            **_take(d["constellation"], _CONSTELLATION_KEYS, "constellation")
        )
    if "link" in d:
        try:
            kw["link"] = LinkConfig.from_db(**d["link"])
        except TypeError as exc:
            raise ConfigError(f"bad link section: {exc}") from None
    if "timing" in d:
        kw["timing"] = TimingConfig(**_take(d["timing"], _TIMING_KEYS, "timing"))
    if "solver" in d:
        kw["solver"] = SolverConfig(**_take(d["solver"], _SOLVER_KEYS, "solver"))
    if "matching" in d:
        kw["matching"] = MatchingConfig(**d["matching"])
    for key in ("alpha", "handover_cost", "algorithm", "conflict_score",
                "visibility_rule", "seed", "output_dir"):
        if key in d:
            kw[key] = d[key]
    if "elevation_mask_deg" in d:
        kw["elevation_mask"] = d["elevation_mask_deg"]
    return ScenarioConfig(**kw)


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(d, base_dir=path.parent)
