"""Scenario configuration for the movable-antenna NOMA downlink simulator.

Powers cross the public interface in dBm (config files, sweep axes) and are
converted to watts exactly once, via the ``*_w`` properties below.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace


class ConfigError(ValueError):
    """Raised when a configuration value violates a model invariant."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts) + 30.0


@dataclass(frozen=True)
class SystemConfig:
    """All scenario scalars: geometry, budgets, loop limits, seed.

    ``bs_region_m``, ``user_region_m`` and ``reference_gain`` default to
    values derived from the wavelength (20 wavelengths, 4 wavelengths and
    wavelength^2/(4*pi)^2 respectively) when left as ``None``.
    """

    num_bs_antennas: int = 16
    num_users: int = 4
    num_paths: int = 10                 # transmit and receive paths are one-to-one
    wavelength_m: float = 0.01
    power_budget_dbm: float = 30.0
    noise_power_dbm: float = -80.0
    mrt_coefficient: float = 1.0        # >= 1; rate floor for far users
    bs_region_m: float | None = None    # side of the square BS placement region
    user_region_m: float | None = None  # side of each user's placement region
    pathloss_exponent: float = 2.8
    reference_gain: float | None = None  # mean channel gain at 1 m
    distance_min_m: float = 50.0
    distance_max_m: float = 200.0
    outer_iters: int = 30
    inner_iters_beam: int = 10
    inner_iters_user: int = 10
    inner_iters_bs: int = 10
    convergence_tol_outer: float = 0.01  # bits/s/Hz improvement per outer pass
    convergence_tol_inner: float = 1e-4  # relative objective change per inner pass
    rng_seed: int = 0

    def __post_init__(self):
        if self.bs_region_m is None:
            object.__setattr__(self, "bs_region_m", 20.0 * self.wavelength_m)
        if self.user_region_m is None:
            object.__setattr__(self, "user_region_m", 4.0 * self.wavelength_m)
        if self.reference_gain is None:
            object.__setattr__(
                self, "reference_gain", self.wavelength_m**2 / (4.0 * math.pi) ** 2
            )
        self.validate()

    @property
    def power_budget_w(self) -> float:
        return dbm_to_watts(self.power_budget_dbm)

    @property
    def noise_power_w(self) -> float:
        return dbm_to_watts(self.noise_power_dbm)

    def validate(self) -> None:
        def require(cond, name, msg):
            if not cond:
                raise ConfigError(f"{name}: {msg}")

        require(self.num_bs_antennas >= 1, "num_bs_antennas", "must be >= 1")
        require(self.num_users >= 1, "num_users", "must be >= 1")
        require(self.num_paths >= 1, "num_paths", "must be >= 1")
        require(self.wavelength_m > 0, "wavelength_m", "must be positive")
        require(self.mrt_coefficient >= 1.0, "mrt_coefficient", "must be >= 1")
        require(self.bs_region_m >= 0, "bs_region_m", "must be nonnegative")
        require(self.user_region_m >= 0, "user_region_m", "must be nonnegative")
        # a half-wavelength-spaced square grid must fit inside the BS region
        side = math.isqrt(self.num_bs_antennas)
        if side * side < self.num_bs_antennas:
            side += 1
        min_region = 0.5 * self.wavelength_m * (side - 1)
        require(
            self.bs_region_m >= min_region - 1e-12,
            "bs_region_m",
            f"must be >= {min_region:g} m so a min-spaced grid of "
            f"{self.num_bs_antennas} antennas fits",
        )
        require(self.reference_gain > 0, "reference_gain", "must be positive")
        require(self.pathloss_exponent > 0, "pathloss_exponent", "must be positive")
        require(self.distance_min_m > 0, "distance_min_m", "must be positive")
        require(
            self.distance_max_m >= self.distance_min_m,
            "distance_max_m",
            "must be >= distance_min_m",
        )
        require(math.isfinite(self.power_budget_dbm), "power_budget_dbm", "must be finite")
        require(math.isfinite(self.noise_power_dbm), "noise_power_dbm", "must be finite")
        for name in ("outer_iters", "inner_iters_beam", "inner_iters_user", "inner_iters_bs"):
            require(getattr(self, name) >= 1, name, "must be >= 1")
        require(self.convergence_tol_outer > 0, "convergence_tol_outer", "must be positive")
        require(self.convergence_tol_inner > 0, "convergence_tol_inner", "must be positive")

    def with_updates(self, **kw) -> "SystemConfig":
        return replace(self, **kw)

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["power_budget_w"] = self.power_budget_w
        out["noise_power_w"] = self.noise_power_w
        return out


CONFIG_FIELD_NAMES = tuple(f.name for f in fields(SystemConfig))

_INT_FIELDS = frozenset(
    name for name in CONFIG_FIELD_NAMES
    if name in (
        "num_bs_antennas", "num_users", "num_paths", "rng_seed",
        "outer_iters", "inner_iters_beam", "inner_iters_user", "inner_iters_bs",
    )
)


def coerce_field(name: str, raw: str):
    """Parse one config value from its textual form."""
    if name not in CONFIG_FIELD_NAMES:
        raise ConfigError(f"unknown config key '{name}'")
    if name in _INT_FIELDS:
        return int(raw)
    return float(raw)
