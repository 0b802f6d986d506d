"""Network configuration and flat key=value config file parsing."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


def dbm_to_watts(x_dbm: float) -> float:
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


def thermal_noise_watts(bandwidth_hz: float = 10e6, noise_figure_db: float = 9.0) -> float:
    """Receiver noise power: -174 dBm/Hz thermal density plus a noise figure."""
    return dbm_to_watts(-174.0 + 10.0 * math.log10(bandwidth_hz) + noise_figure_db)


class ConfigError(ValueError):
    """Invalid configuration value or file."""


@dataclass(frozen=True)
class NetworkConfig:
    """Static parameters of one cellular drop.

    Power quantities are in watts (linear scale), pathloss parameters in dB.
    ``pathloss_slope`` defaults to the standard 37.6 dB per decade of km.
    """

    num_rrus: int = 7
    num_users: int = 70
    antennas_per_rru: int = 200
    cell_radius: float = 500.0            # meters, center to vertex
    pathloss_intercept: float = 128.1     # dB at 1 km
    pathloss_slope: float = 37.6          # dB per decade of km
    shadowing_stddev: float = 8.0         # dB
    noise_power: float = thermal_noise_watts()
    uplink_tx_power: float = dbm_to_watts(23.0)
    rru_power_budget: float = dbm_to_watts(46.0)
    coherence_length: int = 200           # symbols per coherence interval
    pilot_length: int = 10                # symbols spent on uplink pilots
    dl_fraction: float = 1.0              # kappa, downlink share of data symbols
    fh_bandwidth_ratio: float = 1.0       # eta, fronthaul over downlink bandwidth
    min_distance: float = 35.0            # meters, pathloss clamp
    rng_seed: int = 0

    def __post_init__(self):
        if not 1 <= self.num_rrus <= 7:
            raise ConfigError("num_rrus must be in 1..7 (7-site hexagonal layout)")
        if self.num_users < 1:
            raise ConfigError("num_users must be positive")
        if self.antennas_per_rru < 1:
            raise ConfigError("antennas_per_rru must be positive")
        if self.pilot_length >= self.coherence_length:
            raise ConfigError("pilot_length must be smaller than coherence_length")
        if self.pilot_length < 1:
            raise ConfigError("pilot_length must be positive")
        if not 0.0 < self.dl_fraction <= 1.0:
            raise ConfigError("dl_fraction must lie in (0, 1]")
        if self.fh_bandwidth_ratio <= 0.0:
            raise ConfigError("fh_bandwidth_ratio must be positive")
        for name in ("cell_radius", "noise_power", "uplink_tx_power",
                     "rru_power_budget", "min_distance"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be strictly positive")
        if self.shadowing_stddev < 0.0:
            raise ConfigError("shadowing_stddev must be nonnegative")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("derived downlink fraction tau must lie in (0, 1]")

    @property
    def tau(self) -> float:
        """Fraction of coherence symbols carrying downlink data."""
        return self.dl_fraction * (1.0 - self.pilot_length / self.coherence_length)

    @property
    def eta_tilde(self) -> float:
        """Fronthaul capacity scale converting bps/Hz into summed nats."""
        return self.fh_bandwidth_ratio * math.log(2.0) / self.tau

    def replace(self, **kwargs) -> "NetworkConfig":
        return replace(self, **kwargs)

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "NetworkConfig":
        raw = read_flat_config(path)
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"unknown config key: {key}")
            kwargs[key] = _coerce(value, key)
        kwargs.update(overrides)
        return cls(**kwargs)


_INT_KEYS = {"num_rrus", "num_users", "antennas_per_rru", "coherence_length",
             "pilot_length", "rng_seed"}


def _coerce(value: str, key: str):
    try:
        if key in _INT_KEYS:
            return int(value)
        return float(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {value!r}") from exc


def read_flat_config(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; '#' starts a comment."""
    out: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out
