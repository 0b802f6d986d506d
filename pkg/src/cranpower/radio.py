"""Closed-form SINR layer: channel-estimate gains, rates, fronthaul loads, power.

Everything here is computed from large-scale coefficients only. All
quantities are linear scale; rates are kept in nats internally and converted
to bps/Hz at the API boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import NetworkConfig
from .scenario import Scenario

LN2 = math.log(2.0)


@dataclass(frozen=True)
class PowerModel:
    """Static and dynamic power consumption of the network."""

    p_ue: float            # watts consumed per user (training + uplink data)
    rho: float             # per-RRU circuit power not scaling with antennas
    varsigma: float        # circuit watts per antenna
    p_fh: float            # fixed fronthaul power
    omega_rru: float       # RRU power amplifier efficiency
    omega_ue: float        # user equipment power amplifier efficiency
    static_power: float    # K*p_ue + L*(rho + N*varsigma) + p_fh

    def __post_init__(self):
        for name in ("p_ue", "rho", "varsigma", "p_fh"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("omega_rru", "omega_ue"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.static_power <= 0.0:
            raise ValueError("static_power must be strictly positive")

    @classmethod
    def from_config(cls, cfg: NetworkConfig, rho: float = 1.8, varsigma: float = 0.2,
                    p_fh: float = 50.0, omega_rru: float = 0.3,
                    omega_ue: float = 0.3) -> "PowerModel":
        p_ue = (1.0 - cfg.tau) * cfg.uplink_tx_power / omega_ue
        static = (cfg.num_users * p_ue
                  + cfg.num_rrus * (rho + cfg.antennas_per_rru * varsigma)
                  + p_fh)
        return cls(p_ue=p_ue, rho=rho, varsigma=varsigma, p_fh=p_fh,
                   omega_rru=omega_rru, omega_ue=omega_ue, static_power=static)


@dataclass(frozen=True)
class FronthaulConstraint:
    """Capacity limit on the fronthaul: per RRU link, aggregate, or absent."""

    kind: str                      # "per_link" | "sum" | "none"
    capacity: float | None = None  # bps/Hz

    def __post_init__(self):
        if self.kind not in ("per_link", "sum", "none"):
            raise ValueError(f"unknown fronthaul constraint kind: {self.kind}")
        if self.kind != "none":
            if self.capacity is None or not np.isfinite(self.capacity) or self.capacity <= 0:
                raise ValueError("capacity must be finite and positive")

    @classmethod
    def per_link(cls, capacity: float) -> "FronthaulConstraint":
        return cls("per_link", capacity)

    @classmethod
    def sum_capacity(cls, capacity: float) -> "FronthaulConstraint":
        return cls("sum", capacity)

    @classmethod
    def none(cls) -> "FronthaulConstraint":
        return cls("none")

    def num_constraints(self, num_rrus: int) -> int:
        return {"per_link": num_rrus, "sum": 1, "none": 0}[self.kind]

    def constraint_of_user(self, association: np.ndarray) -> np.ndarray:
        """Index of the fronthaul constraint each user's rate counts toward."""
        if self.kind == "per_link":
            return association.astype(np.int64)
        if self.kind == "sum":
            return np.zeros(len(association), dtype=np.int64)
        return np.full(len(association), -1, dtype=np.int64)

    def rhs_nats(self, eta_tilde: float, num_rrus: int) -> np.ndarray:
        """Right-hand sides eta_tilde * C, one entry per constraint, in nats."""
        n = self.num_constraints(num_rrus)
        if n == 0:
            return np.zeros(0)
        return np.full(n, eta_tilde * self.capacity)


@dataclass(frozen=True)
class RadioModel:
    """Precoder-dependent constants of the closed-form SINR for one drop.

    ``coupling[i, k]`` is the full cross-power coefficient
    w_{j_i k} + v * theta_{j_i k} * s_{ik}; ``coupling_int`` drops the i == k
    pilot term and generates the interference-only denominator.
    """

    scenario: Scenario
    precoder: str                 # "mrt" | "zf"
    theta: np.ndarray             # (L, K) estimated-channel gains
    w: np.ndarray                 # (L, K) multi-user interference gains
    v: float                      # array gain
    tau: float
    sigma2: float
    eta_tilde: float
    coupling: np.ndarray          # (K, K)
    coupling_int: np.ndarray      # (K, K)
    theta_serving: np.ndarray     # (K,) theta at each user's serving RRU

    def __post_init__(self):
        for name in ("theta", "w", "coupling", "coupling_int", "theta_serving"):
            getattr(self, name).setflags(write=False)

    @property
    def num_users(self) -> int:
        return self.theta.shape[1]

    @property
    def num_rrus(self) -> int:
        return self.theta.shape[0]

    @property
    def association(self) -> np.ndarray:
        return self.scenario.association

    @property
    def power_budget(self) -> float:
        return self.scenario.config.rru_power_budget


def build_radio_model(scenario: Scenario, precoder: str = "mrt") -> RadioModel:
    """Channel-estimate gains and SINR constants for MRT or ZF precoding."""
    cfg = scenario.config
    precoder = precoder.lower()
    if precoder not in ("mrt", "zf"):
        raise ValueError(f"unknown precoder: {precoder}")
    if precoder == "zf" and cfg.antennas_per_rru <= cfg.pilot_length:
        raise ValueError("ZF requires more antennas than pilot symbols")

    beta = scenario.beta
    share = scenario.pilot_share
    est_noise = cfg.noise_power / (cfg.pilot_length * cfg.uplink_tx_power)
    theta = beta ** 2 / (beta @ share + est_noise)

    if precoder == "mrt":
        v = float(cfg.antennas_per_rru)
        w = beta.copy()
    else:
        v = float(cfg.antennas_per_rru - cfg.pilot_length)
        w = beta - theta

    assoc = scenario.association
    theta_rows = theta[assoc, :]      # (K, K): row i is theta_{j_i, .}
    w_rows = w[assoc, :]
    coupling = w_rows + v * theta_rows * share
    theta_serving = theta[assoc, np.arange(scenario.num_users)]
    coupling_int = coupling - np.diag(v * theta_serving)

    return RadioModel(scenario=scenario, precoder=precoder, theta=theta, w=w, v=v,
                      tau=cfg.tau, sigma2=cfg.noise_power, eta_tilde=cfg.eta_tilde,
                      coupling=coupling, coupling_int=coupling_int,
                      theta_serving=theta_serving)


def sinr_denominators(model: RadioModel, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full (signal+interference+noise) and interference-only denominators.

    Exposed separately because the surrogate bounds reuse exactly these sums.
    """
    p = np.asarray(p, dtype=float)
    d_full = p @ model.coupling + model.sigma2
    d_int = d_full - model.v * p * model.theta_serving
    return d_full, d_int


def sinr(model: RadioModel, p: np.ndarray) -> np.ndarray:
    """Per-user SINR at power vector p (closed form, large-scale level)."""
    p = np.asarray(p, dtype=float)
    _, d_int = sinr_denominators(model, p)
    return model.v * p * model.theta_serving / d_int


def rates_nats(model: RadioModel, p: np.ndarray) -> np.ndarray:
    """ln(1 + SINR) per user."""
    return np.log1p(sinr(model, p))


def user_rates(model: RadioModel, p: np.ndarray) -> np.ndarray:
    """Achievable per-user rates in bps/Hz: tau * log2(1 + SINR)."""
    return model.tau / LN2 * rates_nats(model, p)


def fronthaul_load(model: RadioModel, p: np.ndarray,
                   fh: FronthaulConstraint) -> np.ndarray | float:
    """Fronthaul data rates in bps/Hz: per-RRU vector or aggregate scalar."""
    rates = user_rates(model, p)
    if fh.kind == "sum":
        return float(rates.sum())
    loads = np.zeros(model.num_rrus)
    np.add.at(loads, model.association, rates)
    return loads


def fronthaul_slack_nats(model: RadioModel, p: np.ndarray,
                         fh: FronthaulConstraint) -> np.ndarray:
    """Per-constraint load minus capacity in nats; empty when unconstrained."""
    n = fh.num_constraints(model.num_rrus)
    if n == 0:
        return np.zeros(0)
    r = rates_nats(model, p)
    loads = np.zeros(n)
    np.add.at(loads, fh.constraint_of_user(model.association), r)
    return loads - fh.rhs_nats(model.eta_tilde, model.num_rrus)


def is_feasible(model: RadioModel, p: np.ndarray, fh: FronthaulConstraint,
                rtol: float = 1e-9) -> bool:
    """Power and fronthaul feasibility of p, with relative slack rtol."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        return False
    sums = np.zeros(model.num_rrus)
    np.add.at(sums, model.association, p)
    if np.any(sums > model.power_budget * (1.0 + rtol)):
        return False
    slack = fronthaul_slack_nats(model, p, fh)
    if slack.size:
        rhs = fh.rhs_nats(model.eta_tilde, model.num_rrus)
        return bool(np.all(slack <= rtol * np.maximum(1.0, rhs)))
    return True


def consumed_power(power_model: PowerModel, tau: float, p: np.ndarray) -> float:
    """Total consumed power: static part plus amplifier-scaled transmit sum."""
    return power_model.static_power + tau / power_model.omega_rru * float(np.sum(p))


def energy_efficiency(model: RadioModel, power_model: PowerModel,
                      p: np.ndarray) -> float:
    """Sum rate over consumed power, in bps/Hz per watt."""
    total_rate = float(user_rates(model, p).sum())
    return total_rate / consumed_power(power_model, model.tau, p)
