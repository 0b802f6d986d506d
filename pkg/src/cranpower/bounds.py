"""Locally tight concave lower / convex upper surrogates of the user rates.

The log-difference terms carry a p_r[i] coefficient factor. It comes out of
the chain rule for the log-power substitution in the surrogate derivation and
is required for the gradients of both surrogates to match the true rate
gradient at the expansion point; the finite-difference tests pin this down.

All surrogate values are in nats.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .radio import LN2, PowerModel, RadioModel, consumed_power, sinr_denominators


@dataclass(frozen=True)
class BoundContext:
    """Quantities cached at an expansion point p_r.

    ``m_full[i, k]`` = coupling[i, k] / d_full[k] and
    ``m_int[i, k]`` = coupling_int[i, k] / d_int[k]; these are the only
    matrices the surrogates and the inner power updates need.
    """

    model: RadioModel
    p_r: np.ndarray
    log_p_r: np.ndarray
    d_full: np.ndarray
    d_int: np.ndarray
    rate_nats: np.ndarray
    m_full: np.ndarray
    m_int: np.ndarray

    def __post_init__(self):
        for name in ("p_r", "log_p_r", "d_full", "d_int", "rate_nats",
                     "m_full", "m_int"):
            getattr(self, name).setflags(write=False)

    @property
    def num_users(self) -> int:
        return len(self.p_r)


def make_context(model: RadioModel, p_r: np.ndarray) -> BoundContext:
    """Cache denominators and normalized coupling at p_r; requires p_r > 0."""
    p_r = np.ascontiguousarray(p_r, dtype=float)
    if np.any(p_r <= 0.0):
        raise ValueError("expansion point must be strictly positive "
                         "(power floor violated upstream)")
    d_full, d_int = sinr_denominators(model, p_r)
    gamma = model.v * p_r * model.theta_serving / d_int
    return BoundContext(
        model=model,
        p_r=p_r,
        log_p_r=np.log(p_r),
        d_full=d_full,
        d_int=d_int,
        rate_nats=np.log1p(gamma),
        m_full=model.coupling / d_full[None, :],
        m_int=model.coupling_int / d_int[None, :],
    )


def _deltas(ctx: BoundContext, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0.0):
        raise ValueError("surrogates are defined for strictly positive powers")
    return p - ctx.p_r, ctx.p_r * (np.log(p) - ctx.log_p_r)


def rate_lower_bound(ctx: BoundContext, p: np.ndarray) -> np.ndarray:
    """Concave lower bound on ln(1 + SINR_k), all users, at power vector p."""
    dp, dlog = _deltas(ctx, p)
    return ctx.rate_nats - ctx.m_int.T @ dp + ctx.m_full.T @ dlog


def rate_upper_bound(ctx: BoundContext, p: np.ndarray) -> np.ndarray:
    """Convex upper bound on ln(1 + SINR_k), all users, at power vector p."""
    dp, dlog = _deltas(ctx, p)
    return ctx.rate_nats + ctx.m_full.T @ dp - ctx.m_int.T @ dlog


def lower_bound_G(ctx: BoundContext, k: int, p: np.ndarray) -> float:
    """Scalar lower surrogate for user k (nats)."""
    return float(rate_lower_bound(ctx, p)[k])


def upper_bound_H(ctx: BoundContext, k: int, p: np.ndarray) -> float:
    """Scalar upper surrogate for user k (nats)."""
    return float(rate_upper_bound(ctx, p)[k])


def ee_lower_bound(ctx: BoundContext, power_model: PowerModel,
                   p: np.ndarray) -> float:
    """Energy-efficiency lower bound in bps/Hz per watt; equals EE at p = p_r."""
    tau = ctx.model.tau
    num = tau / LN2 * float(rate_lower_bound(ctx, p).sum())
    return num / consumed_power(power_model, tau, p)
