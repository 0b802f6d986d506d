"""Inner convex-subproblem machinery: Lagrangian minimizer and dual ascent.

The closed-form power update p_i = p_r[i] * A_i / (mu + q_shift + B_i) is the
stationary point of the surrogate Lagrangian; mu is found per RRU by
bisection on the power budget. ``inner_dual_solve_py`` runs the whole dual
subgradient loop in numpy and is the reference implementation the optional
compiled kernel must match.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bounds import BoundContext


class BisectionError(RuntimeError):
    """Power-budget bisection failed to converge (corrupted inputs)."""


def coefficients_A_B(ctx: BoundContext, weights: np.ndarray,
                     lam: np.ndarray | float) -> tuple[np.ndarray, np.ndarray]:
    """Numerator and denominator coefficients of the closed-form power update.

    ``lam`` is broadcast per user through its serving RRU for per-link
    constraints, or may be a scalar for the sum-capacity case.
    """
    weights = np.asarray(weights, dtype=float)
    if np.isscalar(lam) or np.ndim(lam) == 0:
        lam_user = np.full(ctx.num_users, float(lam))
    else:
        lam = np.asarray(lam, dtype=float)
        lam_user = lam[ctx.model.association] if len(lam) == ctx.model.num_rrus \
            else lam
    return _coefficients(ctx.m_full, ctx.m_int, weights, lam_user)


def _coefficients(m_full, m_int, weights, lam_user):
    a = m_full @ weights + m_int @ lam_user
    b = m_full @ lam_user + m_int @ weights
    return a, b


def lagrangian_power_update(ctx: BoundContext, a: np.ndarray, b: np.ndarray,
                            q_shift: float, power_budget: float,
                            p_min: float, bisection_tol: float = 0.0,
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form Lagrangian minimizer with per-RRU bisection on mu.

    Returns (p, mu). ``q_shift`` is zero for weighted sum rate and
    -q * tau / omega_rru for the fractional (energy) objective.
    """
    assoc = ctx.model.association
    groups = [np.flatnonzero(assoc == l) for l in range(ctx.model.num_rrus)]
    return _power_update(ctx.p_r, a, b, q_shift, groups, power_budget,
                         p_min, bisection_tol)


def _power_update(p_r, a, b, q_shift, groups, power_budget, p_min,
                  bisection_tol, max_halvings=200):
    base = p_r * a
    den0 = b + q_shift
    p = np.maximum(p_min, base / den0)
    mu = np.zeros(len(groups))
    tol = bisection_tol if bisection_tol > 0.0 else 1e-12 * power_budget
    for l, users in enumerate(groups):
        if len(users) == 0:
            continue
        if p[users].sum() <= power_budget:
            continue
        num_l, den_l = base[users], den0[users]

        def cell_sum(m):
            return np.maximum(p_min, num_l / (den_l + m)).sum()

        hi = 1.0
        for _ in range(max_halvings):
            if cell_sum(hi) < power_budget:
                break
            hi *= 2.0
        else:
            raise BisectionError("could not bracket the power multiplier")
        lo = 0.0
        for _ in range(max_halvings):
            mid = 0.5 * (lo + hi)
            s = cell_sum(mid)
            if abs(s - power_budget) <= tol:
                hi = mid
                break
            if s > power_budget:
                lo = mid
            else:
                hi = mid
        else:
            if abs(cell_sum(hi) - power_budget) > 1e3 * tol:
                raise BisectionError("power bisection did not converge")
        mu[l] = hi
        p[users] = np.maximum(p_min, num_l / (den_l + hi))
    return p, mu


def dual_subgradient_step(lam: np.ndarray, subgrad: np.ndarray, t: int,
                          step0: float, rule: str = "diminishing",
                          normalize: bool = True) -> np.ndarray:
    """Projected subgradient ascent step on the fronthaul multipliers."""
    step = step0 if rule == "constant" else step0 / np.sqrt(t)
    if normalize:
        step /= max(1e-12, float(np.linalg.norm(subgrad)))
    return np.maximum(0.0, lam + step * subgrad)


@dataclass
class InnerResult:
    p: np.ndarray           # best feasible primal iterate
    lam: np.ndarray         # multipliers at the final dual iterate
    mu: np.ndarray          # per-RRU power multipliers at the final iterate
    metric: float           # sum_k alpha_k G_k(p) - q_shift * sum(p)
    iterations: int
    dual_objective: float
    feasible: bool          # surrogate constraints met at the best iterate


def inner_dual_solve_py(m_full, m_int, p_r, rate_r, alpha, rru_of_user, n_rrus,
                        power_budget, con_of_user, rhs, lam0, q_shift, p_min,
                        step0, step_rule, normalize_step, eps, min_iters,
                        max_iters, feas_tol, bisection_tol, p_seed=None,
                        t_offset=0):
    """Dual subgradient loop for one convex subproblem (numpy backend).

    Tracks the best surrogate-feasible primal iterate; the expansion point
    p_r (and optionally ``p_seed``) seed the tracker so the caller's outer
    loop is monotone even when the dual loop exits early. ``t_offset``
    continues the diminishing step schedule across warm-started calls; the
    returned multipliers are those of the final dual iterate.
    """
    k_users = len(p_r)
    n_con = len(rhs)
    groups = [np.flatnonzero(rru_of_user == l) for l in range(n_rrus)]
    log_p_r = np.log(p_r)

    def surrogate_values(p):
        dp = p - p_r
        dlog = p_r * (np.log(p) - log_p_r)
        g = rate_r - m_int.T @ dp + m_full.T @ dlog
        h = rate_r + m_full.T @ dp - m_int.T @ dlog
        return g, h

    def constraint_slack(h):
        if n_con == 0:
            return np.zeros(0)
        sums = np.zeros(n_con)
        np.add.at(sums, con_of_user, h)
        return sums - rhs

    def metric_of(g, p):
        return float(alpha @ g) - q_shift * float(p.sum())

    feas_slack = feas_tol * np.maximum(1.0, rhs)

    best_p = p_r.copy()
    best_metric = metric_of(rate_r, p_r)
    seeds = [] if p_seed is None else [np.asarray(p_seed, dtype=float)]
    for seed in seeds:
        g, h = surrogate_values(seed)
        if np.all(constraint_slack(h) <= feas_slack):
            m = metric_of(g, seed)
            if m > best_metric:
                best_p, best_metric = seed.copy(), m

    lam = np.asarray(lam0, dtype=float).copy()
    mu = np.zeros(n_rrus)
    prev_gval = None
    gval = np.nan
    t = 0
    for t in range(1, max_iters + 1):
        lam_user = lam[con_of_user] if n_con else np.zeros(k_users)
        a, b = _coefficients(m_full, m_int, alpha, lam_user)
        p, mu = _power_update(p_r, a, b, q_shift, groups, power_budget,
                              p_min, bisection_tol)
        g, h = surrogate_values(p)
        slack = constraint_slack(h)
        metric = metric_of(g, p)
        gval = -float(alpha @ g) + q_shift * float(p.sum()) + float(lam @ slack)
        feasible = bool(np.all(slack <= feas_slack))
        if n_con == 0:
            best_p, best_metric = p, metric
            break
        if feasible and metric > best_metric:
            best_p, best_metric = p, metric
        if (feasible and t >= min_iters and prev_gval is not None
                and abs(gval - prev_gval) <= eps * max(1.0, abs(prev_gval))):
            break
        prev_gval = gval
        lam = dual_subgradient_step(lam, slack, t + t_offset, step0, step_rule,
                                    normalize_step)

    return InnerResult(p=best_p, lam=lam, mu=mu, metric=best_metric,
                       iterations=t, dual_objective=gval, feasible=True)
