"""Outer optimization loops for weighted sum rate and energy efficiency.

Both solvers iterate: build surrogates at the current point, solve the
convex subproblem through its dual, and re-expand at the solution. The
energy-efficiency solver adds a fractional-programming loop (parameter q)
between the outer expansion and the dual solve.

Accepted iterates are always feasible for the ORIGINAL power and fronthaul
constraints (the upper surrogate dominates the true rate), and the objective
trace is non-decreasing by construction: a candidate is only accepted when
its surrogate value does not fall below the current objective.
"""
from __future__ import annotations

import csv
import json
import math
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backend import inner_dual_solve
from .bounds import BoundContext, make_context, rate_lower_bound
from .inner import BisectionError
from .radio import (LN2, FronthaulConstraint, PowerModel, RadioModel,
                    consumed_power, fronthaul_load, fronthaul_slack_nats,
                    rates_nats, sinr_denominators, user_rates)


class InfeasibleStartError(RuntimeError):
    """No positive power vector satisfies the fronthaul constraints."""


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 0.01                 # relative-change stop tolerance
    max_sca_iters: int = 200
    max_dual_iters: int = 2000
    min_dual_iters: int = 10
    max_db_iters: int = 50                # fractional-programming loop cap
    step0: float = 1.0
    step_rule: str = "diminishing"        # or "constant"
    normalize_step: bool = True
    bisection_tol: float = 0.0            # 0 -> 1e-12 * power budget
    power_floor_scale: float = 1e-10      # p_min = scale * power budget
    weights: np.ndarray | None = None
    dual_epsilon: float | None = None     # inner stop; defaults to epsilon
    feas_tol: float = 1e-9                # relative surrogate-constraint slack
    warm_start_duals: bool = True
    warm_start_q: bool = False            # carry q across outer iterations
    db_epsilon: float | None = None       # defaults to epsilon
    kkt_tol: float | None = None          # extra stop requirement if set
    record_iterates: bool = False         # keep every accepted power vector

    def __post_init__(self):
        if self.epsilon <= 0.0 or self.step0 <= 0.0:
            raise ValueError("epsilon and step0 must be positive")
        if self.step_rule not in ("diminishing", "constant"):
            raise ValueError(f"unknown step rule: {self.step_rule}")
        if self.weights is not None and not np.any(np.asarray(self.weights) > 0):
            raise ValueError("at least one weight must be positive")


@dataclass
class SolveReport:
    objective: str                        # "wsr" | "ee"
    p_star: np.ndarray
    objective_trace: list[float]          # bps/Hz (wsr) or bps/Hz/W (ee)
    dual_trace: list[float]               # inner dual objective per outer iter
    rates: np.ndarray                     # bps/Hz per user
    fronthaul_loads: np.ndarray | float | None
    lam: np.ndarray                       # fronthaul multipliers (nats domain)
    mu: np.ndarray                        # per-RRU power multipliers
    kkt_residuals: dict[str, float]
    sca_iters: int
    dual_iters: int
    db_iters: int
    db_trace: list[list[float]]           # q values per outer iteration (ee)
    status: str                           # "converged" | "iteration_limit"
    wall_time: float
    iterates: list[np.ndarray] | None = None   # accepted power vectors

    def to_json(self, path: str | Path | None = None) -> str:
        doc = {
            "objective": self.objective,
            "p_star": self.p_star.tolist(),
            "objective_trace": self.objective_trace,
            "dual_trace": self.dual_trace,
            "rates": self.rates.tolist(),
            "fronthaul_loads": (self.fronthaul_loads.tolist()
                                if isinstance(self.fronthaul_loads, np.ndarray)
                                else self.fronthaul_loads),
            "lam": self.lam.tolist(),
            "mu": self.mu.tolist(),
            "kkt_residuals": self.kkt_residuals,
            "sca_iters": self.sca_iters,
            "dual_iters": self.dual_iters,
            "db_iters": self.db_iters,
            "db_trace": self.db_trace,
            "status": self.status,
            "wall_time": self.wall_time,
        }
        text = json.dumps(doc, indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    def trace_to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "objective", "dual_objective"])
            for i, obj in enumerate(self.objective_trace):
                dual = self.dual_trace[i] if i < len(self.dual_trace) else ""
                writer.writerow([i, obj, dual])


def feasible_initial_point(model: RadioModel, fh: FronthaulConstraint,
                           p_min: float, max_halvings: int = 200) -> np.ndarray:
    """Equal power per cell, halved until the fronthaul constraints hold."""
    rhs = fh.rhs_nats(model.eta_tilde, model.num_rrus)
    if rhs.size and np.any(rhs <= 0):
        raise InfeasibleStartError("fronthaul capacity is not positive")
    counts = np.bincount(model.association, minlength=model.num_rrus)
    p = model.power_budget / np.maximum(1, counts)[model.association]
    p = p.astype(float)
    for _ in range(max_halvings):
        if not rhs.size or np.all(
                fronthaul_slack_nats(model, p, fh) <= 0.0):
            return np.maximum(p, p_min)
        p *= 0.5
    raise InfeasibleStartError("could not find a feasible starting point")


def _weighted_rate_nats(model: RadioModel, p: np.ndarray,
                        weights: np.ndarray) -> float:
    return float(weights @ rates_nats(model, p))


def stationarity_residual(model: RadioModel, p: np.ndarray, lam: np.ndarray,
                          mu: np.ndarray, weights: np.ndarray,
                          fh: FronthaulConstraint, p_min: float,
                          ee_power: PowerModel | None = None) -> float:
    """Normalized projected-gradient norm of the original Lagrangian.

    Passing ``ee_power`` switches the objective gradient from weighted sum
    rate to energy efficiency (nats per watt); the multipliers are then
    expected in the matching 1/consumed-power scaling.
    """
    g, scale = _lagrangian_gradient(model, p, lam, mu, weights, fh, ee_power)
    active = p > p_min * (1.0 + 1e-6)
    if not np.any(active):
        return 0.0
    return float(np.abs(g[active]).max()) / scale


def _lagrangian_gradient(model, p, lam, mu, weights, fh, ee_power):
    """Gradient of the original Lagrangian and the objective-gradient scale."""
    d_full, d_int = sinr_denominators(model, p)
    grad_rate = model.coupling / d_full[None, :] - model.coupling_int / d_int[None, :]
    if ee_power is None:
        obj_grad = grad_rate @ weights
    else:
        pc = consumed_power(ee_power, model.tau, p)
        ee_val = float(rates_nats(model, p).sum()) / pc
        per_watt = model.tau / ee_power.omega_rru
        obj_grad = (grad_rate.sum(axis=1) - ee_val * per_watt) / pc
    lam_user = lam[fh.constraint_of_user(model.association)] if lam.size \
        else np.zeros(model.num_users)
    g = -obj_grad + grad_rate @ lam_user + mu[model.association]
    return g, max(1e-12, float(np.abs(obj_grad).max()))


def _solve_inner(ctx: BoundContext, model: RadioModel, fh: FronthaulConstraint,
                 cfg: SolverConfig, weights: np.ndarray, lam0: np.ndarray,
                 q_shift: float, p_min: float, p_seed: np.ndarray | None,
                 t_offset: int = 0):
    rhs = fh.rhs_nats(model.eta_tilde, model.num_rrus)
    return inner_dual_solve(
        ctx.m_full, ctx.m_int, ctx.p_r, ctx.rate_nats, weights,
        model.association, model.num_rrus, model.power_budget,
        fh.constraint_of_user(model.association), rhs, lam0, q_shift, p_min,
        cfg.step0, cfg.step_rule, cfg.normalize_step,
        cfg.dual_epsilon if cfg.dual_epsilon is not None else cfg.epsilon,
        cfg.min_dual_iters, cfg.max_dual_iters, cfg.feas_tol,
        cfg.bisection_tol, p_seed, t_offset)


def _solve_inner_exact(ctx: BoundContext, model: RadioModel,
                       fh: FronthaulConstraint, cfg: SolverConfig,
                       weights: np.ndarray, lam0: np.ndarray, q_shift: float,
                       p_min: float, off_mask: np.ndarray | None = None):
    """High-accuracy subproblem solve: quasi-Newton on the smooth dual.

    The dual has at most one multiplier per RRU and an analytic gradient
    (the constraint slack at the closed-form primal minimizer), so a few
    L-BFGS-B steps pin the multipliers far tighter than subgradient ascent.
    Used to polish multipliers once the outer loop has nearly converged.
    ``off_mask`` fixes the marked coordinates at the power floor, i.e.
    solves the subproblem restricted to the remaining users.
    """
    from scipy.optimize import minimize

    from .bounds import rate_lower_bound as lower, rate_upper_bound as upper
    from .inner import _coefficients, _power_update

    rhs = fh.rhs_nats(model.eta_tilde, model.num_rrus)
    con = fh.constraint_of_user(model.association)
    n_con = len(rhs)
    groups = [np.flatnonzero(model.association == l)
              for l in range(model.num_rrus)]
    clamp = off_mask is not None and bool(np.any(off_mask))

    def solve_at(lam):
        lam_user = lam[con] if n_con else np.zeros(model.num_users)
        a, b = _coefficients(ctx.m_full, ctx.m_int, weights, lam_user)
        if clamp:
            # zero numerator pins the coordinate at the floor through the
            # budget bisection, which is the restricted problem exactly
            a[off_mask] = 0.0
        return _power_update(ctx.p_r, a, b, q_shift, groups,
                             model.power_budget, p_min, cfg.bisection_tol)

    if n_con == 0:
        p, mu = solve_at(np.zeros(0))
        metric = float(weights @ lower(ctx, p)) - q_shift * float(p.sum())
        return p, np.zeros(0), mu, metric, True

    def neg_dual(lam):
        p, _ = solve_at(lam)
        g = lower(ctx, p)
        h = upper(ctx, p)
        sums = np.zeros(n_con)
        np.add.at(sums, con, h)
        slack = sums - rhs
        gval = -float(weights @ g) + q_shift * float(p.sum()) \
            + float(lam @ slack)
        return -gval, -slack

    res = minimize(neg_dual, np.asarray(lam0, dtype=float), jac=True,
                   method="L-BFGS-B", bounds=[(0.0, None)] * n_con,
                   options={"maxiter": 500, "ftol": 1e-16, "gtol": 1e-12})
    lam = np.maximum(0.0, res.x)
    p, mu = solve_at(lam)
    sums = np.zeros(n_con)
    np.add.at(sums, con, upper(ctx, p))
    # a diverged dual (multipliers exploding, surrogate constraints still
    # violated) means the surrogate constraint set at this expansion point
    # is numerically empty; the primal is still a usable heavily penalized
    # point, but the multipliers are meaningless
    ok = bool(np.all(np.isfinite(lam)) and (not lam.size or lam.max() < 1e12)
              and np.all(sums - rhs <= 1e-3 * np.maximum(1.0, rhs)))
    metric = float(weights @ lower(ctx, p)) - q_shift * float(p.sum())
    return p, lam, mu, metric, ok


def fit_kkt_multipliers(model: RadioModel, p: np.ndarray,
                        fh: FronthaulConstraint, weights: np.ndarray,
                        power_model: PowerModel | None,
                        p_min: float) -> tuple[np.ndarray, np.ndarray]:
    """Best nonnegative multipliers for the stationarity system at ``p``.

    Only constraints that are (numerically) active get a free multiplier,
    so complementary slackness holds by construction; the fit is a small
    nonnegative least-squares problem over the coordinates away from the
    power floor. A poor fit simply reports a large residual, it cannot
    mask a non-stationary point.
    """
    from scipy.optimize import nnls

    rhs = fh.rhs_nats(model.eta_tilde, model.num_rrus)
    con = fh.constraint_of_user(model.association)
    n_con = len(rhs)
    grad, _ = _lagrangian_gradient(model, p, np.zeros(n_con),
                                   np.zeros(model.num_rrus), weights, fh,
                                   power_model)
    obj_grad = -grad      # gradient with zero multipliers is -obj_grad
    active = p > p_min * (1.0 + 1e-6)
    lam = np.zeros(n_con)
    mu = np.zeros(model.num_rrus)
    if not np.any(active):
        return lam, mu
    d_full, d_int = sinr_denominators(model, p)
    grad_rate = model.coupling / d_full[None, :] \
        - model.coupling_int / d_int[None, :]
    cols = []
    idx = []
    slack = fronthaul_slack_nats(model, p, fh)
    for c in range(n_con):
        if slack[c] >= -1e-4 * max(1.0, rhs[c]):
            cols.append(grad_rate[:, con == c].sum(axis=1)[active])
            idx.append(("lam", c))
    sums = np.zeros(model.num_rrus)
    np.add.at(sums, model.association, p)
    for l in range(model.num_rrus):
        if sums[l] >= model.power_budget * (1.0 - 1e-6):
            cols.append((model.association == l).astype(float)[active])
            idx.append(("mu", l))
    if not cols:
        return lam, mu
    a_mat = np.column_stack(cols)
    coef, _ = nnls(a_mat, obj_grad[active])
    for (kind, j), v in zip(idx, coef):
        if kind == "lam":
            lam[j] = v
        else:
            mu[j] = v
    return lam, mu


def _nlp_polish(model: RadioModel, fh: FronthaulConstraint,
                weights: np.ndarray, power_model: PowerModel | None,
                p0: np.ndarray, p_min: float) -> np.ndarray | None:
    """Local smooth solve of the original problem from a near-optimal point.

    Works in log-power coordinates so the power floor is a plain bound and
    shut-off users can reach it in a single solve instead of a geometric
    crawl. The result is only a candidate: the caller still checks original
    feasibility and objective monotonicity before adopting it.
    """
    from scipy.optimize import minimize

    is_ee = power_model is not None
    per_watt = model.tau / power_model.omega_rru if is_ee else 0.0
    rhs = fh.rhs_nats(model.eta_tilde, model.num_rrus)
    con = fh.constraint_of_user(model.association)
    n_con = len(rhs)
    assoc = model.association
    k = model.num_users
    budget = model.power_budget

    def grad_rate_at(p):
        d_full, d_int = sinr_denominators(model, p)
        return model.coupling / d_full[None, :] \
            - model.coupling_int / d_int[None, :]

    # rescaling keeps the objective-change and gradient magnitudes in the
    # range the SQP stopping rules are tuned for
    scale = 1e3 if is_ee else 1.0

    def fobj(x):
        p = np.exp(x)
        gr = grad_rate_at(p)
        r = rates_nats(model, p)
        if is_ee:
            pc = consumed_power(power_model, model.tau, p)
            val = float(weights @ r) / pc
            gp = (gr @ weights - val * per_watt) / pc
        else:
            val = float(weights @ r)
            gp = gr @ weights
        return -scale * val, -scale * gp * p

    def pow_fun(x):
        sums = np.zeros(model.num_rrus)
        np.add.at(sums, assoc, np.exp(x))
        return budget - sums

    def pow_jac(x):
        jac = np.zeros((model.num_rrus, k))
        jac[assoc, np.arange(k)] = -np.exp(x)
        return jac

    constraints = [{"type": "ineq", "fun": pow_fun, "jac": pow_jac}]
    if n_con:
        def fh_fun(x):
            sums = np.zeros(n_con)
            np.add.at(sums, con, rates_nats(model, np.exp(x)))
            return rhs - sums

        def fh_jac(x):
            p = np.exp(x)
            gr = grad_rate_at(p)
            jac = np.zeros((n_con, k))
            for c in range(n_con):
                jac[c] = -(gr[:, con == c].sum(axis=1) * p)
            return jac

        constraints.append({"type": "ineq", "fun": fh_fun, "jac": fh_jac})

    x0 = np.log(np.clip(p0, p_min, budget))
    bounds = [(math.log(p_min), math.log(budget))] * k
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(fobj, x0, jac=True, method="SLSQP", bounds=bounds,
                           constraints=constraints,
                           options={"maxiter": 300, "ftol": 1e-14 * scale})
    except Exception:
        return None
    if not np.all(np.isfinite(res.x)):
        return None
    x = res.x
    # away from every constraint the problem is a smooth bound-constrained
    # maximization; a quasi-Newton pass drives the interior gradient far
    # below what the SQP stop rule leaves behind
    inactive = np.all(pow_fun(x) > 1e-6 * budget) and \
        (n_con == 0 or np.all(fh_fun(x) > 1e-6 * np.maximum(1.0, rhs)))
    if inactive:
        try:
            ref = minimize(fobj, x, jac=True, method="L-BFGS-B",
                           bounds=bounds,
                           options={"maxiter": 2000, "ftol": 1e-18,
                                    "gtol": 1e-14})
            xr = ref.x
            if (np.all(np.isfinite(xr)) and np.all(pow_fun(xr) >= 0.0)
                    and (n_con == 0 or np.all(fh_fun(xr) >= 0.0))):
                x = xr
        except Exception:
            pass
    p = np.clip(np.exp(x), p_min, budget)
    if n_con:
        # the SQP stop rule can leave a tiny fronthaul violation; uniform
        # down-scaling strictly lowers every SINR (interference scales with
        # the powers, noise does not), so a scalar bisection projects the
        # point back inside the constraint set at negligible objective cost
        def max_viol(pv):
            sums = np.zeros(n_con)
            np.add.at(sums, con, rates_nats(model, pv))
            return float(np.max(sums - rhs))

        if max_viol(p) > 0.0:
            lo, hi = 0.5, 1.0
            if max_viol(lo * p) > 0.0:
                return None
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if max_viol(mid * p) > 0.0:
                    hi = mid
                else:
                    lo = mid
            p = np.clip(lo * p, p_min, budget)
    return p


def _complementary_slackness(model: RadioModel, p: np.ndarray, lam: np.ndarray,
                             mu: np.ndarray, fh: FronthaulConstraint,
                             obj_scale: float) -> tuple[float, float]:
    slack = fronthaul_slack_nats(model, p, fh)
    cs_fh = float(np.abs(lam * slack).max()) / obj_scale if slack.size else 0.0
    sums = np.zeros(model.num_rrus)
    np.add.at(sums, model.association, p)
    cs_pow = float(np.abs(mu * (sums - model.power_budget)).max()) / obj_scale
    return cs_fh, cs_pow


def _feasibility_residuals(model: RadioModel, p: np.ndarray,
                           fh: FronthaulConstraint) -> tuple[float, float]:
    slack = fronthaul_slack_nats(model, p, fh)
    rhs = fh.rhs_nats(model.eta_tilde, model.num_rrus)
    feas_fh = float(np.max(np.maximum(0.0, slack) / np.maximum(1.0, rhs))) \
        if slack.size else 0.0
    sums = np.zeros(model.num_rrus)
    np.add.at(sums, model.association, p)
    feas_pow = float(np.max(np.maximum(0.0, sums - model.power_budget))
                     / model.power_budget)
    return feas_fh, feas_pow


def solve_wsr(model: RadioModel, fh: FronthaulConstraint,
              cfg: SolverConfig | None = None) -> SolveReport:
    """Weighted sum rate maximization under power and fronthaul constraints."""
    cfg = cfg or SolverConfig()
    weights = np.ones(model.num_users) if cfg.weights is None else \
        np.asarray(cfg.weights, dtype=float)
    return _solve_sca(model, fh, cfg, weights, None)


def dinkelbach_update(ctx: BoundContext, power_model: PowerModel,
                      p_solution: np.ndarray) -> float:
    """Fractional-programming parameter: negated surrogate rate per watt (nats)."""
    num = float(rate_lower_bound(ctx, p_solution).sum())
    den = consumed_power(power_model, ctx.model.tau, p_solution)
    return -num / den


def ee_power_update(ctx: BoundContext, a: np.ndarray, b: np.ndarray, q: float,
                    power_model: PowerModel, power_budget: float,
                    p_min: float, bisection_tol: float = 0.0):
    """Closed-form power update of the fractional objective: the weighted
    sum-rate update with the denominator shifted by -q * tau / omega_rru."""
    from .inner import lagrangian_power_update
    q_shift = -q * ctx.model.tau / power_model.omega_rru
    return lagrangian_power_update(ctx, a, b, q_shift, power_budget, p_min,
                                   bisection_tol)


def solve_ee(model: RadioModel, power_model: PowerModel,
             fh: FronthaulConstraint,
             cfg: SolverConfig | None = None) -> SolveReport:
    """Energy-efficiency maximization via the fractional-programming loop."""
    cfg = cfg or SolverConfig()
    return _solve_sca(model, fh, cfg, np.ones(model.num_users), power_model)


def _solve_sca(model: RadioModel, fh: FronthaulConstraint, cfg: SolverConfig,
               weights: np.ndarray,
               power_model: PowerModel | None) -> SolveReport:
    """Shared successive-approximation outer loop.

    With ``power_model`` set the objective is energy efficiency and a
    fractional-programming loop (parameter q) runs between the outer
    expansion and the dual solve; without it the objective is weighted sum
    rate, q stays zero and that loop degenerates to a single solve.
    """
    t0 = time.perf_counter()
    is_ee = power_model is not None
    k = model.num_users
    p_min = cfg.power_floor_scale * model.power_budget
    p = feasible_initial_point(model, fh, p_min)
    n_con = fh.num_constraints(model.num_rrus)
    lam = np.zeros(n_con)
    mu = np.zeros(model.num_rrus)
    per_watt = model.tau / power_model.omega_rru if is_ee else 0.0
    db_eps = cfg.db_epsilon if cfg.db_epsilon is not None else cfg.epsilon

    def pc_of(pv):
        return consumed_power(power_model, model.tau, pv) if is_ee else 1.0

    def obj_fn(pv):
        return float(weights @ rates_nats(model, pv)) / pc_of(pv)

    trace: list[float] = []
    dual_trace: list[float] = []
    db_trace: list[list[float]] = []
    to_bps = model.tau / LN2
    obj = obj_fn(p)
    trace.append(to_bps * obj)
    iterates = [p.copy()] if cfg.record_iterates else None
    status = "iteration_limit"
    total_dual = 0
    total_db = 0
    q_carry = 0.0
    polish = False
    r = 0

    def freeze_candidates(pv, lam_v, mu_v):
        """Coordinates the objective wants switched off.

        Users headed for shut-off shrink only by a constant log factor per
        re-expansion, which makes plain re-expansion crawl for thousands of
        iterations. Coordinates with a clearly positive Lagrangian gradient
        and negligible power are pinned to the floor in later restricted
        subproblems; acceptance still goes through the usual no-decrease
        test, and a rejection unpins the latest batch.
        """
        pc = pc_of(pv)
        g, scale = _lagrangian_gradient(model, pv, lam_v / pc, mu_v / pc,
                                        weights, fh, power_model)
        tiny = 1e-2 * model.power_budget / model.num_users
        tol = cfg.kkt_tol if cfg.kkt_tol is not None else 1e-4
        return (g > 0.3 * tol * scale) & (pv < tiny)

    def _recover_multipliers(lam_v, mu_v):
        """Fresh subproblem multipliers at the incumbent.

        Loop multipliers can come from an extrapolated expansion point;
        for reporting, resolve the subproblem expanded at the incumbent
        itself, where the fractional parameter is exactly the negated
        objective value.
        """
        if n_con == 0:
            return lam_v, mu_v
        try:
            ctx_p = make_context(model, p)
            _, lam_r, mu_r, _, ok = _solve_inner_exact(
                ctx_p, model, fh, cfg, weights, np.zeros(n_con),
                obj_fn(p) * per_watt, p_min, off_inc)
        except BisectionError:
            return lam_v, mu_v
        if not ok or not np.all(np.isfinite(mu_r)):
            return lam_v, mu_v
        return lam_r, mu_r

    def best_kkt(lam_v, mu_v):
        """Multipliers (surrogate scale) and stationarity at the incumbent.

        Tries the subproblem-dual recovery and a direct nonnegative
        least-squares fit of the stationarity system, keeping whichever
        certifies the smaller residual.
        """
        lam_r, mu_r = _recover_multipliers(lam_v, mu_v)
        pc = pc_of(p)
        st = stationarity_residual(model, p, lam_r / pc, mu_r / pc, weights,
                                   fh, p_min, ee_power=power_model)
        lam_f, mu_f = fit_kkt_multipliers(model, p, fh, weights, power_model,
                                          p_min)
        st_f = stationarity_residual(model, p, lam_f, mu_f, weights, fh,
                                     p_min, ee_power=power_model)
        if st_f < st:
            return lam_f * pc, mu_f * pc, st_f
        return lam_r, mu_r, st

    p_expand = p
    p_prev = p
    kappa = 2.0
    off = np.zeros(k, dtype=bool)
    off_inc = np.zeros(k, dtype=bool)
    last_add = np.zeros(k, dtype=bool)
    chain_fails = np.zeros(k, dtype=int)
    chain_left = 0
    feas_acc = max(cfg.feas_tol, 1e-7)
    nlp_stall = 0
    nlp_budget = 6
    for r in range(1, cfg.max_sca_iters + 1):
        if r % 30 == 0:
            nlp_stall = 0   # allow a fresh direct solve now and then
        if polish and nlp_stall < 2 and nlp_budget > 0:
            # direct local solve of the original problem from the incumbent,
            # mainly to jump past the slow shut-off tail and identify the
            # floor set in one step; adopted only when original-feasible and
            # non-decreasing, so the approximation loop below stays the
            # fallback and finishes the multiplier polish
            nlp_budget -= 1
            cand = _nlp_polish(model, fh, weights, power_model, p, p_min)
            if cand is not None:
                ok_fh = (n_con == 0 or bool(np.all(
                    fronthaul_slack_nats(model, cand, fh)
                    <= feas_acc * np.maximum(1.0, fh.rhs_nats(
                        model.eta_tilde, model.num_rrus)))))
                sums = np.zeros(model.num_rrus)
                np.add.at(sums, model.association, cand)
                ok_pow = bool(np.all(
                    sums <= model.power_budget * (1.0 + 1e-9)))
                if ok_fh and ok_pow and obj_fn(cand) >= obj:
                    p = cand
                    if iterates is not None:
                        iterates.append(p.copy())
                    off = p <= p_min * (1.0 + 1e-6)
                    off_inc = off.copy()
                    last_add = np.zeros(k, dtype=bool)
                    chain_left = 0
                    p_expand = np.where(off, p_min, p)
                    p_prev = p_expand
                    dual_trace.append(np.nan)
                    db_trace.append([])
                    new_obj = obj_fn(p)
                    trace.append(to_bps * new_obj)
                    converged = abs(new_obj - obj) <= \
                        cfg.epsilon * max(1e-12, abs(obj))
                    if new_obj - obj <= 1e-6 * max(1e-12, abs(obj)):
                        nlp_stall += 1   # repeat solves are going nowhere
                    else:
                        nlp_stall = 0
                    obj = new_obj
                    if converged and cfg.kkt_tol is not None:
                        lam, mu, resid = best_kkt(lam, mu)
                        converged = resid <= cfg.kkt_tol
                    if converged:
                        status = "converged"
                        break
                    continue
        for attempt in range(6):
            ctx = make_context(model, p_expand)
            q = q_carry if cfg.warm_start_q else 0.0
            p_db = p_expand
            q_hist: list[float] = []
            warm = cfg.warm_start_duals and r > 1
            lam_db = lam if warm else np.zeros(n_con)
            mu_db = mu
            dual_obj = np.nan
            dual_failed = False
            for m in range(1, cfg.max_db_iters + 1):
                total_db += 1
                if polish:
                    try:
                        p_db, lam_db, mu_db, metric, ok = _solve_inner_exact(
                            ctx, model, fh, cfg, weights, lam_db,
                            -q * per_watt, p_min, off)
                    except BisectionError:
                        dual_failed = True
                        p_db, lam_db, mu_db = p, np.zeros(n_con), mu
                        break
                    if not ok:
                        # empty surrogate set at this expansion; keep the
                        # penalized primal as a candidate for the chain but
                        # never adopt or warm-start the diverged multipliers
                        dual_failed = True
                        lam_db = np.zeros(n_con)
                        break
                    dual_obj = -metric
                else:
                    res = _solve_inner(ctx, model, fh, cfg, weights, lam_db,
                                       -q * per_watt, p_min, p_db,
                                       total_dual if warm or m > 1 else 0)
                    total_dual += res.iterations
                    p_db, lam_db, mu_db = res.p, res.lam, res.mu
                    dual_obj = res.dual_objective
                if not is_ee:
                    break
                q_new = min(0.0, dinkelbach_update(ctx, power_model, p_db))
                q_hist.append(q_new)
                eff_eps = 1e-12 if polish else db_eps
                done = abs(q_new - q) <= eff_eps * max(1e-12, abs(q))
                q = q_new
                if done:
                    break

            # accept when no decrease is certified, by the surrogate ratio
            # or by direct evaluation; a badly overshot expansion can make
            # the surrogate constraint set empty, so feasibility is
            # re-checked on the original constraints rather than assumed
            cand_bound = float(weights @ rate_lower_bound(ctx, p_db)) / \
                pc_of(p_db)
            if n_con:
                slack_db = fronthaul_slack_nats(model, p_db, fh)
                rhs_nats = fh.rhs_nats(model.eta_tilde, model.num_rrus)
                cand_feasible = bool(np.all(
                    slack_db <= feas_acc * np.maximum(1.0, rhs_nats)))
            else:
                cand_feasible = True
            accepted = (not dual_failed and cand_feasible
                        and (cand_bound >= obj or obj_fn(p_db) >= obj))
            if accepted or not polish:
                break
            # rejected in polish mode: a recent freeze batch is handled by
            # the exploration chain below; otherwise blame extrapolation
            # overshoot and retry plainly within the same outer iteration
            if np.any(last_add):
                break
            if kappa > 0.0:
                kappa = 0.0    # extrapolation overshot
            else:
                break          # genuine stall; let the outer logic reset
            p_expand = np.where(off, p_min, p) if np.any(off) else p
        db_trace.append(q_hist)
        dual_trace.append(dual_obj)
        q_carry = q

        exploring = (polish and not accepted and bool(np.any(last_add)))
        if exploring:
            if chain_left == 0:
                chain_left = 8      # new freeze batch: give it a short chain
            else:
                chain_left -= 1
            if chain_left == 0:
                # chain spent without catching up: unpin the batch; a coord
                # whose chains keep failing is excluded from future batches
                chain_fails[last_add] += 1
                off &= ~last_add
                last_add = np.zeros(k, dtype=bool)
                exploring = False
        else:
            chain_left = 0
        if accepted or not polish or exploring:
            # multipliers from an overshot expansion would poison warm starts
            lam, mu = lam_db, mu_db
        if accepted:
            p = p_db
            if iterates is not None:
                iterates.append(p.copy())
        crawl = accepted and abs(obj_fn(p_db) - obj) <= \
            0.1 * cfg.epsilon * max(1e-12, abs(obj))
        if polish and accepted and crawl:
            # pin newly identified shut-off coordinates for the restricted
            # subproblems of later iterations; a later rejection unpins the
            # most recent batch, so a wrong freeze cannot stick; engaged
            # only in the slow-progress regime so the bulk allocation is
            # not locked in prematurely
            off_inc = off.copy()
            mask = freeze_candidates(p_db, lam_db, mu_db) & (chain_fails < 2)
            last_add = mask & ~off
            off |= mask
            # geometric extrapolation of the expansion point: coordinates
            # that shrink by a near-constant factor per re-expansion are
            # pushed several factors ahead (log-space overshoot); the
            # acceptance test above keeps the incumbent sequence monotone,
            # and the overshoot adapts to the rejection history
            kappa = min(8.0, max(kappa, 1.0) * 1.5)
            ratio = np.clip(p_db / np.maximum(p_prev, p_min), 1e-8, 1e8)
            p_expand = np.clip(p_db * ratio ** kappa, p_min,
                               model.power_budget)
            p_prev = p_db
        elif polish and accepted:
            off_inc = off.copy()
            p_expand = p_db
            p_prev = p_db
        elif polish and exploring:
            # rejected candidate from a fresh freeze batch: keep iterating
            # the chain, it usually overtakes the incumbent within a few
            # re-expansions (the incumbent is untouched meanwhile)
            p_expand = p_db
            p_prev = p_db
        else:
            # an unproductive or overshot expansion restarts from the incumbent
            if polish:
                off &= ~last_add
                last_add = np.zeros(k, dtype=bool)
            kappa = max(0.0, 0.5 * kappa)
            p_expand = p
            p_prev = p
        if polish and np.any(off):
            # pinned coordinates expand from the floor itself, so their
            # log-difference terms vanish from the restricted surrogate
            p_expand = np.where(off, p_min, p_expand)
        new_obj = obj_fn(p)
        trace.append(to_bps * new_obj)
        converged = abs(new_obj - obj) <= cfg.epsilon * max(1e-12, abs(obj))
        obj = new_obj
        if converged and cfg.kkt_tol is not None:
            lam, mu, resid = best_kkt(lam, mu)
            if resid > cfg.kkt_tol:
                converged = False
                polish = True   # multiplier accuracy is the blocker now
        if converged:
            status = "converged"
            break

    lam, mu, stat = best_kkt(lam, mu)
    pc = pc_of(p)
    lam_kkt, mu_kkt = lam / pc, mu / pc
    obj_scale = max(1.0, abs(obj))
    cs_fh, cs_pow = _complementary_slackness(model, p, lam_kkt, mu_kkt, fh,
                                             obj_scale)
    feas_fh, feas_pow = _feasibility_residuals(model, p, fh)
    return SolveReport(
        objective="ee" if is_ee else "wsr", p_star=p, objective_trace=trace,
        dual_trace=dual_trace, rates=user_rates(model, p),
        fronthaul_loads=(fronthaul_load(model, p, fh)
                         if fh.kind != "none" else None),
        lam=lam_kkt, mu=mu_kkt,
        kkt_residuals={"stationarity": stat, "comp_slack_fronthaul": cs_fh,
                       "comp_slack_power": cs_pow,
                       "feasibility_fronthaul": feas_fh,
                       "feasibility_power": feas_pow},
        sca_iters=r, dual_iters=total_dual,
        db_iters=total_db if is_ee else 0,
        db_trace=db_trace if is_ee else [], status=status,
        wall_time=time.perf_counter() - t0, iterates=iterates)
