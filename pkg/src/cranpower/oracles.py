"""Independent adjudication oracles.

Everything in this module recomputes rates, surrogates, and gradients from
the model constants with its own explicit formulas instead of calling the
production code paths it checks. The duplication is deliberate: a bug must
break the two routes differently to go unnoticed.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .radio import FronthaulConstraint, PowerModel, RadioModel

LN2 = math.log(2.0)

# Central tolerance table; the acceptance suite asserts against these values.
ORACLE_TOLERANCES = {
    "sandwich_slack": 1e-12,           # absolute, nats
    "touching_slack": 1e-12,           # absolute, nats
    "gradient_rel": 1e-6,              # relative, finite differences
    "grid_match_rel": 1e-3,            # SCA vs grid incumbent, relative
    "pgd_match_rel": 1e-5,             # closed form vs projected gradient
    "kkt_residual": 1e-4,              # normalized
    "comp_slack": 1e-4,                # normalized
    "feasibility_rel": 1e-6,           # relative
}


@dataclass
class OracleReport:
    name: str
    max_abs_error: float
    max_rel_error: float
    argmax: int | tuple
    tolerance: float
    passed: bool

    def row(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag}  {self.name:<38} max_abs={self.max_abs_error:.3e}  "
                f"max_rel={self.max_rel_error:.3e}  tol={self.tolerance:.1e}")


def finite_diff_gradient(f, p: np.ndarray, h_rel: float = 1e-6) -> np.ndarray:
    """Central finite differences with per-coordinate step h_rel * p_i."""
    p = np.asarray(p, dtype=float)
    grad = np.empty_like(p)
    for i in range(len(p)):
        h = h_rel * p[i]
        hi = p.copy()
        lo = p.copy()
        hi[i] += h
        lo[i] -= h
        grad[i] = (f(hi) - f(lo)) / (2.0 * h)
    return grad


def _coupling_slow(model: RadioModel) -> tuple[np.ndarray, np.ndarray]:
    """Cross-power coefficients rebuilt user by user from theta, w, pilots."""
    scen = model.scenario
    k_users = scen.num_users
    share = scen.pilot_share
    full = np.zeros((k_users, k_users))
    inter = np.zeros((k_users, k_users))
    for i in range(k_users):
        ji = scen.association[i]
        for k in range(k_users):
            full[i, k] = model.w[ji, k] + model.v * model.theta[ji, k] * share[i, k]
            inter[i, k] = model.w[ji, k]
            if i != k:
                inter[i, k] += model.v * model.theta[ji, k] * share[i, k]
    return full, inter


def _rates_nats_rows(model: RadioModel, powers: np.ndarray,
                     full: np.ndarray) -> np.ndarray:
    """ln(1+SINR) for a batch of power vectors, own formula route."""
    scen = model.scenario
    own = model.v * model.theta[scen.association, np.arange(scen.num_users)]
    signal = powers * own[None, :]
    d_full = powers @ full + scen.config.noise_power
    return np.log1p(signal / (d_full - signal))


def grid_search_solver(model: RadioModel, fh: FronthaulConstraint,
                       objective: str = "wsr",
                       power_model: PowerModel | None = None,
                       weights: np.ndarray | None = None,
                       grid_points: int = 30, refine_passes: int = 3,
                       p_min: float | None = None):
    """Exhaustive log-grid scan over the feasible power box (K <= 4 only).

    Returns (best power vector, best objective value). Objective values are
    bps/Hz for "wsr" and bps/Hz per watt for "ee".
    """
    scen = model.scenario
    k_users = scen.num_users
    if k_users > 4:
        raise ValueError("grid search oracle is limited to K <= 4")
    if objective not in ("wsr", "ee"):
        raise ValueError(f"unknown objective: {objective}")
    if objective == "ee" and power_model is None:
        raise ValueError("ee objective needs a power model")
    p_t = scen.config.rru_power_budget
    if p_min is None:
        p_min = 1e-10 * p_t
    weights = np.ones(k_users) if weights is None else np.asarray(weights)
    full, _ = _coupling_slow(model)
    tau = scen.config.tau
    con_of_user = fh.constraint_of_user(scen.association)
    rhs = fh.rhs_nats(scen.config.eta_tilde, scen.num_rrus)

    def scan(lo, hi):
        """Evaluate one log grid over [lo, hi]; -inf marks infeasible points."""
        axes = [np.geomspace(lo[i], hi[i], grid_points) for i in range(k_users)]
        powers = np.array(list(itertools.product(*axes)))
        # feasibility: per-RRU power sums, then true-rate fronthaul loads
        ok = np.ones(len(powers), dtype=bool)
        for l in range(scen.num_rrus):
            users = np.flatnonzero(scen.association == l)
            if users.size:
                ok &= powers[:, users].sum(axis=1) <= p_t * (1 + 1e-12)
        rn = _rates_nats_rows(model, powers, full)
        if rhs.size:
            for c in range(len(rhs)):
                users = np.flatnonzero(con_of_user == c)
                ok &= rn[:, users].sum(axis=1) <= rhs[c] * (1 + 1e-12)
        rates_b = tau / LN2 * rn
        if objective == "wsr":
            vals = rates_b @ weights
        else:
            consumed = power_model.static_power + \
                tau / power_model.omega_rru * powers.sum(axis=1)
            vals = rates_b.sum(axis=1) / consumed
        return powers, np.where(ok, vals, -np.inf)

    def line_max(p):
        """Best uniform scaling s * p; reaches constraint boundaries exactly.

        Constrained optima sit on the fronthaul boundary, which log grids
        straddle; scaling the whole vector crosses it continuously.
        """
        sums = np.array([p[scen.association == l].sum()
                         for l in range(scen.num_rrus)])
        s_cap = float(np.min(p_t / np.maximum(sums, 1e-300)))
        if rhs.size:
            def ok_at(s):
                rn = _rates_nats_rows(model, s * p[None, :], full)[0]
                loads = np.zeros(len(rhs))
                np.add.at(loads, con_of_user, rn)
                return bool(np.all(loads <= rhs * (1 + 1e-12)))
            if ok_at(s_cap):
                s_max = s_cap
            else:
                lo_s, hi_s = 0.0, s_cap
                for _ in range(200):
                    mid = 0.5 * (lo_s + hi_s)
                    if ok_at(mid):
                        lo_s = mid
                    else:
                        hi_s = mid
                s_max = lo_s
        else:
            s_max = s_cap
        if s_max <= 0.0:
            return p, -np.inf
        s_grid = np.geomspace(max(1e-3, 0.02 * s_max), s_max, 400)
        cand = np.clip(s_grid[:, None] * p[None, :], p_min, p_t)
        rn = _rates_nats_rows(model, cand, full)
        rates_b = tau / LN2 * rn
        if objective == "wsr":
            vals = rates_b @ weights
        else:
            consumed = power_model.static_power + \
                tau / power_model.omega_rru * cand.sum(axis=1)
            vals = rates_b.sum(axis=1) / consumed
        idx = int(np.argmax(vals))
        return cand[idx], float(vals[idx])

    def eval_batch(cand):
        """Objective on rows of ``cand``; -inf where any constraint fails."""
        ok = np.ones(len(cand), dtype=bool)
        for l in range(scen.num_rrus):
            users = np.flatnonzero(scen.association == l)
            if users.size:
                ok &= cand[:, users].sum(axis=1) <= p_t * (1 + 1e-12)
        rn = _rates_nats_rows(model, cand, full)
        if rhs.size:
            for c in range(len(rhs)):
                users = np.flatnonzero(con_of_user == c)
                ok &= rn[:, users].sum(axis=1) <= rhs[c] * (1 + 1e-12)
        rates_b = tau / LN2 * rn
        if objective == "wsr":
            vals = rates_b @ weights
        else:
            consumed = power_model.static_power + \
                tau / power_model.omega_rru * cand.sum(axis=1)
            vals = rates_b.sum(axis=1) / consumed
        return np.where(ok, vals, -np.inf)

    def coord_refine(p, val, rounds=5, span0=4.0, points=65):
        """Cyclic 1-D log scans with nested zooming around the incumbent.

        Finds constraint-boundary optima that no joint log grid (and no
        uniform scaling) can land on, because each coordinate is resolved
        to machine-level multiplicative resolution.
        """
        cur_p, cur_val = p.copy(), val
        for _ in range(rounds):
            improved = False
            for i in range(len(cur_p)):
                span = span0
                for _zoom in range(6):
                    axis = np.geomspace(max(p_min, cur_p[i] / span),
                                        min(p_t, cur_p[i] * span), points)
                    axis = np.append(axis, p_min)   # allow switching off
                    cand = np.tile(cur_p, (len(axis), 1))
                    cand[:, i] = axis
                    v = eval_batch(cand)
                    j = int(np.argmax(v))
                    if v[j] > cur_val:
                        cur_val = float(v[j])
                        cur_p[i] = axis[j]
                        improved = True
                    span = span ** (2.0 / (points - 1)) * 1.5
            if not improved:
                break
        return cur_p, cur_val

    lo = np.full(k_users, p_min)
    hi = np.full(k_users, p_t)
    powers, vals = scan(lo, hi)
    while not np.any(np.isfinite(vals)):
        lo, hi = lo / 2.0, hi / 2.0
        powers, vals = scan(lo, hi)
    spacing0 = (hi / lo) ** (1.0 / (grid_points - 1))
    # the coarse scan can rank a wrong basin first, so several distinct
    # coarse candidates each get their own zoom sequence
    order = np.argsort(vals)[::-1][:5]
    order = order[np.isfinite(vals[order])]
    best_p = powers[order[0]].copy()
    best_val = float(vals[order[0]])
    for seed_idx in order:
        seed_p = powers[seed_idx]
        s_lo = np.maximum(p_min, seed_p / spacing0)
        s_hi = np.minimum(p_t, seed_p * spacing0)
        cur_p, cur_val = seed_p.copy(), float(vals[seed_idx])
        for _ in range(refine_passes):
            pw, vl = scan(s_lo, s_hi)
            idx = int(np.argmax(vl))
            if vl[idx] > cur_val:
                cur_val = float(vl[idx])
                cur_p = pw[idx].copy()
            # zoom each axis around the incumbent by one grid spacing
            spacing = (s_hi / s_lo) ** (1.0 / (grid_points - 1))
            s_lo = np.maximum(p_min, cur_p / spacing)
            s_hi = np.minimum(p_t, cur_p * spacing)
        p_line, v_line = line_max(cur_p)
        if v_line > cur_val:
            cur_val, cur_p = v_line, p_line.copy()
        cur_p, cur_val = coord_refine(cur_p, cur_val)
        if cur_val > best_val:
            best_val = cur_val
            best_p = cur_p.copy()
    return best_p, best_val


def _project_box_simplex(p: np.ndarray, association: np.ndarray, n_rrus: int,
                         p_t: float, p_min: float) -> np.ndarray:
    """Project onto {p >= p_min, per-RRU sums <= p_t}, RRU by RRU."""
    out = np.maximum(p, p_min)
    for l in range(n_rrus):
        users = np.flatnonzero(association == l)
        if users.size == 0 or out[users].sum() <= p_t:
            continue
        x = p[users]
        lo_nu, hi_nu = 0.0, float(np.max(x) - p_min)
        for _ in range(200):
            nu = 0.5 * (lo_nu + hi_nu)
            s = np.maximum(p_min, x - nu).sum()
            if s > p_t:
                lo_nu = nu
            else:
                hi_nu = nu
        out[users] = np.maximum(p_min, x - hi_nu)
    return out


def projected_gradient_reference(model: RadioModel, p_r: np.ndarray,
                                 lam: np.ndarray | float,
                                 weights: np.ndarray,
                                 q_shift: float = 0.0,
                                 p_min: float | None = None,
                                 grad_tol: float = 1e-8,
                                 max_iters: int = 200_000) -> np.ndarray:
    """Solve one convex subproblem by projected gradient descent.

    Independent route for validating the closed-form bisection update; the
    surrogate and its gradient are rebuilt here from the Taylor construction.
    """
    scen = model.scenario
    k_users = scen.num_users
    p_t = scen.config.rru_power_budget
    if p_min is None:
        p_min = 1e-10 * p_t
    full, inter = _coupling_slow(model)
    sigma2 = scen.config.noise_power
    d_full = full.T @ p_r + sigma2          # (K,) denominators at p_r
    d_int = inter.T @ p_r + sigma2
    rate_r = np.log(d_full / d_int)
    if np.isscalar(lam) or np.ndim(lam) == 0:
        lam_user = np.full(k_users, float(lam))
    elif len(np.atleast_1d(lam)) == 1:
        lam_user = np.full(k_users, float(np.atleast_1d(lam)[0]))
    else:
        lam_user = np.asarray(lam, dtype=float)[scen.association]

    def objective(p):
        dp = p - p_r
        dl = p_r * np.log(p / p_r)
        g = rate_r - (inter / d_int[None, :]).T @ dp \
            + (full / d_full[None, :]).T @ dl
        h = rate_r + (full / d_full[None, :]).T @ dp \
            - (inter / d_int[None, :]).T @ dl
        return -float(weights @ g) + q_shift * float(p.sum()) \
            + float(lam_user @ h)

    def gradient(p):
        grad = np.empty(k_users)
        for i in range(k_users):
            acc = q_shift
            for k in range(k_users):
                acc -= weights[k] * (p_r[i] * full[i, k] / (p[i] * d_full[k])
                                     - inter[i, k] / d_int[k])
                acc += lam_user[k] * (full[i, k] / d_full[k]
                                      - p_r[i] * inter[i, k] / (p[i] * d_int[k]))
            grad[i] = acc
        return grad

    p = p_r.copy()
    step = 1.0
    f_val = objective(p)
    scale = max(1.0, float(np.abs(gradient(p_r)).max()))
    for _ in range(max_iters):
        grad = gradient(p)
        # backtracking on the projected step
        while step > 1e-18:
            cand = _project_box_simplex(p - step * grad, scen.association,
                                        scen.num_rrus, p_t, p_min)
            diff = cand - p
            f_cand = objective(cand)
            if f_cand <= f_val + float(grad @ diff) \
                    + 0.5 / step * float(diff @ diff) + 1e-15:
                break
            step *= 0.5
        move = float(np.abs(cand - p).max())
        p, f_val = cand, f_cand
        if move / step <= grad_tol * scale:
            return p
        step *= 1.3
    raise RuntimeError("projected gradient reference did not converge "
                       "(possible bounds or coefficient bug)")


def kkt_residuals(model: RadioModel, fh: FronthaulConstraint, p: np.ndarray,
                  lam: np.ndarray, mu: np.ndarray, weights: np.ndarray,
                  objective: str = "wsr",
                  power_model: PowerModel | None = None,
                  p_min: float | None = None) -> dict[str, float]:
    """First-order optimality residuals of the original nonconvex problem.

    The gradient of each user rate is recomputed here coefficient by
    coefficient. For the energy objective, multipliers are expected in the
    1/consumed-power scaling that matches the ratio objective's gradient.
    """
    scen = model.scenario
    k_users = scen.num_users
    p = np.asarray(p, dtype=float)
    p_t = scen.config.rru_power_budget
    if p_min is None:
        p_min = 1e-10 * p_t
    full, inter = _coupling_slow(model)
    d_full = full.T @ p + scen.config.noise_power
    d_int = inter.T @ p + scen.config.noise_power
    grad_rate = np.empty((k_users, k_users))     # d ln(1+gamma_k) / d p_i
    for i in range(k_users):
        for k in range(k_users):
            grad_rate[i, k] = full[i, k] / d_full[k] - inter[i, k] / d_int[k]
    rates = np.log(d_full / d_int)

    if objective == "wsr":
        obj_grad = grad_rate @ weights
    elif objective == "ee":
        if power_model is None:
            raise ValueError("ee residuals need a power model")
        consumed = power_model.static_power + \
            scen.config.tau / power_model.omega_rru * float(p.sum())
        ee_val = float(rates.sum()) / consumed
        obj_grad = (grad_rate.sum(axis=1)
                    - ee_val * scen.config.tau / power_model.omega_rru) / consumed
    else:
        raise ValueError(f"unknown objective: {objective}")

    con_of_user = fh.constraint_of_user(scen.association)
    lam = np.asarray(lam, dtype=float)
    lam_user = lam[con_of_user] if lam.size else np.zeros(k_users)
    lagr_grad = -obj_grad + grad_rate @ lam_user + np.asarray(mu)[scen.association]

    active = p > p_min * (1.0 + 1e-6)
    scale = max(1e-12, float(np.abs(obj_grad).max()))
    stationarity = float(np.abs(lagr_grad[active]).max()) / scale \
        if np.any(active) else 0.0

    rhs = fh.rhs_nats(scen.config.eta_tilde, scen.num_rrus)
    if rhs.size:
        loads = np.zeros(len(rhs))
        np.add.at(loads, con_of_user, rates)
        slack = loads - rhs
        feas_fh = float(np.max(np.maximum(0.0, slack) / np.maximum(1.0, rhs)))
        cs_fh = float(np.abs(lam * slack).max())
    else:
        feas_fh, cs_fh = 0.0, 0.0
    sums = np.zeros(scen.num_rrus)
    np.add.at(sums, scen.association, p)
    feas_pow = float(np.max(np.maximum(0.0, sums - p_t)) / p_t)
    cs_pow = float(np.abs(np.asarray(mu) * (sums - p_t)).max())
    obj_scale = max(1.0, abs(float(weights @ rates)))
    dual_feas = float(max(0.0, -min(np.min(lam, initial=0.0),
                                    np.min(np.asarray(mu), initial=0.0))))
    return {
        "stationarity": stationarity,
        "comp_slack_fronthaul": cs_fh / obj_scale,
        "comp_slack_power": cs_pow / obj_scale,
        "feasibility_fronthaul": feas_fh,
        "feasibility_power": feas_pow,
        "dual_feasibility": dual_feas,
    }


def run_battery(seed: int = 0, verbose: bool = False) -> list[OracleReport]:
    """Quick cross-check battery used by the command line ``verify`` command.

    Exercises the bound sandwich, the touching/gradient identities, the
    closed-form subproblem update against projected gradient descent, the
    full solver against the grid oracle on a tiny instance, and the reported
    KKT residuals against this module's independent recomputation.
    """
    import dataclasses

    from . import bounds, solvers
    from .config import NetworkConfig, thermal_noise_watts
    from .scenario import generate_drop

    rng = np.random.default_rng(seed)
    reports: list[OracleReport] = []

    def report(name, errs, tol, rel_errs=None):
        errs = np.atleast_1d(np.asarray(errs, dtype=float))
        rel = errs if rel_errs is None else np.atleast_1d(np.asarray(rel_errs))
        idx = int(np.argmax(rel if rel_errs is not None else errs))
        rep = OracleReport(name=name, max_abs_error=float(errs.max()),
                           max_rel_error=float(rel.max()), argmax=idx,
                           tolerance=tol,
                           passed=bool((rel if rel_errs is not None
                                        else errs).max() <= tol))
        reports.append(rep)
        if verbose:
            print(rep.row())

    cfg = NetworkConfig(num_rrus=7, num_users=14, antennas_per_rru=32,
                        cell_radius=500.0,
                        noise_power=thermal_noise_watts(10e6, 9.0),
                        rng_seed=seed)
    scen = generate_drop(cfg)
    from .radio import build_radio_model
    model = build_radio_model(scen, "mrt")
    p_t = cfg.rru_power_budget

    # sandwich + touching + gradient identities
    worst_slack, worst_touch, worst_grad = 0.0, 0.0, 0.0
    for _ in range(50):
        p_r = rng.uniform(1e-6, p_t / scen.num_users, scen.num_users)
        p = rng.uniform(1e-6, p_t / scen.num_users, scen.num_users)
        ctx = bounds.make_context(model, p_r)
        full, inter = _coupling_slow(model)
        for vec in (p, p_r):
            truth = _rates_nats_rows(model, vec[None, :], full)[0]
            g = bounds.rate_lower_bound(ctx, vec)
            h = bounds.rate_upper_bound(ctx, vec)
            worst_slack = max(worst_slack, float(np.max(g - truth)),
                              float(np.max(truth - h)))
        g_r = bounds.rate_lower_bound(ctx, p_r)
        h_r = bounds.rate_upper_bound(ctx, p_r)
        truth_r = _rates_nats_rows(model, p_r[None, :], full)[0]
        worst_touch = max(worst_touch, float(np.max(np.abs(g_r - truth_r))),
                          float(np.max(np.abs(h_r - truth_r))))
        k = int(rng.integers(scen.num_users))
        fd = finite_diff_gradient(
            lambda q: bounds.lower_bound_G(ctx, k, q), p_r)
        true_grad = finite_diff_gradient(
            lambda q: float(_rates_nats_rows(model, q[None, :], full)[0, k]),
            p_r)
        scale = max(1e-12, float(np.abs(true_grad).max()))
        worst_grad = max(worst_grad,
                         float(np.abs(fd - true_grad).max()) / scale)
    report("bound sandwich (nats slack)", worst_slack,
           ORACLE_TOLERANCES["sandwich_slack"])
    report("bounds touch the rate at p_r", worst_touch,
           ORACLE_TOLERANCES["touching_slack"])
    report("bound gradient matches rate gradient", worst_grad, 1e-4)

    # closed-form subproblem update vs projected gradient reference
    from .inner import coefficients_A_B, lagrangian_power_update
    p_r = np.full(scen.num_users, 0.2 * p_t / scen.num_users)
    ctx = bounds.make_context(model, p_r)
    lam = rng.uniform(0.0, 0.5, scen.num_rrus)
    weights = np.ones(scen.num_users)
    a, b = coefficients_A_B(ctx, weights, lam)
    p_cf, _ = lagrangian_power_update(ctx, a, b, 0.0, p_t, 1e-10 * p_t)
    p_pg = projected_gradient_reference(model, p_r, lam, weights)
    rel = np.abs(p_cf - p_pg) / np.maximum(1e-10 * p_t, np.abs(p_pg))
    report("closed-form update vs projected gradient", np.abs(p_cf - p_pg),
           ORACLE_TOLERANCES["pgd_match_rel"], rel_errs=rel)

    # full solver vs grid oracle on a tiny instance
    tiny = dataclasses.replace(cfg, num_rrus=2, num_users=3, pilot_length=2,
                               antennas_per_rru=16, rng_seed=seed + 1)
    tscen = generate_drop(tiny)
    tmodel = build_radio_model(tscen, "mrt")
    fh = FronthaulConstraint.per_link(6.0)
    rep = solvers.solve_wsr(tmodel, fh, solvers.SolverConfig(
        epsilon=1e-4, kkt_tol=1e-4))
    p_grid, v_grid = grid_search_solver(tmodel, fh)
    gap = (v_grid - rep.objective) / max(1.0, abs(v_grid))
    report("solver vs grid-search incumbent", max(0.0, gap),
           ORACLE_TOLERANCES["grid_match_rel"])

    # reported KKT residuals vs independent recomputation
    res = kkt_residuals(tmodel, fh, rep.p_star, rep.lam, rep.mu, weights[:3])
    report("independent stationarity residual", res["stationarity"],
           ORACLE_TOLERANCES["kkt_residual"])
    report("independent feasibility residual",
           max(res["feasibility_fronthaul"], res["feasibility_power"]),
           ORACLE_TOLERANCES["feasibility_rel"])
    return reports
