"""Monte Carlo sweep harness: baseline scheme, drop loops, CSV emission."""
from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .config import NetworkConfig
from .radio import (FronthaulConstraint, PowerModel, build_radio_model,
                    energy_efficiency, user_rates)
from .scenario import AssociationRule, generate_drop
from .solvers import SolverConfig, solve_ee, solve_wsr

SCHEMES = ("sca", "baseline", "unconstrained")


def baseline_equal_power(model, fh: FronthaulConstraint) -> np.ndarray:
    """Equal power per cell, scaled by one global factor to meet the fronthaul.

    Each user of RRU l gets rho * P_t / |K_l|; rho in (0, 1] is the largest
    scale keeping every fronthaul constraint satisfied (rates shrink to zero
    with rho, so a feasible scale always exists down to the power floor).
    """
    scen = model.scenario
    counts = np.bincount(scen.association, minlength=scen.num_rrus)
    per_user = model.power_budget / counts[scen.association]
    p_min = 1e-10 * model.power_budget

    rhs = fh.rhs_nats(model.eta_tilde, scen.num_rrus)
    con_of_user = fh.constraint_of_user(scen.association)

    def loads(rho):
        r = np.log1p(_sinr_at(model, rho * per_user))
        out = np.zeros(len(rhs))
        np.add.at(out, con_of_user, r)
        return out

    if rhs.size == 0 or np.all(loads(1.0) <= rhs):
        return per_user.copy()
    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.all(loads(mid) <= rhs):
            lo = mid
        else:
            hi = mid
    return np.maximum(p_min, lo * per_user)


def _sinr_at(model, p):
    d_full = p @ model.coupling + model.sigma2
    sig = model.v * p * model.theta_serving
    return sig / (d_full - sig)


@dataclass(frozen=True)
class SweepSpec:
    """One Monte Carlo study: which drops to generate and what to solve on them."""

    capacities: tuple          # bps/Hz grid, strictly increasing; inf = no limit
    constraint: str = "per_link"            # "per_link" | "sum"
    precoders: tuple = ("mrt",)
    association_rules: tuple = (AssociationRule.DISTANCE,)
    schemes: tuple = ("sca", "baseline")
    objective: str = "wsr"                  # "wsr" | "ee"
    num_drops: int = 20
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        caps = tuple(float(c) for c in self.capacities)
        if any(b <= a for a, b in zip(caps, caps[1:])):
            raise ValueError("capacity grid must be strictly increasing")
        if self.num_drops < 1:
            raise ValueError("num_drops must be >= 1")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme: {s}")
        if self.objective not in ("wsr", "ee"):
            raise ValueError(f"unknown objective: {self.objective}")
        if self.constraint not in ("per_link", "sum"):
            raise ValueError(f"unknown constraint kind: {self.constraint}")


@dataclass
class ResultRow:
    drop: int
    scheme: str
    precoder: str
    association: str
    constraint: str
    capacity: float
    throughput: float          # bps/Hz summed over users
    ee: float                  # bps/Hz per watt
    sca_iters: int
    db_iters: int
    wall_time: float
    status: str

    FIELDS = ("drop", "scheme", "precoder", "association", "constraint",
              "capacity", "throughput", "ee", "sca_iters", "db_iters",
              "wall_time", "status")

    def __post_init__(self):
        if self.status == "ok" and (self.throughput < 0 or self.ee < 0):
            raise ValueError("throughput and EE must be nonnegative")


def _constraint_for(kind: str, capacity: float) -> FronthaulConstraint:
    if not np.isfinite(capacity):
        return FronthaulConstraint.none()
    if kind == "sum":
        return FronthaulConstraint.sum_capacity(capacity)
    return FronthaulConstraint.per_link(capacity)


def _drop_config(cfg: NetworkConfig, seed: int, drop: int) -> NetworkConfig:
    child = np.random.SeedSequence([seed, drop]).generate_state(1)[0]
    return dataclasses.replace(cfg, rng_seed=int(child))


def _run_drop(spec: SweepSpec, cfg: NetworkConfig, drop: int) -> list[ResultRow]:
    rows = []
    drop_cfg = _drop_config(cfg, spec.seed, drop)
    for rule in spec.association_rules:
        scen = generate_drop(drop_cfg, AssociationRule(rule))
        for precoder in spec.precoders:
            model = build_radio_model(scen, precoder)
            pm = PowerModel.from_config(drop_cfg)
            unconstrained = None
            if "unconstrained" in spec.schemes:
                unconstrained = _solve_row(spec, model, pm,
                                           FronthaulConstraint.none())
            for cap in spec.capacities:
                fh = _constraint_for(spec.constraint, cap)
                for scheme in spec.schemes:
                    t0 = time.perf_counter()
                    if scheme == "unconstrained":
                        p, iters, db, status = unconstrained
                    elif scheme == "baseline":
                        p = baseline_equal_power(model, fh)
                        iters, db, status = 0, 0, "ok"
                    else:
                        try:
                            p, iters, db, status = _solve_row(spec, model, pm, fh)
                        except Exception as exc:  # record and continue
                            rows.append(ResultRow(
                                drop, scheme, precoder, str(rule),
                                spec.constraint, cap, 0.0, 0.0, 0, 0,
                                time.perf_counter() - t0,
                                f"error: {type(exc).__name__}"))
                            continue
                    rows.append(ResultRow(
                        drop, scheme, precoder, str(rule), spec.constraint,
                        cap, float(user_rates(model, p).sum()),
                        energy_efficiency(model, pm, p), iters, db,
                        time.perf_counter() - t0, status))
    return rows


def _solve_row(spec, model, pm, fh):
    if spec.objective == "ee":
        rep = solve_ee(model, pm, fh, spec.solver)
    else:
        rep = solve_wsr(model, fh, spec.solver)
    return rep.p_star, rep.sca_iters, rep.db_iters, rep.status


def run_sweep(spec: SweepSpec, cfg: NetworkConfig,
              n_jobs: int | None = None) -> list[ResultRow]:
    """All drops of a sweep; rows are merged in drop order for determinism."""
    n_jobs = n_jobs or int(os.environ.get("CRANPOWER_JOBS", "1"))
    drops = range(spec.num_drops)
    if n_jobs <= 1 or spec.num_drops == 1:
        chunks = [_run_drop(spec, cfg, d) for d in drops]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=n_jobs) as ex:
            chunks = list(ex.map(_run_drop, *zip(*[(spec, cfg, d)
                                                   for d in drops])))
    return [row for chunk in chunks for row in chunk]


def write_rows(rows: list[ResultRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ResultRow.FIELDS)
        for row in rows:
            writer.writerow([getattr(row, f) for f in ResultRow.FIELDS])


def emit_plot_data(rows: list[ResultRow], out_dir,
                   value_field: str = "throughput") -> list[str]:
    """Aggregate rows into per-(precoder, constraint) CSVs of mean/p5/p95."""
    os.makedirs(out_dir, exist_ok=True)
    groups: dict[tuple, dict[tuple, list[float]]] = {}
    for row in rows:
        if row.status not in ("ok", "converged"):
            continue
        outer = (row.precoder, row.constraint)
        inner = (row.capacity, row.scheme, row.association)
        groups.setdefault(outer, {}).setdefault(inner, []).append(
            getattr(row, value_field))
    paths = []
    for (precoder, constraint) in sorted(groups) or []:
        path = os.path.join(out_dir, f"{value_field}_{precoder}_{constraint}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["capacity", "scheme", "association",
                             "mean", "p5", "p95"])
            for key in sorted(groups[(precoder, constraint)]):
                vals = np.array(groups[(precoder, constraint)][key])
                writer.writerow([key[0], key[1], key[2],
                                 f"{vals.mean():.10g}",
                                 f"{np.percentile(vals, 5):.10g}",
                                 f"{np.percentile(vals, 95):.10g}"])
        paths.append(path)
    if not groups:
        path = os.path.join(out_dir, f"{value_field}_empty.csv")
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerow(["capacity", "scheme", "association",
                                     "mean", "p5", "p95"])
        paths.append(path)
    return paths
