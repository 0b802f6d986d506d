"""Command line interface: drop / solve / sweep / verify."""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .config import (ConfigError, NetworkConfig, _coerce, read_flat_config,
                     thermal_noise_watts)
from .experiments import SweepSpec, emit_plot_data, run_sweep, write_rows
from .radio import FronthaulConstraint, PowerModel, build_radio_model
from .scenario import AssociationRule, generate_drop
from .solvers import SolverConfig, solve_ee, solve_wsr

_SWEEP_KEYS = {"capacities", "constraint", "precoders", "association_rules",
               "schemes", "objective", "num_drops", "seed"}


def _default_config() -> NetworkConfig:
    return NetworkConfig(num_rrus=7, num_users=70, antennas_per_rru=200,
                         cell_radius=500.0,
                         noise_power=thermal_noise_watts(10e6, 9.0))


def _load_config(path: str | None,
                 overrides: list[str]) -> tuple[NetworkConfig, dict]:
    """Config file plus --set overrides; sweep keys are split out untouched."""
    values = read_flat_config(path) if path else {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item!r}")
        key, val = item.split("=", 1)
        values[key.strip()] = val.strip()
    sweep_vals = {k: values.pop(k) for k in list(values) if k in _SWEEP_KEYS}
    base = dataclasses.asdict(_default_config())
    known = {f.name for f in dataclasses.fields(NetworkConfig)}
    for key, val in values.items():
        if key not in known:
            raise ConfigError(f"unknown configuration key: {key}")
        base[key] = _coerce(val, key)
    return NetworkConfig(**base), sweep_vals


def _split_list(val: str) -> tuple:
    return tuple(x.strip() for x in str(val).split(",") if x.strip())


def _build_spec(sweep_vals: dict, args) -> SweepSpec:
    kw = {}
    if "capacities" in sweep_vals:
        kw["capacities"] = tuple(float(c) for c in _split_list(sweep_vals["capacities"]))
    if args.capacities:
        kw["capacities"] = tuple(float(c) for c in _split_list(args.capacities))
    if "capacities" not in kw:
        raise ConfigError("a sweep needs a capacities grid")
    for key in ("constraint", "objective"):
        if key in sweep_vals:
            kw[key] = sweep_vals[key]
        if getattr(args, key, None):
            kw[key] = getattr(args, key)
    for key in ("precoders", "schemes"):
        if key in sweep_vals:
            kw[key] = _split_list(sweep_vals[key])
        if getattr(args, key, None):
            kw[key] = _split_list(getattr(args, key))
    rules = sweep_vals.get("association_rules")
    if args.association:
        rules = args.association
    if rules:
        kw["association_rules"] = tuple(AssociationRule(r)
                                        for r in _split_list(rules))
    for key in ("num_drops", "seed"):
        if key in sweep_vals:
            kw[key] = int(sweep_vals[key])
        if getattr(args, key, None) is not None:
            kw[key] = int(getattr(args, key))
    if args.epsilon is not None:
        kw["solver"] = SolverConfig(epsilon=args.epsilon)
    return SweepSpec(**kw)


def _cmd_drop(args) -> int:
    cfg, _ = _load_config(args.config, args.set)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, rng_seed=args.seed)
    rule = AssociationRule(args.association) if args.association \
        else AssociationRule.DISTANCE
    scen = generate_drop(cfg, rule)
    text = scen.to_json()
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        print(text)
    return 0


def _cmd_solve(args) -> int:
    cfg, _ = _load_config(args.config, args.set)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, rng_seed=args.seed)
    rule = AssociationRule(args.association) if args.association \
        else AssociationRule.DISTANCE
    scen = generate_drop(cfg, rule)
    model = build_radio_model(scen, args.precoder)
    if args.constraint == "none":
        fh = FronthaulConstraint.none()
    elif args.capacity is None:
        raise ConfigError("--capacity is required unless --constraint none")
    elif args.constraint == "sum":
        fh = FronthaulConstraint.sum_capacity(args.capacity)
    else:
        fh = FronthaulConstraint.per_link(args.capacity)
    solver = SolverConfig(epsilon=args.epsilon) if args.epsilon is not None \
        else SolverConfig()
    if args.objective == "ee":
        report = solve_ee(model, PowerModel.from_config(cfg), fh, solver)
    else:
        report = solve_wsr(model, fh, solver)
    text = report.to_json()
    if args.output:
        with open(args.output, "w") as fh_out:
            fh_out.write(text)
    else:
        print(text)
    return 0


def _cmd_sweep(args) -> int:
    cfg, sweep_vals = _load_config(args.config, args.set)
    spec = _build_spec(sweep_vals, args)
    rows = run_sweep(spec, cfg, n_jobs=args.jobs)
    out = args.output or "sweep_out"
    os.makedirs(out, exist_ok=True)
    write_rows(rows, os.path.join(out, "rows.csv"))
    field = "ee" if spec.objective == "ee" else "throughput"
    paths = emit_plot_data(rows, out, value_field=field)
    print(f"wrote {len(rows)} rows to {out}/rows.csv and "
          f"{len(paths)} aggregate files")
    failures = [r for r in rows if r.status.startswith("error")]
    if failures:
        print(f"warning: {len(failures)} solver failures recorded", file=sys.stderr)
    return 0


def _cmd_verify(args) -> int:
    from .oracles import run_battery
    reports = run_battery(seed=args.seed or 0)
    for rep in reports:
        print(rep.row())
    return 0 if all(r.passed for r in reports) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cranpower",
        description="Fronthaul-aware downlink power allocation toolbox")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                       help="override any configuration key")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("drop", help="generate one network drop as JSON")
    common(p)
    p.add_argument("--association", choices=[r.value for r in AssociationRule])
    p.add_argument("-o", "--output")
    p.set_defaults(func=_cmd_drop)

    p = sub.add_parser("solve", help="solve one instance, print the report")
    common(p)
    p.add_argument("--precoder", choices=("mrt", "zf"), default="mrt")
    p.add_argument("--constraint", choices=("per_link", "sum", "none"),
                   default="per_link")
    p.add_argument("--capacity", type=float, help="fronthaul capacity, bps/Hz")
    p.add_argument("--objective", choices=("wsr", "ee"), default="wsr")
    p.add_argument("--association", choices=[r.value for r in AssociationRule])
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("-o", "--output")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("sweep", help="run a Monte Carlo sweep to CSV files")
    common(p)
    p.add_argument("--capacities", help="comma-separated bps/Hz grid")
    p.add_argument("--constraint", choices=("per_link", "sum"))
    p.add_argument("--precoders", help="comma-separated subset of mrt,zf")
    p.add_argument("--schemes", help="comma-separated subset of "
                                     "sca,baseline,unconstrained")
    p.add_argument("--objective", choices=("wsr", "ee"))
    p.add_argument("--association", help="comma-separated association rules")
    p.add_argument("--num-drops", dest="num_drops", type=int)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("-o", "--output", help="output directory")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("verify", help="run the cross-check oracle battery")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
