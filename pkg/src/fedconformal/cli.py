"""Command line entry point: ``python -m fedconformal <command>``."""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import harness
from .fedqq import InfeasibleLevels, InstanceTooLarge, optimize_levels
from .scores import synthetic_probs, write_probs_csv

# flag name -> ScenarioConfig field
_SCENARIO_FLAGS = {
    "method": str, "alpha": float, "M": int, "T": int, "K": int, "N_d": int,
    "snr_db": float, "h_min_sq": float, "n_test": int, "n_trials": int,
    "n_classes": int, "temperature": float, "calib_csv": str, "test_csv": str,
    "power": float, "erasure_model": str, "server_K": str, "sigma_sq_override": float,
}


def _flag(name):
    return "--" + name.replace("_", "-")


def _add_scenario_args(p):
    p.add_argument("--config", help="JSON config file (flags override its fields)")
    p.add_argument("--seed", type=int, required=True)
    for name, typ in _SCENARIO_FLAGS.items():
        p.add_argument(_flag(name), dest=name, type=typ, default=None)
    p.add_argument("--conc", dest="dirichlet_conc", type=float, default=None,
                   help="symmetric Dirichlet concentration of the synthetic model")
    p.add_argument("--pin-channel", action="store_true", default=None)
    p.add_argument("--allow-nonpositive-alpha-c", dest="allow_nonpositive_alpha_c",
                   action="store_true", default=None)
    p.add_argument("--out", help="write results to this .csv or .json file")


def _scenario_from_args(args):
    raw = harness.load_config(args.config) if args.config else {}
    extra = {k: raw.pop(k) for k in ("grid", "methods", "common_seed") if k in raw}
    fields = {f.name for f in dataclasses.fields(harness.ScenarioConfig)}
    for name in fields:
        value = getattr(args, name, None)
        if value is not None:
            raw[name] = value
    return harness.ScenarioConfig.from_dict(raw), extra


def _emit(results, out):
    if out:
        harness.export(results, out)
    sys.stdout.write(harness.results_to_csv(results))


def cmd_gen_scores(args):
    conc = [args.conc] * args.classes
    labels, probs = synthetic_probs(args.classes, args.n, conc, args.seed, args.temperature)
    write_probs_csv(args.out, labels, probs)
    print(f"wrote {args.n} rows to {args.out}")


def cmd_run(args):
    cfg, _ = _scenario_from_args(args)
    _emit([harness.run_scenario(cfg)], args.out)


def _parse_grid(items):
    grid = {}
    for item in items or []:
        name, _, values = item.partition("=")
        name = name.strip()
        cast = int if name in ("M", "T", "K", "N_d") else float
        try:
            grid[name] = [cast(v) for v in values.split(",") if v.strip()]
        except ValueError:
            raise harness.ConfigError(f"bad grid values in {item!r}") from None
    return grid


def cmd_sweep(args):
    cfg, extra = _scenario_from_args(args)
    grid = dict(extra.get("grid", {}))
    grid.update(_parse_grid(args.grid))
    if not grid:
        raise harness.ConfigError("sweep needs at least one --grid NAME=v1,v2,...")
    methods = args.methods.split(",") if args.methods else extra.get("methods")
    common = args.common_seed or extra.get("common_seed", False)
    results = harness.sweep(grid, cfg, methods, common_seed=common)
    _emit(results, args.out)


def cmd_qq_bound(args):
    lv = optimize_levels(args.N_d, args.K, args.alpha)
    print(f"N_d={args.N_d} K={args.K} target coverage {1 - args.alpha:.4f}")
    print(f"  device rank n={lv.n}  alpha_d*={lv.alpha_d:.6f}")
    print(f"  server rank k={lv.k}  alpha_s*={lv.alpha_s:.6f}")
    print(f"  coverage lower bound {lv.bound:.9f}")


def build_parser():
    parser = argparse.ArgumentParser(prog="fedconformal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scores", help="write a synthetic label,p1,...,pC file")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--n", type=int, required=True, help="number of rows")
    p.add_argument("--conc", type=float, default=0.1)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_scores)

    p = sub.add_parser("run", help="run one scenario")
    _add_scenario_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter grid")
    _add_scenario_args(p)
    p.add_argument("--grid", action="append", metavar="NAME=v1,v2,...")
    p.add_argument("--methods", help="comma-separated methods evaluated in every cell")
    p.add_argument("--common-seed", action="store_true",
                   help="reuse the base seed in every cell")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("qq-bound", help="optimal quantile-of-quantiles levels")
    p.add_argument("--N-d", dest="N_d", type=int, required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.set_defaults(func=cmd_qq_bound)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (harness.ConfigError, InfeasibleLevels, InstanceTooLarge, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0
