"""Command-line entry point.

Subcommands: generate, simulate, predict, optimize, accuracy, compare, bench.
Sweep subcommands read an experiment spec from a JSON config file (fields
mirror ExperimentSpec); --seed/--threads/--out override the corresponding
config fields.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import harness
from .ndt import NdtConfig, overload_index, predict_duty_cycles
from .netgen import instance_from_json, instance_to_json, make_instance, validate_instance
from .optimizer import OptimizerConfig, optimize_priorities
from .simulator import GatingPolicy, dump_schedule_trace, run_simulation


def _write(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _load_instance(path: str):
    with open(path) as fh:
        return instance_from_json(fh.read())


def _load_priorities(args, inst) -> np.ndarray:
    if getattr(args, "priorities", None):
        with open(args.priorities) as fh:
            doc = json.load(fh)
        z = np.asarray(doc["z_tilde"] if isinstance(doc, dict) else doc, dtype=np.float64)
        if len(z) != inst.num_links:
            raise ValueError(
                f"priorities length {len(z)} mismatches instance links {inst.num_links}"
            )
        return z
    return np.ones(inst.num_links)


def _ndt_config(args) -> NdtConfig:
    return NdtConfig(
        iterations=args.iterations,
        ema_weight=args.ema_weight,
        rounds=args.rounds,
        grid_points=args.grid_points,
    )


def _add_ndt_flags(parser, rounds_default=1):
    parser.add_argument("--iterations", type=int, default=5, help="fixed-point iterations (K)")
    parser.add_argument("--ema-weight", type=float, default=0.5, help="EMA weight (alpha)")
    parser.add_argument("--rounds", type=int, default=rounds_default, help="contention rounds (M)")
    parser.add_argument("--grid-points", type=int, default=64, help="integral grid size (L)")


def cmd_generate(args) -> int:
    inst = make_instance(args.size, args.load, args.topology_seed, args.realization_seed)
    problems = validate_instance(inst)
    if problems:
        for p in problems:
            print(f"invariant violation: {p}", file=sys.stderr)
        return 1
    _write(args.out, instance_to_json(inst))
    return 0


def cmd_simulate(args) -> int:
    inst = _load_instance(args.instance)
    z = _load_priorities(args, inst)
    gating = None
    if args.gating_from:
        with open(args.gating_from) as fh:
            doc = json.load(fh)
        gating = GatingPolicy(
            target_duty=np.asarray(doc["x_tilde"], dtype=np.float64),
            window=doc["gating"]["window"],
            factor=doc["gating"]["factor"],
        )
        z = np.asarray(doc["z_tilde"], dtype=np.float64)
    trace = [] if args.trace else None
    result = run_simulation(
        inst, z, rounds=args.rounds, horizon=args.horizon,
        gating=gating, seed=args.seed, trace=trace,
    )
    if args.trace:
        dump_schedule_trace(args.trace, trace)
    _write(args.out, json.dumps(result.to_json_dict(), indent=2))
    return 0


def cmd_predict(args) -> int:
    inst = _load_instance(args.instance)
    z = _load_priorities(args, inst)
    duty, _ = predict_duty_cycles(
        inst.conflicts, inst.long_term_rates, inst.routing, z,
        _ndt_config(args), keep_trace=False,
    )
    rho = overload_index(duty, inst.routing, inst.long_term_rates)
    _write(args.out, json.dumps({
        "schema_version": 1,
        "duty_cycles": duty.tolist(),
        "overload_index": rho.tolist(),
        "config_echo": {
            "iterations": args.iterations, "ema_weight": args.ema_weight,
            "rounds": args.rounds, "grid_points": args.grid_points,
        },
    }, indent=2))
    return 0


def cmd_optimize(args) -> int:
    inst = _load_instance(args.instance)
    bundle = optimize_priorities(
        inst,
        _ndt_config(args),
        OptimizerConfig(steps=args.steps, learning_rate=args.learning_rate,
                        method=args.method),
    )
    _write(args.out, json.dumps(bundle.to_json_dict(), indent=2))
    return 0


def _load_spec(args) -> harness.ExperimentSpec:
    doc = {}
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
    spec = harness.ExperimentSpec.from_dict(doc)
    if args.seed is not None:
        spec.master_seed = args.seed
    if args.threads is not None:
        spec.threads = args.threads
    if args.sizes:
        spec.sizes = args.sizes
    if args.loads:
        spec.loads = args.loads
    return spec


def _add_sweep_flags(parser):
    parser.add_argument("--config", help="experiment spec JSON")
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument("--threads", type=int, default=None, help="parallel workers")
    parser.add_argument("--sizes", type=int, nargs="+", default=None)
    parser.add_argument("--loads", type=float, nargs="+", default=None)
    parser.add_argument("--out", default="results", help="output directory")


def cmd_accuracy(args) -> int:
    spec = _load_spec(args)
    rows = harness.run_accuracy_sweep(spec)
    paths = harness.export_results({"accuracy": rows}, args.out, spec)
    print(f"wrote {paths['accuracy']} ({len(rows)} rows)")
    return 0


def cmd_compare(args) -> int:
    spec = _load_spec(args)
    rows = harness.run_policy_comparison(spec)
    paths = harness.export_results({"policies": rows}, args.out, spec)
    print(f"wrote {paths['policies']} ({len(rows)} rows)")
    return 0


def cmd_reproduce(args) -> int:
    spec = _load_spec(args)
    paths = harness.reproduce_cell(
        spec, args.size, args.load, args.topo, args.real, args.rounds, args.out
    )
    print(f"wrote {', '.join(sorted(paths.values()))}")
    return 0


def cmd_bench(args) -> int:
    spec = _load_spec(args)
    rows = harness.run_runtime_benchmark(spec)
    paths = harness.export_results({"runtime": rows}, args.out, spec)
    for row in rows:
        print(
            f"size={row['size']} load={row['load']}: "
            f"ndt={row['ndt_seconds']*1e3:.2f} ms sim={row['sim_seconds']:.3f} s "
            f"speedup={row['speedup']:.0f}x"
        )
    print(f"wrote {paths['runtime']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lubytwin")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a network instance")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--load", type=float, required=True)
    p.add_argument("--topology-seed", type=int, default=0)
    p.add_argument("--realization-seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("simulate", help="run the packet-level simulator")
    p.add_argument("--instance", required=True)
    p.add_argument("--priorities", help="priorities JSON (list or policy bundle)")
    p.add_argument("--gating-from", help="policy bundle JSON enabling gating")
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--horizon", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="write packed per-slot schedule bits here")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("predict", help="run the analytical digital twin")
    p.add_argument("--instance", required=True)
    p.add_argument("--priorities")
    _add_ndt_flags(p)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("optimize", help="tune link priorities against the twin")
    p.add_argument("--instance", required=True)
    _add_ndt_flags(p)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--method", choices=["adjoint", "fd"], default="adjoint")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_optimize)

    for name, fn, doc in (
        ("accuracy", cmd_accuracy, "model-vs-simulation accuracy sweep"),
        ("compare", cmd_compare, "policy comparison sweep"),
        ("bench", cmd_bench, "twin-vs-simulation runtime benchmark"),
    ):
        p = sub.add_parser(name, help=doc)
        _add_sweep_flags(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("reproduce", help="regenerate one sweep cell's artifacts")
    _add_sweep_flags(p)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--load", type=float, required=True)
    p.add_argument("--topo", type=int, default=0)
    p.add_argument("--real", type=int, default=0)
    p.add_argument("--rounds", type=int, default=1)
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
