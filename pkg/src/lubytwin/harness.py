"""Experiment orchestration: sweeps, benchmarks, and machine-readable export.

An experiment spec pins sizes, loads, per-cell instance counts, horizons,
policies, and all sub-configs; every instance and simulation seed derives
from the master seed alone, so any row can be regenerated from the spec.
Topology seeds do not depend on the load, and realization seeds do not
depend on the policy, so load sweeps reuse topologies and policy arms share
arrival/rate randomness (common random numbers).
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial

import numpy as np

from .analytic import ContentionMatrix, model_duty_cycles
from .ndt import NdtConfig, predict_duty_cycles
from .netgen import Instance, make_instance
from .optimizer import OptimizerConfig, optimize_priorities
from .simulator import empirical_contention, run_simulation

SCHEMA_VERSION = 1

# Seed-derivation stream tags (append-only, like lubytwin.rng).
_TOPOLOGY_TAG = 101
_REALIZATION_TAG = 102
_SIMULATION_TAG = 103

POLICIES = ("baseline", "priority", "priority_gating")

ACCURACY_COLUMNS = [
    "instance", "size", "load", "rounds", "input_config",
    "pearson", "rmse", "max_duty", "max_queue", "sim_seconds", "model_seconds",
]
POLICY_COLUMNS = [
    "instance", "size", "load", "policy", "rounds",
    "max_queue", "max_duty", "pearson", "rmse",
    "ndt_seconds", "sim_seconds", "speedup", "opt_seconds",
]
RUNTIME_COLUMNS = [
    "size", "load", "instances", "ndt_seconds", "sim_seconds", "speedup",
]


@dataclass
class ExperimentSpec:
    sizes: list = field(default_factory=lambda: [20, 50])
    loads: list = field(default_factory=lambda: [0.4, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])
    topologies_per_size: int = 10
    realizations_per_topology: int = 10
    horizon: int = 1000
    policies: list = field(default_factory=lambda: list(POLICIES))
    model_rounds: list = field(default_factory=lambda: [1, 3])   # M values in the accuracy sweep
    policy_rounds: int = 1                                       # M for policy/runtime simulation
    ndt: NdtConfig = field(default_factory=NdtConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    master_seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        if not self.sizes or not self.loads:
            raise ValueError("sizes and loads must be non-empty")
        if min(self.topologies_per_size, self.realizations_per_topology, self.horizon) < 1:
            raise ValueError("counts and horizon must be >= 1")
        if any(load <= 0 for load in self.loads):
            raise ValueError("loads must be positive")
        unknown = set(self.policies) - set(POLICIES)
        if unknown:
            raise ValueError(f"unknown policies: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        doc = dict(doc)
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config field: {sorted(unknown)[0]!r}")
        if "ndt" in doc:
            doc["ndt"] = NdtConfig(**doc["ndt"])
        if "optimizer" in doc:
            doc["optimizer"] = OptimizerConfig(**doc["optimizer"])
        return cls(**doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        return doc


def derive_seed(master_seed: int, tag: int, *key: int) -> int:
    entropy = tuple(int(v) & ((1 << 64) - 1) for v in (master_seed, tag, *key))
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


def _key_from_load(load: float) -> int:
    # loads enter seed keys as fixed-point thousandths so 1 and 1.0 agree
    return int(round(load * 1000))


def instance_for(spec: ExperimentSpec, size: int, load: float, topo: int, real: int) -> Instance:
    topology_seed = derive_seed(spec.master_seed, _TOPOLOGY_TAG, size, topo)
    realization_seed = derive_seed(spec.master_seed, _REALIZATION_TAG, size, topo, real)
    return make_instance(size, load, topology_seed, realization_seed)


def sim_seed_for(spec: ExperimentSpec, size: int, load: float, topo: int, real: int) -> int:
    return derive_seed(
        spec.master_seed, _SIMULATION_TAG, size, _key_from_load(load), topo, real
    )


def _instance_grid(spec: ExperimentSpec):
    for size in spec.sizes:
        for load in spec.loads:
            for topo in range(spec.topologies_per_size):
                for real in range(spec.realizations_per_topology):
                    yield size, load, topo, real


def _instance_id(size, load, topo, real) -> str:
    return f"n{size}-b{load:g}-t{topo}-r{real}"


# ---------------------------------------------------------------------------
# Metrics


def pearson(a, b):
    """Sample Pearson correlation; None when either side has zero variance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) != len(b) or len(a) < 2:
        raise ValueError("pearson needs two equal-length vectors of size >= 2")
    da, db = a - a.mean(), b - b.mean()
    var_a, var_b = (da * da).sum(), (db * db).sum()
    if var_a == 0.0 or var_b == 0.0:
        return None
    return float((da * db).sum() / math.sqrt(var_a * var_b))


def rmse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) != len(b) or len(a) < 2:
        raise ValueError("rmse needs two equal-length vectors of size >= 2")
    return float(np.sqrt(np.mean((a - b) ** 2)))


# ---------------------------------------------------------------------------
# Sweeps


def _accuracy_one(args) -> list[dict]:
    spec, size, load, topo, real = args
    inst = instance_for(spec, size, load, topo, real)
    z = np.ones(inst.num_links)
    seed = sim_seed_for(spec, size, load, topo, real)
    rows = []
    for rounds in spec.model_rounds:
        result = run_simulation(inst, z, rounds=rounds, horizon=spec.horizon, seed=seed)
        empirical = ContentionMatrix(
            marginal=result.marginal_b, joint=result.joint_b, edges=result.edges
        )
        configs = {
            "joint": empirical,
            "marginal": ContentionMatrix.from_marginals(result.marginal_b, inst.conflicts),
        }
        for name, contention in configs.items():
            t0 = time.perf_counter()
            out = model_duty_cycles(
                inst.conflicts, z, contention, rounds, spec.ndt.grid_points
            )
            model_seconds = time.perf_counter() - t0
            rows.append({
                "instance": _instance_id(size, load, topo, real),
                "size": size,
                "load": load,
                "rounds": rounds,
                "input_config": name,
                "pearson": pearson(out.duty_cycles, result.duty_cycles),
                "rmse": rmse(out.duty_cycles, result.duty_cycles),
                "max_duty": float(result.duty_cycles.max()),
                "max_queue": int(result.terminal_queues.max()),
                "sim_seconds": result.wall_clock_s,
                "model_seconds": model_seconds,
            })
    return rows


def _policy_one(args) -> list[dict]:
    spec, size, load, topo, real = args
    inst = instance_for(spec, size, load, topo, real)
    seed = sim_seed_for(spec, size, load, topo, real)
    ones = np.ones(inst.num_links)
    rows = []

    bundle = None
    opt_seconds = 0.0
    if {"priority", "priority_gating"} & set(spec.policies):
        t0 = time.perf_counter()
        bundle = optimize_priorities(inst, spec.ndt, spec.optimizer)
        opt_seconds = time.perf_counter() - t0

    for policy in spec.policies:
        if policy == "baseline":
            z, gating = ones, None
        elif policy == "priority":
            z, gating = bundle.priorities, None
        else:
            z, gating = bundle.priorities, bundle.gating
        t0 = time.perf_counter()
        predicted, _ = predict_duty_cycles(
            inst.conflicts, inst.long_term_rates, inst.routing, z, spec.ndt,
            keep_trace=False,
        )
        ndt_seconds = time.perf_counter() - t0
        result = run_simulation(
            inst, z, rounds=spec.policy_rounds, horizon=spec.horizon,
            gating=gating, seed=seed,
        )
        rows.append({
            "instance": _instance_id(size, load, topo, real),
            "size": size,
            "load": load,
            "policy": policy,
            "rounds": spec.policy_rounds,
            "max_queue": int(result.terminal_queues.max()),
            "max_duty": float(result.duty_cycles.max()),
            "pearson": pearson(predicted, result.duty_cycles),
            "rmse": rmse(predicted, result.duty_cycles),
            "ndt_seconds": ndt_seconds,
            "sim_seconds": result.wall_clock_s,
            "speedup": result.wall_clock_s / ndt_seconds if ndt_seconds > 0 else None,
            "opt_seconds": opt_seconds if policy != "baseline" else 0.0,
        })
    return rows


def _call_recording_failure(worker, job):
    try:
        return worker(job), None
    except Exception as exc:
        size, load, topo, real = job[1:]
        return [], f"{_instance_id(size, load, topo, real)}: {exc!r}"


def _map_instances(spec: ExperimentSpec, worker, jobs) -> list[dict]:
    """Run one worker per instance; failures are warned about and skipped so
    the rest of the sweep still completes."""
    rows: list[dict] = []
    failures: list[str] = []
    if spec.threads > 1:
        call = partial(_call_recording_failure, worker)
        with ProcessPoolExecutor(max_workers=spec.threads) as pool:
            outcomes = list(pool.map(call, jobs, chunksize=1))
    else:
        outcomes = [_call_recording_failure(worker, job) for job in jobs]
    for result, failure in outcomes:
        rows.extend(result)
        if failure is not None:
            failures.append(failure)
    for failure in failures:
        warnings.warn(f"instance failed, skipping: {failure}")
    if failures and not rows:
        raise RuntimeError(f"every instance failed; first error: {failures[0]}")
    return rows


def run_accuracy_sweep(spec: ExperimentSpec) -> list[dict]:
    jobs = [(spec, *cell) for cell in _instance_grid(spec)]
    return _map_instances(spec, _accuracy_one, jobs)


def run_policy_comparison(spec: ExperimentSpec) -> list[dict]:
    jobs = [(spec, *cell) for cell in _instance_grid(spec)]
    return _map_instances(spec, _policy_one, jobs)


NDT_TIMING_REPEATS = 5


def run_runtime_benchmark(spec: ExperimentSpec) -> list[dict]:
    """Mean twin/simulation runtime per (size, load) cell.

    One warm-up run per cell is discarded (absorbing one-time JIT
    compilation); the millisecond-scale twin is additionally timed as the
    median of several repetitions per instance so a lone scheduler hiccup
    cannot distort a cell mean.
    """
    rows = []
    for size in spec.sizes:
        for load in spec.loads:
            ndt_times, sim_times = [], []
            for topo in range(spec.topologies_per_size):
                for real in range(spec.realizations_per_topology):
                    inst = instance_for(spec, size, load, topo, real)
                    z = np.ones(inst.num_links)
                    seed = sim_seed_for(spec, size, load, topo, real)
                    if topo == 0 and real == 0:   # warm-up, discarded
                        predict_duty_cycles(
                            inst.conflicts, inst.long_term_rates, inst.routing, z,
                            spec.ndt, keep_trace=False,
                        )
                        run_simulation(inst, z, rounds=spec.policy_rounds,
                                       horizon=spec.horizon, seed=seed)
                    reps = []
                    for _ in range(NDT_TIMING_REPEATS):
                        t0 = time.perf_counter()
                        predict_duty_cycles(
                            inst.conflicts, inst.long_term_rates, inst.routing, z,
                            spec.ndt, keep_trace=False,
                        )
                        reps.append(time.perf_counter() - t0)
                    ndt_times.append(float(np.median(reps)))
                    result = run_simulation(inst, z, rounds=spec.policy_rounds,
                                            horizon=spec.horizon, seed=seed)
                    sim_times.append(result.wall_clock_s)
            ndt_mean = float(np.mean(ndt_times))
            sim_mean = float(np.mean(sim_times))
            rows.append({
                "size": size,
                "load": load,
                "instances": len(ndt_times),
                "ndt_seconds": ndt_mean,
                "sim_seconds": sim_mean,
                "speedup": sim_mean / ndt_mean,
            })
    return rows


def reproduce_cell(
    spec: ExperimentSpec,
    size: int,
    load: float,
    topo: int,
    real: int,
    rounds: int,
    out_dir: str,
) -> dict:
    """Regenerate one sweep cell's per-instance artifacts.

    Writes instance.json, sim.json (baseline run), model.json (duty cycles
    from the contention model under empirical inputs), and twin.json (the
    self-contained prediction with overload indices); any accuracy row for
    this cell is reproducible from these files.
    """
    from .netgen import instance_to_json
    from .ndt import overload_index

    inst = instance_for(spec, size, load, topo, real)
    seed = sim_seed_for(spec, size, load, topo, real)
    z = np.ones(inst.num_links)
    result = run_simulation(inst, z, rounds=rounds, horizon=spec.horizon, seed=seed)
    contention = empirical_contention(result)
    model = model_duty_cycles(inst.conflicts, z, contention, rounds, spec.ndt.grid_points)
    twin_duty, _ = predict_duty_cycles(
        inst.conflicts, inst.long_term_rates, inst.routing, z, spec.ndt, keep_trace=False
    )
    rho = overload_index(twin_duty, inst.routing, inst.long_term_rates)

    instance_id = _instance_id(size, load, topo, real)
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    def _dump(name: str, doc: dict) -> None:
        path = os.path.join(out_dir, f"{name}.json")
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
        paths[name] = path

    with open(os.path.join(out_dir, "instance.json"), "w") as fh:
        fh.write(instance_to_json(inst))
    paths["instance"] = os.path.join(out_dir, "instance.json")
    _dump("sim", result.to_json_dict() | {"instance": instance_id})
    _dump("model", {
        "schema_version": 1,
        "instance": instance_id,
        "rounds": rounds,
        "input_config": "joint",
        "duty_cycles": model.duty_cycles.tolist(),
    })
    _dump("twin", {
        "schema_version": 1,
        "instance": instance_id,
        "duty_cycles": twin_duty.tolist(),
        "overload_index": rho.tolist(),
    })
    return paths


def policy_summary(rows: list[dict]) -> list[dict]:
    """Per (size, load, policy): median and 25/75 percentiles of the worst
    queue and max duty cycle, plus percent change of medians vs Baseline."""
    cells: dict = {}
    for row in rows:
        if "policy" not in row:
            continue
        cells.setdefault((row["size"], row["load"], row["policy"]), []).append(row)
    out = []
    for (size, load, policy), group in sorted(cells.items(), key=lambda kv: str(kv[0])):
        queues = np.array([r["max_queue"] for r in group], dtype=np.float64)
        duties = np.array([r["max_duty"] for r in group], dtype=np.float64)
        base = cells.get((size, load, "baseline"))
        entry = {
            "size": size, "load": load, "policy": policy, "instances": len(group),
            "median_max_queue": float(np.median(queues)),
            "p25_max_queue": float(np.percentile(queues, 25)),
            "p75_max_queue": float(np.percentile(queues, 75)),
            "median_max_duty": float(np.median(duties)),
            "p25_max_duty": float(np.percentile(duties, 25)),
            "p75_max_duty": float(np.percentile(duties, 75)),
        }
        if base:
            base_q = float(np.median([r["max_queue"] for r in base]))
            base_d = float(np.median([r["max_duty"] for r in base]))
            entry["queue_change_pct"] = (
                100.0 * (entry["median_max_queue"] - base_q) / base_q if base_q else 0.0
            )
            entry["duty_change_pct"] = (
                100.0 * (entry["median_max_duty"] - base_d) / base_d if base_d else 0.0
            )
        out.append(entry)
    return out


# ---------------------------------------------------------------------------
# Export


_TABLE_COLUMNS = {
    "accuracy": ACCURACY_COLUMNS,
    "policies": POLICY_COLUMNS,
    "runtime": RUNTIME_COLUMNS,
}


def config_hash(spec: ExperimentSpec) -> str:
    canonical = json.dumps(spec.to_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def export_results(tables: dict[str, list[dict]], out_dir: str, spec: ExperimentSpec) -> dict:
    """Write one CSV per table plus a manifest; returns {table: path}."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name, rows in tables.items():
        columns = _TABLE_COLUMNS.get(name)
        if columns is None:
            columns = sorted({k for row in rows for k in row})
        path = os.path.join(out_dir, f"{name}.csv")
        try:
            with open(path, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
                writer.writeheader()
                for row in rows:
                    writer.writerow({k: _format_cell(row.get(k)) for k in columns})
        except OSError as exc:
            raise OSError(f"failed writing {path}: {exc}") from exc
        paths[name] = path
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash(spec),
        "spec": spec.to_dict(),
        "tables": {name: os.path.basename(p) for name, p in paths.items()},
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    paths["manifest"] = manifest_path
    return paths


def _format_cell(value):
    if value is None:
        return ""          # flagged null (e.g. undefined Pearson), never NaN
    return value


def read_csv(path: str) -> list[dict]:
    """Round-trip reader: numbers come back as floats/ints, '' as None."""
    with open(path, newline="") as fh:
        rows = []
        for raw in csv.DictReader(fh):
            row = {}
            for key, val in raw.items():
                if val == "" or val is None:
                    row[key] = None
                else:
                    try:
                        num = float(val)
                        row[key] = int(num) if num.is_integer() and "." not in val else num
                    except ValueError:
                        row[key] = val
            rows.append(row)
        return rows
