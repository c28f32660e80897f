"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The accuracy sweep (sizes 20/50, loads {1,3,5,7}, 10 instances per cell,
T=1000, both single- and triple-round contention) runs once per session and
feeds criteria 1, 2, 5, and 9; the policy comparison (50 nodes, 10
topologies x 3 realizations, loads {1..4}) feeds criterion 7.  Exported
CSVs land in results/acceptance/ for the figure package.
"""
from __future__ import annotations

import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest

import lubytwin as lt
from lubytwin import harness
from lubytwin.analytic import ContentionMatrix, model_duty_cycles, win_probability
from lubytwin.harness import ExperimentSpec, pearson, rmse
from lubytwin.ndt import NdtConfig, predict_duty_cycles
from lubytwin.netgen import ConflictGraph
from lubytwin.optimizer import OptimizerConfig
from lubytwin.simulator import SimState, SimStreams, run_simulation, step

MASTER_SEED = 0
RESULTS_DIR = Path(__file__).resolve().parent.parent / "results" / "acceptance"
REPORT_PATH = RESULTS_DIR / "report.txt"

ACCURACY_SPEC = ExperimentSpec(
    sizes=[20, 50],
    loads=[1.0, 3.0, 5.0, 7.0],
    topologies_per_size=10,
    realizations_per_topology=1,
    horizon=1000,
    model_rounds=[1, 3],
    master_seed=MASTER_SEED,
)

POLICY_SPEC = ExperimentSpec(
    sizes=[50],
    loads=[1.0, 2.0, 3.0, 4.0],
    topologies_per_size=10,
    realizations_per_topology=3,
    horizon=1000,
    policy_rounds=1,
    ndt=NdtConfig(),
    optimizer=OptimizerConfig(steps=20),
    master_seed=MASTER_SEED,
)

BENCH_SPEC = ExperimentSpec(
    sizes=[100],
    loads=[1.0, 7.0],
    topologies_per_size=4,
    realizations_per_topology=1,
    horizon=1000,
    policy_rounds=1,
    master_seed=MASTER_SEED,
)


def verdict(criterion: str, passed: bool, detail: str) -> None:
    line = f"[{criterion}] {'PASS' if passed else 'FAIL'}: {detail}"
    print(line)
    RESULTS_DIR.mkdir(parents=True, exist_ok=True)
    with open(REPORT_PATH, "a") as fh:
        fh.write(line + "\n")
    assert passed, line


# ---------------------------------------------------------------------------
# Shared sweeps


def collect_accuracy_data(spec: ExperimentSpec, out_dir: Path | None) -> dict:
    """Per-instance simulations at every M in spec.model_rounds with retained
    contention matrices, plus accuracy rows (exported when out_dir given)."""
    records = []
    rows = []
    for size, load, topo, real in itertools.product(
        spec.sizes, spec.loads, range(spec.topologies_per_size),
        range(spec.realizations_per_topology),
    ):
        inst = harness.instance_for(spec, size, load, topo, real)
        seed = harness.sim_seed_for(spec, size, load, topo, real)
        z = np.ones(inst.num_links)
        per_rounds = {}
        for rounds in spec.model_rounds:
            result = run_simulation(inst, z, rounds=rounds, horizon=spec.horizon, seed=seed)
            contention = lt.empirical_contention(result)
            per_rounds[rounds] = (result, contention)
            for name, cm in (
                ("joint", contention),
                ("marginal", ContentionMatrix.from_marginals(result.marginal_b, inst.conflicts)),
            ):
                t0 = time.perf_counter()
                out = model_duty_cycles(inst.conflicts, z, cm, rounds, spec.ndt.grid_points)
                rows.append({
                    "instance": f"n{size}-b{load:g}-t{topo}-r{real}",
                    "size": size, "load": load, "rounds": rounds, "input_config": name,
                    "pearson": pearson(out.duty_cycles, result.duty_cycles),
                    "rmse": rmse(out.duty_cycles, result.duty_cycles),
                    "max_duty": float(result.duty_cycles.max()),
                    "max_queue": int(result.terminal_queues.max()),
                    "sim_seconds": result.wall_clock_s,
                    "model_seconds": time.perf_counter() - t0,
                })
        records.append({"instance": inst, "size": size, "load": load, "runs": per_rounds})
    if out_dir is not None:
        harness.export_results({"accuracy": rows}, str(out_dir), spec)
    return {"records": records, "rows": rows}


@pytest.fixture(scope="session")
def accuracy_data():
    data = collect_accuracy_data(ACCURACY_SPEC, RESULTS_DIR)
    # Per-link artifacts of one sweep cell (50 nodes, load 5) for the figures.
    harness.reproduce_cell(
        ACCURACY_SPEC, 50, 5.0, 0, 0, rounds=1, out_dir=str(RESULTS_DIR / "perlink")
    )
    return data


@pytest.fixture(scope="session")
def policy_rows():
    rows = harness.run_policy_comparison(POLICY_SPEC)
    harness.export_results({"policies": rows}, str(RESULTS_DIR), POLICY_SPEC)
    return rows


@pytest.fixture(scope="session")
def runtime_rows():
    rows = harness.run_runtime_benchmark(BENCH_SPEC)
    harness.export_results({"runtime": rows}, str(RESULTS_DIR), BENCH_SPEC)
    return rows


def _mean_over(rows, rounds, config, key, load=None):
    vals = [
        r[key] for r in rows
        if r["rounds"] == rounds and r["input_config"] == config
        and (load is None or r["load"] == load)
    ]
    return float(np.mean(vals))


# ---------------------------------------------------------------------------


def test_criterion_01_single_round_accuracy(accuracy_data):
    rows = accuracy_data["rows"]
    mean_p = _mean_over(rows, 1, "joint", "pearson")
    mean_r = _mean_over(rows, 1, "joint", "rmse")
    verdict(
        "C1 single-round accuracy",
        mean_p >= 0.98 and mean_r <= 0.04,
        f"mean Pearson {mean_p:.4f} (>=0.98), mean RMSE {mean_r:.4f} (<=0.04) "
        f"over {len([r for r in rows if r['rounds'] == 1 and r['input_config'] == 'joint'])} instances",
    )


def test_criterion_02_multi_round_degradation(accuracy_data):
    rows = accuracy_data["rows"]
    per_load_gap = {
        load: (_mean_over(rows, 3, "joint", "rmse", load),
               _mean_over(rows, 1, "joint", "rmse", load))
        for load in ACCURACY_SPEC.loads
    }
    worse_everywhere = all(m3 > m1 for m3, m1 in per_load_gap.values())
    low, high = per_load_gap[1.0][0], per_load_gap[7.0][0]
    verdict(
        "C2 multi-round degradation trend",
        worse_everywhere and high > low,
        "M=3 vs M=1 RMSE per load "
        + ", ".join(f"b={l:g}: {m3:.4f}>{m1:.4f}" for l, (m3, m1) in per_load_gap.items())
        + f"; M=3 RMSE rises with load ({low:.4f} -> {high:.4f})",
    )


def _atlas_conflict_graphs():
    from networkx.generators.atlas import graph_atlas_g

    graphs = []
    for g in graph_atlas_g()[1:]:
        n = g.number_of_nodes()
        if n == 0 or n > 5:
            continue
        adjacency = tuple(
            np.array(sorted(g.neighbors(v)), dtype=np.int64) for v in range(n)
        )
        graphs.append(ConflictGraph(num_links=n, adjacency=adjacency))
    return graphs


def _contest_frequencies(graph, z, sampler, trials, rng):
    """Monte-Carlo execution of the one-round weighted contest."""
    n = graph.num_links
    wins = np.zeros(n, dtype=np.int64)
    chunk = 100_000
    done = 0
    while done < trials:
        take = min(chunk, trials - done)
        mask = sampler(rng, take)
        draws = (1.0 - rng.random((take, n))) * z
        masked = np.where(mask, draws, 0.0)
        for e in range(n):
            nbrs = graph.adjacency[e]
            best = masked[:, nbrs].max(axis=1) if len(nbrs) else np.zeros(take)
            wins[e] += int((mask[:, e] & (masked[:, e] > best)).sum())
        done += take
    return wins / trials


def test_criterion_03_oracle_equivalence_small_graphs():
    graphs = _atlas_conflict_graphs()
    assert len(graphs) == 52
    trials = 1_000_000
    grid = 4096
    worst = 0.0
    master = np.random.default_rng(2024)
    for gi, graph in enumerate(graphs):
        n = graph.num_links
        rng = np.random.default_rng(master.integers(2**63))
        z = rng.integers(1, 9, n) / rng.integers(1, 5, n)     # random rationals
        marginal = rng.integers(0, 17, n) / 16.0
        freq = _contest_frequencies(
            graph, z, lambda r, k: r.random((k, n)) < marginal, trials, rng
        )
        contention = ContentionMatrix.from_marginals(marginal, graph)
        out = model_duty_cycles(graph, z, contention, 1, grid)
        se = np.sqrt(np.maximum(freq * (1 - freq), 0.0) / trials)
        gap = np.abs(out.duty_cycles - freq)
        tol = np.maximum(0.005, 3 * se)
        worst = max(worst, float((gap / tol).max()))
        assert (gap <= tol).all(), f"atlas graph {gi}: gap {gap.max():.4f} > tol"

        degrees = np.array([len(a) for a in graph.adjacency])
        if degrees.max(initial=0) <= 1 and len(graph.edges):
            # Degree <= 1: pairwise joints pin the whole mask law, so exact
            # non-product joints must be honored too.
            joint = np.array([
                rng.uniform(max(0.0, marginal[i] + marginal[j] - 1.0),
                            min(marginal[i], marginal[j]))
                for i, j in graph.edges
            ])
            cm = ContentionMatrix(marginal=marginal.copy(), joint=joint, edges=graph.edges)
            freq2 = _contest_frequencies(
                graph, z, lambda r, k: _paired_masks(r, k, n, graph.edges, marginal, joint),
                trials, rng,
            )
            out2 = model_duty_cycles(graph, z, cm, 1, grid)
            gap2 = np.abs(out2.duty_cycles - freq2)
            se2 = np.sqrt(np.maximum(freq2 * (1 - freq2), 0.0) / trials)
            assert (gap2 <= np.maximum(0.005, 3 * se2)).all(), f"paired masks, graph {gi}"
    verdict(
        "C3 oracle equivalence on <=5-link graphs",
        True,
        f"52 conflict graphs x {trials} trials, worst gap/tolerance = {worst:.2f}",
    )


def _paired_masks(rng, k, n, edges, marginal, joint):
    # Max conflict degree 1: each link sits in at most one pair, so pairs can
    # be sampled from their exact 2x2 joint tables independently.
    mask = rng.random((k, n)) < marginal
    for (i, j), p11 in zip(edges, joint):
        u = rng.random(k)
        p10 = marginal[i] - p11
        p01 = marginal[j] - p11
        both = u < p11
        only_i = (u >= p11) & (u < p11 + p10)
        only_j = (u >= p11 + p10) & (u < p11 + p10 + p01)
        mask[:, i] = both | only_i
        mask[:, j] = both | only_j
    return mask


def test_criterion_04_round_one_closed_forms():
    details = []
    ok = True
    for z_e, z_i in ((1.0, 1.0), (2.0, 1.0), (5.0, 3.0), (1.5, 0.25)):
        exact = 1.0 - z_i / (2.0 * z_e)
        for grid in (16, 64, 256):
            got = win_probability(0, np.array([z_e, z_i]), {1: 1.0}, grid)
            ok &= abs(got - exact) <= 2.0 / grid
    details.append("two-link contests at L in {16,64,256}")
    for n in range(2, 7):
        clique = ConflictGraph(
            num_links=n,
            adjacency=tuple(
                np.array([j for j in range(n) if j != i], dtype=np.int64) for i in range(n)
            ),
        )
        for grid in (16, 64, 256):
            out = model_duty_cycles(
                clique, np.ones(n), ContentionMatrix.from_marginals(np.ones(n), clique),
                1, grid,
            )
            ok &= np.abs(out.duty_cycles - 1.0 / n).max() <= 2.0 / grid
    details.append("cliques n=2..6 vs 1/n")
    verdict("C4 round-1 closed forms", ok, "; ".join(details) + ", all within 2/L")


def test_criterion_05_ndt_convergence(accuracy_data):
    cfg = NdtConfig(iterations=5, ema_weight=0.5, rounds=1)
    converged = 0
    records = accuracy_data["records"]
    for rec in records:
        inst = rec["instance"]
        _, trace = predict_duty_cycles(
            inst.conflicts, inst.long_term_rates, inst.routing,
            np.ones(inst.num_links), cfg,
        )
        gap = np.abs(trace.duty_cycles[5] - trace.duty_cycles[4]).max()
        converged += gap <= 0.05
    share = converged / len(records)
    verdict(
        "C5 NDT convergence (K=5, alpha=0.5)",
        share >= 0.9,
        f"|x^(5)-x^(4)|_inf <= 0.05 on {converged}/{len(records)} instances ({share:.0%})",
    )


def test_criterion_06_runtime_speedup(runtime_rows):
    by_load = {row["load"]: row for row in runtime_rows}
    speedups = {load: row["speedup"] for load, row in by_load.items()}
    ndt_times = [by_load[1.0]["ndt_seconds"], by_load[7.0]["ndt_seconds"]]
    ndt_spread = abs(ndt_times[0] - ndt_times[1]) / min(ndt_times)
    verdict(
        "C6 runtime speedup at 100 nodes",
        all(s >= 100.0 for s in speedups.values()) and ndt_spread <= 0.25,
        f"speedup b=1: {speedups[1.0]:.0f}x, b=7: {speedups[7.0]:.0f}x (>=100x); "
        f"NDT time spread across loads {ndt_spread:.1%} (<=25%)",
    )


def test_criterion_07_optimization_benefit(policy_rows):
    summary = {(s["load"], s["policy"]): s for s in harness.policy_summary(policy_rows)}
    base_q = summary[(1.0, "baseline")]["median_max_queue"]
    gated_q = summary[(1.0, "priority_gating")]["median_max_queue"]
    queue_ratio = base_q / max(gated_q, 1e-12)
    duty_reductions = [
        1.0 - summary[(load, "priority_gating")]["median_max_duty"]
        / summary[(load, "baseline")]["median_max_duty"]
        for load in POLICY_SPEC.loads
    ]
    mean_duty_reduction = float(np.mean(duty_reductions))
    verdict(
        "C7 optimization benefit",
        queue_ratio >= 3.0 and mean_duty_reduction >= 0.15,
        f"worst-queue medians at b=1: {base_q:.0f} -> {gated_q:.0f} "
        f"(ratio {queue_ratio:.2f}, >=3 required); max-duty reduction "
        f"{mean_duty_reduction:.1%} averaged over b=1..4 (>=15% required)",
    )


def test_criterion_08_invariant_suite():
    horizon = 150
    sizes = [10, 15, 20]
    loads = [1.0, 3.0, 5.0, 7.0]
    checked = 0
    model_rng = np.random.default_rng(7)
    for i in range(100):
        size = sizes[i % len(sizes)]
        load = loads[i % len(loads)]
        inst = lt.make_instance(size, load, topology_seed=3000 + i, realization_seed=i)
        assert lt.validate_instance(inst) == []          # includes flow conservation
        z = np.ones(inst.num_links)

        def run_once():
            state = SimState.initial(inst, None)
            streams = SimStreams.from_seed(40_000 + i)
            duty = np.zeros(inst.num_links, dtype=np.int64)
            contended = np.zeros(inst.num_links, dtype=np.int64)
            joint = np.zeros(len(inst.conflicts.edges), dtype=np.int64)
            edges = inst.conflicts.edges
            for _ in range(horizon):
                state, contending, schedule, _ = step(state, inst, z, 2, None, streams)
                for e in np.flatnonzero(schedule):       # independent set, every slot
                    assert schedule[inst.conflicts.adjacency[e]].max(initial=0) == 0
                assert state.arrived == state.absorbed + int(state.totals.sum())
                duty += schedule
                contended += contending
                if len(edges):
                    joint += contending[edges[:, 0]] & contending[edges[:, 1]]
            return duty, contended, joint, state.totals.copy()

        duty_a, cont_a, joint_a, totals_a = run_once()
        duty_b, cont_b, joint_b, totals_b = run_once()
        assert np.array_equal(duty_a, duty_b) and np.array_equal(totals_a, totals_b)
        assert np.array_equal(cont_a, cont_b) and np.array_equal(joint_a, joint_b)

        marginal = cont_a / horizon
        joint_p = joint_a / horizon if len(inst.conflicts.edges) else np.zeros(0)
        contention = ContentionMatrix(marginal=marginal, joint=joint_p, edges=inst.conflicts.edges)
        contention.validate()                            # bounds incl. joint <= min marginal

        z_rand = model_rng.uniform(0.3, 3.0, inst.num_links)
        base = model_duty_cycles(inst.conflicts, z_rand, contention, 2).duty_cycles
        scaled = model_duty_cycles(inst.conflicts, 7.7 * z_rand, contention, 2).duty_cycles
        assert np.abs(base - scaled).max() <= 1e-10      # scale invariance
        checked += 1
    verdict(
        "C8 invariant suite",
        checked == 100,
        f"independent sets, packet/flow conservation, contention bounds, "
        f"scale invariance (<=1e-10), determinism on {checked}/100 instances",
    )


def test_criterion_09_discretization_convergence(accuracy_data):
    worst = 0.0
    for rec in accuracy_data["records"]:
        inst = rec["instance"]
        z = np.ones(inst.num_links)
        _, contention = rec["runs"][1]
        coarse = model_duty_cycles(inst.conflicts, z, contention, 1, 64).duty_cycles
        fine = model_duty_cycles(inst.conflicts, z, contention, 1, 128).duty_cycles
        worst = max(worst, float(np.abs(coarse - fine).max()))
    verdict(
        "C9 discretization convergence",
        worst < 0.01,
        f"max |x_hat(L=64) - x_hat(L=128)| = {worst:.5f} (< 0.01) "
        f"over {len(accuracy_data['records'])} instances",
    )
