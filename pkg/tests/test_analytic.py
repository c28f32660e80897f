import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import lubytwin as lt
from lubytwin import analytic
from lubytwin.analytic import (
    ContentionMatrix,
    conditional_cdf,
    model_duty_cycles,
    survival_update,
    win_probability,
)
from lubytwin.netgen import ConflictGraph


def conflict_graph(*adjacency) -> ConflictGraph:
    return ConflictGraph(
        num_links=len(adjacency),
        adjacency=tuple(np.array(sorted(a), dtype=np.int64) for a in adjacency),
    )


ISOLATED = conflict_graph([])
PAIR = conflict_graph([1], [0])
TRIANGLE = conflict_graph([1, 2], [0, 2], [0, 1])
CHAIN4 = conflict_graph([1], [0, 2], [1, 3], [2])


def all_ones_contention(graph: ConflictGraph) -> ContentionMatrix:
    return ContentionMatrix.from_marginals(np.ones(graph.num_links), graph)


def ordering_win_probs(graph: ConflictGraph) -> np.ndarray:
    """Exact one-round win probabilities for equal priorities and everyone
    contending: count the draw orderings in which a link beats its neighbors
    (draws are exchangeable, so all orderings are equally likely)."""
    n = graph.num_links
    wins = np.zeros(n)
    for perm in itertools.permutations(range(n)):
        rank = {link: pos for pos, link in enumerate(perm)}
        for e in range(n):
            if all(rank[e] > rank[int(i)] for i in graph.adjacency[e]):
                wins[e] += 1
    return wins / math.factorial(n)


class TestConditionalCdf:
    def test_zero_at_origin_when_always_contending(self):
        assert conditional_cdf(0.0, 1.0, 1.0) == 0.0

    def test_midpoint_value(self):
        assert conditional_cdf(0.5, 1.0, 0.5) == pytest.approx(0.75)

    def test_branches(self):
        assert conditional_cdf(-0.1, 1.0, 0.7) == 0.0
        assert conditional_cdf(2.0, 1.0, 0.7) == 1.0
        assert conditional_cdf(1.0, 1.0, 0.7) == pytest.approx(1.0)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            conditional_cdf(0.5, 0.0, 0.5)
        with pytest.raises(ValueError):
            conditional_cdf(0.5, 1.0, 1.5)


class TestWinProbability:
    def test_no_neighbors_gives_one(self):
        assert win_probability(0, np.array([2.0]), {}, 64) == 1.0

    def test_symmetric_pair_left_riemann_value(self):
        # Integrand x on [0,1] sampled at l/64: sum is 63*64/2 / 64^2 = 63/128.
        p = win_probability(0, np.array([1.0, 1.0]), {1: 1.0}, 64)
        assert p == pytest.approx(63 / 128, abs=1e-13)

    def test_dominant_priority_closed_form(self):
        # z_e=2, z_i=1: exact integral is 1 - z_i/(2 z_e) = 0.75.
        for grid in (16, 64, 256, 4096):
            p = win_probability(0, np.array([2.0, 1.0]), {1: 1.0}, grid)
            assert abs(p - 0.75) <= 2.0 / grid

    def test_grid_convergence_rate(self):
        z = np.array([1.7, 1.0, 0.6])
        cond = {1: 0.8, 2: 0.5}
        exact = win_probability(0, z, cond, 1 << 16)
        for grid in (16, 64, 256):
            assert abs(win_probability(0, z, cond, grid) - exact) <= 2.0 / grid


@settings(max_examples=100, deadline=None)
@given(
    x=st.floats(-0.5, 3.0),
    step=st.floats(0.0, 1.0),
    priority=st.floats(0.05, 4.0),
    b_cond=st.floats(0.0, 1.0),
)
def test_cdf_is_a_monotone_cdf(x, step, priority, b_cond):
    lo = conditional_cdf(x, priority, b_cond)
    hi = conditional_cdf(x + step, priority, b_cond)
    assert 0.0 <= lo <= 1.0
    assert lo <= hi + 1e-15


@settings(max_examples=50, deadline=None)
@given(
    z_e=st.floats(0.1, 4.0),
    z_i=st.floats(0.1, 4.0),
    b_cond=st.floats(0.0, 1.0),
    grid=st.sampled_from([1, 7, 64]),
)
def test_win_probability_is_a_probability(z_e, z_i, b_cond, grid):
    p = win_probability(0, np.array([z_e, z_i]), {1: b_cond}, grid)
    assert 0.0 <= p <= 1.0 + 1e-12
    unopposed = win_probability(0, np.array([z_e, z_i]), {1: 0.0}, grid)
    assert unopposed == 1.0
    assert p <= unopposed


class TestSurvivalUpdate:
    def test_winner_never_recontends(self):
        assert survival_update(1.0, 1.0, [(0.5, 0.2)]) == 0.0

    def test_no_neighbors_no_win_keeps_mass(self):
        assert survival_update(0.7, 0.0, []) == 0.7

    def test_triangle_value_overestimates_truth(self):
        # Tree approximation: (1)(2/3)(2/3)^2 = 8/27; the exact value is 0
        # (in a triangle someone always wins round 1, nobody survives).
        got = survival_update(1.0, 1 / 3, [(1.0, 1 / 3), (1.0, 1 / 3)])
        assert got == pytest.approx(8 / 27, abs=1e-12)
        assert got > 0.0

    def test_stays_within_participation_mass(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            b = rng.uniform()
            p = rng.uniform()
            terms = [(rng.uniform(), rng.uniform()) for _ in range(rng.integers(0, 4))]
            out = survival_update(b, p, terms)
            assert 0.0 <= out <= b


class TestModelDutyCycles:
    def test_isolated_always_contending(self):
        out = model_duty_cycles(ISOLATED, np.ones(1), all_ones_contention(ISOLATED), 1)
        assert out.duty_cycles[0] == 1.0

    def test_silent_neighbor_never_blocks_never_wins(self):
        contention = ContentionMatrix.from_marginals(np.array([1.0, 0.0]), PAIR)
        out = model_duty_cycles(PAIR, np.ones(2), contention, 1)
        assert out.duty_cycles.tolist() == [1.0, 0.0]

    def test_triangle_exact_discretization(self):
        out = model_duty_cycles(TRIANGLE, np.ones(3), all_ones_contention(TRIANGLE), 1, 64)
        want = sum((l / 64) ** 2 for l in range(64)) / 64   # = 85344 / 262144
        assert out.duty_cycles == pytest.approx([want] * 3, abs=1e-15)
        assert abs(want - 1 / 3) <= 2 / 64

    def test_chain_matches_ordering_oracle(self):
        oracle = ordering_win_probs(CHAIN4)
        assert oracle.tolist() == [1 / 2, 1 / 3, 1 / 3, 1 / 2]
        out = model_duty_cycles(CHAIN4, np.ones(4), all_ones_contention(CHAIN4), 1, 4096)
        assert np.abs(out.duty_cycles - oracle).max() <= 0.005

    def test_round_participation_never_increases(self):
        rng = np.random.default_rng(3)
        marginal = rng.uniform(size=4)
        contention = ContentionMatrix.from_marginals(marginal, CHAIN4)
        out = model_duty_cycles(CHAIN4, rng.uniform(0.5, 2.0, 4), contention, 4)
        for earlier, later in zip(out.round_contention, out.round_contention[1:]):
            assert (later <= earlier + 1e-15).all()
        for p in out.round_win_probs:
            assert (p >= 0).all() and (p <= 1 + 1e-12).all()

    def test_scale_invariance(self):
        rng = np.random.default_rng(5)
        z = rng.uniform(0.2, 3.0, 4)
        contention = ContentionMatrix.from_marginals(rng.uniform(size=4), CHAIN4)
        base = model_duty_cycles(CHAIN4, z, contention, 3).duty_cycles
        scaled = model_duty_cycles(CHAIN4, 17.3 * z, contention, 3).duty_cycles
        assert np.abs(base - scaled).max() <= 1e-10

    def test_monotone_in_own_priority(self):
        rng = np.random.default_rng(7)
        contention = ContentionMatrix.from_marginals(rng.uniform(0.3, 1.0, 4), CHAIN4)
        z = rng.uniform(0.5, 2.0, 4)
        base = model_duty_cycles(CHAIN4, z, contention, 1).duty_cycles
        for e in range(4):
            bumped = z.copy()
            bumped[e] *= 1.7
            out = model_duty_cycles(CHAIN4, bumped, contention, 1).duty_cycles
            assert out[e] >= base[e] - 1e-15

    def test_rejects_joint_above_marginal_cap(self):
        bad = ContentionMatrix(
            marginal=np.array([0.5, 0.4]),
            joint=np.array([0.45]),
            edges=PAIR.edges,
        )
        with pytest.raises(ValueError):
            model_duty_cycles(PAIR, np.ones(2), bad, 1)

    def test_rejects_nonpositive_priorities(self):
        with pytest.raises(ValueError):
            model_duty_cycles(PAIR, np.array([1.0, 0.0]), all_ones_contention(PAIR), 1)


class TestKernelParity:
    def test_jit_and_numpy_round_kernels_agree(self):
        if not analytic._HAVE_NUMBA:
            pytest.skip("numba unavailable")
        rng = np.random.default_rng(11)
        for seed in range(5):
            inst = lt.make_instance(15, 2.0, topology_seed=seed, realization_seed=seed)
            conflicts = inst.conflicts
            indptr, indices = conflicts.csr
            z = rng.uniform(0.3, 3.0, conflicts.num_links)
            ratio = analytic.priority_ratios(conflicts, z)
            b = np.where(rng.uniform(size=conflicts.num_links) < 0.3, 0.0,
                         rng.uniform(size=conflicts.num_links))
            bc = b[indices]
            part = b > 0
            jit = analytic._win_probs_jit(indptr, indices, ratio, bc, 64, part)
            ref = analytic._win_probs_numpy(indptr, indices, ratio, bc, 64, part)
            np.testing.assert_allclose(jit, ref, rtol=1e-12, atol=1e-15)
            p = jit
            s_jit = analytic._survival_jit(indptr, indices, b, p, bc)
            s_ref = analytic._survival_numpy(indptr, indices, b, p, bc)
            np.testing.assert_allclose(s_jit, s_ref, rtol=1e-12, atol=1e-15)

    def test_model_matches_scalar_reference(self):
        rng = np.random.default_rng(13)
        inst = lt.make_instance(12, 2.0, topology_seed=2, realization_seed=3)
        conflicts = inst.conflicts
        z = rng.uniform(0.3, 3.0, conflicts.num_links)
        marginal = rng.uniform(0.2, 1.0, conflicts.num_links)
        contention = ContentionMatrix.from_marginals(marginal, conflicts)
        out = model_duty_cycles(conflicts, z, contention, 1, 64)
        for e in range(conflicts.num_links):
            conds = {int(i): marginal[int(i)] for i in conflicts.adjacency[e]}
            ref = marginal[e] * win_probability(e, z, conds, 64)
            assert out.duty_cycles[e] == pytest.approx(ref, abs=1e-12)


class TestAgainstLubyMonteCarlo:
    def test_one_round_model_matches_contest_frequencies(self):
        # Independent Bernoulli masks make the round-1 product form exact;
        # 2e5 trials give a standard error below 0.0012 per link.
        rng = np.random.default_rng(17)
        for graph in (TRIANGLE, CHAIN4):
            n = graph.num_links
            z = rng.integers(1, 5, n).astype(float) / rng.integers(1, 4, n)
            marginal = rng.integers(0, 17, n) / 16.0
            trials = 200_000
            mask = rng.random((trials, n)) < marginal
            draws = (1.0 - rng.random((trials, n))) * z
            masked = np.where(mask, draws, 0.0)
            wins = np.zeros((trials, n), dtype=bool)
            for e in range(n):
                nbrs = graph.adjacency[e]
                best = masked[:, nbrs].max(axis=1) if len(nbrs) else 0.0
                wins[:, e] = mask[:, e] & (masked[:, e] > best)
            freq = wins.mean(axis=0)
            se = np.sqrt(np.maximum(freq * (1 - freq), 1e-12) / trials)
            contention = ContentionMatrix.from_marginals(marginal, graph)
            out = model_duty_cycles(graph, z, contention, 1, 4096)
            assert (np.abs(out.duty_cycles - freq) <= np.maximum(0.005, 4 * se)).all()
