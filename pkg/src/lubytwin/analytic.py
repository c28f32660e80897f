"""Closed-form duty-cycle model for weighted Luby contention.

A contending link wins a round when its uniform draw on [0, z_e] beats the
draws of all conflicting neighbors.  The win probability is the average of
the product of the neighbors' conditional draw CDFs over a left-endpoint
grid of ``grid_points`` samples of [0, z_e]; only the priority ratios
z_e/z_i enter, so the contest is invariant to uniform scaling of z.
Survival into later rounds uses a locally tree-like recursion and therefore
overestimates survival on short cycles; round 1 is exact whenever the
neighbors' contention indicators are conditionally independent.

Inputs are a contention matrix: marginal probabilities per link plus joint
probabilities per conflict edge.  Round 1 conditions neighbor participation
on the link's own participation (joint / marginal); later rounds assume
independence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .netgen import ConflictGraph

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency, kept optional for safety
    _HAVE_NUMBA = False

DEFAULT_GRID_POINTS = 64

_JOINT_TOL = 1e-9


@dataclass
class ContentionMatrix:
    """Marginal contention probabilities per link and joints per conflict edge."""

    marginal: np.ndarray   # (num_links,) in [0, 1]
    joint: np.ndarray      # (num_edges,) aligned with ``edges``
    edges: np.ndarray      # (num_edges, 2) link pairs, i < j

    @classmethod
    def from_marginals(cls, marginal: np.ndarray, conflicts: ConflictGraph) -> "ContentionMatrix":
        """Independence completion: joint(i, j) = marginal(i) * marginal(j)."""
        marginal = np.asarray(marginal, dtype=np.float64)
        edges = conflicts.edges
        joint = marginal[edges[:, 0]] * marginal[edges[:, 1]] if len(edges) else np.zeros(0)
        return cls(marginal=marginal, joint=joint, edges=edges)

    def validate(self) -> None:
        m, j = self.marginal, self.joint
        if ((m < 0) | (m > 1)).any():
            raise ValueError("marginal contention probabilities must lie in [0, 1]")
        if len(self.edges) != len(j):
            raise ValueError("joint vector length mismatches conflict edge count")
        if (j < -_JOINT_TOL).any():
            raise ValueError("joint contention probabilities must be nonnegative")
        cap = np.minimum(m[self.edges[:, 0]], m[self.edges[:, 1]]) if len(j) else j
        if (j > cap + _JOINT_TOL).any():
            bad = int(np.argmax(j - cap))
            i, e = self.edges[bad]
            raise ValueError(
                f"joint({i},{e})={j[bad]:g} exceeds min of marginals {cap[bad]:g}"
            )


@dataclass
class ModelOutput:
    """Predicted duty cycles plus per-round diagnostics.

    Links that sit a round out (participation 0) carry the placeholder win
    probability 1 for that round: their win probability is conditioned on an
    event that never happens and contributes nothing anywhere.
    """

    duty_cycles: np.ndarray            # x-hat per link
    round_contention: list[np.ndarray]   # participation probability per round
    round_win_probs: list[np.ndarray]    # conditional win probability per round


def conditional_cdf(x: float, priority: float, b_cond: float) -> float:
    """CDF of a neighbor's masked draw: mass (1 - b_cond) at 0, rest uniform on [0, priority]."""
    if priority <= 0:
        raise ValueError(f"priority must be positive, got {priority}")
    if not 0.0 <= b_cond <= 1.0:
        raise ValueError(f"b_cond must lie in [0, 1], got {b_cond}")
    if x < 0.0:
        return 0.0
    if x > priority:
        return 1.0
    return (1.0 - b_cond) + b_cond * x / priority


def win_probability(
    link: int,
    z: np.ndarray,
    neighbor_conditionals: dict[int, float],
    grid_points: int = DEFAULT_GRID_POINTS,
) -> float:
    """One-round win probability of ``link`` given each neighbor's conditional
    contention probability.

    Left-endpoint average of exp(sum of log CDFs) over ``grid_points`` samples
    of [0, z_link]; a zero CDF factor zeroes that sample exactly, so no
    non-finite intermediate appears.
    """
    if grid_points < 1:
        raise ValueError("grid_points must be >= 1")
    z = np.asarray(z, dtype=np.float64)
    z_e = float(z[link])
    total = 0.0
    for sample in range(grid_points):
        x = sample * z_e / grid_points
        log_sum = 0.0
        zeroed = False
        for nbr, b_cond in neighbor_conditionals.items():
            cdf = conditional_cdf(x, float(z[nbr]), b_cond)
            if cdf == 0.0:
                zeroed = True
                break
            log_sum += math.log(cdf)
        if not zeroed:
            total += math.exp(log_sum)
    return total / grid_points


def survival_update(
    b_e: float, p_win_e: float, neighbor_terms: list[tuple[float, float]]
) -> float:
    """Probability the link stays undecided into the next round.

    ``neighbor_terms`` holds (conditional contention, win probability) per
    conflicting neighbor; the product form treats the neighborhood as a tree.
    """
    prod = 1.0
    for b_cond, p_win_i in neighbor_terms:
        prod *= 1.0 - b_cond * p_win_i
    return b_e * (1.0 - p_win_e) * prod


# ---------------------------------------------------------------------------
# Vectorized round kernels.  The numba and numpy paths compute identical
# formulas; factors with b_cond = 0 equal exactly 1 and may be skipped.

if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _win_probs_jit(indptr, indices, ratio, b_cond, grid_points, participating):  # pragma: no cover - jitted
        num_links = indptr.shape[0] - 1
        out = np.ones(num_links)
        inv = 1.0 / grid_points
        for e in range(num_links):
            if not participating[e]:
                continue   # win probability never consumed; placeholder 1
            lo, hi = indptr[e], indptr[e + 1]
            active = False
            for p in range(lo, hi):
                if b_cond[p] > 0.0:
                    active = True
                    break
            if not active:
                continue
            acc = 0.0
            for sample in range(grid_points):
                u = sample * inv
                prod = 1.0
                for p in range(lo, hi):
                    c = b_cond[p]
                    if c == 0.0:
                        continue
                    xf = u * ratio[p]
                    if xf < 1.0:
                        prod *= 1.0 - c * (1.0 - xf)
                        if prod == 0.0:
                            break
                acc += prod
            out[e] = acc * inv
        return out

    @numba.njit(cache=True)
    def _survival_jit(indptr, indices, b, p_win, b_cond):  # pragma: no cover - jitted
        num_links = indptr.shape[0] - 1
        out = np.empty(num_links)
        for e in range(num_links):
            prod = 1.0
            for p in range(indptr[e], indptr[e + 1]):
                c = b_cond[p]
                if c != 0.0:
                    prod *= 1.0 - c * p_win[indices[p]]
            out[e] = b[e] * (1.0 - p_win[e]) * prod
        return out


def _win_probs_numpy(indptr, indices, ratio, b_cond, grid_points, participating):
    num_links = len(indptr) - 1
    out = np.ones(num_links)
    if len(indices) == 0:
        return out
    fractions = np.arange(grid_points) / grid_points
    xf = np.minimum(ratio[:, None] * fractions[None, :], 1.0)
    cdfs = 1.0 - b_cond[:, None] * (1.0 - xf)
    degrees = np.diff(indptr)
    nonzero = degrees > 0
    starts = indptr[:-1][nonzero]
    products = np.multiply.reduceat(cdfs, starts, axis=0)
    out[nonzero] = products.sum(axis=1) / grid_points
    out[~np.asarray(participating, dtype=bool)] = 1.0   # placeholder, matches jit path
    return out


def _survival_numpy(indptr, indices, b, p_win, b_cond):
    survivors = b * (1.0 - p_win)
    if len(indices) == 0:
        return survivors
    factors = 1.0 - b_cond * p_win[indices]
    degrees = np.diff(indptr)
    nonzero = degrees > 0
    starts = indptr[:-1][nonzero]
    out = survivors.copy()
    out[nonzero] = survivors[nonzero] * np.multiply.reduceat(factors, starts)
    return out


def _round_win_probs(indptr, indices, ratio, b_cond, grid_points, participating):
    if _HAVE_NUMBA:
        return _win_probs_jit(indptr, indices, ratio, b_cond, grid_points, participating)
    return _win_probs_numpy(indptr, indices, ratio, b_cond, grid_points, participating)


def _round_survival(indptr, indices, b, p_win, b_cond):
    if _HAVE_NUMBA:
        return _survival_jit(indptr, indices, b, p_win, b_cond)
    return _survival_numpy(indptr, indices, b, p_win, b_cond)


# ---------------------------------------------------------------------------


def _run_rounds(indptr, indices, ratio, b, b_cond, rounds, grid_points) -> ModelOutput:
    """Round loop shared by ``model_duty_cycles`` and the digital twin.

    Win probabilities are only evaluated for participating links (b > 0);
    everyone else keeps the placeholder 1 since its contribution b * P and
    its drag on neighbors (factors of exactly 1) both vanish.
    """
    duty = np.zeros(len(indptr) - 1)
    participating = b > 0
    round_contention: list[np.ndarray] = []
    round_win_probs: list[np.ndarray] = []
    for m in range(rounds):
        p_win = _round_win_probs(indptr, indices, ratio, b_cond, grid_points, participating)
        duty += b * p_win
        round_contention.append(b)
        round_win_probs.append(p_win)
        if m + 1 < rounds:
            b = _round_survival(indptr, indices, b, p_win, b_cond)
            participating = b > 0
            b_cond = b[indices] if len(indices) else b_cond
    return ModelOutput(
        duty_cycles=duty,
        round_contention=round_contention,
        round_win_probs=round_win_probs,
    )


def priority_ratios(conflicts: ConflictGraph, z: np.ndarray) -> np.ndarray:
    """z_e / z_i for every directed conflict pair (CSR order)."""
    indptr, indices = conflicts.csr
    if not len(indices):
        return np.zeros(0)
    owners = np.repeat(np.arange(conflicts.num_links), np.diff(indptr))
    return z[owners] / z[indices]


def model_duty_cycles(
    conflicts: ConflictGraph,
    z: np.ndarray,
    contention: ContentionMatrix,
    rounds: int,
    grid_points: int = DEFAULT_GRID_POINTS,
) -> ModelOutput:
    """Predict per-link duty cycles under up-to-``rounds`` contention rounds.

    Duty cycle accumulates (participation probability) * (win probability)
    over rounds.  Round 1 conditionals come from the joint entries of
    ``contention``; from round 2 on, participation of distinct links is
    treated as independent.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if grid_points < 1:
        raise ValueError("grid_points must be >= 1")
    z = np.asarray(z, dtype=np.float64)
    if (z <= 0).any():
        raise ValueError("priorities must be strictly positive")
    contention.validate()

    indptr, indices = conflicts.csr
    ratio = priority_ratios(conflicts, z)

    marginal = np.asarray(contention.marginal, dtype=np.float64)
    if len(indices):
        owners = np.repeat(np.arange(conflicts.num_links), np.diff(indptr))
        joint_per_pair = contention.joint[conflicts.pair_edge_ids]
        owner_marginal = marginal[owners]
        b_cond = np.divide(
            joint_per_pair,
            owner_marginal,
            out=np.zeros_like(joint_per_pair),
            where=owner_marginal > 0,
        )
        b_cond = np.clip(b_cond, 0.0, 1.0)
    else:
        b_cond = np.zeros(0)

    return _run_rounds(indptr, indices, ratio, marginal.copy(), b_cond, rounds, grid_points)
