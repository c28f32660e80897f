"""Analytical digital twin: fixed-point iteration over duty cycles.

Duty cycle, effective capacity, and contention probability depend on each
other circularly: capacity is rate times duty cycle, contention probability
is the capped utilization of that capacity, and the contention model maps
contention probabilities back to duty cycles.  The twin starts from the
all-contending estimate x_e = z_e / (z_e + sum of neighbor z_i) and damps
each update with an exponential moving average.  The loop self-regulates:
a smaller previous duty cycle inflates the link's utilization estimate,
which raises its contention probability and pushes the duty cycle back up.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analytic import DEFAULT_GRID_POINTS, _run_rounds, priority_ratios
from .netgen import ConflictGraph, RoutingMatrix

DUTY_FLOOR = 1e-6


@dataclass
class NdtConfig:
    iterations: int = 5          # outer fixed-point iterations (K)
    ema_weight: float = 0.5      # EMA weight alpha in (0, 1]
    rounds: int = 1              # contention rounds per slot (M)
    grid_points: int = DEFAULT_GRID_POINTS
    duty_floor: float = DUTY_FLOOR

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not 0.0 < self.ema_weight <= 1.0:
            raise ValueError(f"ema_weight must lie in (0, 1], got {self.ema_weight}")
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if self.duty_floor < 0:
            raise ValueError(f"duty_floor must be >= 0, got {self.duty_floor}")


@dataclass
class NdtTrace:
    """Per-iteration history of the fixed point."""

    duty_cycles: list[np.ndarray] = field(default_factory=list)   # x^(k), k = 0..K
    capacities: list[np.ndarray] = field(default_factory=list)    # mu per iteration
    contention: list[np.ndarray] = field(default_factory=list)    # b per iteration


def initial_duty_cycles(conflicts: ConflictGraph, z: np.ndarray) -> np.ndarray:
    """All-contending estimate: z_e / (z_e + sum of conflicting neighbors' z)."""
    z = np.asarray(z, dtype=np.float64)
    indptr, indices = conflicts.csr
    neighbor_sums = np.zeros(conflicts.num_links)
    if len(indices):
        nonzero = np.diff(indptr) > 0
        neighbor_sums[nonzero] = np.add.reduceat(z[indices], indptr[:-1][nonzero])
    return z / (z + neighbor_sums)


def predict_duty_cycles(
    conflicts: ConflictGraph,
    rates: np.ndarray,
    routing: RoutingMatrix,
    z: np.ndarray,
    cfg: NdtConfig | None = None,
    keep_trace: bool = True,
) -> tuple[np.ndarray, NdtTrace]:
    """Iterate capacity -> contention probability -> duty-cycle model K times.

    Per iteration: mu = r * max(x, floor); b = min(lambda/mu, 1) on loaded
    links and exactly 0 on idle ones; joints are the product of marginals;
    the new x is the EMA of the model output, clipped to [floor, 1].
    """
    cfg = cfg or NdtConfig()
    z = np.asarray(z, dtype=np.float64)
    rates = np.asarray(rates, dtype=np.float64)
    lam = routing.link_totals
    if ((lam > 0) & (rates <= 0)).any():
        bad = int(np.argmax((lam > 0) & (rates <= 0)))
        raise ValueError(f"link {bad} carries traffic but has rate {rates[bad]}")

    indptr, indices = conflicts.csr
    ratio = priority_ratios(conflicts, z)
    x = initial_duty_cycles(conflicts, z)
    trace = NdtTrace()
    if keep_trace:
        trace.duty_cycles.append(x.copy())
    loaded = lam > 0
    for _ in range(cfg.iterations):
        mu = rates * np.maximum(x, cfg.duty_floor)
        b = np.where(loaded, np.minimum(np.divide(lam, mu, out=np.ones_like(mu), where=mu > 0), 1.0), 0.0)
        # Joint = product of marginals, so round-1 conditionals reduce to b_i.
        model = _run_rounds(
            indptr, indices, ratio, b, b[indices], cfg.rounds, cfg.grid_points
        )
        x = np.clip((1.0 - cfg.ema_weight) * x + cfg.ema_weight * model.duty_cycles,
                    cfg.duty_floor, 1.0)
        if keep_trace:
            trace.duty_cycles.append(x.copy())
            trace.capacities.append(mu)
            trace.contention.append(b)
    return x, trace


def overload_index(
    duty_cycles: np.ndarray, routing: RoutingMatrix, rates: np.ndarray
) -> np.ndarray:
    """Assigned rate over predicted effective capacity; 0 on idle links."""
    lam = routing.link_totals
    capacity = np.asarray(duty_cycles, dtype=np.float64) * np.asarray(rates, dtype=np.float64)
    return np.divide(lam, capacity, out=np.zeros_like(lam), where=lam > 0)
