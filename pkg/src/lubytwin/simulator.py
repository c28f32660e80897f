"""Packet-level, time-slotted ground-truth simulator.

Each slot runs: Poisson arrivals into the first queue of every flow path,
a contention mask (backlogged links, minus any gated ones), up to M rounds
of weighted Luby contention executed link-by-link with the algorithm's
message semantics, then departures at a per-slot realized rate drawn from
Normal(r_e, sigma) rounded and clamped at zero.  Packets carry their flow
id and follow the flow's fixed path through per-link FIFO queues.

Arrival and link-rate randomness come from streams independent of the
contention stream, so different scheduling policies simulated under one
seed share identical arrivals and rates (common random numbers).
"""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .analytic import ContentionMatrix
from .netgen import ConflictGraph, Instance

DEFAULT_ROUNDS = 3          # contention rounds per slot (M)
RATE_STD = 3.0              # std-dev of the per-slot realized rate
GATING_WINDOW = 100
GATING_FACTOR = 1.1


@dataclass
class GatingPolicy:
    """Withhold a link from contention while its recent duty cycle runs hot.

    A link skips contention at slot t when its empirical duty cycle over the
    last ``window`` slots exceeds ``factor`` times its target duty cycle.
    """

    target_duty: np.ndarray
    window: int = GATING_WINDOW
    factor: float = GATING_FACTOR

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.factor <= 0:
            raise ValueError(f"factor must be positive, got {self.factor}")
        self.target_duty = np.asarray(self.target_duty, dtype=np.float64)


@dataclass
class SimResult:
    """Empirical outcome of one simulation run."""

    duty_cycles: np.ndarray       # fraction of slots each link was scheduled
    terminal_queues: np.ndarray   # per-link packet counts at the final slot
    marginal_b: np.ndarray        # fraction of slots each link contended
    joint_b: np.ndarray           # per conflict edge, fraction of slots both contended
    edges: np.ndarray             # conflict edges aligned with joint_b
    wall_clock_s: float
    arrived_packets: int
    absorbed_packets: int
    config: dict

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "duty_cycles": self.duty_cycles.tolist(),
            "terminal_queues": self.terminal_queues.tolist(),
            "marginal_b": self.marginal_b.tolist(),
            "joint_b": [
                [int(i), int(j), float(v)]
                for (i, j), v in zip(self.edges, self.joint_b)
            ],
            "wall_clock_s": self.wall_clock_s,
            "arrived_packets": self.arrived_packets,
            "absorbed_packets": self.absorbed_packets,
            "config_echo": self.config,
        }


@dataclass
class SimStreams:
    arrival: np.random.Generator
    rate: np.random.Generator
    contention: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "SimStreams":
        return cls(
            arrival=rng.stream(seed, rng.SIM_ARRIVAL),
            rate=rng.stream(seed, rng.SIM_RATE),
            contention=rng.stream(seed, rng.SIM_CONTENTION),
        )


@dataclass
class SimState:
    """Mutable per-run state: FIFO queues plus gating window and counters."""

    queues: list[deque]           # per link, deque of flow ids (FIFO)
    totals: np.ndarray            # per-link queue lengths
    next_link: np.ndarray         # (num_links, num_flows): successor link or -1 = absorb
    window: np.ndarray | None     # (W, num_links) ring of recent schedules
    window_sum: np.ndarray | None
    t: int = 0
    arrived: int = 0
    absorbed: int = 0

    @classmethod
    def initial(cls, inst: Instance, gating: GatingPolicy | None) -> "SimState":
        num_links = inst.num_links
        next_link = np.full((num_links, len(inst.flows)), -2, dtype=np.int64)
        for f in inst.flows:
            for k, e in enumerate(f.path):
                next_link[e, f.id] = f.path[k + 1] if k + 1 < len(f.path) else -1
        window = window_sum = None
        if gating is not None:
            window = np.zeros((gating.window, num_links), dtype=np.int8)
            window_sum = np.zeros(num_links, dtype=np.int64)
        return cls(
            queues=[deque() for _ in range(num_links)],
            totals=np.zeros(num_links, dtype=np.int64),
            next_link=next_link,
            window=window,
            window_sum=window_sum,
        )


def luby_schedule(
    conflicts: ConflictGraph,
    z: np.ndarray,
    contending: np.ndarray,
    rounds: int,
    rng_stream: np.random.Generator,
) -> np.ndarray:
    """Run up to ``rounds`` rounds of weighted Luby contention.

    Each round, every undecided contending link draws uniformly from (0, z_e]
    and wins iff its draw strictly beats the masked draws of all conflict
    neighbors (decided and non-contending neighbors count as 0).  Winners
    transmit and mute their neighbors; links still undecided after the last
    round do not transmit.  The returned set is always independent.
    """
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    z = np.asarray(z, dtype=np.float64)
    if (z <= 0).any():
        raise ValueError("priorities must be strictly positive")
    num_links = conflicts.num_links
    schedule = np.zeros(num_links, dtype=np.int8)
    undecided = np.flatnonzero(np.asarray(contending, dtype=bool))
    adjacency = conflicts.adjacency
    for _ in range(rounds):
        if undecided.size == 0:
            break
        # 1 - U gives draws in (0, z]; an isolated contender always beats the
        # empty-neighborhood maximum of 0.
        draws = (1.0 - rng_stream.random(num_links)) * z
        masked = np.zeros(num_links)
        masked[undecided] = draws[undecided]
        winners = [
            e for e in undecided
            if masked[e] > (masked[adjacency[e]].max() if adjacency[e].size else 0.0)
        ]
        if not winners:
            continue
        schedule[winners] = 1
        quit_contest = np.zeros(num_links, dtype=bool)
        quit_contest[winners] = True
        for e in winners:
            quit_contest[adjacency[e]] = True   # mute message to neighbors
        undecided = undecided[~quit_contest[undecided]]
    return schedule


def step(
    state: SimState,
    inst: Instance,
    z: np.ndarray,
    rounds: int,
    gating: GatingPolicy | None,
    streams: SimStreams,
    rate_std: float = RATE_STD,
) -> tuple[SimState, np.ndarray, np.ndarray, np.ndarray]:
    """Advance one slot; returns (state, contention mask, schedule, realized rates).

    Slot phases: arrivals, contention mask, Luby contest, departures.  The
    full arrival and rate vectors are drawn every slot no matter which links
    are scheduled, keeping those streams identical across policies.
    """
    flows = inst.flows.flows
    arrivals = streams.arrival.poisson(
        np.array([inst.load * f.rate for f in flows])
    ) if flows else np.zeros(0, dtype=np.int64)
    for f, count in zip(flows, arrivals):
        if count:
            first = f.path[0]
            state.queues[first].extend([f.id] * int(count))
            state.totals[first] += int(count)
            state.arrived += int(count)

    realized = np.maximum(
        0.0, np.rint(streams.rate.normal(inst.long_term_rates, rate_std))
    ).astype(np.int64)

    contending = state.totals > 0
    if gating is not None and state.t > 0:
        span = min(gating.window, state.t)
        hot = state.window_sum / span > gating.factor * gating.target_duty
        contending &= ~hot

    schedule = luby_schedule(inst.conflicts, z, contending, rounds, streams.contention)

    for e in np.flatnonzero(schedule):
        moved = int(min(state.totals[e], realized[e]))
        queue = state.queues[e]
        for _ in range(moved):
            fid = queue.popleft()
            nxt = state.next_link[e, fid]
            if nxt >= 0:
                state.queues[nxt].append(fid)
                state.totals[nxt] += 1
            else:
                state.absorbed += 1
        state.totals[e] -= moved

    if gating is not None:
        slot = state.t % gating.window
        state.window_sum += schedule - state.window[slot]
        state.window[slot] = schedule
    state.t += 1
    return state, contending, schedule, realized


def run_simulation(
    inst: Instance,
    z: np.ndarray | None = None,
    rounds: int = DEFAULT_ROUNDS,
    horizon: int = 1000,
    gating: GatingPolicy | None = None,
    seed: int = 0,
    rate_std: float = RATE_STD,
    trace: list | None = None,
) -> SimResult:
    """Simulate ``horizon`` slots and collect empirical statistics.

    When ``trace`` is a list, the per-slot schedules are appended to it as
    int8 arrays.  Wall-clock time covers the slot loop only.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    num_links = inst.num_links
    if z is None:
        z = np.ones(num_links)
    z = np.asarray(z, dtype=np.float64)
    streams = SimStreams.from_seed(seed)
    state = SimState.initial(inst, gating)
    edges = inst.conflicts.edges
    duty_counts = np.zeros(num_links, dtype=np.int64)
    marginal_counts = np.zeros(num_links, dtype=np.int64)
    joint_counts = np.zeros(len(edges), dtype=np.int64)
    edge_i = edges[:, 0] if len(edges) else np.zeros(0, dtype=np.int64)
    edge_j = edges[:, 1] if len(edges) else np.zeros(0, dtype=np.int64)

    start = time.perf_counter()
    for _ in range(horizon):
        state, contending, schedule, _ = step(
            state, inst, z, rounds, gating, streams, rate_std
        )
        duty_counts += schedule
        marginal_counts += contending
        if len(edges):
            joint_counts += contending[edge_i] & contending[edge_j]
        if trace is not None:
            trace.append(schedule.copy())
    elapsed = time.perf_counter() - start

    return SimResult(
        duty_cycles=duty_counts / horizon,
        terminal_queues=state.totals.copy(),
        marginal_b=marginal_counts / horizon,
        joint_b=joint_counts / horizon if len(edges) else np.zeros(0),
        edges=edges,
        wall_clock_s=elapsed,
        arrived_packets=state.arrived,
        absorbed_packets=state.absorbed,
        config={
            "rounds": rounds,
            "horizon": horizon,
            "seed": int(seed),
            "rate_std": rate_std,
            "gating": None if gating is None else {
                "window": gating.window,
                "factor": gating.factor,
            },
        },
    )


def empirical_contention(result: SimResult) -> ContentionMatrix:
    """Package a run's empirical contention frequencies for the analytical model."""
    return ContentionMatrix(
        marginal=result.marginal_b.copy(),
        joint=result.joint_b.copy(),
        edges=result.edges,
    )


def windowed_duty_cycle(history: np.ndarray, window: int) -> np.ndarray:
    """Mean schedule over the last min(window, t) slots of ``history`` (t rows)."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    history = np.asarray(history, dtype=np.float64)
    if history.shape[0] == 0:
        return np.zeros(history.shape[1] if history.ndim > 1 else 0)
    return history[-min(window, history.shape[0]):].mean(axis=0)


def dump_schedule_trace(path: str, trace: list[np.ndarray]) -> None:
    """Write a schedule trace as packed bits: one row per slot, num_links bits
    per row padded to whole bytes, little-endian bit order within each byte."""
    packed = np.packbits(np.asarray(trace, dtype=np.uint8), axis=1, bitorder="little")
    packed.tofile(path)


def load_schedule_trace(path: str, horizon: int, num_links: int) -> np.ndarray:
    raw = np.fromfile(path, dtype=np.uint8).reshape(horizon, -1)
    bits = np.unpackbits(raw, axis=1, bitorder="little")
    return bits[:, :num_links]
