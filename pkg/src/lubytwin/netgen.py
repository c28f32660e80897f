"""Random multi-hop network instances: topology, conflicts, flows, routing, rates.

Nodes are placed uniformly in a square sized so the spatial density is 8/pi
nodes per unit area; a pair of directed links joins every two nodes within
unit distance.  Two links conflict when they share an endpoint node
(interface conflict), so the conflict graph is derived purely from the
connectivity graph.  Flows are random source/destination pairs routed along
minimum-hop paths, and every random choice is drawn from a named stream of
the instance seeds (see ``rng``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import rng

NODE_DENSITY = 8.0 / math.pi     # nodes per unit area
LINK_RANGE = 1.0                 # connection radius
RATE_LOW, RATE_HIGH = 10.0, 42.0
FLOW_RATE_LOW, FLOW_RATE_HIGH = 0.5, 1.5
MAX_TOPOLOGY_ATTEMPTS = 1000

SCHEMA_VERSION = 1


class TopologyError(RuntimeError):
    """Raised when no connected placement is found within the attempt budget."""


@dataclass
class ConnectivityGraph:
    """Directed connectivity graph with 2D node positions.

    Link ids are dense 0..num_links-1, ordered lexicographically by
    (src, dst); links always come in (i, j)/(j, i) pairs.
    """

    positions: np.ndarray   # (num_nodes, 2) float
    links: np.ndarray       # (num_links, 2) int: [src, dst], row index = link id

    @property
    def num_nodes(self) -> int:
        return self.positions.shape[0]

    @property
    def num_links(self) -> int:
        return self.links.shape[0]

    @cached_property
    def link_index(self) -> dict[tuple[int, int], int]:
        """(src, dst) -> link id."""
        return {(int(s), int(d)): e for e, (s, d) in enumerate(self.links)}

    @cached_property
    def out_neighbors(self) -> tuple[tuple[int, ...], ...]:
        """Per node, destination nodes of outgoing links, ascending."""
        nbrs: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for s, d in self.links:
            nbrs[int(s)].append(int(d))
        return tuple(tuple(sorted(ns)) for ns in nbrs)


@dataclass
class ConflictGraph:
    """Symmetric conflict relation between directed links."""

    num_links: int
    adjacency: tuple[np.ndarray, ...]   # per link, sorted conflicting link ids

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(indptr, indices) arrays; indices[indptr[e]:indptr[e+1]] = neighbors of e."""
        degrees = np.array([len(a) for a in self.adjacency], dtype=np.int64)
        indptr = np.zeros(self.num_links + 1, dtype=np.int64)
        np.cumsum(degrees, out=indptr[1:])
        if self.num_links:
            indices = np.concatenate([np.asarray(a, dtype=np.int64) for a in self.adjacency]) \
                if indptr[-1] else np.zeros(0, dtype=np.int64)
        else:
            indices = np.zeros(0, dtype=np.int64)
        return indptr, indices

    @cached_property
    def edges(self) -> np.ndarray:
        """Undirected conflict edges as an (num_edges, 2) array with i < j, sorted."""
        pairs = [(e, int(i)) for e in range(self.num_links)
                 for i in self.adjacency[e] if e < i]
        if not pairs:
            return np.zeros((0, 2), dtype=np.int64)
        return np.array(sorted(pairs), dtype=np.int64)

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        """Sorted link pair -> undirected edge id."""
        return {(int(i), int(j)): k for k, (i, j) in enumerate(self.edges)}

    @cached_property
    def pair_edge_ids(self) -> np.ndarray:
        """For every directed CSR pair (e, i), the undirected edge id of {e, i}."""
        indptr, indices = self.csr
        out = np.empty(len(indices), dtype=np.int64)
        pos = 0
        for e in range(self.num_links):
            for i in indices[indptr[e]:indptr[e + 1]]:
                a, b = (e, int(i)) if e < i else (int(i), e)
                out[pos] = self.edge_index[(a, b)]
                pos += 1
        return out


@dataclass
class Flow:
    id: int
    src: int
    dst: int
    rate: float                       # base rate a_f; arrivals are Poisson(beta * a_f)
    path: tuple[int, ...] = ()        # link ids, filled by routing


@dataclass
class FlowSet:
    flows: tuple[Flow, ...]

    def __len__(self) -> int:
        return len(self.flows)

    def __iter__(self):
        return iter(self.flows)


@dataclass
class RoutingMatrix:
    """Per-link, per-flow rate assignment (packets/slot)."""

    entries: np.ndarray   # (num_links, num_flows) float

    @cached_property
    def link_totals(self) -> np.ndarray:
        """lambda_e = sum_f entries[e, f]."""
        return self.entries.sum(axis=1)


@dataclass
class Instance:
    """A complete reproducible test case."""

    connectivity: ConnectivityGraph
    conflicts: ConflictGraph
    flows: FlowSet
    routing: RoutingMatrix
    long_term_rates: np.ndarray   # r_e, packets/slot
    load: float                   # beta
    seeds: dict[str, int]         # {"topology": ..., "realization": ...}

    @property
    def num_links(self) -> int:
        return self.connectivity.num_links


# ---------------------------------------------------------------------------
# Generation


def generate_topology(num_nodes: int, seed: int) -> ConnectivityGraph:
    """Place ``num_nodes`` uniformly at density 8/pi and link pairs within distance 1.

    Placements are resampled (with a fresh sub-seed per attempt) until the
    graph is connected; links are bidirectional, so undirected connectivity
    implies strong connectivity.
    """
    if num_nodes < 2:
        raise ValueError(f"num_nodes must be >= 2, got {num_nodes}")
    side = math.sqrt(num_nodes / NODE_DENSITY)
    for attempt in range(MAX_TOPOLOGY_ATTEMPTS):
        gen = rng.stream(seed, rng.TOPOLOGY, attempt)
        positions = gen.uniform(0.0, side, size=(num_nodes, 2))
        links = _links_within_range(positions)
        if _is_connected(num_nodes, links):
            return ConnectivityGraph(positions=positions, links=links)
    raise TopologyError(
        f"no connected placement for num_nodes={num_nodes}, seed={seed} "
        f"after {MAX_TOPOLOGY_ATTEMPTS} attempts"
    )


def _links_within_range(positions: np.ndarray) -> np.ndarray:
    delta = positions[:, None, :] - positions[None, :, :]
    dist2 = np.einsum("ijk,ijk->ij", delta, delta)
    within = dist2 <= LINK_RANGE * LINK_RANGE
    np.fill_diagonal(within, False)
    src, dst = np.nonzero(within)          # already lexicographic in (src, dst)
    return np.stack([src, dst], axis=1).astype(np.int64)


def _is_connected(num_nodes: int, links: np.ndarray) -> bool:
    if num_nodes == 0:
        return True
    nbrs: list[list[int]] = [[] for _ in range(num_nodes)]
    for s, d in links:
        nbrs[int(s)].append(int(d))
    seen = np.zeros(num_nodes, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        u = stack.pop()
        for v in nbrs[u]:
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    return bool(seen.all())


def build_conflict_graph(g: ConnectivityGraph) -> ConflictGraph:
    """Interface-conflict graph: links conflict iff they share an endpoint node."""
    incident: list[list[int]] = [[] for _ in range(g.num_nodes)]
    for e, (s, d) in enumerate(g.links):
        incident[int(s)].append(e)
        incident[int(d)].append(e)
    conflict_sets: list[set[int]] = [set() for _ in range(g.num_links)]
    for links_at_node in incident:
        for e in links_at_node:
            conflict_sets[e].update(links_at_node)
    adjacency = tuple(
        np.array(sorted(conflict_sets[e] - {e}), dtype=np.int64)
        for e in range(g.num_links)
    )
    return ConflictGraph(num_links=g.num_links, adjacency=adjacency)


def incidence_matrix(g: ConnectivityGraph) -> np.ndarray:
    """Node-edge incidence: +1 where the link leaves the node, -1 where it enters."""
    delta = np.zeros((g.num_nodes, g.num_links), dtype=np.int64)
    for e, (s, d) in enumerate(g.links):
        delta[int(s), e] = 1
        delta[int(d), e] = -1
    return delta


def sample_flows(g: ConnectivityGraph, load: float, seed: int) -> FlowSet:
    """Draw |F| ~ U{floor(0.15|V|) .. ceil(0.25|V|)} flows with a_f ~ U(0.5, 1.5)."""
    if load <= 0:
        raise ValueError(f"load must be positive, got {load}")
    gen = rng.stream(seed, rng.FLOWS)
    lo = math.floor(0.15 * g.num_nodes)
    hi = math.ceil(0.25 * g.num_nodes)
    num_flows = int(gen.integers(lo, hi + 1))
    flows = []
    for fid in range(num_flows):
        src = int(gen.integers(g.num_nodes))
        dst = int(gen.integers(g.num_nodes))
        while dst == src:
            dst = int(gen.integers(g.num_nodes))
        rate = float(gen.uniform(FLOW_RATE_LOW, FLOW_RATE_HIGH))
        flows.append(Flow(id=fid, src=src, dst=dst, rate=rate))
    return FlowSet(flows=tuple(flows))


def shortest_path_routing(
    g: ConnectivityGraph, flows: FlowSet, beta: float
) -> tuple[FlowSet, RoutingMatrix]:
    """Route every flow on its minimum-hop path and assign beta * a_f along it.

    Ties between equal-hop paths break toward the lexicographically smallest
    node-id sequence, so routing is reproducible.  Returns the flows with
    paths filled plus the routing matrix.
    """
    entries = np.zeros((g.num_links, len(flows)), dtype=np.float64)
    routed = []
    for f in flows:
        node_path = _lex_min_hop_path(g, f.src, f.dst)
        link_path = tuple(
            g.link_index[(node_path[k], node_path[k + 1])]
            for k in range(len(node_path) - 1)
        )
        routed.append(Flow(id=f.id, src=f.src, dst=f.dst, rate=f.rate, path=link_path))
        entries[list(link_path), f.id] = beta * f.rate
    return FlowSet(flows=tuple(routed)), RoutingMatrix(entries=entries)


def _lex_min_hop_path(g: ConnectivityGraph, src: int, dst: int) -> list[int]:
    # BFS distances to dst over reversed links, then greedy descent picking the
    # smallest next node id: yields the lexicographically smallest min-hop path.
    INF = -1
    dist = np.full(g.num_nodes, INF, dtype=np.int64)
    dist[dst] = 0
    in_nbrs: list[list[int]] = [[] for _ in range(g.num_nodes)]
    for s, d in g.links:
        in_nbrs[int(d)].append(int(s))
    queue = [dst]
    while queue:
        nxt = []
        for u in queue:
            for v in in_nbrs[u]:
                if dist[v] == INF:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        queue = nxt
    if dist[src] == INF:
        raise ValueError(f"no path from {src} to {dst}; graph not strongly connected")
    path = [src]
    cur = src
    while cur != dst:
        cur = next(w for w in g.out_neighbors[cur] if dist[w] == dist[cur] - 1)
        path.append(cur)
    return path


def sample_link_rates(g: ConnectivityGraph, seed: int) -> np.ndarray:
    """Long-term rates r_e ~ U(10, 42), i.i.d. per link."""
    gen = rng.stream(seed, rng.RATES)
    return gen.uniform(RATE_LOW, RATE_HIGH, size=g.num_links)


def arrival_matrix(g: ConnectivityGraph, flows: FlowSet, beta: float) -> np.ndarray:
    """Exogenous rate matrix A: +beta*a_f at each flow source, -beta*a_f at its sink."""
    a = np.zeros((g.num_nodes, len(flows)), dtype=np.float64)
    for f in flows:
        a[f.src, f.id] += beta * f.rate
        a[f.dst, f.id] -= beta * f.rate
    return a


def make_instance(
    num_nodes: int, load: float, topology_seed: int, realization_seed: int
) -> Instance:
    """Build a full instance from the two seeds."""
    g = generate_topology(num_nodes, topology_seed)
    conflicts = build_conflict_graph(g)
    flows = sample_flows(g, load, realization_seed)
    flows, routing = shortest_path_routing(g, flows, load)
    rates = sample_link_rates(g, realization_seed)
    return Instance(
        connectivity=g,
        conflicts=conflicts,
        flows=flows,
        routing=routing,
        long_term_rates=rates,
        load=load,
        seeds={"topology": int(topology_seed), "realization": int(realization_seed)},
    )


# ---------------------------------------------------------------------------
# Validation


def validate_instance(inst: Instance) -> list[str]:
    """Return one description per violated invariant (empty when all hold)."""
    errors: list[str] = []
    g = inst.connectivity
    n_links = g.num_links

    # Link structure: dense ids are implicit (row order); check range rule and pairing.
    pos = g.positions
    pair_set = {(int(s), int(d)) for s, d in g.links}
    for e, (s, d) in enumerate(g.links):
        if s == d:
            errors.append(f"link {e} is a self-loop")
        if (int(d), int(s)) not in pair_set:
            errors.append(f"link {e}=({s},{d}) has no reverse link")
        dist = float(np.hypot(*(pos[int(s)] - pos[int(d)])))
        if dist > LINK_RANGE:
            errors.append(f"link {e}=({s},{d}) spans distance {dist:.3f} > {LINK_RANGE}")
    if not _is_connected(g.num_nodes, g.links):
        errors.append("connectivity graph is not connected")

    # Conflict graph: symmetry, no self-loops, interface rule.
    c = inst.conflicts
    if c.num_links != n_links:
        errors.append("conflict graph link count differs from connectivity graph")
    adj_sets = [set(int(i) for i in a) for a in c.adjacency]
    for e, nbrs in enumerate(adj_sets):
        if e in nbrs:
            errors.append(f"conflict adjacency of link {e} contains itself")
        for i in nbrs:
            if e not in adj_sets[i]:
                errors.append(f"conflict edge ({e},{i}) is not symmetric")
    for e in range(n_links):
        s1, d1 = (int(v) for v in g.links[e])
        expected = {
            i for i in range(n_links) if i != e
            and {s1, d1} & {int(g.links[i][0]), int(g.links[i][1])}
        }
        if adj_sets[e] != expected:
            errors.append(f"conflict adjacency of link {e} violates the interface rule")

    # Flows and routing.
    lam = inst.routing.entries
    if lam.shape != (n_links, len(inst.flows)):
        errors.append(f"routing matrix shape {lam.shape} mismatches instance")
    if (lam < 0).any():
        errors.append("routing matrix has negative entries")
    for f in inst.flows:
        if not (FLOW_RATE_LOW <= f.rate <= FLOW_RATE_HIGH):
            errors.append(f"flow {f.id} rate {f.rate} outside [{FLOW_RATE_LOW}, {FLOW_RATE_HIGH}]")
        if not _is_simple_path(g, f.src, f.dst, f.path):
            errors.append(f"flow {f.id} path is not a simple {f.src}->{f.dst} path")
        on_path = np.zeros(n_links, dtype=bool)
        on_path[list(f.path)] = True
        if (lam[~on_path, f.id] != 0).any():
            errors.append(f"flow {f.id} has routing mass off its path")
    delta = incidence_matrix(g)
    want = arrival_matrix(g, inst.flows, inst.load)
    residual = delta @ lam - want
    if residual.size and np.abs(residual).max() != 0.0:
        errors.append(
            f"flow conservation violated: max |Delta Lambda - A| = {np.abs(residual).max():g}"
        )

    # Rates and load.
    r = inst.long_term_rates
    if r.shape != (n_links,):
        errors.append("rate vector length mismatches link count")
    elif ((r < RATE_LOW) | (r > RATE_HIGH)).any():
        errors.append(f"link rates outside [{RATE_LOW}, {RATE_HIGH}]")
    if inst.load <= 0:
        errors.append(f"load must be positive, got {inst.load}")
    return errors


def _is_simple_path(g: ConnectivityGraph, src: int, dst: int, path: tuple[int, ...]) -> bool:
    if not path:
        return False
    nodes = [int(g.links[path[0]][0])]
    for e in path:
        s, d = (int(v) for v in g.links[e])
        if s != nodes[-1]:
            return False
        nodes.append(d)
    return nodes[0] == src and nodes[-1] == dst and len(set(nodes)) == len(nodes)


# ---------------------------------------------------------------------------
# Serialization


def instance_to_json(inst: Instance) -> str:
    """Serialize to the documented single-document JSON schema."""
    g = inst.connectivity
    doc = {
        "schema_version": SCHEMA_VERSION,
        "nodes": [
            {"id": i, "x": float(x), "y": float(y)}
            for i, (x, y) in enumerate(g.positions)
        ],
        "links": [
            {"id": e, "src": int(s), "dst": int(d)} for e, (s, d) in enumerate(g.links)
        ],
        "conflicts": [[int(i), int(j)] for i, j in inst.conflicts.edges],
        "flows": [
            {"id": f.id, "src": f.src, "dst": f.dst, "a_f": f.rate, "path": list(f.path)}
            for f in inst.flows
        ],
        "lambda": inst.routing.entries.tolist(),
        "rates": inst.long_term_rates.tolist(),
        "beta": inst.load,
        "seeds": inst.seeds,
    }
    return json.dumps(doc, indent=2)


def instance_from_json(text: str) -> Instance:
    doc = json.loads(text)
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {version!r}")
    positions = np.array([[n["x"], n["y"]] for n in doc["nodes"]], dtype=np.float64)
    links = np.array([[l["src"], l["dst"]] for l in doc["links"]], dtype=np.int64)
    g = ConnectivityGraph(positions=positions, links=links.reshape(-1, 2))
    num_links = g.num_links
    nbrs: list[set[int]] = [set() for _ in range(num_links)]
    for i, j in doc["conflicts"]:
        nbrs[i].add(j)
        nbrs[j].add(i)
    conflicts = ConflictGraph(
        num_links=num_links,
        adjacency=tuple(np.array(sorted(s), dtype=np.int64) for s in nbrs),
    )
    flows = FlowSet(flows=tuple(
        Flow(id=f["id"], src=f["src"], dst=f["dst"], rate=f["a_f"], path=tuple(f["path"]))
        for f in doc["flows"]
    ))
    routing = RoutingMatrix(entries=np.array(doc["lambda"], dtype=np.float64).reshape(num_links, len(flows)))
    return Instance(
        connectivity=g,
        conflicts=conflicts,
        flows=flows,
        routing=routing,
        long_term_rates=np.array(doc["rates"], dtype=np.float64),
        load=float(doc["beta"]),
        seeds={k: int(v) for k, v in doc["seeds"].items()},
    )
