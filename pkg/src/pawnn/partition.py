"""Vertex-cut partitioning, tree diameters and μPMU placement."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .grid import (
    CyclicTopologyError,
    DisconnectedError,
    Feeder,
    FeederError,
    TreeGraph,
    UnknownBusError,
)


class PlacementError(ValueError):
    pass


class SeparabilityError(ValueError):
    def __init__(self, msg, partitions=()):
        super().__init__(msg)
        self.partitions = list(partitions)


def placement_graph(feeder: Feeder, include_source: bool = False) -> TreeGraph:
    """Graph on which placement is decided.

    The substation bus carries a known fixed voltage, so by default it is
    dropped when it is a leaf. A non-leaf source is always kept.
    """
    g = feeder.graph
    if include_source:
        return g
    s = g.index(feeder.source_bus)
    if len(g.neighbors(s)) != 1 or g.n_nodes == 1:
        return g
    edges = [(a, b) for a, b in g.edge_ids() if feeder.source_bus not in (a, b)]
    return TreeGraph([n for n in g.nodes if n != feeder.source_bus], edges)


def _graph(obj, placement: bool = False) -> TreeGraph:
    if isinstance(obj, TreeGraph):
        return obj
    if isinstance(obj, Feeder):
        return placement_graph(obj) if placement else obj.graph
    raise TypeError(f"expected Feeder or TreeGraph, got {type(obj).__name__}")


def _require_tree(g: TreeGraph) -> None:
    if g.n_edges >= g.n_nodes:
        raise CyclicTopologyError(f"{g.n_edges} edges on {g.n_nodes} nodes is not a tree")
    if not g.is_tree():
        raise DisconnectedError("graph is not connected")


def _cut_mask(g: TreeGraph, P: Iterable[int]) -> np.ndarray:
    is_cut = np.zeros(g.n_nodes, dtype=np.bool_)
    for p in P:
        is_cut[g.index(int(p))] = True
    return is_cut


# ---------------------------------------------------------------------------
# partitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Subgraph:
    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    diameter: int

    def interior(self, cut: Iterable[int]) -> tuple[int, ...]:
        c = set(cut)
        return tuple(n for n in self.nodes if n not in c)


@dataclass(frozen=True)
class Partitioning:
    cut: tuple[int, ...]
    subgraphs: tuple[Subgraph, ...]

    @property
    def dia(self) -> int:
        return max((s.diameter for s in self.subgraphs), default=0)

    def __len__(self) -> int:
        return len(self.subgraphs)

    def containing(self, bus: int) -> list[int]:
        return [k for k, s in enumerate(self.subgraphs) if bus in s.nodes]

    def to_document(self) -> dict:
        return {
            "cut": list(self.cut),
            "dia": self.dia,
            "subgraphs": [
                {"nodes": list(s.nodes), "edges": [list(e) for e in s.edges], "diameter": s.diameter}
                for s in self.subgraphs
            ],
        }


def _edge_labels(g: TreeGraph, is_cut: np.ndarray) -> tuple[np.ndarray, int]:
    """Component label per edge, ordered like the placement kernel."""
    label = np.full(g.n_edges, -1, dtype=np.int64)
    seen = np.zeros(g.n_nodes, dtype=bool)
    n_lab = 0
    for u in range(g.n_nodes):
        if is_cut[u] or seen[u]:
            continue
        seen[u] = True
        queue = deque([u])
        while queue:
            a = queue.popleft()
            for p in range(g.indptr[a], g.indptr[a + 1]):
                label[g.adj_edge[p]] = n_lab
                w = g.indices[p]
                if not is_cut[w] and not seen[w]:
                    seen[w] = True
                    queue.append(w)
        n_lab += 1
    for a in range(g.n_nodes):
        for p in range(g.indptr[a], g.indptr[a + 1]):
            e = g.adj_edge[p]
            if label[e] == -1:
                label[e] = n_lab
                n_lab += 1
    return label, n_lab


def cut_partition(graph: Feeder | TreeGraph, P: Iterable[int] = ()) -> Partitioning:
    """Split the edge set by removing the cut vertices ``P``.

    Cut vertices are replicated into every subgraph they touch; an edge
    between two cut vertices forms its own subgraph.
    """
    g = _graph(graph)
    _require_tree(g)
    P = tuple(sorted({int(p) for p in P}))
    is_cut = _cut_mask(g, P)
    if g.n_edges == 0:
        sub = Subgraph((int(g.nodes[0]),), (), 0)
        return Partitioning(P, (sub,))
    label, n_lab = _edge_labels(g, is_cut)
    subs = []
    for k in range(n_lab):
        eidx = np.flatnonzero(label == k)
        ends = g.edges[eidx]
        node_idx = np.unique(ends)
        nodes = tuple(int(x) for x in g.nodes[node_idx])
        edges = tuple(sorted((int(g.nodes[a]), int(g.nodes[b])) for a, b in ends))
        d, _ = tree_diameter(TreeGraph(nodes, edges))
        subs.append(Subgraph(nodes, edges, d))
    return Partitioning(P, tuple(subs))


def partition_diameter(graph: Feeder | TreeGraph, P: Iterable[int]) -> int:
    """``dia(P)`` without materialising the subgraphs."""
    g = _graph(graph)
    length, _ = kernels.ACTIVE.longest_partition_path(g.indptr, g.indices, g.adj_edge, _cut_mask(g, P), g.n_edges)
    return int(length)


def eccentricity(graph: Feeder | TreeGraph, vertex: int) -> int:
    g = _graph(graph)
    dist, _ = g.bfs(g.index(int(vertex)))
    if (dist < 0).any():
        raise DisconnectedError("graph is not connected")
    return int(dist.max())


def tree_diameter(graph: Feeder | TreeGraph) -> tuple[int, tuple[int, int]]:
    """Double sweep: farthest vertex from the smallest id, then farthest from that."""
    g = _graph(graph)
    _require_tree(g)
    if g.n_edges == 0:
        n0 = int(g.nodes[0])
        return 0, (n0, n0)
    is_cut = np.zeros(g.n_nodes, dtype=np.bool_)
    length, path = kernels.ACTIVE.longest_partition_path(g.indptr, g.indices, g.adj_edge, is_cut, g.n_edges)
    return int(length), (int(g.nodes[path[0]]), int(g.nodes[path[-1]]))


# ---------------------------------------------------------------------------
# placement
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlacementResult:
    placement: tuple[int, ...]
    dia: int
    trace: tuple[int, ...] = ()
    method: str = "greedy"
    complete: bool = True
    examined: int = 0

    def to_document(self) -> dict:
        return {
            "method": self.method,
            "placement": list(self.placement),
            "dia": self.dia,
            "trace": list(self.trace),
            "complete": self.complete,
            "examined": self.examined,
        }


def _middle(path: np.ndarray, is_cut: np.ndarray) -> int:
    if path[0] > path[-1]:
        path = path[::-1]
    L = len(path) - 1
    mid = L // 2
    if not is_cut[path[mid]]:
        return int(path[mid])
    # only endpoints can already be placed; walk toward the longer side
    right_longer = L - mid > mid
    order = sorted(range(len(path)), key=lambda k: (abs(k - mid), (k < mid) if right_longer else (k > mid)))
    for k in order:
        if not is_cut[path[k]]:
            return int(path[k])
    return -1


def greedy_place(graph: Feeder | TreeGraph, K: int) -> PlacementResult:
    """Place ``K`` μPMUs one at a time at the middle of the longest path
    left in any subgraph. ``trace[i]`` is the diameter after ``i + 1`` units."""
    g = _graph(graph, placement=True)
    _require_tree(g)
    if K < 1:
        raise PlacementError("K must be at least 1")
    if K > g.n_nodes:
        raise PlacementError(f"K={K} exceeds the {g.n_nodes} candidate buses")
    lp = kernels.ACTIVE.longest_partition_path
    is_cut = np.zeros(g.n_nodes, dtype=np.bool_)
    placed, trace = [], []
    length, path = lp(g.indptr, g.indices, g.adj_edge, is_cut, g.n_edges)
    for _ in range(K):
        v = _middle(path, is_cut) if length > 0 else -1
        if v < 0:
            v = int(np.flatnonzero(~is_cut)[0])
        is_cut[v] = True
        placed.append(int(g.nodes[v]))
        length, path = lp(g.indptr, g.indices, g.adj_edge, is_cut, g.n_edges)
        trace.append(int(length))
    return PlacementResult(tuple(placed), trace[-1], tuple(trace), "greedy")


def _paths_of_length(g: TreeGraph, length: int) -> list[np.ndarray]:
    """Interior vertex index arrays of every tree path with ``length`` edges."""
    out = []
    for u in range(g.n_nodes):
        dist, parent = g.bfs(u)
        for w in np.flatnonzero(dist == length):
            if w <= u:
                continue
            inner = []
            x = parent[w]
            while x != u:
                inner.append(x)
                x = parent[x]
            out.append(np.array(inner, dtype=np.int64))
    return out


def _bitmask(items: Sequence[np.ndarray], pos: np.ndarray, n_words: int) -> np.ndarray:
    m = np.zeros((len(items), n_words), dtype=np.uint64)
    for r, inner in enumerate(items):
        for v in inner:
            c = pos[v]
            if c >= 0:
                m[r, c // 64] |= np.uint64(1) << np.uint64(c % 64)
    return m


def exhaustive_place(graph: Feeder | TreeGraph, K: int, candidates: Iterable[int] | None = None,
                     max_combos: int = 50_000_000) -> PlacementResult:
    """Smallest achievable ``dia(P)`` over all K-subsets of the candidates.

    ``dia(P) <= d`` holds exactly when every path with ``d + 1`` edges has a
    cut vertex strictly inside it, so each target ``d`` becomes a hitting-set
    test. Combinations are scanned in lexicographic order of bus id, which
    makes the first hit the lexicographically smallest optimal set. The
    target starts at the greedy diameter and decreases until infeasible. If
    ``max_combos`` runs out, the best set found so far is returned with
    ``complete=False``.
    """
    g = _graph(graph, placement=True)
    _require_tree(g)
    if K < 1:
        raise PlacementError("K must be at least 1")
    cand = np.arange(g.n_nodes) if candidates is None else np.array(sorted(g.index(int(c)) for c in set(candidates)))
    if K > len(cand):
        raise PlacementError(f"K={K} exceeds the {len(cand)} candidate buses")
    pos = np.full(g.n_nodes, -1, dtype=np.int64)
    pos[cand] = np.arange(len(cand))
    n_words = max(1, math.ceil(len(cand) / 64))
    bits = _bitmask([np.array([c]) for c in cand], pos, n_words)

    if candidates is None:
        greedy = greedy_place(g, K)
        target = greedy.dia
    else:
        target = tree_diameter(g)[0]
    best, best_d = None, None
    examined = 0
    complete = True
    search = kernels.ACTIVE.first_hitting
    while target >= 0:
        if target == 0:
            paths = [np.zeros(0, dtype=np.int64)] * g.n_edges
        else:
            paths = _paths_of_length(g, target + 1)
        masks = _bitmask(paths, pos, n_words)
        if any(len(p) == 0 for p in paths) or (masks != 0).any(axis=1).sum() < len(paths):
            break
        combo, n_seen, exhausted = search(masks, bits, K, max_combos - examined)
        examined += int(n_seen)
        if len(combo) == 0:
            complete = bool(exhausted)
            break
        best = tuple(int(g.nodes[cand[c]]) for c in combo)
        best_d = target
        target -= 1
    if best is None:
        raise PlacementError("combination budget exhausted before any placement was verified")
    return PlacementResult(best, best_d, (), "exhaustive", complete, examined)


# ---------------------------------------------------------------------------
# separability check
# ---------------------------------------------------------------------------


@dataclass
class SeparabilityReport:
    discrepancy: float
    per_partition: list[dict] = field(default_factory=list)
    v_global: np.ndarray | None = None
    v_local: list[np.ndarray] = field(default_factory=list)
    partitioning: Partitioning | None = None


def partition_measurements(mset, part: Partitioning) -> list[list[int]]:
    """Measurement indices whose support lies inside each subgraph."""
    feeder = mset.feeder
    tab = feeder.slot_table
    groups = []
    for s in part.subgraphs:
        own = set()
        for b in s.nodes:
            row = tab[feeder.bus_index[b]]
            own.update(int(x) for x in row[row >= 0])
        edges = {frozenset(e) for e in s.edges}
        idx = []
        for k, m in enumerate(mset.items):
            if not set(int(x) for x in m.slots) <= own:
                continue
            if len(m.location) == 2 and frozenset(m.location) not in edges:
                continue
            idx.append(k)
        groups.append(idx)
    return groups


def local_estimate(mset, z, part: Partitioning, k: int, groups=None, options=None):
    """WLS on subgraph ``k`` alone, PMU coordinates pinned, using only ``z^(k)``."""
    from .wls import gauss_newton

    feeder = mset.feeder
    groups = groups or partition_measurements(mset, part)
    idx = groups[k]
    sub = part.subgraphs[k]
    n = feeder.n_slots
    active = np.zeros(2 * n, dtype=bool)
    tab = feeder.slot_table
    for b in sub.interior(part.cut):
        row = tab[feeder.bus_index[b]]
        sl = row[row >= 0]
        active[sl] = True
        active[sl + n] = True
    sub_set = mset.subset(idx)
    return gauss_newton(sub_set, np.asarray(z)[idx], options, active=active), active


def verify_separability(feeder: Feeder, P: Iterable[int], mset, z: np.ndarray, options=None,
                        rank_tol: float = 1e-9) -> SeparabilityReport:
    """Global WLS against independent per-subgraph WLS.

    μPMUs at ``P`` must appear in ``mset`` as zero-variance voltage phasors.
    The discrepancy is the largest per-slot state difference over non-cut
    buses.
    """
    from .wls import gauss_newton

    part = cut_partition(feeder, P)
    n = feeder.n_slots
    tab = feeder.slot_table
    for p in part.cut:
        row = tab[feeder.bus_index[p]]
        for s in row[row >= 0]:
            kinds = {m.kind for m in mset.items if m.noise_var == 0 and tuple(m.slots) == (s,)}
            if not {"v_real", "v_imag"} <= kinds:
                raise SeparabilityError(f"bus {p} is a cut vertex without a noiseless phasor")
    groups = partition_measurements(mset, part)
    covered = set(i for grp in groups for i in grp)
    orphan = [mset.items[i].label for i in range(len(mset)) if i not in covered]
    if orphan:
        raise SeparabilityError(f"measurements span several subgraphs: {orphan[:5]}")

    glob = gauss_newton(mset, z, options)
    v_true_guess = glob.estimate
    x_probe = np.concatenate([v_true_guess.real, v_true_guess.imag])
    report = SeparabilityReport(0.0, v_global=glob.estimate, partitioning=part)
    bad = []
    for k in range(len(part)):
        loc, active = local_estimate(mset, z, part, k, groups, options)
        report.v_local.append(loc.estimate)
        cols = np.flatnonzero(active)
        if cols.size:
            H = mset.subset(groups[k]).jacobian(x_probe)[:, cols]
            rank = np.linalg.matrix_rank(H, tol=rank_tol * max(1.0, np.abs(H).max()))
            if rank < cols.size:
                bad.append(k)
        sl = cols[cols < n]
        d = float(np.abs(loc.estimate[sl] - glob.estimate[sl]).max()) if sl.size else 0.0
        report.per_partition.append({"index": k, "n_meas": len(groups[k]), "unknowns": int(cols.size),
                                     "discrepancy": d, "converged": loc.converged})
        report.discrepancy = max(report.discrepancy, d)
    if bad:
        raise SeparabilityError(f"unobservable subgraphs: {bad}", bad)
    return report


__all__ = [
    "FeederError",
    "UnknownBusError",
    "PlacementError",
    "SeparabilityError",
    "Subgraph",
    "Partitioning",
    "PlacementResult",
    "SeparabilityReport",
    "placement_graph",
    "cut_partition",
    "partition_diameter",
    "eccentricity",
    "tree_diameter",
    "greedy_place",
    "exhaustive_place",
    "partition_measurements",
    "local_estimate",
    "verify_separability",
]
