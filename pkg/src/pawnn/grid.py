"""Multiphase radial feeder model.

Documents carry SI quantities (kW, kvar, ohm, siemens); a :class:`Feeder`
holds everything in per-unit on ``(base_kv / sqrt(3), base_kva / 3)``, i.e.
line-to-neutral voltage and per-phase power.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels

PHASES = ("a", "b", "c")
PHASE_INDEX = {p: i for i, p in enumerate(PHASES)}
# nominal source angles for phases a, b, c
SOURCE_ANGLES = np.deg2rad([0.0, -120.0, 120.0])


class FeederError(ValueError):
    """Invalid feeder document or topology."""


class DuplicateBusError(FeederError):
    pass


class UnknownBusError(FeederError):
    pass


class CyclicTopologyError(FeederError):
    pass


class DisconnectedError(FeederError):
    pass


class PhaseMismatchError(FeederError):
    pass


class SingularImpedanceError(FeederError):
    pass


@dataclass(frozen=True)
class LoadSpec:
    """Nominal constant-power load in per-unit.

    ``s`` lists complex power for phases a, b, c (wye) or for the pairs
    ab, bc, ca (delta). Entries for absent phases/pairs are zero.
    """

    conn: str
    s: tuple[complex, complex, complex]


@dataclass(frozen=True)
class Bus:
    id: int
    phases: tuple[str, ...]
    load: LoadSpec | None = None
    has_res: bool = False


@dataclass(frozen=True, eq=False)
class Line:
    from_bus: int
    to_bus: int
    phases: tuple[str, ...]
    z: np.ndarray       # 3x3 complex, per-unit, zero outside present phases
    yshunt: np.ndarray  # 3x3 complex, per-unit total shunt (half at each end)

    @property
    def phase_idx(self) -> np.ndarray:
        return np.array([PHASE_INDEX[p] for p in self.phases])

    def __eq__(self, other):
        if not isinstance(other, Line):
            return NotImplemented
        return (
            (self.from_bus, self.to_bus, self.phases) == (other.from_bus, other.to_bus, other.phases)
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.yshunt, other.yshunt)
        )

    __hash__ = None


def series_admittance(line: Line) -> np.ndarray:
    """``Y = Z^-1`` on the line's phases, zeros elsewhere."""
    p = line.phase_idx
    sub = line.z[np.ix_(p, p)]
    if sub.size == 0 or np.linalg.cond(sub) > 1e12:
        raise SingularImpedanceError(
            f"singular series impedance on line {line.from_bus}-{line.to_bus}"
        )
    Y = np.zeros((3, 3), dtype=complex)
    Y[np.ix_(p, p)] = np.linalg.inv(sub)
    return Y


class TreeGraph:
    """Undirected graph on integer node ids with CSR adjacency.

    Node ids are kept sorted, so internal index order equals id order;
    the placement tie-breaks rely on that.
    """

    def __init__(self, nodes: Iterable[int], edges: Iterable[tuple[int, int]]):
        self.nodes = np.array(sorted(set(int(n) for n in nodes)), dtype=np.int64)
        if len(self.nodes) == 0:
            raise FeederError("empty graph")
        e = np.array(list(edges), dtype=np.int64).reshape(-1, 2)
        ia = np.searchsorted(self.nodes, e[:, 0])
        ib = np.searchsorted(self.nodes, e[:, 1])
        n = len(self.nodes)
        for ids, ix in ((e[:, 0], ia), (e[:, 1], ib)):
            bad = (ix >= n) | (self.nodes[np.minimum(ix, n - 1)] != ids)
            if bad.any():
                raise UnknownBusError(f"edge references unknown bus {int(ids[bad][0])}")
        self.edges = np.stack([ia, ib], axis=1)
        heads = np.concatenate([ia, ib])
        tails = np.concatenate([ib, ia])
        eid = np.concatenate([np.arange(len(ia)), np.arange(len(ia))])
        order = np.lexsort((tails, heads))
        self.indices = tails[order]
        self.adj_edge = eid[order]
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(heads, minlength=n))]).astype(np.int64)

    @classmethod
    def path(cls, n: int) -> "TreeGraph":
        return cls(range(n), ((i, i + 1) for i in range(n - 1)))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def index(self, node_id: int) -> int:
        i = int(np.searchsorted(self.nodes, node_id))
        if i >= len(self.nodes) or self.nodes[i] != node_id:
            raise UnknownBusError(f"unknown bus id {node_id}")
        return i

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def bfs(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return kernels.ACTIVE.bfs_tree(self.indptr, self.indices, i)

    def is_tree(self) -> bool:
        if self.n_edges != self.n_nodes - 1:
            return False
        dist, _ = self.bfs(0)
        return bool((dist >= 0).all())

    def edge_ids(self) -> list[tuple[int, int]]:
        return [(int(self.nodes[a]), int(self.nodes[b])) for a, b in self.edges]

    @cached_property
    def hops(self) -> np.ndarray:
        """All-pairs hop distances (n x n), only sensible for small graphs."""
        return np.stack([self.bfs(i)[0] for i in range(self.n_nodes)])


@dataclass(frozen=True, eq=False)
class Feeder:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    source_bus: int
    base_kv: float
    base_kva: float
    name: str = ""
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(sorted(self.buses, key=lambda b: b.id)))
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            dup = sorted(i for i in ids if ids.count(i) > 1)[0]
            raise DuplicateBusError(f"duplicate bus id {dup}")
        _validate(self)

    # -- sizes and lookups ------------------------------------------------
    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @cached_property
    def bus_ids(self) -> np.ndarray:
        return np.array([b.id for b in self.buses], dtype=np.int64)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def bus(self, bus_id: int) -> Bus:
        try:
            return self.buses[self.bus_index[bus_id]]
        except KeyError:
            raise UnknownBusError(f"unknown bus id {bus_id}") from None

    @cached_property
    def graph(self) -> TreeGraph:
        return TreeGraph(self.bus_ids, ((ln.from_bus, ln.to_bus) for ln in self.lines))

    @cached_property
    def admittances(self) -> tuple[np.ndarray, ...]:
        return tuple(series_admittance(ln) for ln in self.lines)

    def line_index(self, a: int, b: int) -> int:
        for k, ln in enumerate(self.lines):
            if (ln.from_bus, ln.to_bus) in ((a, b), (b, a)):
                return k
        raise UnknownBusError(f"no line between {a} and {b}")

    # -- state layout -----------------------------------------------------
    @cached_property
    def mask(self) -> np.ndarray:
        """(N, 3) bool, phase present at bus."""
        m = np.zeros((self.n_buses, 3), dtype=bool)
        for i, b in enumerate(self.buses):
            for p in b.phases:
                m[i, PHASE_INDEX[p]] = True
        return m

    @cached_property
    def slots(self) -> np.ndarray:
        """(n_slots, 2) array of (bus index, phase index), buses in id order."""
        return np.argwhere(self.mask)

    @property
    def n_slots(self) -> int:
        return int(self.mask.sum())

    @cached_property
    def slot_table(self) -> np.ndarray:
        """(N, 3) slot number per (bus, phase), -1 for holes."""
        t = np.full((self.n_buses, 3), -1, dtype=np.int64)
        t[self.mask] = np.arange(self.n_slots)
        return t

    def slot(self, bus_id: int, phase: str) -> int:
        s = int(self.slot_table[self.bus_index[bus_id], PHASE_INDEX[phase]])
        if s < 0:
            raise PhaseMismatchError(f"phase {phase} absent at bus {bus_id}")
        return s

    def to_full(self, v: np.ndarray) -> np.ndarray:
        """Expand compact state(s) to (..., N, 3) with NaN holes."""
        v = np.asarray(v)
        out = np.full(v.shape[:-1] + (self.n_buses, 3), np.nan + 0j, dtype=complex)
        out[..., self.mask] = v
        return out

    def from_full(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full)[..., self.mask]

    @cached_property
    def source_voltage(self) -> np.ndarray:
        return np.exp(1j * SOURCE_ANGLES)

    @cached_property
    def z_base(self) -> float:
        return self.base_kv ** 2 * 1000.0 / self.base_kva

    @cached_property
    def digest(self) -> str:
        # rounded so that SI <-> per-unit round trips hash identically
        doc = _round_floats(to_document(self))
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _round_floats(obj):
    if isinstance(obj, float):
        return float(f"{obj:.12g}")
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_round_floats(v) for v in obj]
    return obj


def _validate(f: Feeder) -> None:
    idx = {b.id: b for b in f.buses}
    if f.source_bus not in idx:
        raise UnknownBusError(f"unknown source bus {f.source_bus}")
    for ln in f.lines:
        for end in (ln.from_bus, ln.to_bus):
            if end not in idx:
                raise UnknownBusError(f"line endpoint references unknown bus {end}")
        for end in (ln.from_bus, ln.to_bus):
            missing = set(ln.phases) - set(idx[end].phases)
            if missing:
                raise PhaseMismatchError(
                    f"line {ln.from_bus}-{ln.to_bus} phases {sorted(missing)} absent at bus {end}"
                )
        p = ln.phase_idx
        zs = ln.z[np.ix_(p, p)]
        if not np.allclose(zs, zs.T, rtol=0, atol=1e-12 * max(1.0, np.abs(zs).max())):
            raise FeederError(f"series impedance of line {ln.from_bus}-{ln.to_bus} not symmetric")
        series_admittance(ln)
    for b in f.buses:
        if b.load is not None:
            s = np.asarray(b.load.s)
            if b.load.conn == "wye":
                present = np.array([p in b.phases for p in PHASES])
            elif b.load.conn == "delta":
                present = np.array([
                    a in b.phases and c in b.phases for a, c in (("a", "b"), ("b", "c"), ("c", "a"))
                ])
            else:
                raise FeederError(f"bus {b.id}: unknown load connection {b.load.conn!r}")
            if np.any(s[~present] != 0):
                raise PhaseMismatchError(f"bus {b.id}: load defined on absent phase")
    nodes = [b.id for b in f.buses]
    edges = [(ln.from_bus, ln.to_bus) for ln in f.lines]
    g = TreeGraph(nodes, edges) if edges else None
    if g is None:
        if len(nodes) != 1:
            raise DisconnectedError("disconnected graph: no lines")
        return
    dist, _ = g.bfs(0)
    connected = bool((dist >= 0).all())
    if len(edges) > len(nodes) - 1 or (connected and len(edges) != len(nodes) - 1):
        raise CyclicTopologyError("cyclic topology: feeder must be radial")
    if not connected:
        raise DisconnectedError("disconnected graph")


# ---------------------------------------------------------------------------
# documents
# ---------------------------------------------------------------------------


def _cmat(rows) -> np.ndarray:
    a = np.asarray(rows, dtype=float)
    if a.shape == (3, 3, 2):
        return a[..., 0] + 1j * a[..., 1]
    raise FeederError("impedance/admittance matrices must be 3x3 of [re, im]")


def _cmat_doc(m: np.ndarray) -> list:
    return [[[float(x.real), float(x.imag)] for x in row] for row in m]


def from_document(doc: dict, name: str = "") -> Feeder:
    """Build a :class:`Feeder` from a parsed feeder document."""
    try:
        base_kv = float(doc["base_kv"])
        base_kva = float(doc["base_kva"])
        source = int(doc["source"])
        raw_buses = doc["buses"]
        raw_lines = doc["lines"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FeederError(f"malformed feeder document: {exc}") from None
    s_base = base_kva / 3.0
    z_base = base_kv ** 2 * 1000.0 / base_kva
    buses = []
    for rb in raw_buses:
        phases = tuple(p for p in PHASES if p in rb.get("phases", "abc"))
        load = None
        if rb.get("load"):
            ld = rb["load"]
            p = list(ld.get("p_kw", [0, 0, 0])) + [0, 0, 0]
            q = list(ld.get("q_kvar", [0, 0, 0])) + [0, 0, 0]
            s = tuple(complex(p[k], q[k]) / s_base for k in range(3))
            load = LoadSpec(conn=ld.get("conn", "wye"), s=s)
        buses.append(Bus(id=int(rb["id"]), phases=phases, load=load, has_res=bool(rb.get("res", False))))
    lines = []
    for rl in raw_lines:
        phases = tuple(p for p in PHASES if p in rl.get("phases", "abc"))
        pi = np.array([PHASE_INDEX[p] for p in phases])
        z = np.zeros((3, 3), dtype=complex)
        y = np.zeros((3, 3), dtype=complex)
        zd = _cmat(rl["z"]) / z_base
        z[np.ix_(pi, pi)] = zd[np.ix_(pi, pi)]
        if rl.get("yshunt") is not None:
            yd = _cmat(rl["yshunt"]) * z_base
            y[np.ix_(pi, pi)] = yd[np.ix_(pi, pi)]
        lines.append(Line(int(rl["from"]), int(rl["to"]), phases, z, y))
    return Feeder(tuple(buses), tuple(lines), source, base_kv, base_kva, name=name)


def to_document(f: Feeder) -> dict:
    s_base = f.base_kva / 3.0
    buses = []
    for b in f.buses:
        rb = {"id": b.id, "phases": "".join(b.phases), "res": b.has_res}
        if b.load is not None:
            rb["load"] = {
                "conn": b.load.conn,
                "p_kw": [float(s.real * s_base) for s in b.load.s],
                "q_kvar": [float(s.imag * s_base) for s in b.load.s],
            }
        buses.append(rb)
    lines = [
        {
            "from": ln.from_bus,
            "to": ln.to_bus,
            "phases": "".join(ln.phases),
            "z": _cmat_doc(ln.z * f.z_base),
            "yshunt": _cmat_doc(ln.yshunt / f.z_base),
        }
        for ln in f.lines
    ]
    return {"base_kv": f.base_kv, "base_kva": f.base_kva, "source": f.source_bus, "buses": buses, "lines": lines}


def data_dir() -> Path:
    env = os.environ.get("PAWNN_DATA_DIR")
    if env:
        return Path(env)
    return Path(str(resources.files("pawnn") / "data"))


def resolve_data_path(name: str | os.PathLike) -> Path:
    """Return ``name`` if it exists, else look it up in the bundled data dir."""
    p = Path(name)
    if p.exists():
        return p
    names = [p.name] if p.suffix else [p.name, p.name + ".json"]
    for base in (data_dir(), Path(str(resources.files("pawnn") / "data"))):
        for nm in names:
            if (base / nm).exists():
                return base / nm
    raise FileNotFoundError(f"feeder/scenario file not found: {name}")


def load_feeder(document: dict | str | os.PathLike) -> Feeder:
    """Load a feeder from a parsed document, a path, or a bundled file name."""
    if isinstance(document, dict):
        return from_document(document)
    path = resolve_data_path(document)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FeederError(f"{path}: invalid JSON: {exc}") from None
    return from_document(doc, name=path.stem)


def save_feeder(f: Feeder, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(to_document(f), indent=1), encoding="utf-8")


def hop_distance(feeder: Feeder | TreeGraph, a: int, b: int) -> int:
    """Number of lines on the tree path between buses ``a`` and ``b``."""
    g = feeder.graph if isinstance(feeder, Feeder) else feeder
    ia, ib = g.index(a), g.index(b)
    if g.n_nodes <= 2048:
        return int(g.hops[ia, ib])
    return int(g.bfs(ia)[0][ib])


def simple_feeder(
    edges: Sequence[tuple[int, int]],
    z: complex = 0.01 + 0.02j,
    loads: dict[int, complex] | None = None,
    source: int | None = None,
    phases: str = "abc",
    base_kv: float = 4.8,
    base_kva: float = 1000.0,
) -> Feeder:
    """Small balanced test feeder with per-unit diagonal impedances."""
    nodes = sorted({n for e in edges for n in e}) if edges else [source or 1]
    pi = [PHASE_INDEX[p] for p in phases]
    zm = np.zeros((3, 3), dtype=complex)
    zm[pi, pi] = z
    loads = loads or {}
    buses = []
    for n in nodes:
        ld = None
        if n in loads:
            s = [0j, 0j, 0j]
            for k in pi:
                s[k] = complex(loads[n])
            ld = LoadSpec("wye", tuple(s))
        buses.append(Bus(n, tuple(phases), ld))
    lines = tuple(Line(a, b, tuple(phases), zm.copy(), np.zeros((3, 3), dtype=complex)) for a, b in edges)
    return Feeder(tuple(buses), lines, nodes[0] if source is None else source, base_kv, base_kva)
