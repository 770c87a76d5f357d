"""Measurements as quadratic forms of the complex state.

Every measurement is ``h(v) = conj(v)^T D v + c^T v + conj(c)^T conj(v)`` with
``D`` Hermitian; only the few state slots a measurement touches are stored.
For Gauss-Newton the forms are rewritten over real coordinates
``x = [Re v; Im v]`` as ``h(x) = x^T M x + g^T x`` with
``M = [[Re D, -Im D], [Im D, Re D]]`` and ``g = 2 [Re c; -Im c]``.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .grid import PHASE_INDEX, PHASES, Feeder, PhaseMismatchError, resolve_data_path

KINDS = (
    "v_real", "v_imag", "i_real", "i_imag", "v_mag2", "i_mag2",
    "p_flow", "q_flow", "p_inj", "q_inj", "pseudo_p", "pseudo_q",
)
KIND_INDEX = {k: i for i, k in enumerate(KINDS)}
BUS_KINDS = {"v_real", "v_imag", "v_mag2", "p_inj", "q_inj", "pseudo_p", "pseudo_q"}
LINE_KINDS = {"i_real", "i_imag", "i_mag2", "p_flow", "q_flow"}
PSEUDO_KINDS = {"pseudo_p", "pseudo_q"}

# phase label for a whole-bus (three-phase total) power measurement
TOTAL = "sum"

DEFAULT_NOISE = {"pmu": 1e-6, "current": 1e-3, "pseudo": 1e-2}


class MeasurementError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QuadraticMeasurement:
    """One real-valued measurement over the state slots in ``slots``."""

    kind: str
    location: tuple[int, ...]  # (bus,) or (from_bus, to_bus)
    phase: str                 # "a" | "b" | "c" | "sum"
    slots: np.ndarray          # state slots touched
    D: np.ndarray              # Hermitian, len(slots) x len(slots)
    c: np.ndarray              # complex, len(slots)
    noise_var: float

    @property
    def weight(self) -> float:
        return np.inf if self.noise_var == 0 else 1.0 / self.noise_var

    @property
    def is_pseudo(self) -> bool:
        return self.kind in PSEUDO_KINDS

    @property
    def buses(self) -> tuple[int, ...]:
        return self.location

    def sort_key(self):
        ph = 3 if self.phase == TOTAL else PHASE_INDEX[self.phase]
        return (KIND_INDEX[self.kind], self.location, ph)

    def label(self) -> str:
        loc = "-".join(str(b) for b in self.location)
        return f"{self.kind}@{loc}.{self.phase}"

    def real_form(self, n_slots: int):
        """``(rows_i, rows_j, vals, lin_i, lin_v)`` over real coordinates."""
        s = np.asarray(self.slots, dtype=np.int64)
        coords = np.concatenate([s, s + n_slots])
        Dr, Di = self.D.real, self.D.imag
        M = np.block([[Dr, -Di], [Di, Dr]])
        g = 2.0 * np.concatenate([self.c.real, -self.c.imag])
        ii, jj = np.nonzero(M)
        li = np.nonzero(g)[0]
        return coords[ii], coords[jj], M[ii, jj], coords[li], g[li]


def evaluate(m: QuadraticMeasurement, v: np.ndarray) -> float:
    vs = np.asarray(v)[m.slots]
    val = np.conj(vs) @ m.D @ vs + 2.0 * (m.c @ vs).real
    return float(val.real)


def jacobian_row(m: QuadraticMeasurement, v: np.ndarray) -> np.ndarray:
    """Gradient of ``h`` with respect to ``[Re v; Im v]``."""
    v = np.asarray(v)
    n = v.shape[0]
    x = np.concatenate([v.real, v.imag])
    qi, qj, qv, li, lv = m.real_form(n)
    grad = np.zeros(2 * n)
    np.add.at(grad, qi, 2.0 * qv * x[qj])
    np.add.at(grad, li, lv)
    return grad


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def _line_current_rows(feeder: Feeder, a: int, b: int, shunt: bool) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients of the per-phase current leaving bus ``a`` toward ``b``.

    Returns ``(slots, A)`` where ``A`` is (3, len(slots)); row ``phi`` gives
    ``i_phi = A[phi] @ v[slots]``. Rows of absent phases are zero.
    """
    k = feeder.line_index(a, b)
    ln = feeder.lines[k]
    Y = feeder.admittances[k]
    p = ln.phase_idx
    sa = np.array([feeder.slot(a, PHASES[q]) for q in p])
    sb = np.array([feeder.slot(b, PHASES[q]) for q in p])
    A = np.zeros((3, 2 * len(p)), dtype=complex)
    Yp = Y[np.ix_(p, p)]
    A[np.ix_(p, np.arange(len(p)))] = Yp
    A[np.ix_(p, len(p) + np.arange(len(p)))] = -Yp
    if shunt:
        A[np.ix_(p, np.arange(len(p)))] += 0.5 * ln.yshunt[np.ix_(p, p)]
    return np.concatenate([sa, sb]), A


def _injection_rows(feeder: Feeder, bus: int, shunt: bool) -> tuple[np.ndarray, np.ndarray]:
    """Per-phase current injected by ``bus`` into the network."""
    rows = {}
    g = feeder.graph
    others = [int(g.nodes[w]) for w in g.neighbors(g.index(bus))]
    pieces = [_line_current_rows(feeder, bus, o, shunt) for o in others]
    for slots, A in pieces:
        for col, s in enumerate(slots):
            rows.setdefault(int(s), np.zeros(3, dtype=complex))
            rows[int(s)] += A[:, col]
    slots = np.array(sorted(rows), dtype=np.int64)
    A = np.stack([rows[int(s)] for s in slots], axis=1) if len(slots) else np.zeros((3, 0), complex)
    return slots, A


def _merge(slots_list: Sequence[np.ndarray]) -> np.ndarray:
    return np.array(sorted(set(int(s) for sl in slots_list for s in sl)), dtype=np.int64)


def _embed(vec: np.ndarray, slots: np.ndarray, into: np.ndarray) -> np.ndarray:
    out = np.zeros(len(into), dtype=complex)
    pos = np.searchsorted(into, slots)
    np.add.at(out, pos, vec)
    return out


def _power_forms(a_row: np.ndarray, e_row: np.ndarray):
    """Hermitian (P, Q) matrices of ``s = (e^T v) * conj(a^T v)``."""
    A = np.outer(np.conj(a_row), e_row)
    P = 0.5 * (A + A.conj().T)
    Q = (A - A.conj().T) / 2j
    return P, Q


def build_measurement(
    feeder: Feeder,
    kind: str,
    location: int | Sequence[int],
    phase: str,
    noise_var: float,
    shunt: bool = False,
) -> QuadraticMeasurement:
    """Quadratic form of one physical measurement.

    ``location`` is a bus id for bus quantities and ``(from, to)`` for line
    quantities; line currents and flows are taken at the ``from`` end.
    ``phase="sum"`` is accepted for injections and pseudo-measurements and
    gives the three-phase total. ``shunt`` adds half the line's shunt
    admittance to the from-end current.
    """
    if kind not in KIND_INDEX:
        raise MeasurementError(f"unknown measurement kind {kind!r}")
    loc = (int(location),) if np.isscalar(location) else tuple(int(x) for x in location)
    if kind in LINE_KINDS and len(loc) != 2:
        raise MeasurementError(f"{kind} needs a line location (from, to)")
    if kind in BUS_KINDS and len(loc) != 1:
        raise MeasurementError(f"{kind} needs a bus location")
    for b in loc:
        feeder.bus(b)
    if noise_var < 0:
        raise MeasurementError("noise variance must be nonnegative")

    if phase == TOTAL:
        if kind not in {"p_inj", "q_inj", "pseudo_p", "pseudo_q"}:
            raise MeasurementError(f"phase 'sum' is only valid for injections, not {kind}")
        parts = [
            build_measurement(feeder, kind, loc, p, noise_var, shunt)
            for p in feeder.bus(loc[0]).phases
        ]
        slots = _merge([m.slots for m in parts])
        D = np.zeros((len(slots), len(slots)), dtype=complex)
        for m in parts:
            pos = np.searchsorted(slots, m.slots)
            D[np.ix_(pos, pos)] += m.D
        return QuadraticMeasurement(kind, loc, TOTAL, slots, D, np.zeros(len(slots), complex), float(noise_var))

    if phase not in PHASE_INDEX:
        raise MeasurementError(f"unknown phase {phase!r}")
    phi = PHASE_INDEX[phase]
    for b in loc:
        if phase not in feeder.bus(b).phases:
            raise PhaseMismatchError(f"phase {phase} absent at bus {b}")

    if kind in {"v_real", "v_imag", "v_mag2"}:
        s = np.array([feeder.slot(loc[0], phase)])
        D = np.zeros((1, 1), dtype=complex)
        c = np.zeros(1, dtype=complex)
        if kind == "v_real":
            c[0] = 0.5
        elif kind == "v_imag":
            c[0] = 1 / 2j
        else:
            D[0, 0] = 1.0
        return QuadraticMeasurement(kind, loc, phase, s, D, c, float(noise_var))

    if kind in LINE_KINDS:
        ln = feeder.lines[feeder.line_index(*loc)]
        if phase not in ln.phases:
            raise PhaseMismatchError(f"phase {phase} absent on line {loc[0]}-{loc[1]}")
        slots, A = _line_current_rows(feeder, loc[0], loc[1], shunt)
    else:
        slots, A = _injection_rows(feeder, loc[0], shunt)
    a = A[phi]
    n = len(slots)
    if kind in {"i_real", "i_imag"}:
        c = 0.5 * a if kind == "i_real" else a / 2j
        return QuadraticMeasurement(kind, loc, phase, slots, np.zeros((n, n), complex), c, float(noise_var))
    if kind == "i_mag2":
        D = np.outer(np.conj(a), a)
        return QuadraticMeasurement(kind, loc, phase, slots, D, np.zeros(n, complex), float(noise_var))
    # power quantities: own voltage times conj of current
    own = feeder.slot(loc[0], phase)
    allslots = _merge([slots, [own]])
    a_full = _embed(a, slots, allslots)
    e_full = _embed(np.array([1.0 + 0j]), np.array([own]), allslots)
    P, Q = _power_forms(a_full, e_full)
    D = P if kind in {"p_flow", "p_inj", "pseudo_p"} else Q
    return QuadraticMeasurement(kind, loc, phase, allslots, D, np.zeros(len(allslots), complex), float(noise_var))


# ---------------------------------------------------------------------------
# measurement sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    feeder: Feeder
    items: tuple[QuadraticMeasurement, ...]
    shunt: bool = False

    def __post_init__(self):
        if not self.items:
            raise MeasurementError("empty measurement set")
        object.__setattr__(self, "items", tuple(sorted(self.items, key=QuadraticMeasurement.sort_key)))

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, k):
        return self.items[k]

    @property
    def n_coords(self) -> int:
        return 2 * self.feeder.n_slots

    @property
    def n_pseudo(self) -> int:
        return sum(m.is_pseudo for m in self.items)

    @property
    def n_realtime(self) -> int:
        return len(self) - self.n_pseudo

    @cached_property
    def noise_var(self) -> np.ndarray:
        return np.array([m.noise_var for m in self.items])

    @cached_property
    def weights(self) -> np.ndarray:
        var = self.noise_var
        with np.errstate(divide="ignore"):
            return np.where(var > 0, 1.0 / np.where(var > 0, var, 1.0), np.inf)

    @cached_property
    def labels(self) -> list[str]:
        return [m.label() for m in self.items]

    @cached_property
    def compiled(self):
        """Concatenated real-coordinate COO arrays for the kernels."""
        n = self.feeder.n_slots
        qr, qi, qj, qv, lr, li, lv = [], [], [], [], [], [], []
        for r, m in enumerate(self.items):
            a, b, v, c, g = m.real_form(n)
            qr.append(np.full(len(a), r)); qi.append(a); qj.append(b); qv.append(v)
            lr.append(np.full(len(c), r)); li.append(c); lv.append(g)
        cat = lambda xs, dt: np.ascontiguousarray(np.concatenate(xs).astype(dt))  # noqa: E731
        return (
            cat(qr, np.int64), cat(qi, np.int64), cat(qj, np.int64), cat(qv, np.float64),
            cat(lr, np.int64), cat(li, np.int64), cat(lv, np.float64),
        )

    def h(self, v: np.ndarray) -> np.ndarray:
        """Evaluate all measurements at state(s) ``v`` (n,) or (S, n)."""
        v = np.asarray(v)
        X = np.concatenate([v.real, v.imag], axis=-1)
        out = kernels.ACTIVE.quad_eval(*self.compiled, np.atleast_2d(X), len(self))
        return out[0] if v.ndim == 1 else out

    def h_real(self, x: np.ndarray) -> np.ndarray:
        return kernels.ACTIVE.quad_eval(*self.compiled, np.atleast_2d(x), len(self))[0]

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Stacked gradient rows at real coordinates ``x``."""
        return kernels.ACTIVE.quad_jacobian(*self.compiled, x, len(self), self.n_coords)

    def subset(self, keep: Iterable[int]) -> "MeasurementSet":
        return MeasurementSet(self.feeder, tuple(self.items[k] for k in keep), self.shunt)

    def with_noise_var(self, updates: dict[int, float]) -> "MeasurementSet":
        items = list(self.items)
        for k, var in updates.items():
            m = items[k]
            items[k] = QuadraticMeasurement(m.kind, m.location, m.phase, m.slots, m.D, m.c, float(var))
        return MeasurementSet(self.feeder, tuple(items), self.shunt)

    def indices_at_bus(self, bus: int, kinds: Iterable[str] | None = None) -> list[int]:
        kinds = set(kinds) if kinds is not None else None
        return [
            k for k, m in enumerate(self.items)
            if m.location == (bus,) and (kinds is None or m.kind in kinds)
        ]


def synthesize(mset: MeasurementSet, v_true: np.ndarray, rng_seed: int, noise_scale: float = 1.0) -> np.ndarray:
    """``z = h(v_true) + n`` with ``n ~ N(0, noise_var)``; reproducible from the seed."""
    v_true = np.asarray(v_true)
    clean = mset.h(v_true)
    rng = np.random.Generator(np.random.Philox(rng_seed))
    noise = rng.standard_normal(clean.shape) * np.sqrt(mset.noise_var) * noise_scale
    return clean + noise


# ---------------------------------------------------------------------------
# configuration documents
# ---------------------------------------------------------------------------


def _expand_phases(feeder: Feeder, kind: str, loc: tuple[int, ...], phase: str) -> list[str]:
    if phase != "all":
        return [phase]
    if kind in LINE_KINDS:
        return list(feeder.lines[feeder.line_index(*loc)].phases)
    return list(feeder.bus(loc[0]).phases)


def measurement_set_from_config(feeder: Feeder, config: Sequence[dict], shunt: bool = False) -> MeasurementSet:
    """Build a set from ``[{kind, bus | line, phase, sigma2}, ...]``.

    ``phase`` may be a single phase, ``"all"`` (one measurement per present
    phase) or ``"sum"`` (three-phase total, injections only).
    """
    items = []
    for entry in config:
        unknown = set(entry) - {"kind", "bus", "line", "phase", "sigma2"}
        if unknown:
            raise MeasurementError(f"unknown measurement keys {sorted(unknown)}")
        kind = entry["kind"]
        if "bus" in entry:
            loc = (int(entry["bus"]),)
        elif "line" in entry:
            loc = tuple(int(x) for x in entry["line"])
        else:
            raise MeasurementError(f"measurement entry without location: {entry}")
        try:
            sigma2 = float(entry["sigma2"])
        except KeyError:
            raise MeasurementError(f"measurement entry without sigma2: {entry}") from None
        for ph in _expand_phases(feeder, kind, loc, entry.get("phase", "all")):
            items.append(build_measurement(feeder, kind, loc, ph, sigma2, shunt=shunt))
    return MeasurementSet(feeder, tuple(items), shunt)


def load_measurement_config(path: str | os.PathLike) -> list[dict]:
    return json.loads(resolve_data_path(path).read_text(encoding="utf-8"))


def write_dataset_csv(path, z: np.ndarray, labels: Sequence[str], seed: int | None = None) -> None:
    z = np.atleast_2d(z)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if seed is not None:
            fh.write(f"# seed={seed}\n")
        w = csv.writer(fh)
        w.writerow(["sample_id", *labels])
        for i, row in enumerate(z):
            w.writerow([i, *(repr(float(x)) for x in row)])


def read_dataset_csv(path) -> tuple[np.ndarray, list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    header, body = rows[0], rows[1:]
    z = np.array([[float(x) for x in r[1:]] for r in body]).reshape(len(body), len(header) - 1)
    return z, header[1:]
