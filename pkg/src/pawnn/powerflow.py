"""Radial backward/forward sweep power flow.

One sweep is written in matrix form: branch currents are subtree sums of the
bus draw currents, the voltage at a bus is the source voltage minus the drops
of every line on its path to the source. Both steps collapse into one
precomputed "path impedance" matrix ``K`` with ``v = v_src - K i_draw(v)``,
which lets the same iteration run for many load scenarios at once.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .grid import PHASE_INDEX, PHASES, Feeder, series_admittance

DELTA_PAIRS = ((0, 1), (1, 2), (2, 0))
DELTA_LABELS = ("ab", "bc", "ca")


class PowerFlowError(RuntimeError):
    def __init__(self, msg, mismatch=None, iterations=None):
        super().__init__(msg)
        self.mismatch = mismatch
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class LoadScenario:
    """Per-bus demand in per-unit, net of renewable output.

    ``wye[n, phi]`` is phase-to-neutral demand, ``delta[n, k]`` the demand
    across pair ``DELTA_LABELS[k]``. A leading sample axis is allowed.
    """

    wye: np.ndarray
    delta: np.ndarray

    @classmethod
    def nominal(cls, feeder: Feeder) -> "LoadScenario":
        wye = np.zeros((feeder.n_buses, 3), dtype=complex)
        delta = np.zeros((feeder.n_buses, 3), dtype=complex)
        for i, b in enumerate(feeder.buses):
            if b.load is None:
                continue
            (wye if b.load.conn == "wye" else delta)[i] = b.load.s
        return cls(wye, delta)

    @classmethod
    def zero(cls, feeder: Feeder) -> "LoadScenario":
        z = np.zeros((feeder.n_buses, 3), dtype=complex)
        return cls(z, z.copy())

    def scaled(self, factor) -> "LoadScenario":
        return LoadScenario(self.wye * factor, self.delta * factor)

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.wye.shape[:-2]

    def __getitem__(self, k) -> "LoadScenario":
        return LoadScenario(self.wye[k], self.delta[k])


class _Network:
    """Precomputed sweep matrices for a feeder."""

    def __init__(self, feeder: Feeder, shunt: bool):
        n = feeder.n_slots
        slots = feeder.slots
        g = feeder.graph
        src = g.index(feeder.source_bus)
        dist, parent = g.bfs(src)
        order = np.argsort(dist, kind="stable")

        # subtree membership: ancestors[b] lists buses on path from source (exclusive)
        K = np.zeros((n, n), dtype=complex)
        Ysh = np.zeros((n, n), dtype=complex)
        Yser = np.zeros((n, n), dtype=complex)
        slot_tab = feeder.slot_table
        children_of = {i: [] for i in range(g.n_nodes)}
        for b in order[1:]:
            children_of[int(parent[b])].append(int(b))

        def subtree(b):
            out, stack = [], [b]
            while stack:
                x = stack.pop()
                out.append(x)
                stack.extend(children_of[x])
            return out

        for k, ln in enumerate(feeder.lines):
            a, b = g.index(ln.from_bus), g.index(ln.to_bus)
            child = b if parent[b] == a else a
            sub = subtree(child)
            sub_slots = np.concatenate([slot_tab[x][slot_tab[x] >= 0] for x in sub])
            ph = slots[sub_slots, 1]
            K[np.ix_(sub_slots, sub_slots)] += ln.z[np.ix_(ph, ph)]

            Y = series_admittance(ln)
            p = ln.phase_idx
            sa = slot_tab[a, p]
            sb = slot_tab[b, p]
            Yp = Y[np.ix_(p, p)]
            Yser[np.ix_(sa, sa)] += Yp
            Yser[np.ix_(sb, sb)] += Yp
            Yser[np.ix_(sa, sb)] -= Yp
            Yser[np.ix_(sb, sa)] -= Yp
            if shunt:
                half = 0.5 * ln.yshunt[np.ix_(p, p)]
                Ysh[np.ix_(sa, sa)] += half
                Ysh[np.ix_(sb, sb)] += half

        self.K = K
        self.Yser = Yser
        self.Ysh = Ysh
        self.has_shunt = bool(np.any(Ysh))
        self.v_src = feeder.source_voltage[slots[:, 1]].astype(complex)
        self.source_slots = slot_tab[src][slot_tab[src] >= 0]
        self.non_source = np.ones(n, dtype=bool)
        self.non_source[self.source_slots] = False

        # delta pair incidence: i_draw += D @ i_pair
        pair_bus, pair_k, pa, pb = [], [], [], []
        for i, bus in enumerate(feeder.buses):
            for k, (x, y) in enumerate(DELTA_PAIRS):
                if slot_tab[i, x] >= 0 and slot_tab[i, y] >= 0:
                    pair_bus.append(i)
                    pair_k.append(k)
                    pa.append(slot_tab[i, x])
                    pb.append(slot_tab[i, y])
        self.pair_bus = np.array(pair_bus, dtype=np.int64)
        self.pair_k = np.array(pair_k, dtype=np.int64)
        self.pa = np.array(pa, dtype=np.int64)
        self.pb = np.array(pb, dtype=np.int64)
        Dm = np.zeros((n, len(pa)))
        Dm[self.pa, np.arange(len(pa))] += 1.0
        Dm[self.pb, np.arange(len(pa))] -= 1.0
        self.Dm = Dm
        self.slot_bus = slots[:, 0]
        self.slot_phase = slots[:, 1]

    def draw_current(self, v, s_wye, s_pair):
        """Current drawn at every slot by loads and shunts. ``v`` is (S, n)."""
        if np.any(v == 0):
            raise PowerFlowError("zero voltage encountered while computing load currents")
        i = np.conj(s_wye / v)
        if self.pa.size:
            dv = v[:, self.pa] - v[:, self.pb]
            if np.any(dv == 0) and np.any(s_pair != 0):
                raise PowerFlowError("zero line-to-line voltage at a delta load")
            with np.errstate(divide="ignore", invalid="ignore"):
                ip = np.where(s_pair != 0, np.conj(s_pair / dv), 0)
            i = i + ip @ self.Dm.T
        if self.has_shunt:
            i = i + v @ self.Ysh.T
        return i

    def slot_loads(self, loads: LoadScenario):
        wye = np.asarray(loads.wye)
        delta = np.asarray(loads.delta)
        s_wye = wye[..., self.slot_bus, self.slot_phase]
        s_pair = delta[..., self.pair_bus, self.pair_k]
        return np.atleast_2d(s_wye), np.atleast_2d(s_pair)


@lru_cache(maxsize=16)
def _network(feeder: Feeder, shunt: bool) -> _Network:
    return _Network(feeder, shunt)


def solve_batch(feeder: Feeder, loads: LoadScenario, tol: float = 1e-8, max_iter: int = 200,
                shunt: bool = True):
    """Sweep every scenario in ``loads`` (leading sample axis).

    Returns ``(v, converged, iterations)``; ``v`` is (S, n_slots). Each
    sample stops updating as soon as its own step falls below ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    net = _network(feeder, bool(shunt))
    s_wye, s_pair = net.slot_loads(loads)
    S = s_wye.shape[0]
    v = np.tile(net.v_src, (S, 1))
    active = np.ones(S, dtype=bool)
    iters = np.zeros(S, dtype=np.int64)
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        va = v[idx]
        i_draw = net.draw_current(va, s_wye[idx], s_pair[idx])
        v_new = net.v_src - i_draw @ net.K.T
        step = np.abs(v_new - va).max(axis=1)
        v[idx] = v_new
        iters[idx] = it
        done = step < tol
        active[idx[done]] = False
    return v, ~active, iters


def solve(feeder: Feeder, loads: LoadScenario, tol: float = 1e-8, max_iter: int = 200,
          shunt: bool = True, return_iterations: bool = False):
    """Ground-truth state for one load scenario.

    Raises :class:`PowerFlowError` if the sweep does not settle.
    """
    v, ok, iters = solve_batch(feeder, LoadScenario(loads.wye[None], loads.delta[None]), tol, max_iter, shunt)
    if not ok[0]:
        r = residual(feeder, loads, v[0], shunt=shunt)
        raise PowerFlowError(f"no convergence after {max_iter} sweeps (mismatch {r:.3e})", r, max_iter)
    if return_iterations:
        return v[0], int(iters[0])
    return v[0]


def residual(feeder: Feeder, loads: LoadScenario, v: np.ndarray, shunt: bool = True) -> float:
    """Largest per-slot power mismatch at non-source buses."""
    net = _network(feeder, bool(shunt))
    s_wye, s_pair = net.slot_loads(loads)
    v2 = np.atleast_2d(v)
    mis = v2 * np.conj(v2 @ net.Yser.T + net.draw_current(v2, s_wye, s_pair))
    return float(np.abs(mis[:, net.non_source]).max())


def sweep_once(feeder: Feeder, loads: LoadScenario, v: np.ndarray, shunt: bool = True) -> np.ndarray:
    net = _network(feeder, bool(shunt))
    s_wye, s_pair = net.slot_loads(loads)
    return (net.v_src - net.draw_current(np.atleast_2d(v), s_wye, s_pair) @ net.K.T)[0]


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def write_loads_csv(path, feeder: Feeder, loads: LoadScenario) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bus", "phase", "p_pu", "q_pu"])
        for i, b in enumerate(feeder.buses):
            for k, p in enumerate(PHASES):
                s = loads.wye[i, k]
                if s != 0:
                    w.writerow([b.id, p, repr(float(s.real)), repr(float(s.imag))])
            for k, lab in enumerate(DELTA_LABELS):
                s = loads.delta[i, k]
                if s != 0:
                    w.writerow([b.id, lab, repr(float(s.real)), repr(float(s.imag))])


def read_loads_csv(path, feeder: Feeder) -> LoadScenario:
    loads = LoadScenario.zero(feeder)
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            i = feeder.bus_index[int(row["bus"])]
            s = complex(float(row["p_pu"]), float(row["q_pu"]))
            ph = row["phase"]
            if ph in PHASE_INDEX:
                loads.wye[i, PHASE_INDEX[ph]] += s
            else:
                loads.delta[i, DELTA_LABELS.index(ph)] += s
    return loads


def write_states_csv(path, feeder: Feeder, v: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bus", "phase", "v_re", "v_im"])
        for s, (bi, pi) in enumerate(feeder.slots):
            w.writerow([feeder.buses[bi].id, PHASES[pi], repr(float(v[s].real)), repr(float(v[s].imag))])


def read_states_csv(path, feeder: Feeder) -> np.ndarray:
    v = np.zeros(feeder.n_slots, dtype=complex)
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            v[feeder.slot(int(row["bus"]), row["phase"])] = complex(float(row["v_re"]), float(row["v_im"]))
    return v
