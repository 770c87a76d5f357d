"""Weighted least-squares state estimation by damped Gauss-Newton."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .grid import Feeder
from .measurements import MeasurementSet


@dataclass(frozen=True)
class GnOptions:
    max_iter: int = 100
    step_tol: float = 1e-8
    obj_tol: float = 1e-10
    lambda0: float = 1e-6
    lambda_grow: float = 10.0
    lambda_shrink: float = 0.1
    # damping used after a singular solve, relative to the largest curvature
    lambda_floor: float = 1e-10
    init: str = "flat"

    def __post_init__(self):
        if self.step_tol <= 0 or self.obj_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.lambda0 < 0 or self.lambda_floor <= 0:
            raise ValueError("damping must be nonnegative")
        if self.init not in ("flat", "provided"):
            raise ValueError(f"unknown init mode {self.init!r}")


@dataclass
class GnReport:
    estimate: np.ndarray
    iterations: int
    objective: list[float]
    converged: bool
    wall_time: float
    singular: bool = False
    pinned: np.ndarray = field(default=None, repr=False)


def flat_start(feeder: Feeder) -> np.ndarray:
    """Unit voltages at the nominal phase angles on every present slot."""
    return feeder.source_voltage[feeder.slots[:, 1]].astype(complex)


def gn_objective(mset: MeasurementSet, z: np.ndarray, v: np.ndarray) -> float:
    z = np.asarray(z, dtype=float)
    if z.shape != (len(mset),):
        raise ValueError(f"expected {len(mset)} measurement values, got {z.shape}")
    r = z - mset.h(v)
    w = mset.weights
    finite = np.isfinite(w)
    return float(np.sum(w[finite] * r[finite] ** 2))


def _pins(mset: MeasurementSet, z: np.ndarray):
    """Coordinates fixed by noiseless direct voltage readings."""
    n = mset.feeder.n_slots
    pinned = np.zeros(2 * n, dtype=bool)
    values = np.zeros(2 * n)
    for k, m in enumerate(mset.items):
        if m.noise_var > 0:
            continue
        if m.kind not in ("v_real", "v_imag"):
            raise ValueError(f"zero noise variance only supported for voltage phasors, not {m.kind}")
        coord = int(m.slots[0]) + (n if m.kind == "v_imag" else 0)
        pinned[coord] = True
        values[coord] = z[k]
    return pinned, values


def gauss_newton(mset: MeasurementSet, z: np.ndarray, options: GnOptions | None = None,
                 v0: np.ndarray | None = None, active: np.ndarray | None = None) -> GnReport:
    """Minimise ``sum w (z - h(v))^2`` starting from ``v0`` or the flat profile.

    Steps solve ``(H^T W H + lam I) dx = H^T W r``; ``lam`` grows after a
    rejected step or a singular system and shrinks after an accepted one.
    Measurements with zero variance must be voltage phasors and pin their
    coordinate to the measured value. ``active`` (bool over the real
    coordinates ``[Re v; Im v]``) restricts the unknowns; the rest stay at
    their starting values.
    """
    opts = options or GnOptions()
    t0 = time.perf_counter()
    z = np.asarray(z, dtype=float)
    if z.shape != (len(mset),):
        raise ValueError(f"expected {len(mset)} measurement values, got {z.shape}")
    feeder = mset.feeder
    n = feeder.n_slots
    if opts.init == "provided":
        if v0 is None:
            raise ValueError("init='provided' needs v0")
        v_init = np.asarray(v0, dtype=complex)
    else:
        v_init = flat_start(feeder) if v0 is None else np.asarray(v0, dtype=complex)
    x = np.concatenate([v_init.real, v_init.imag])
    pinned, pin_val = _pins(mset, z)
    x[pinned] = pin_val[pinned]
    free = ~pinned
    if active is not None:
        active = np.asarray(active, dtype=bool)
        if active.shape != (2 * n,):
            raise ValueError(f"active mask must have length {2 * n}")
        free &= active
    w = mset.weights
    use = np.isfinite(w)
    wu = w[use]
    zu = z[use]

    def objective(xx):
        r = zu - mset.h_real(xx)[use]
        return float(np.sum(wu * r * r)), r

    J, r = objective(x)
    trace = [J]
    lam = opts.lambda0
    singular = False
    converged = False
    it = 0
    while it < opts.max_iter:
        it += 1
        H = mset.jacobian(x)[use][:, free]
        HW = H.T * wu
        A = HW @ H
        g = HW @ r
        scale = float(np.max(np.diag(A))) if A.size else 1.0
        floor = opts.lambda_floor * max(scale, 1e-300)
        while True:
            try:
                c, low = cho_factor(A + lam * np.eye(A.shape[0]), check_finite=False)
                piv = np.abs(np.diag(c))
                if piv.min() ** 2 < 1e-14 * piv.max() ** 2:
                    raise LinAlgError("ill-conditioned normal equations")
                dx = cho_solve((c, low), g, check_finite=False)
                break
            except LinAlgError:
                singular = True
                lam = max(lam * opts.lambda_grow, floor)
        x_new = x.copy()
        x_new[free] += dx
        J_new, r_new = objective(x_new)
        if J_new <= J:
            step = float(np.max(np.abs(dx))) if dx.size else 0.0
            decrease = J - J_new
            x, J, r = x_new, J_new, r_new
            trace.append(J)
            lam = lam * opts.lambda_shrink
            if singular:
                lam = max(lam, floor)
            if step < opts.step_tol or decrease <= opts.obj_tol * max(trace[-2], 1e-300) or J == 0.0:
                converged = True
                break
        else:
            lam = max(lam * opts.lambda_grow, floor)
            if lam > 1e20 * max(scale, 1.0):
                break
    v = x[:n] + 1j * x[n:]
    return GnReport(v, it, trace, converged, time.perf_counter() - t0, singular, pinned)


def objective_gradient(mset: MeasurementSet, z: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``dJ/dx = -2 H^T W r`` over real coordinates (finite weights only)."""
    x = np.concatenate([v.real, v.imag])
    w = mset.weights
    use = np.isfinite(w)
    r = (np.asarray(z) - mset.h_real(x))[use]
    H = mset.jacobian(x)[use]
    return -2.0 * H.T @ (w[use] * r)
