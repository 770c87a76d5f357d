"""Topology-pruned block-sparse feed-forward network.

Every layer maps ``(batch, N, d_in)`` to ``(batch, N, d_out)`` through an
N x N grid of ``d_out x d_in`` blocks. Only the diagonal blocks and the
blocks of adjacent buses exist; they are stored as ``(n_blocks, d_out, d_in)``
in row-major block order, so pruned weights are never materialised.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .grid import Feeder, TreeGraph, hop_distance
from .measurements import BUS_KINDS, MeasurementSet

SCHEMA_VERSION = 1
LEAK = 0.01
OUT_WIDTH = 6  # Re/Im for phases a, b, c


class ModelError(ValueError):
    pass


class TrainingDivergence(RuntimeError):
    def __init__(self, epoch):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def _leaky(z):
    return np.where(z > 0, z, LEAK * z)


def _leaky_grad(z):
    return np.where(z > 0, 1.0, LEAK)


ACTIVATIONS = {
    "leaky_relu": (_leaky, _leaky_grad),
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
}


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BlockMask:
    """Allowed block pattern of one layer."""

    n_nodes: int
    brow: np.ndarray
    bcol: np.ndarray
    row_start: np.ndarray
    col_order: np.ndarray
    col_start: np.ndarray
    dout: int
    din: int

    @property
    def n_blocks(self) -> int:
        return len(self.brow)

    @property
    def n_weights(self) -> int:
        return self.n_blocks * self.dout * self.din

    @property
    def pattern(self) -> np.ndarray:
        P = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        P[self.brow, self.bcol] = True
        return P

    def dense(self, W: np.ndarray) -> np.ndarray:
        """Expand stored blocks to the full ``(N*dout, N*din)`` matrix."""
        D = np.zeros((self.n_nodes, self.dout, self.n_nodes, self.din))
        D[self.brow, :, self.bcol, :] = W
        return D.reshape(self.n_nodes * self.dout, self.n_nodes * self.din)

    def dense_mask(self) -> np.ndarray:
        return self.dense(np.ones((self.n_blocks, self.dout, self.din))) != 0


def _graph_of(obj) -> TreeGraph:
    return obj.graph if isinstance(obj, Feeder) else obj


def block_pattern(graph) -> tuple[np.ndarray, np.ndarray]:
    """Block coordinates (row-major) for diagonal plus adjacency."""
    g = _graph_of(graph)
    n = g.n_nodes
    rows = np.concatenate([np.arange(n), g.edges[:, 0], g.edges[:, 1]])
    cols = np.concatenate([np.arange(n), g.edges[:, 1], g.edges[:, 0]])
    order = np.lexsort((cols, rows))
    return rows[order].astype(np.int64), cols[order].astype(np.int64)


def build_mask(graph, widths: Sequence[int]) -> list[BlockMask]:
    """One mask per layer for widths ``(d_0, d_1, ..., d_K)``."""
    if len(widths) < 2:
        raise ModelError("need at least an input and an output width")
    if any(int(w) < 1 for w in widths):
        raise ModelError("widths must be positive")
    g = _graph_of(graph)
    brow, bcol = block_pattern(g)
    n = g.n_nodes
    row_start = np.searchsorted(brow, np.arange(n + 1)).astype(np.int64)
    col_order = np.lexsort((brow, bcol)).astype(np.int64)
    col_start = np.searchsorted(bcol[col_order], np.arange(n + 1)).astype(np.int64)
    return [
        BlockMask(n, brow, bcol, row_start, col_order, col_start, int(widths[t + 1]), int(widths[t]))
        for t in range(len(widths) - 1)
    ]


# ---------------------------------------------------------------------------
# input and output layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InputLayout:
    """Where each measurement lands: bus block index and position in it."""

    bus: np.ndarray
    pos: np.ndarray
    d0: int
    n_nodes: int

    def to_document(self) -> dict:
        return {"bus": self.bus.tolist(), "pos": self.pos.tolist(), "d0": self.d0}


def pmu_buses(mset: MeasurementSet) -> set[int]:
    return {m.location[0] for m in mset.items if m.kind in ("v_real", "v_imag")}


def assign_inputs(mset: MeasurementSet, pmu: set[int] | None = None, d0: int | None = None) -> InputLayout:
    """Bus measurements go to their bus. A line measurement goes to the
    endpoint without a μPMU, or to the endpoint nearer the source when both
    or neither carry one."""
    feeder = mset.feeder
    g = feeder.graph
    pmu = pmu_buses(mset) if pmu is None else set(pmu)
    depth, _ = g.bfs(g.index(feeder.source_bus))
    bus = np.empty(len(mset), dtype=np.int64)
    for k, m in enumerate(mset.items):
        if m.kind in BUS_KINDS:
            b = m.location[0]
        else:
            a, c = m.location
            if (a in pmu) != (c in pmu):
                b = c if a in pmu else a
            else:
                b = a if depth[g.index(a)] < depth[g.index(c)] else c
        bus[k] = g.index(b)
    pos = np.zeros(len(mset), dtype=np.int64)
    count = np.zeros(g.n_nodes, dtype=np.int64)
    for k in range(len(mset)):
        pos[k] = count[bus[k]]
        count[bus[k]] += 1
    need = int(count.max()) if len(mset) else 1
    if d0 is None:
        d0 = max(need, 1)
    elif need > d0:
        worst = int(np.argmax(count))
        raise ModelError(f"bus {int(g.nodes[worst])} needs {need} input slots but d0={d0}")
    return InputLayout(bus, pos, int(d0), g.n_nodes)


def assemble_input(z: np.ndarray, layout: InputLayout, mean: np.ndarray | None = None,
                   std: np.ndarray | None = None) -> np.ndarray:
    """Scatter normalised measurements into ``(S, N, d0)`` blocks."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != len(layout.bus):
        raise ModelError(f"expected {len(layout.bus)} measurement columns, got {z.shape[1]}")
    if mean is not None:
        z = (z - mean) / std
    x = np.zeros((z.shape[0], layout.n_nodes, layout.d0))
    x[:, layout.bus, layout.pos] = z
    return x


def output_mask(feeder: Feeder) -> np.ndarray:
    """``(N, 6)`` bool: which Re/Im outputs correspond to present phases."""
    return np.repeat(feeder.mask, 2, axis=1)


def states_to_targets(feeder: Feeder, v: np.ndarray) -> np.ndarray:
    """Slot voltages ``(S, n_slots)`` to ``(S, N, 6)`` with zeros on holes."""
    v = np.atleast_2d(v)
    out = np.zeros((v.shape[0], feeder.n_buses, OUT_WIDTH))
    b, p = feeder.slots[:, 0], feeder.slots[:, 1]
    out[:, b, 2 * p] = v.real
    out[:, b, 2 * p + 1] = v.imag
    return out


def targets_to_states(feeder: Feeder, y: np.ndarray) -> np.ndarray:
    b, p = feeder.slots[:, 0], feeder.slots[:, 1]
    return y[:, b, 2 * p] + 1j * y[:, b, 2 * p + 1]


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class PawnnModel:
    feeder: Feeder
    masks: list[BlockMask]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]
    layout: InputLayout
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray
    labels: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.masks[0].din,) + tuple(m.dout for m in self.masks)

    @property
    def n_layers(self) -> int:
        return len(self.masks)

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "PawnnModel":
        return replace(self, weights=[p.copy() for p in params[0::2]], biases=[p.copy() for p in params[1::2]])

    def copy(self) -> "PawnnModel":
        return self.with_params(self.params())

    def dense_weights(self, t: int) -> np.ndarray:
        return self.masks[t].dense(self.weights[t])

    def to_document(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "feeder_digest": self.feeder.digest,
            "widths": list(self.widths),
            "activations": list(self.activations),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "layout": self.layout.to_document(),
            "in_mean": self.in_mean.tolist(),
            "in_std": self.in_std.tolist(),
            "out_mean": self.out_mean.tolist(),
            "out_std": self.out_std.tolist(),
            "labels": list(self.labels),
            "meta": self.meta,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_document()), encoding="utf-8")

    @classmethod
    def from_document(cls, doc: dict, feeder: Feeder) -> "PawnnModel":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ModelError(f"unsupported model schema {doc.get('schema_version')!r}")
        if doc["feeder_digest"] != feeder.digest:
            raise ModelError("model was trained on a different feeder")
        masks = build_mask(feeder, doc["widths"])
        weights = [np.array(w, dtype=float).reshape(m.n_blocks, m.dout, m.din) for w, m in zip(doc["weights"], masks)]
        biases = [np.array(b, dtype=float).reshape(feeder.n_buses, m.dout) for b, m in zip(doc["biases"], masks)]
        lay = doc["layout"]
        layout = InputLayout(np.array(lay["bus"], dtype=np.int64), np.array(lay["pos"], dtype=np.int64),
                             int(lay["d0"]), feeder.n_buses)
        return cls(feeder, masks, weights, biases, list(doc["activations"]), layout,
                   np.array(doc["in_mean"]), np.array(doc["in_std"]),
                   np.array(doc["out_mean"]), np.array(doc["out_std"]),
                   list(doc.get("labels", [])), dict(doc.get("meta", {})))

    @classmethod
    def load(cls, path, feeder: Feeder) -> "PawnnModel":
        return cls.from_document(json.loads(Path(path).read_text(encoding="utf-8")), feeder)


def init_model(mset: MeasurementSet, widths: Sequence[int], seed: int = 0, d0: int | None = None,
               pmu: set[int] | None = None, activations: Sequence[str] | None = None) -> PawnnModel:
    """Masked Glorot-uniform initialisation.

    ``widths`` lists the hidden and output widths; the input width comes
    from the measurement layout (or ``d0``). Each block's range uses the
    masked fan-in of its row bus and fan-out of its column bus.
    """
    feeder = mset.feeder
    layout = assign_inputs(mset, pmu, d0)
    full = (layout.d0,) + tuple(int(w) for w in widths)
    masks = build_mask(feeder, full)
    n_layers = len(masks)
    if activations is None:
        activations = ["leaky_relu"] * (n_layers - 1) + ["identity"]
    if len(activations) != n_layers or any(a not in ACTIVATIONS for a in activations):
        raise ModelError(f"bad activation list {activations}")
    rng = np.random.default_rng(seed)
    deg = np.diff(masks[0].row_start)
    weights, biases = [], []
    for m in masks:
        fan_in = deg[m.brow] * m.din
        fan_out = deg[m.bcol] * m.dout
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-1.0, 1.0, size=(m.n_blocks, m.dout, m.din)) * lim[:, None, None])
        biases.append(np.zeros((feeder.n_buses, m.dout)))
    m_count = len(mset)
    return PawnnModel(
        feeder, masks, weights, biases, list(activations), layout,
        np.zeros(m_count), np.ones(m_count),
        np.zeros((feeder.n_buses, OUT_WIDTH)), np.ones((feeder.n_buses, OUT_WIDTH)),
        mset.labels,
        {"init_seed": int(seed), "hidden_activation": activations[0], "leak": LEAK,
         "pmu_buses": sorted(pmu_buses(mset) if pmu is None else pmu)},
    )


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _as_blocks(model: PawnnModel, x: np.ndarray) -> np.ndarray:
    N, d0 = model.feeder.n_buses, model.masks[0].din
    x = np.asarray(x, dtype=float)
    if x.ndim == 2 and x.shape[1] == N * d0:
        x = x.reshape(-1, N, d0)
    if x.ndim != 3 or x.shape[1:] != (N, d0):
        raise ModelError(f"input shape {x.shape} does not match ({N}, {d0})")
    return x


def forward(model: PawnnModel, x: np.ndarray, backend=None, keep: bool = False):
    """Network output ``(S, N, d_K)``. With ``keep`` also returns the
    pre-activations and activations of every layer."""
    kb = backend or kernels.ACTIVE
    h = _as_blocks(model, x)
    pre, acts = [], [h]
    for m, W, b, name in zip(model.masks, model.weights, model.biases, model.activations):
        z = kb.block_forward(h, W, m.brow, m.bcol, m.row_start) + b
        h = ACTIVATIONS[name][0](z)
        pre.append(z)
        acts.append(h)
    if keep:
        return h, pre, acts
    return h


def gradient(model: PawnnModel, x: np.ndarray, target: np.ndarray, out_mask: np.ndarray | None = None,
             backend=None):
    """Mean squared error over present outputs and its exact gradients.

    ``out_mask`` (``(N, d_K)``, bool or nonnegative weights) selects the
    outputs in the loss; the mean runs over samples and nonzero entries.
    Returns ``(loss, grads)`` with ``grads`` ordered like ``model.params()``.
    """
    kb = backend or kernels.ACTIVE
    y, pre, acts = forward(model, x, kb, keep=True)
    if out_mask is None:
        out_mask = np.ones(y.shape[1:], dtype=bool)
    w = np.asarray(out_mask, dtype=float)
    count = y.shape[0] * float((w > 0).sum())
    diff = y - target
    loss = float(np.sum(w * diff * diff) / count)
    delta = (2.0 / count) * (w * diff)
    grads = [None] * (2 * model.n_layers)
    for t in range(model.n_layers - 1, -1, -1):
        m = model.masks[t]
        delta = delta * ACTIVATIONS[model.activations[t]][1](pre[t])
        grads[2 * t] = kb.block_weight_grad(delta, acts[t], m.brow, m.bcol)
        grads[2 * t + 1] = delta.sum(axis=0)
        if t:
            delta = kb.block_backward(delta, model.weights[t], m.brow, m.bcol, m.col_order, m.col_start)
    return loss, grads


def predict(model: PawnnModel, z: np.ndarray, backend=None) -> np.ndarray:
    """Slot voltages ``(S, n_slots)`` estimated from raw measurements."""
    x = assemble_input(z, model.layout, model.in_mean, model.in_std)
    y = forward(model, x, backend)
    return targets_to_states(model.feeder, y * model.out_std + model.out_mean)


# ---------------------------------------------------------------------------
# ADAM
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> list[np.ndarray]:
    """One bias-corrected ADAM update; moments are updated in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ModelError("parameter/gradient/state lengths differ")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = []
    for k, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ModelError(f"gradient {k} has shape {g.shape}, parameter {p.shape}")
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * (g * g)
        mhat = state.m[k] / c1
        vhat = state.v[k] / c2
        out.append(p - state.lr * mhat / (np.sqrt(vhat) + state.eps))
    return out


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainOptions:
    epochs: int = 200
    batch: int = 64
    lr: float = 1e-3
    split: float = 0.9
    seed: int = 0
    patience: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_decay: float = 1.0
    pmu_weight: float = 1.0
    # "slot": per-channel target std; "global": one shared scale so the loss tracks nu
    target_scale: str = "global"

    def __post_init__(self):
        if self.target_scale not in ("slot", "global"):
            raise ValueError(f"unknown target_scale {self.target_scale!r}")


def _std(a: np.ndarray, floor: float) -> np.ndarray:
    s = a.std(axis=0)
    return np.where(s > floor, s, 1.0)


def fit_normalization(model: PawnnModel, z: np.ndarray, v: np.ndarray,
                      target_scale: str = "slot") -> PawnnModel:
    """Z-score statistics for inputs and targets from training data.

    With ``target_scale="global"`` every output channel is divided by the same
    RMS spread, so squared errors in normalised units stay proportional to
    squared voltage errors.
    """
    t = states_to_targets(model.feeder, v)
    out_std = _std(t, 1e-9)
    if target_scale == "global":
        spread = t.std(axis=0)[output_mask(model.feeder)]
        rms = float(np.sqrt(np.mean(spread ** 2))) if spread.size else 1.0
        out_std = np.full_like(out_std, rms if rms > 1e-9 else 1.0)
    return replace(model, in_mean=z.mean(axis=0), in_std=_std(z, 1e-12),
                   out_mean=t.mean(axis=0), out_std=out_std)


def _loss_weights(model: PawnnModel, pmu_weight: float) -> np.ndarray:
    w = output_mask(model.feeder).astype(float)
    if pmu_weight != 1.0:
        for b in model.meta.get("pmu_buses", []):
            w[model.feeder.bus_index[b]] *= pmu_weight
    return w


def evaluate_loss(model: PawnnModel, x: np.ndarray, t: np.ndarray, w: np.ndarray, backend=None,
                  chunk: int = 2048) -> float:
    total, count = 0.0, 0.0
    for s in range(0, x.shape[0], chunk):
        y = forward(model, x[s:s + chunk], backend)
        d = w * (y - t[s:s + chunk]) ** 2
        total += float(d.sum())
        count += y.shape[0] * float((w > 0).sum())
    return total / count


def train(model: PawnnModel, z: np.ndarray, v: np.ndarray, options: TrainOptions | None = None,
          backend=None, log=None):
    """Mini-batch ADAM on a shuffled train/validation split.

    Returns the parameters with the best validation loss and a history of
    per-epoch losses. Losses are measured on z-scored targets.
    """
    opts = options or TrainOptions()
    z = np.asarray(z, dtype=float)
    v = np.asarray(v)
    if z.shape[0] != v.shape[0]:
        raise ModelError("measurement and state sample counts differ")
    if z.shape[0] < 10:
        raise ModelError("need at least 10 samples to train")
    if opts.epochs <= 0:
        return model, []
    rng = np.random.default_rng(opts.seed)
    perm = rng.permutation(z.shape[0])
    n_train = int(round(opts.split * z.shape[0]))
    tr, va = perm[:n_train], perm[n_train:]
    model = fit_normalization(model, z[tr], v[tr], opts.target_scale)
    x_all = assemble_input(z, model.layout, model.in_mean, model.in_std)
    t_all = (states_to_targets(model.feeder, v) - model.out_mean) / model.out_std
    w = _loss_weights(model, opts.pmu_weight)
    t_all = t_all * (w > 0)
    x_tr, t_tr = x_all[tr], t_all[tr]
    x_va, t_va = x_all[va], t_all[va]

    params = model.params()
    state = AdamState.for_params(params, lr=opts.lr, beta1=opts.beta1, beta2=opts.beta2, eps=opts.eps)
    best = (math.inf, params, -1)
    history = []
    stale = 0
    for epoch in range(opts.epochs):
        order = rng.permutation(len(tr))
        tot, cnt = 0.0, 0
        for s in range(0, len(order), opts.batch):
            bi = order[s:s + opts.batch]
            loss, grads = gradient(model.with_params(params), x_tr[bi], t_tr[bi], w, backend)
            if not math.isfinite(loss):
                raise TrainingDivergence(epoch)
            params = adam_step(state, params, grads)
            tot += loss * len(bi)
            cnt += len(bi)
        model = model.with_params(params)
        val = evaluate_loss(model, x_va, t_va, w, backend) if len(va) else tot / cnt
        if not math.isfinite(val):
            raise TrainingDivergence(epoch)
        history.append({"epoch": epoch, "train": tot / cnt, "val": val})
        if log is not None:
            log(history[-1])
        if val < best[0]:
            best = (val, [p.copy() for p in params], epoch)
            stale = 0
        else:
            stale += 1
            if stale >= opts.patience:
                break
        state.lr *= opts.lr_decay
    model = model.with_params(best[1])
    model.meta = dict(model.meta, train={"seed": opts.seed, "epochs_run": len(history), "best_epoch": best[2],
                                         "best_val": best[0], "options": opts.__dict__})
    return model, history


# ---------------------------------------------------------------------------
# receptive field
# ---------------------------------------------------------------------------


def receptive_field(graph, K: int) -> dict[int, set[int]]:
    """Buses within ``K`` hops of each bus."""
    if K < 1:
        raise ModelError("K must be at least 1")
    g = _graph_of(graph)
    out = {}
    for i in range(g.n_nodes):
        dist, _ = g.bfs(i)
        out[int(g.nodes[i])] = {int(g.nodes[j]) for j in np.flatnonzero((dist >= 0) & (dist <= K))}
    return out


__all__ = [
    "ACTIVATIONS",
    "AdamState",
    "BlockMask",
    "InputLayout",
    "ModelError",
    "PawnnModel",
    "TrainOptions",
    "TrainingDivergence",
    "adam_step",
    "assemble_input",
    "assign_inputs",
    "block_pattern",
    "build_mask",
    "fit_normalization",
    "forward",
    "gradient",
    "hop_distance",
    "init_model",
    "output_mask",
    "predict",
    "receptive_field",
    "states_to_targets",
    "targets_to_states",
    "train",
]
