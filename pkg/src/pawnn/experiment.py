"""Scenario configuration, synthetic datasets and estimator comparisons."""

from __future__ import annotations

import csv
import hashlib
import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .grid import Feeder, hop_distance, load_feeder, resolve_data_path
from .measurements import PSEUDO_KINDS, MeasurementSet, build_measurement, synthesize
from .partition import partition_diameter, placement_graph, greedy_place
from .powerflow import LoadScenario, solve_batch
from .wls import GnOptions, gauss_newton


class ScenarioError(ValueError):
    pass


class DatasetError(RuntimeError):
    pass


class DepthWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProfileOptions:
    daily_curve: bool = True
    base: float = 0.6
    morning: float = 0.3
    evening: float = 0.5
    peak_width: float = 2.0
    jitter: float = 0.15
    res_buses: tuple[int, ...] = ()
    res_capacity: float = 0.024
    res_jitter: float = 0.1


@dataclass(frozen=True)
class Scenario:
    name: str
    feeder: str
    placement: tuple[int, ...] = ()
    greedy_k: int | None = None
    current_lines: tuple[tuple[int, int], ...] = ()
    pseudo_buses: tuple[int, ...] | str = "auto"
    noise: dict = field(default_factory=lambda: {"pmu": 1e-6, "current": 1e-3, "pseudo": 1e-2})
    models: dict = field(default_factory=lambda: {"4L": [48, 24, 12, 6]})
    allow_shallow: bool = False
    n_samples: int = 10_000
    n_test: int = 1000
    seeds: dict = field(default_factory=lambda: {"profiles": 1, "noise": 2, "split": 3, "init": 4})
    shunt: bool = True
    profiles: ProfileOptions = ProfileOptions()
    train: dict = field(default_factory=dict)
    gn: dict = field(default_factory=dict)
    robustness: dict = field(default_factory=lambda: {"bus": 734, "sigma": 10.0})

    _keys = ("name", "feeder", "placement", "greedy_k", "current_lines", "pseudo_buses", "noise", "models",
             "allow_shallow", "n_samples", "n_test", "seeds", "shunt", "profiles", "train", "gn", "robustness")

    @classmethod
    def from_document(cls, doc: dict) -> "Scenario":
        unknown = set(doc) - set(cls._keys)
        if unknown:
            raise ScenarioError(f"unknown scenario keys {sorted(unknown)}")
        for key in ("name", "feeder"):
            if key not in doc:
                raise ScenarioError(f"scenario is missing {key!r}")
        kw = dict(doc)
        kw["placement"] = tuple(int(b) for b in kw.get("placement", ()))
        kw["current_lines"] = tuple((int(a), int(b)) for a, b in kw.get("current_lines", ()))
        if isinstance(kw.get("pseudo_buses"), list):
            kw["pseudo_buses"] = tuple(int(b) for b in kw["pseudo_buses"])
        prof = dict(kw.get("profiles", {}))
        bad = set(prof) - set(ProfileOptions.__dataclass_fields__)
        if bad:
            raise ScenarioError(f"unknown profile keys {sorted(bad)}")
        if "res_buses" in prof:
            prof["res_buses"] = tuple(int(b) for b in prof["res_buses"])
        kw["profiles"] = ProfileOptions(**prof)
        bad = set(kw.get("train", {})) - set(nn.TrainOptions.__dataclass_fields__)
        if bad:
            raise ScenarioError(f"unknown training keys {sorted(bad)}")
        bad = set(kw.get("gn", {})) - set(GnOptions.__dataclass_fields__)
        if bad:
            raise ScenarioError(f"unknown Gauss-Newton keys {sorted(bad)}")
        bad = set(kw.get("noise", {})) - {"pmu", "current", "pseudo"}
        if bad:
            raise ScenarioError(f"unknown noise keys {sorted(bad)}")
        bad = set(kw.get("seeds", {})) - {"profiles", "noise", "split", "init"}
        if bad:
            raise ScenarioError(f"unknown seed keys {sorted(bad)}")
        defaults = Scenario(name="", feeder="")
        kw["noise"] = {**defaults.noise, **kw.get("noise", {})}
        kw["seeds"] = {**defaults.seeds, **kw.get("seeds", {})}
        if kw.get("placement") and kw.get("greedy_k"):
            raise ScenarioError("give either an explicit placement or greedy_k, not both")
        if int(kw.get("n_test", 1000)) >= int(kw.get("n_samples", 10_000)):
            raise ScenarioError("n_test must be smaller than n_samples")
        return cls(**kw)

    def to_document(self) -> dict:
        doc = {k: getattr(self, k) for k in self._keys}
        doc["placement"] = list(self.placement)
        doc["current_lines"] = [list(e) for e in self.current_lines]
        if not isinstance(self.pseudo_buses, str):
            doc["pseudo_buses"] = list(self.pseudo_buses)
        doc["profiles"] = asdict(self.profiles)
        doc["profiles"]["res_buses"] = list(self.profiles.res_buses)
        return doc

    @property
    def digest(self) -> str:
        blob = json.dumps(self.to_document(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, **kw) -> "Scenario":
        doc = self.to_document()
        for k, v in kw.items():
            if v is None:
                continue
            if k not in self._keys and k not in ("epochs",):
                raise ScenarioError(f"unknown override {k!r}")
            if k == "epochs":
                doc["train"] = {**doc["train"], "epochs": int(v)}
            else:
                doc[k] = v
        return Scenario.from_document(doc)


def load_scenario(path) -> Scenario:
    p = resolve_data_path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{p}: invalid JSON: {exc}") from None
    return Scenario.from_document(doc)


@dataclass
class Setup:
    """Everything derived from a scenario before any sampling."""

    scenario: Scenario
    feeder: Feeder
    placement: tuple[int, ...]
    dia: int
    mset: MeasurementSet


def _pseudo_buses(sc: Scenario, feeder: Feeder, placement) -> list[int]:
    if sc.pseudo_buses != "auto":
        return list(sc.pseudo_buses)
    res = set(sc.profiles.res_buses)
    out = []
    for b in feeder.buses:
        if b.id == feeder.source_bus or b.id in placement:
            continue
        if b.load is not None or b.id in res or b.has_res:
            out.append(b.id)
    return out


def scenario_measurements(sc: Scenario, feeder: Feeder, placement: Sequence[int]) -> MeasurementSet:
    """μPMU phasors at the placement, current magnitudes on the listed lines,
    and three-phase total pseudo injections at the pseudo buses."""
    items = []
    for b in placement:
        for ph in feeder.bus(b).phases:
            for kind in ("v_real", "v_imag"):
                items.append(build_measurement(feeder, kind, (b,), ph, sc.noise["pmu"], shunt=sc.shunt))
    for a, b in sc.current_lines:
        for ph in feeder.lines[feeder.line_index(a, b)].phases:
            items.append(build_measurement(feeder, "i_mag2", (a, b), ph, sc.noise["current"], shunt=sc.shunt))
    for b in _pseudo_buses(sc, feeder, placement):
        for kind in sorted(PSEUDO_KINDS):
            items.append(build_measurement(feeder, kind, (b,), "sum", sc.noise["pseudo"], shunt=sc.shunt))
    return MeasurementSet(feeder, tuple(items), sc.shunt)


def setup(sc: Scenario) -> Setup:
    feeder = load_feeder(sc.feeder)
    if sc.placement:
        placement = tuple(sc.placement)
    elif sc.greedy_k:
        placement = greedy_place(feeder, sc.greedy_k).placement
    else:
        raise ScenarioError("scenario needs a placement or greedy_k")
    dia = partition_diameter(placement_graph(feeder), placement)
    for label, widths in sc.models.items():
        if len(widths) < dia:
            msg = f"model {label} has {len(widths)} layers, fewer than the partition diameter {dia}"
            if not sc.allow_shallow:
                raise ScenarioError(msg + " (set allow_shallow to override)")
            warnings.warn(msg, DepthWarning, stacklevel=2)
        if widths[-1] != nn.OUT_WIDTH:
            raise ScenarioError(f"model {label} must end with width {nn.OUT_WIDTH}")
    return Setup(sc, feeder, placement, dia, scenario_measurements(sc, feeder, placement))


# ---------------------------------------------------------------------------
# load profiles and datasets
# ---------------------------------------------------------------------------


def daily_factor(hours: np.ndarray, opts: ProfileOptions) -> np.ndarray:
    """Two-peak daily load multiplier (morning and evening)."""
    if not opts.daily_curve:
        return np.ones_like(hours, dtype=float)
    w2 = 2.0 * opts.peak_width ** 2

    def bump(center):
        d = np.abs(hours - center)
        d = np.minimum(d, 24.0 - d)
        return np.exp(-d * d / w2)

    return opts.base + opts.morning * bump(8.0) + opts.evening * bump(19.0)


def daily_mean(opts: ProfileOptions) -> float:
    t = (np.arange(240_000) + 0.5) / 10_000.0
    return float(daily_factor(t, opts).mean())


def solar_shape(hours: np.ndarray) -> np.ndarray:
    return np.clip(np.sin(np.pi * (hours - 6.0) / 12.0), 0.0, None)


@dataclass
class Profiles:
    loads: LoadScenario
    hours: np.ndarray
    load_factor: np.ndarray  # (S, N) multiplier applied to nominal demand
    res_output: np.ndarray   # (S, N) per-phase RES injection (pu)


def gen_profiles(feeder: Feeder, n_samples: int, seed: int, opts: ProfileOptions | None = None) -> Profiles:
    """Nominal demand times a daily factor and a per-bus lognormal jitter
    (mean one); RES buses add a clipped-sinusoid injection with its own jitter."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    opts = opts or ProfileOptions()
    rng = np.random.Generator(np.random.Philox(seed))
    nom = LoadScenario.nominal(feeder)
    N = feeder.n_buses
    hours = rng.uniform(0.0, 24.0, size=n_samples)
    jit = opts.jitter
    eps = rng.standard_normal((n_samples, N))
    factor = daily_factor(hours, opts)[:, None] * np.exp(jit * eps - 0.5 * jit * jit)
    wye = nom.wye[None] * factor[:, :, None]
    delta = nom.delta[None] * factor[:, :, None]
    res_eps = rng.standard_normal((n_samples, N))
    res = np.zeros((n_samples, N))
    res_idx = [feeder.bus_index[b] for b in (opts.res_buses or [b.id for b in feeder.buses if b.has_res])]
    if res_idx:
        rj = opts.res_jitter
        shape = solar_shape(hours)[:, None] * np.exp(rj * res_eps[:, res_idx] - 0.5 * rj * rj)
        res[:, res_idx] = opts.res_capacity * shape
        wye = wye - res[:, :, None] * feeder.mask[None]
    return Profiles(LoadScenario(wye, delta), hours, factor, res)


@dataclass
class Dataset:
    v: np.ndarray        # (S, n_slots) complex true states
    z: np.ndarray        # (S, m) noisy measurements
    clean: np.ndarray    # (S, m) noiseless h(v)
    hours: np.ndarray
    dropped: int
    meta: dict


def gen_dataset(st: Setup, n_samples: int | None = None, noise_scale: float = 1.0,
                max_drop: float = 0.01) -> Dataset:
    """Power-flow states for the scenario's profiles plus synthesized readings."""
    sc = st.scenario
    n = int(n_samples or sc.n_samples)
    prof = gen_profiles(st.feeder, n, sc.seeds["profiles"], sc.profiles)
    v, ok, iters = solve_batch(st.feeder, prof.loads, shunt=sc.shunt)
    dropped = int((~ok).sum())
    if dropped > max_drop * n:
        raise DatasetError(f"{dropped} of {n} power flows failed to converge")
    v, hours = v[ok], prof.hours[ok]
    clean = st.mset.h(v)
    z = synthesize(st.mset, v, sc.seeds["noise"], noise_scale) if noise_scale else clean.copy()
    meta = {"n_requested": n, "dropped": dropped, "seeds": dict(sc.seeds), "scenario": sc.digest,
            "max_sweeps": int(iters.max()) if iters.size else 0}
    return Dataset(v, z, clean, hours, dropped, meta)


def split_indices(n: int, n_test: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (train_pool, test) split."""
    perm = np.random.Generator(np.random.Philox(seed)).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


# ---------------------------------------------------------------------------
# metrics and estimators
# ---------------------------------------------------------------------------


def metric_nu(estimates: np.ndarray, truths: np.ndarray) -> float:
    """Mean over samples of the squared complex 2-norm of the state error."""
    est = np.atleast_2d(np.asarray(estimates))
    tru = np.atleast_2d(np.asarray(truths))
    if est.shape != tru.shape:
        raise ValueError(f"estimate shape {est.shape} does not match truth shape {tru.shape}")
    err = est - tru
    return float(np.mean(np.sum(err.real ** 2 + err.imag ** 2, axis=1)))


def train_models(st: Setup, data: Dataset, train_idx: np.ndarray, labels: Sequence[str] | None = None,
                 log=None) -> dict[str, tuple[nn.PawnnModel, list]]:
    sc = st.scenario
    out = {}
    opts = nn.TrainOptions(**{"seed": sc.seeds["split"], **sc.train})
    for label in labels or list(sc.models):
        model = nn.init_model(st.mset, sc.models[label], seed=sc.seeds["init"])
        model, hist = nn.train(model, data.z[train_idx], data.v[train_idx], opts,
                               log=(lambda h, lab=label: log(lab, h)) if log else None)
        model.meta["scenario"] = sc.digest
        model.meta["label"] = label
        out[label] = (model, hist)
    return out


def pawnn_estimates(model: nn.PawnnModel, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample predictions and per-sample wall times (seconds)."""
    z = np.atleast_2d(z)
    est = np.empty((z.shape[0], model.feeder.n_slots), dtype=complex)
    times = np.empty(z.shape[0])
    for i in range(z.shape[0]):
        t0 = time.perf_counter()
        est[i] = nn.predict(model, z[i:i + 1])[0]
        times[i] = time.perf_counter() - t0
    return est, times


def gn_estimates(mset: MeasurementSet, z: np.ndarray, options: GnOptions | None = None):
    """Flat-start Gauss-Newton per sample; returns estimates, times, iterations, converged."""
    z = np.atleast_2d(z)
    est = np.empty((z.shape[0], mset.feeder.n_slots), dtype=complex)
    times = np.empty(z.shape[0])
    iters = np.empty(z.shape[0], dtype=np.int64)
    conv = np.empty(z.shape[0], dtype=bool)
    for i in range(z.shape[0]):
        rep = gauss_newton(mset, z[i], options)
        est[i], times[i], iters[i], conv[i] = rep.estimate, rep.wall_time, rep.iterations, rep.converged
    return est, times, iters, conv


@dataclass
class EvalReport:
    scenario: str
    config_hash: str
    seeds: dict
    nu: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    per_bus_error: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_document(self) -> dict:
        return asdict(self)

    @property
    def digest(self) -> str:
        doc = self.to_document()
        doc.pop("timing")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def per_bus_error(feeder: Feeder, est: np.ndarray, truth: np.ndarray) -> dict:
    """Mean absolute voltage-magnitude error per bus and phase (NaN on holes)."""
    err = np.abs(np.abs(est) - np.abs(truth)).mean(axis=0)
    full = feeder.to_full(err).real
    return {int(b): [None if np.isnan(x) else float(x) for x in row] for b, row in zip(feeder.bus_ids, full)}


def _timing(times: np.ndarray) -> dict:
    return {"median_ms": float(np.median(times) * 1e3), "mean_ms": float(times.mean() * 1e3),
            "p90_ms": float(np.percentile(times, 90) * 1e3)}


def run_comparison(st: Setup, data: Dataset | None = None, models: dict | None = None,
                   labels: Sequence[str] | None = None, gn: bool = True, log=None,
                   undamped: bool = True):
    """Train (unless given) and evaluate PAWNN models and flat-start GN on the
    same held-out test cases. GN runs with the configured damping and, when
    ``undamped`` is set, once more with ``lambda0 = 0``. Returns ``(report, models, predictions)``."""
    sc = st.scenario
    data = data or gen_dataset(st)
    train_idx, test_idx = split_indices(len(data.v), sc.n_test, sc.seeds["split"])
    if models is None:
        models = train_models(st, data, train_idx, labels, log)
    report = EvalReport(sc.name, sc.digest, dict(sc.seeds))
    report.extra = {"placement": list(st.placement), "dia": st.dia, "n_measurements": len(st.mset),
                    "n_test": int(len(test_idx)), "n_train_pool": int(len(train_idx)), "dropped": data.dropped}
    truth = data.v[test_idx]
    preds = {}
    for label, (model, hist) in models.items():
        est, times = pawnn_estimates(model, data.z[test_idx])
        preds[label] = est
        report.nu[f"PAWNN ({label})"] = metric_nu(est, truth)
        report.timing[f"PAWNN ({label})"] = _timing(times)
        report.per_bus_error[f"PAWNN ({label})"] = per_bus_error(st.feeder, est, truth)
        report.extra[f"epochs ({label})"] = len(hist)
    runs = [("GN", GnOptions(**sc.gn))] if gn else []
    if gn and undamped:
        runs.append(("GN (undamped)", GnOptions(**{**sc.gn, "lambda0": 0.0})))
    for name, opts in runs:
        est, times, iters, conv = gn_estimates(st.mset, data.z[test_idx], opts)
        preds[name] = est
        report.nu[name] = metric_nu(est, truth)
        report.timing[name] = _timing(times)
        report.per_bus_error[name] = per_bus_error(st.feeder, est, truth)
        report.extra[f"{name} converged"] = int(conv.sum())
        report.extra[f"{name} median iterations"] = float(np.median(iters))
    return report, models, preds


# ---------------------------------------------------------------------------
# robustness
# ---------------------------------------------------------------------------


@dataclass
class RobustnessReport:
    bus: int
    sigma: float
    K: int
    hops: dict
    pawnn_delta: dict    # bus -> max |error change| over phases and samples
    gn_delta: dict
    pawnn_error: dict
    gn_error: dict
    pawnn_clean_error: dict
    gn_clean_error: dict

    def far_buses(self) -> list[int]:
        return [b for b, h in self.hops.items() if h > self.K]

    @property
    def pawnn_far_unchanged(self) -> bool:
        return all(self.pawnn_delta[b] == 0.0 for b in self.far_buses())

    @property
    def gn_far_increase(self) -> list[int]:
        return [b for b in self.far_buses() if self.gn_error[b] > self.gn_clean_error[b]]

    def to_document(self) -> dict:
        doc = asdict(self)
        doc["far_buses"] = self.far_buses()
        doc["pawnn_far_unchanged"] = self.pawnn_far_unchanged
        doc["gn_far_increase"] = self.gn_far_increase
        return doc


def corrupt(st: Setup, z: np.ndarray, bus: int, sigma: float, seed: int) -> tuple[np.ndarray, list[int]]:
    """Add N(0, sigma^2) to every μPMU channel at ``bus``."""
    idx = st.mset.indices_at_bus(bus, ("v_real", "v_imag"))
    if not idx:
        raise ScenarioError(f"bus {bus} carries no μPMU")
    zc = np.array(z, dtype=float, copy=True)
    rng = np.random.Generator(np.random.Philox(seed))
    zc[:, idx] += sigma * rng.standard_normal((zc.shape[0], len(idx)))
    return zc, idx


def robustness_experiment(st: Setup, model: nn.PawnnModel, z: np.ndarray, truth: np.ndarray,
                          bus: int | None = None, sigma: float | None = None,
                          seed: int = 0, gn_options: GnOptions | None = None) -> RobustnessReport:
    """Compare how a corrupted μPMU moves PAWNN and GN per-bus magnitude errors.

    GN is told about the corruption: the affected channels get variance
    ``sigma**2``. PAWNN sees the corrupted values as is.
    """
    sc = st.scenario
    bus = int(sc.robustness.get("bus", 734) if bus is None else bus)
    sigma = float(sc.robustness.get("sigma", 10.0) if sigma is None else sigma)
    zc, idx = corrupt(st, z, bus, sigma, seed)
    K = model.n_layers
    f = st.feeder

    def bus_err(est):
        # (S, N, 3) magnitude errors, zero on absent phases
        return np.nan_to_num(f.to_full(np.abs(np.abs(est) - np.abs(truth))).real, nan=0.0)

    p0 = nn.predict(model, z)
    p1 = nn.predict(model, zc)
    gopts = gn_options or GnOptions(**sc.gn)
    g0 = gn_estimates(st.mset, z, gopts)[0]
    mset_c = st.mset.with_noise_var({k: sigma * sigma for k in idx}) if sigma > 0 else st.mset
    g1 = gn_estimates(mset_c, zc, gopts)[0]
    e = {k: bus_err(v) for k, v in (("p0", p0), ("p1", p1), ("g0", g0), ("g1", g1))}
    hops = {int(b): hop_distance(f, bus, int(b)) for b in f.bus_ids}
    ids = [int(b) for b in f.bus_ids]

    def per_bus(arr):
        return {b: float(arr[:, i].mean()) for i, b in enumerate(ids)}

    def delta(a, b):
        d = np.abs(a - b)
        return {bid: float(d[:, i].max()) for i, bid in enumerate(ids)}

    return RobustnessReport(
        bus, sigma, K, hops,
        delta(e["p1"], e["p0"]), delta(e["g1"], e["g0"]),
        per_bus(e["p1"]), per_bus(e["g1"]), per_bus(e["p0"]), per_bus(e["g0"]),
    )


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------


def write_report(report: EvalReport, out: Path, feeder: Feeder, preds: dict | None = None,
                 truth: np.ndarray | None = None) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_document(), indent=1, sort_keys=True), encoding="utf-8")
    with open(out / "nu.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["estimator", "nu"])
        for k, v in report.nu.items():
            w.writerow([k, repr(v)])
    with open(out / "timing.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["estimator", "median_ms", "mean_ms", "p90_ms"])
        for k, t in report.timing.items():
            w.writerow([k, t["median_ms"], t["mean_ms"], t["p90_ms"]])
    with open(out / "per_bus_error.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["estimator", "bus", "phase", "mean_abs_mag_error"])
        for k, table in report.per_bus_error.items():
            for b, row in table.items():
                for ph, x in zip("abc", row):
                    if x is not None:
                        w.writerow([k, b, ph, repr(x)])
    if preds is not None and truth is not None:
        # one test case, long format, for magnitude/angle profile plots
        with open(out / "profiles.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["estimator", "bus", "phase", "magnitude", "angle_deg"])
            series = {"true": truth[0], **{k: v[0] for k, v in preds.items()}}
            for k, v in series.items():
                for s, (bi, pi) in enumerate(feeder.slots):
                    w.writerow([k, int(feeder.bus_ids[bi]), "abc"[pi], repr(float(abs(v[s]))),
                                repr(float(np.degrees(np.angle(v[s]))))])


__all__ = [
    "Dataset",
    "DatasetError",
    "DepthWarning",
    "EvalReport",
    "ProfileOptions",
    "Profiles",
    "RobustnessReport",
    "Scenario",
    "ScenarioError",
    "Setup",
    "corrupt",
    "daily_factor",
    "daily_mean",
    "gen_dataset",
    "gen_profiles",
    "gn_estimates",
    "load_scenario",
    "metric_nu",
    "pawnn_estimates",
    "per_bus_error",
    "robustness_experiment",
    "run_comparison",
    "scenario_measurements",
    "setup",
    "split_indices",
    "train_models",
    "write_report",
]
