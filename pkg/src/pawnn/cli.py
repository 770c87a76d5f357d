"""Command line entry point: ``pawnn <subcommand> ...``.

Every run writes ``manifest.json`` into ``--out`` (also on failure) with the
resolved configuration, seeds, library versions and artifact hashes.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

SUBCOMMANDS = ("place", "partition", "synth", "train", "estimate", "compare", "robust", "validate")


class ConfigError(ValueError):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pawnn",
        description="Distribution-feeder state estimation: μPMU placement, partitioning, synthetic data, "
                    "Gauss-Newton WLS and topology-pruned neural estimators.",
    )
    p.add_argument("command", choices=SUBCOMMANDS, help="what to run")
    p.add_argument("overrides", nargs="*", metavar="KEY=VALUE",
                   help="scenario overrides; VALUE is parsed as JSON when possible (e.g. n_samples=2000)")
    p.add_argument("--feeder", help="feeder JSON (path or bundled name, e.g. ieee37)")
    p.add_argument("--scenario", help="scenario JSON (path or bundled name, e.g. scenario_a)")
    p.add_argument("--k", type=int, help="number of μPMUs for place/partition")
    p.add_argument("--method", help="place: greedy|exhaustive; estimate: pawnn|gn")
    p.add_argument("--layers", help="model label (e.g. 4L) or layer count to train/evaluate; default all")
    p.add_argument("--epochs", type=int, help="override training epochs")
    p.add_argument("--seed", type=int, help="base seed; sets profiles/noise/split/init to seed..seed+3")
    p.add_argument("--threads", type=int, help="BLAS/numba thread count (default: available cores)")
    p.add_argument("--model", help="estimate: trained model JSON")
    p.add_argument("--input", help="estimate: measurement CSV (as written by synth)")
    p.add_argument("--out", default="pawnn-out", help="output directory (default: ./pawnn-out)")
    return p


def _set_threads(n: int | None) -> int:
    n = n or os.cpu_count() or 1
    if n < 1:
        raise ConfigError("--threads must be positive")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(var, str(n))
    return n


def _parse_overrides(items) -> dict:
    out = {}
    for it in items:
        if "=" not in it:
            raise ConfigError(f"override {it!r} is not KEY=VALUE")
        k, v = it.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    import numpy
    import scipy

    from . import __version__, _accel

    v = {"python": platform.python_version(), "numpy": numpy.__version__, "scipy": scipy.__version__,
         "pawnn": __version__, "backend": "numba" if _accel.ENABLED else "numpy"}
    if _accel.HAVE_NUMBA:
        import numba

        v["numba"] = numba.__version__
    return v


class Run:
    def __init__(self, args, out: Path):
        self.args = args
        self.out = out
        self.artifacts: list[Path] = []
        self.info: dict = {}

    def path(self, name: str) -> Path:
        p = self.out / name
        self.artifacts.append(p)
        return p

    def write_json(self, name: str, doc) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
        return p


def _scenario(args, need=True):
    from .experiment import load_scenario

    if not args.scenario:
        if need:
            raise ConfigError(f"{args.command} needs --scenario")
        return None
    sc = load_scenario(args.scenario)
    ov = _parse_overrides(args.overrides)
    if args.seed is not None:
        ov["seeds"] = {"profiles": args.seed, "noise": args.seed + 1, "split": args.seed + 2, "init": args.seed + 3}
    if args.epochs is not None:
        ov["epochs"] = args.epochs
    return sc.with_overrides(**ov)


def _select_models(sc, layers):
    if layers is None:
        return list(sc.models)
    if layers in sc.models:
        return [layers]
    try:
        n = int(layers)
    except ValueError:
        raise ConfigError(f"no model {layers!r} in scenario (have {sorted(sc.models)})") from None
    labs = [k for k, w in sc.models.items() if len(w) == n]
    if not labs:
        raise ConfigError(f"no {n}-layer model in scenario (have {sorted(sc.models)})")
    return labs


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_place(args, run: Run):
    from .grid import load_feeder
    from .partition import exhaustive_place, greedy_place

    if not args.feeder or args.k is None:
        raise ConfigError("place needs --feeder and --k")
    f = load_feeder(args.feeder)
    method = args.method or "greedy"
    if method == "greedy":
        res = greedy_place(f, args.k)
    elif method == "exhaustive":
        res = exhaustive_place(f, args.k)
    else:
        raise ConfigError(f"unknown placement method {method!r}")
    doc = res.to_document()
    run.write_json("placement.json", doc)
    print(json.dumps(doc))
    return doc


def cmd_partition(args, run: Run):
    from .grid import load_feeder
    from .partition import cut_partition, greedy_place

    sc = _scenario(args, need=False)
    if sc is not None:
        from .experiment import setup

        st = setup(sc)
        f, P = st.feeder, st.placement
    else:
        if not args.feeder:
            raise ConfigError("partition needs --scenario, or --feeder with --k")
        f = load_feeder(args.feeder)
        ov = _parse_overrides(args.overrides)
        if "placement" in ov:
            P = tuple(int(b) for b in ov["placement"])
        elif args.k is not None:
            P = greedy_place(f, args.k).placement
        else:
            raise ConfigError("partition needs --k or placement=[...]")
    doc = cut_partition(f, P).to_document()
    run.write_json("partition.json", doc)
    print(json.dumps({"cut": doc["cut"], "dia": doc["dia"], "n_subgraphs": len(doc["subgraphs"])}))
    return doc


def cmd_synth(args, run: Run):
    from .experiment import gen_dataset, setup
    from .measurements import write_dataset_csv

    sc = _scenario(args)
    st = setup(sc)
    data = gen_dataset(st)
    write_dataset_csv(run.path("measurements.csv"), data.z, st.mset.labels, seed=sc.seeds["noise"])
    _write_states(run.path("states.csv"), st.feeder, data.v)
    run.write_json("dataset.json", data.meta | {"n_samples": int(len(data.v)), "n_measurements": len(st.mset)})
    print(json.dumps({"samples": int(len(data.v)), "measurements": len(st.mset), "dropped": data.dropped}))
    return data.meta


def _write_states(path, feeder, v):
    import csv

    from .grid import PHASES

    cols = [f"{feeder.bus_ids[b]}.{PHASES[p]}" for b, p in feeder.slots]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", *[f"{c}.re" for c in cols], *[f"{c}.im" for c in cols]])
        for i, row in enumerate(v):
            w.writerow([i, *(repr(float(x)) for x in row.real), *(repr(float(x)) for x in row.imag)])


def cmd_train(args, run: Run):
    import csv

    from .experiment import gen_dataset, setup, split_indices, train_models

    sc = _scenario(args)
    st = setup(sc)
    data = gen_dataset(st)
    tr, _ = split_indices(len(data.v), sc.n_test, sc.seeds["split"])
    models = train_models(st, data, tr, _select_models(sc, args.layers))
    summary = {}
    for label, (model, hist) in models.items():
        model.save(run.path(f"model_{label}.json"))
        with open(run.path(f"history_{label}.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            for h in hist:
                w.writerow([h["epoch"], repr(h["train"]), repr(h["val"])])
        summary[label] = {"epochs": len(hist), "best_val": model.meta["train"]["best_val"]}
    print(json.dumps(summary))
    return summary


def cmd_estimate(args, run: Run):
    from .experiment import gn_estimates, setup
    from .measurements import read_dataset_csv
    from .nn import PawnnModel, predict
    from .wls import GnOptions

    sc = _scenario(args)
    st = setup(sc)
    if not args.input:
        raise ConfigError("estimate needs --input")
    z, labels = read_dataset_csv(args.input)
    if labels != st.mset.labels:
        raise ValueError("measurement columns do not match the scenario")
    method = args.method or "pawnn"
    if method == "pawnn":
        if not args.model:
            raise ConfigError("estimate --method pawnn needs --model")
        model = PawnnModel.load(args.model, st.feeder)
        v = predict(model, z)
    elif method == "gn":
        v = gn_estimates(st.mset, z, GnOptions(**sc.gn))[0]
    else:
        raise ConfigError(f"unknown estimation method {method!r}")
    _write_states(run.path("estimates.csv"), st.feeder, v)
    print(json.dumps({"samples": int(len(v)), "method": method}))
    return {"samples": int(len(v))}


def cmd_compare(args, run: Run):
    from .experiment import gen_dataset, run_comparison, setup, split_indices, write_report

    sc = _scenario(args)
    st = setup(sc)
    data = gen_dataset(st)
    report, models, preds = run_comparison(st, data, labels=_select_models(sc, args.layers))
    _, te = split_indices(len(data.v), sc.n_test, sc.seeds["split"])
    write_report(report, run.out, st.feeder, preds, data.v[te])
    for name in ("report.json", "nu.csv", "timing.csv", "per_bus_error.csv", "profiles.csv"):
        run.artifacts.append(run.out / name)
    run.info["report_digest"] = report.digest
    print(json.dumps({"nu": report.nu, "digest": report.digest}))
    return report.to_document()


def cmd_robust(args, run: Run):
    from .experiment import gen_dataset, robustness_experiment, setup, split_indices, train_models

    sc = _scenario(args)
    st = setup(sc)
    data = gen_dataset(st)
    tr, te = split_indices(len(data.v), sc.n_test, sc.seeds["split"])
    label = _select_models(sc, args.layers)[0]
    model = train_models(st, data, tr, [label])[label][0]
    n = int(sc.robustness.get("n_cases", 100))
    rep = robustness_experiment(st, model, data.z[te[:n]], data.v[te[:n]], seed=sc.seeds["noise"] + 1000)
    doc = rep.to_document()
    run.write_json("robustness.json", doc)
    print(json.dumps({"bus": rep.bus, "K": rep.K, "pawnn_far_unchanged": rep.pawnn_far_unchanged,
                      "gn_far_increase": len(rep.gn_far_increase)}))
    return doc


def cmd_validate(args, run: Run):
    from .grid import load_feeder
    from .powerflow import LoadScenario, residual, solve

    out = {}
    if args.feeder:
        f = load_feeder(args.feeder)
        v, it = solve(f, LoadScenario.nominal(f), return_iterations=True)
        out["feeder"] = {"name": f.name, "buses": f.n_buses, "lines": f.n_lines, "slots": f.n_slots,
                         "digest": f.digest, "sweeps": it, "mismatch": residual(f, LoadScenario.nominal(f), v),
                         "vmin": float(abs(v).min()), "vmax": float(abs(v).max())}
    sc = _scenario(args, need=False)
    if sc is not None:
        from .experiment import setup

        st = setup(sc)
        out["scenario"] = {"name": sc.name, "digest": sc.digest, "placement": list(st.placement), "dia": st.dia,
                           "measurements": len(st.mset), "pseudo": st.mset.n_pseudo}
    if not out:
        raise ConfigError("validate needs --feeder and/or --scenario")
    run.write_json("validate.json", out)
    print(json.dumps(out))
    return out


COMMANDS = {name: globals()[f"cmd_{name}"] for name in SUBCOMMANDS}


def _classify(exc: BaseException) -> int:
    from .experiment import DatasetError, ScenarioError
    from .grid import FeederError
    from .measurements import MeasurementError
    from .nn import ModelError, TrainingDivergence
    from .partition import PlacementError, SeparabilityError
    from .powerflow import PowerFlowError

    if isinstance(exc, (PowerFlowError, TrainingDivergence, FloatingPointError, ArithmeticError)):
        return EXIT_NUMERIC
    if isinstance(exc, (ConfigError, ScenarioError, FeederError, MeasurementError, ModelError, PlacementError,
                        SeparabilityError)):
        return EXIT_CONFIG
    if isinstance(exc, (OSError, DatasetError, ValueError, KeyError)):
        return EXIT_DATA
    raise exc


def _out_from_argv(argv) -> Path:
    for i, a in enumerate(argv):
        if a == "--out" and i + 1 < len(argv):
            return Path(argv[i + 1])
        if a.startswith("--out="):
            return Path(a.split("=", 1)[1])
    return Path("pawnn-out")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_intermixed_args(argv)
    except SystemExit as exc:
        if exc.code not in (0, None) and "-h" not in argv and "--help" not in argv:
            out = _out_from_argv(argv)
            out.mkdir(parents=True, exist_ok=True)
            (out / "manifest.json").write_text(json.dumps({"argv": argv, "status": EXIT_CONFIG,
                                                           "error": "invalid command line"}, indent=1),
                                               encoding="utf-8")
        return int(exc.code or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = Run(args, out)
    t0 = time.perf_counter()
    status, error = EXIT_OK, None
    try:
        threads = _set_threads(args.threads)
        run.info["threads"] = threads
        COMMANDS[args.command](args, run)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        status = _classify(exc)
        error = f"{type(exc).__name__}: {exc}"
        print(f"pawnn {args.command}: {error}", file=sys.stderr)
    manifest = {
        "command": args.command,
        "argv": argv,
        "args": {k: v for k, v in vars(args).items()},
        "status": status,
        "error": error,
        "elapsed_s": time.perf_counter() - t0,
        "versions": _safe_versions(),
        "info": run.info,
        "artifacts": {p.name: _sha(p) for p in run.artifacts if p.exists()},
    }
    if args.scenario and status != EXIT_CONFIG:
        try:
            sc = _scenario(args)
            manifest["scenario"] = sc.to_document()
            manifest["config_hash"] = sc.digest
            manifest["seeds"] = sc.seeds
        except Exception:  # noqa: BLE001 - manifest must still be written
            pass
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str),
                                       encoding="utf-8")
    return status


def _safe_versions() -> dict:
    try:
        return _versions()
    except Exception:  # noqa: BLE001
        return {"python": platform.python_version()}


if __name__ == "__main__":
    sys.exit(main())
