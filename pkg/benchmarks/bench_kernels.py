"""Time every hot kernel under the numba and the numpy backend.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Workloads mirror what the experiments do: batched measurement evaluation
and jacobians for the Scenario A set, masked forward/backward passes of the
4-layer model on a batch of 64, and the placement searches.
"""

import argparse
import json
import time

import numpy as np

from pawnn import kernels, nn
from pawnn.experiment import load_scenario, setup
from pawnn.grid import TreeGraph, load_feeder
from pawnn.partition import placement_graph


def best_of(fn, repeat):
    fn()  # warm-up (and numba compilation)
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return min(out)


def workloads(be):
    rng = np.random.default_rng(0)
    st = setup(load_scenario("scenario_a"))
    ms = st.mset
    X = rng.standard_normal((1000, ms.n_coords))
    model = nn.init_model(ms, [48, 24, 12, 6], seed=0)
    x = rng.standard_normal((64, st.feeder.n_buses, model.widths[0]))
    t = rng.standard_normal((64, st.feeder.n_buses, 6))
    mask = nn.output_mask(st.feeder)
    f37 = load_feeder("ieee37")
    g37 = placement_graph(f37)
    path = TreeGraph.path(100_000)
    cut = np.zeros(path.n_nodes, dtype=np.bool_)
    cut[::997] = True

    def greedy_path():
        be.longest_partition_path(path.indptr, path.indices, path.adj_edge, cut, path.n_edges)

    def exhaustive():
        from pawnn import partition

        old = kernels.ACTIVE
        kernels.ACTIVE = be
        try:
            partition.exhaustive_place(g37, 6)
        finally:
            kernels.ACTIVE = old

    return {
        "quad_eval (1000 x 103)": lambda: be.quad_eval(*ms.compiled, X, len(ms)),
        "quad_jacobian (103 rows)": lambda: be.quad_jacobian(*ms.compiled, X[0], len(ms), ms.n_coords),
        "forward 4L batch 64": lambda: nn.forward(model, x, be),
        "forward+backward 4L batch 64": lambda: nn.gradient(model, x, t, mask, be),
        "longest path, 1e5-node path": greedy_path,
        "exhaustive K=6 on IEEE-37": exhaustive,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write the timings here")
    args = ap.parse_args()
    results = {}
    for be in (kernels.NUMBA, kernels.NUMPY):
        for name, fn in workloads(be).items():
            results.setdefault(name, {})[be.name] = best_of(fn, args.repeat)
    width = max(len(k) for k in results)
    print(f"{'kernel':<{width}}  {'numba ms':>10}  {'numpy ms':>10}  {'speedup':>8}")
    for name, r in results.items():
        print(f"{name:<{width}}  {r['numba'] * 1e3:10.3f}  {r['numpy'] * 1e3:10.3f}  {r['numpy'] / r['numba']:8.1f}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=1)


if __name__ == "__main__":
    main()
