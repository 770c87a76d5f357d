import os
import subprocess
import sys

import numpy as np
import pytest

from pawnn import kernels, nn, partition
from pawnn.measurements import measurement_set_from_config

from test_partition import random_tree


def _random_set(feeder):
    cfg = [{"kind": "v_mag2", "bus": int(b), "sigma2": 1.0} for b in feeder.bus_ids]
    cfg += [{"kind": k, "line": [ln.from_bus, ln.to_bus], "sigma2": 1.0}
            for ln in feeder.lines for k in ("p_flow", "i_mag2")]
    return measurement_set_from_config(feeder, cfg, shunt=True)


def test_quadratic_kernels_agree(ieee37, rng):
    ms = _random_set(ieee37)
    X = rng.standard_normal((300, ms.n_coords))
    a = kernels.NUMPY.quad_eval(*ms.compiled, X, len(ms))
    b = kernels.NUMBA.quad_eval(*ms.compiled, X, len(ms))
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-9)
    Ja = kernels.NUMPY.quad_jacobian(*ms.compiled, X[0], len(ms), ms.n_coords)
    Jb = kernels.NUMBA.quad_jacobian(*ms.compiled, X[0], len(ms), ms.n_coords)
    np.testing.assert_allclose(Ja, Jb, rtol=1e-12, atol=1e-9)


@pytest.mark.parametrize("widths", [(3, 5), (8, 2), (1, 1)])
def test_block_kernels_agree(ieee37, rng, widths):
    din, dout = widths
    m = nn.build_mask(ieee37, (din, dout))[0]
    h = rng.standard_normal((7, 37, din))
    W = rng.standard_normal((m.n_blocks, dout, din))
    d = rng.standard_normal((7, 37, dout))
    for name, args in [("block_forward", (h, W, m.brow, m.bcol, m.row_start)),
                       ("block_backward", (d, W, m.brow, m.bcol, m.col_order, m.col_start)),
                       ("block_weight_grad", (d, h, m.brow, m.bcol))]:
        a = getattr(kernels.NUMPY, name)(*args)
        b = getattr(kernels.NUMBA, name)(*args)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12, err_msg=name)


def test_block_kernels_match_dense(ieee37, rng, backend):
    m = nn.build_mask(ieee37, (3, 4))[0]
    W = rng.standard_normal((m.n_blocks, 4, 3))
    D = m.dense(W)
    h = rng.standard_normal((5, 37, 3))
    d = rng.standard_normal((5, 37, 4))
    np.testing.assert_allclose(backend.block_forward(h, W, m.brow, m.bcol, m.row_start).reshape(5, -1),
                               h.reshape(5, -1) @ D.T, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(backend.block_backward(d, W, m.brow, m.bcol, m.col_order, m.col_start).reshape(5, -1),
                               d.reshape(5, -1) @ D, rtol=1e-12, atol=1e-12)
    G = m.dense(backend.block_weight_grad(d, h, m.brow, m.bcol))
    np.testing.assert_allclose(G, (d.reshape(5, -1).T @ h.reshape(5, -1)) * m.dense_mask(), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_tree_kernels_agree(seed):
    g = random_tree(30 + seed, seed)
    rng = np.random.default_rng(seed)
    is_cut = rng.random(g.n_nodes) < 0.2
    a = kernels.NUMPY.longest_partition_path(g.indptr, g.indices, g.adj_edge, is_cut, g.n_edges)
    b = kernels.NUMBA.longest_partition_path(g.indptr, g.indices, g.adj_edge, is_cut, g.n_edges)
    assert a[0] == b[0]
    np.testing.assert_array_equal(a[1], b[1])
    for x, y in zip(kernels.NUMPY.bfs_tree(g.indptr, g.indices, 0), kernels.NUMBA.bfs_tree(g.indptr, g.indices, 0)):
        np.testing.assert_array_equal(x, y)


@pytest.mark.parametrize("K", [1, 2, 3])
def test_placement_identical_across_backends(monkeypatch, ieee37, K):
    out = []
    for be in (kernels.NUMPY, kernels.NUMBA):
        monkeypatch.setattr(kernels, "ACTIVE", be)
        out.append((partition.greedy_place(ieee37, K), partition.exhaustive_place(ieee37, K)))
    assert out[0] == out[1]


@pytest.mark.parametrize("flag,expected", [("0", "numpy"), ("off", "numpy"), ("1", "numba")])
def test_env_flag_selects_backend(flag, expected):
    env = dict(os.environ, PAWNN_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", "from pawnn import kernels; print(kernels.ACTIVE.name)"],
                         env=env, capture_output=True, text=True, check=True)
    assert res.stdout.strip() == expected
