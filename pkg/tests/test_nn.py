import numpy as np
import pytest

from pawnn import nn
from pawnn.grid import TreeGraph, hop_distance, simple_feeder
from pawnn.measurements import measurement_set_from_config
from pawnn.partition import cut_partition

from conftest import random_state

SCENARIO_A = [702, 709, 720, 727, 734]


def _phasor_set(feeder, buses=None, sigma2=1e-6):
    buses = feeder.bus_ids if buses is None else buses
    cfg = [{"kind": k, "bus": int(b), "sigma2": sigma2} for b in buses for k in ("v_real", "v_imag")]
    return measurement_set_from_config(feeder, cfg)


def _mixed_set(feeder):
    cfg = [{"kind": "v_real", "bus": feeder.source_bus, "sigma2": 1e-6},
           {"kind": "v_imag", "bus": feeder.source_bus, "sigma2": 1e-6}]
    for ln in feeder.lines:
        cfg.append({"kind": "i_mag2", "line": [ln.from_bus, ln.to_bus], "sigma2": 1e-3})
    for b in feeder.bus_ids[1:]:
        cfg.append({"kind": "pseudo_p", "bus": int(b), "phase": "sum", "sigma2": 1e-2})
    return measurement_set_from_config(feeder, cfg)


def _random_model(mset, widths, seed=0, bias=0.1):
    model = nn.init_model(mset, widths, seed=seed)
    rng = np.random.default_rng(seed + 100)
    model.biases = [bias * rng.standard_normal(b.shape) for b in model.biases]
    return model


def _dense_forward(model, x):
    h = x.reshape(x.shape[0], -1)
    for t in range(model.n_layers):
        W = model.dense_weights(t) * model.masks[t].dense_mask()
        z = h @ W.T + model.biases[t].reshape(-1)
        h = nn.ACTIVATIONS[model.activations[t]][0](z)
    return h.reshape(x.shape[0], model.feeder.n_buses, -1)


# --- masks -----------------------------------------------------------------


def test_two_bus_mask_fully_connected():
    m = nn.build_mask(TreeGraph([1, 2], [(1, 2)]), (1, 1))[0]
    assert m.pattern.all()


def test_path_three_excludes_far_block():
    for m in nn.build_mask(TreeGraph([1, 2, 3], [(1, 2), (2, 3)]), (2, 3, 4)):
        assert not m.pattern[0, 2] and not m.pattern[2, 0]
        assert m.pattern[0, 0] and m.pattern[0, 1]


def test_ieee37_block_fraction(ieee37):
    masks = nn.build_mask(ieee37, (8, 48, 24, 12, 6))
    for m in masks:
        assert m.n_blocks == 109
        assert m.pattern.sum() / 37 ** 2 == pytest.approx(109 / 1369)


def test_parameter_count_reduction(ieee37):
    widths = (8, 48, 24, 12, 6)
    masks = nn.build_mask(ieee37, widths)
    N, L = ieee37.n_buses, ieee37.n_lines
    pairs = list(zip(widths[:-1], widths[1:]))
    assert sum(m.n_weights for m in masks) == sum((N + 2 * L) * a * b for a, b in pairs)
    assert sum(m.n_weights for m in masks) < sum(N * N * a * b for a, b in pairs)


def test_mask_errors(path4):
    with pytest.raises(nn.ModelError):
        nn.build_mask(path4, (3,))
    with pytest.raises(nn.ModelError):
        nn.build_mask(path4, (3, 0))


# --- inputs ----------------------------------------------------------------


def test_zero_input(path4):
    layout = nn.assign_inputs(_phasor_set(path4))
    x = nn.assemble_input(np.zeros((2, len(layout.bus))), layout, np.zeros(len(layout.bus)),
                          np.ones(len(layout.bus)))
    assert not x.any()


def test_single_measurement_lands_on_its_bus(path4):
    ms = measurement_set_from_config(path4, [{"kind": "v_mag2", "bus": 3, "phase": "a", "sigma2": 1.0}])
    layout = nn.assign_inputs(ms)
    x = nn.assemble_input(np.array([[0.9]]), layout)
    assert np.flatnonzero(x.any(axis=2)[0]).tolist() == [path4.bus_index[3]]


def test_line_measurements_avoid_pmu_buses(ieee37):
    cfg = [{"kind": "v_real", "bus": 702, "sigma2": 0.0}, {"kind": "i_mag2", "line": [701, 702], "sigma2": 1e-3},
           {"kind": "i_mag2", "line": [702, 705], "sigma2": 1e-3}, {"kind": "i_mag2", "line": [705, 742],
                                                                     "sigma2": 1e-3}]
    ms = measurement_set_from_config(ieee37, cfg)
    layout = nn.assign_inputs(ms)
    lab = {name: ieee37.bus_ids[b] for name, b in zip(ms.labels, layout.bus)}
    assert lab["i_mag2@701-702.a"] == 701
    assert lab["i_mag2@702-705.a"] == 705
    assert lab["i_mag2@705-742.a"] == 705


def test_overflow_names_bus(path4):
    with pytest.raises(nn.ModelError, match="bus"):
        nn.assign_inputs(_phasor_set(path4), d0=2)


def test_scenario_a_input_count():
    from pawnn.experiment import load_scenario, setup

    st = setup(load_scenario("scenario_a"))
    layout = nn.assign_inputs(st.mset)
    x = nn.assemble_input(np.ones((1, len(st.mset))), layout)
    assert int(x.sum()) == 103


def test_target_roundtrip(ieee37, rng):
    v = np.stack([random_state(ieee37, rng) for _ in range(3)])
    y = nn.states_to_targets(ieee37, v)
    assert not y[:, ~nn.output_mask(ieee37)].any()
    np.testing.assert_array_equal(nn.targets_to_states(ieee37, y), v)


# --- forward and gradients --------------------------------------------------


def test_zero_weights_give_zero(path4, backend):
    model = nn.init_model(_phasor_set(path4), (5, 6))
    model = model.with_params([np.zeros_like(p) for p in model.params()])
    assert not nn.forward(model, np.ones((2, 4, model.widths[0])), backend).any()


def test_identity_layer():
    f = simple_feeder([(1, 2), (2, 3)], phases="a")
    ms = measurement_set_from_config(f, [{"kind": "v_real", "bus": b, "sigma2": 1.0} for b in (1, 2, 3)])
    model = nn.init_model(ms, (1,), activations=["identity"])
    m = model.masks[0]
    model.weights[0] = (m.brow == m.bcol).astype(float)[:, None, None]
    x = np.random.default_rng(0).standard_normal((4, 3, 1))
    np.testing.assert_array_equal(nn.forward(model, x), x)


def test_forward_matches_dense_reference(backend):
    f = simple_feeder([(1, 2), (2, 3)])
    model = _random_model(_phasor_set(f), (7, 5, 6), seed=3)
    x = np.random.default_rng(4).standard_normal((6, 3, model.widths[0]))
    np.testing.assert_allclose(nn.forward(model, x, backend), _dense_forward(model, x), rtol=1e-12, atol=1e-12)


def test_forward_ieee37_backends_agree(ieee37):
    from pawnn import kernels

    model = _random_model(_mixed_set(ieee37), (16, 8, 6), seed=1)
    x = np.random.default_rng(2).standard_normal((5, 37, model.widths[0]))
    a = nn.forward(model, x, kernels.NUMPY)
    np.testing.assert_allclose(nn.forward(model, x, kernels.NUMBA), a, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(_dense_forward(model, x), a, rtol=1e-12, atol=1e-12)


def test_loss_zero_at_target(path4, backend):
    model = _random_model(_phasor_set(path4), (5, 6))
    x = np.random.default_rng(0).standard_normal((3, 4, model.widths[0]))
    y = nn.forward(model, x, backend)
    loss, grads = nn.gradient(model, x, y, backend=backend)
    assert loss == 0.0
    assert all(not g.any() for g in grads)


def test_single_linear_layer_closed_form(backend):
    f = simple_feeder([(1, 2)], phases="a")
    ms = measurement_set_from_config(f, [{"kind": "v_real", "bus": b, "sigma2": 1.0} for b in (1, 2)])
    model = _random_model(ms, (1,), seed=2)
    model.activations = ["identity"]
    x = np.array([[[0.3], [-1.2]]])
    t = np.array([[[0.5], [0.1]]])
    loss, grads = nn.gradient(model, x, t, backend=backend)
    y = nn.forward(model, x).reshape(-1)
    dense = 2 * np.outer(y - t.reshape(-1), x.reshape(-1)) / 2
    m = model.masks[0]
    np.testing.assert_allclose(m.dense(grads[0]), dense * m.dense_mask(), rtol=1e-14)


def test_gradient_matches_finite_differences(backend):
    f = simple_feeder([(1, 2), (2, 3), (2, 4), (4, 5)])
    model = _random_model(_phasor_set(f), (4, 3, 6), seed=5, bias=0.0)
    rng = np.random.default_rng(6)
    x = rng.standard_normal((4, 5, model.widths[0]))
    t = rng.standard_normal((4, 5, 6))
    mask = nn.output_mask(f)
    _, grads = nn.gradient(model, x, t, mask, backend)
    params = model.params()
    h = 1e-6
    worst = 0.0
    for k, p in enumerate(params):
        fd = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            pp = [q.copy() for q in params]
            pm = [q.copy() for q in params]
            pp[k][idx] += h
            pm[k][idx] -= h
            lp = nn.gradient(model.with_params(pp), x, t, mask, backend)[0]
            lm = nn.gradient(model.with_params(pm), x, t, mask, backend)[0]
            fd[idx] = (lp - lm) / (2 * h)
        worst = max(worst, np.abs(fd - grads[k]).max() / max(np.abs(fd).max(), 1e-12))
    assert worst < 1e-5


def test_receptive_field_theorem(ieee37):
    model = _random_model(_mixed_set(ieee37), (8, 8, 6), seed=9)
    K = model.n_layers
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 37, model.widths[0]))
    base = nn.forward(model, x)
    j = ieee37.bus_index[720]
    x2 = x.copy()
    x2[0, j] += 1.0
    moved = nn.forward(model, x2)
    for i, b in enumerate(ieee37.bus_ids):
        if hop_distance(ieee37, int(b), 720) > K:
            assert np.array_equal(moved[0, i], base[0, i])
    assert not np.array_equal(moved[0, j], base[0, j])


# --- receptive field ---------------------------------------------------------


def test_receptive_field_examples():
    g = TreeGraph([1, 2, 3, 4], [(1, 2), (2, 3), (3, 4)])
    assert nn.receptive_field(g, 2)[4] == {2, 3, 4}
    assert nn.receptive_field(g, 1)[2] == {1, 2, 3}
    with pytest.raises(nn.ModelError):
        nn.receptive_field(g, 0)


def test_scenario_a_fields_cover_partitions(ieee37):
    rf = nn.receptive_field(ieee37, 4)
    for s in cut_partition(ieee37, SCENARIO_A).subgraphs:
        for b in s.interior(SCENARIO_A):
            assert set(s.nodes) <= rf[b] or ieee37.source_bus in s.nodes
            assert set(s.nodes) - {ieee37.source_bus} <= rf[b]


# --- graph convolution as a special case --------------------------------------


def test_scaled_blocks_reproduce_graph_convolution():
    f = simple_feeder([(1, 2), (2, 3)])
    ms = _phasor_set(f)
    model = nn.init_model(ms, (3,), activations=["identity"])
    m = model.masks[0]
    rng = np.random.default_rng(11)
    B = rng.standard_normal((3, m.din))
    A = np.array([[1.0, 0.5, 0.0], [0.5, 1.0, 0.25], [0.0, 0.25, 1.0]])
    model.weights[0] = A[m.brow, m.bcol][:, None, None] * B
    x = rng.standard_normal((2, 3, m.din))
    expected = np.einsum("ij,sjd,od->sio", A, x, B)
    np.testing.assert_allclose(nn.forward(model, x), expected, rtol=1e-13)


# --- ADAM --------------------------------------------------------------------


def _scalar_adam(p, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    import math

    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
    return p


def test_adam_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    p0 = rng.standard_normal(7)
    gs = rng.standard_normal((10, 7))
    st = nn.AdamState.for_params([p0])
    p = [p0]
    for g in gs:
        p = nn.adam_step(st, p, [g])
    ref = np.array([_scalar_adam(float(p0[k]), [float(g) for g in gs[:, k]]) for k in range(7)])
    assert np.array_equal(p[0], ref)


def test_adam_zero_gradient_and_first_step():
    st = nn.AdamState.for_params([np.zeros(2)], lr=0.01)
    p = nn.adam_step(st, [np.ones(2)], [np.zeros(2)])
    assert st.t == 1 and np.array_equal(p[0], np.ones(2))
    st = nn.AdamState.for_params([np.zeros(2)], lr=0.01)
    p = nn.adam_step(st, [np.zeros(2)], [np.array([3.0, -5.0])])
    np.testing.assert_allclose(p[0], [-0.01, 0.01], rtol=1e-6)


def test_adam_shape_errors():
    st = nn.AdamState.for_params([np.zeros(2)])
    with pytest.raises(nn.ModelError):
        nn.adam_step(st, [np.zeros(2)], [np.zeros(3)])


# --- training ----------------------------------------------------------------


def _toy_data(n=600, seed=0):
    f = simple_feeder([(1, 2), (2, 3)])
    ms = _phasor_set(f, sigma2=0.0)
    rng = np.random.default_rng(seed)
    v = np.stack([random_state(f, rng, 0.05) for _ in range(n)])
    return f, ms, ms.h(v), v


def test_toy_linear_mapping_is_learned():
    # phasor inputs make the target a linear map, so one linear layer suffices
    f, ms, z, v = _toy_data()
    model = nn.init_model(ms, (6,), seed=1)
    model, hist = nn.train(model, z, v, nn.TrainOptions(epochs=200, batch=32, lr=3e-3, seed=2))
    assert min(h["val"] for h in hist) < 1e-4
    assert model.meta["train"]["best_val"] == min(h["val"] for h in hist)


def test_training_preserves_mask_and_is_deterministic(backend):
    f, ms, z, v = _toy_data(200)
    opts = nn.TrainOptions(epochs=3, batch=16, seed=4)
    a, ha = nn.train(nn.init_model(ms, (8, 6), seed=1), z, v, opts, backend)
    b, hb = nn.train(nn.init_model(ms, (8, 6), seed=1), z, v, opts, backend)
    assert ha == hb
    for t in range(a.n_layers):
        dense = a.dense_weights(t)
        assert not dense[~a.masks[t].dense_mask()].any()
        assert np.array_equal(a.weights[t], b.weights[t])


def test_zero_epochs_returns_initial_model():
    f, ms, z, v = _toy_data(50)
    m0 = nn.init_model(ms, (6,), seed=0)
    m1, hist = nn.train(m0, z, v, nn.TrainOptions(epochs=0))
    assert hist == [] and m1 is m0


def test_training_input_errors():
    f, ms, z, v = _toy_data(50)
    m0 = nn.init_model(ms, (6,))
    with pytest.raises(nn.ModelError):
        nn.train(m0, z[:5], v[:5])
    with pytest.raises(nn.ModelError):
        nn.train(m0, z, v[:10])
    with pytest.raises(ValueError):
        nn.TrainOptions(target_scale="bus")


def test_divergence_is_reported():
    f, ms, z, v = _toy_data(100)
    z = z.copy()
    z[3, 0] = np.nan
    with pytest.raises(nn.TrainingDivergence):
        nn.train(nn.init_model(ms, (6,)), z, v, nn.TrainOptions(epochs=2, split=1.0))


def test_predict_shapes_and_normalisation(backend):
    f, ms, z, v = _toy_data(200)
    model, _ = nn.train(nn.init_model(ms, (8, 6), seed=1), z, v, nn.TrainOptions(epochs=2))
    est = nn.predict(model, z[:7], backend)
    assert est.shape == (7, f.n_slots) and np.iscomplexobj(est)
    assert np.unique(model.out_std).size == 1


def test_save_load_roundtrip(tmp_path):
    f, ms, z, v = _toy_data(100)
    model, _ = nn.train(nn.init_model(ms, (8, 6), seed=1), z, v, nn.TrainOptions(epochs=1))
    path = tmp_path / "m.json"
    model.save(path)
    back = nn.PawnnModel.load(path, f)
    np.testing.assert_array_equal(nn.predict(back, z[:5]), nn.predict(model, z[:5]))
    assert back.meta["hidden_activation"] == "leaky_relu"
    with pytest.raises(nn.ModelError):
        nn.PawnnModel.load(path, simple_feeder([(1, 2)]))
    doc = model.to_document()
    doc["schema_version"] = 99
    with pytest.raises(nn.ModelError):
        nn.PawnnModel.from_document(doc, f)


def test_init_is_seeded_and_bounded(ieee37):
    ms = _mixed_set(ieee37)
    a = nn.init_model(ms, (8, 6), seed=3)
    b = nn.init_model(ms, (8, 6), seed=3)
    c = nn.init_model(ms, (8, 6), seed=4)
    assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))
    assert not np.array_equal(a.weights[0], c.weights[0])
    assert all(not bias.any() for bias in a.biases)
    with pytest.raises(nn.ModelError):
        nn.init_model(ms, (8, 6), activations=["tanh", "identity"])
