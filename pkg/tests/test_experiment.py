import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pawnn import experiment as ex
from pawnn import nn
from pawnn.measurements import measurement_set_from_config
from pawnn.powerflow import LoadScenario

from test_wls import _rich_config

PLACEMENT_A = [702, 709, 720, 727, 734]


def tiny(**kw):
    doc = {"name": "tiny", "feeder": "ieee37", "placement": PLACEMENT_A,
           "current_lines": [[701, 702], [730, 709]], "models": {"4L": [8, 8, 8, 6]},
           "n_samples": 240, "n_test": 40, "train": {"epochs": 2, "batch": 32}}
    doc.update(kw)
    return ex.Scenario.from_document(doc)


@pytest.fixture(scope="module")
def tiny_run():
    stp = ex.setup(tiny())
    data = ex.gen_dataset(stp)
    report, models, preds = ex.run_comparison(stp, data, undamped=False)
    return stp, data, report, models, preds


# --- scenarios ---------------------------------------------------------------


def test_bundled_scenario_a():
    stp = ex.setup(ex.load_scenario("scenario_a"))
    assert len(stp.mset) == 103
    assert stp.placement == tuple(PLACEMENT_A)
    assert stp.dia == 4
    assert sum(1 for m in stp.mset.items if m.kind == "pseudo_p") == 26


def test_bundled_scenario_b_warns_for_shallow_models():
    with pytest.warns(ex.DepthWarning):
        stp = ex.setup(ex.load_scenario("scenario_b"))
    assert stp.placement == (701, 704, 708, 738, 744)
    assert stp.dia == 6


def test_shallow_model_rejected_without_override():
    with pytest.raises(ex.ScenarioError, match="allow_shallow"):
        ex.setup(tiny(models={"2L": [8, 6]}))


def test_scenario_document_errors():
    with pytest.raises(ex.ScenarioError):
        tiny(colour="red")
    with pytest.raises(ex.ScenarioError):
        tiny(train={"epochs": 1, "momentum": 0.9})
    with pytest.raises(ex.ScenarioError):
        tiny(greedy_k=3)
    with pytest.raises(ex.ScenarioError):
        tiny(n_test=500)
    with pytest.raises(ex.ScenarioError):
        ex.Scenario.from_document({"feeder": "ieee37"})
    with pytest.raises(ex.ScenarioError):
        ex.setup(tiny(models={"4L": [8, 8, 8, 5]}))


def test_greedy_placement_scenario():
    stp = ex.setup(tiny(placement=[], greedy_k=5, models={"5L": [8, 8, 8, 8, 6]}))
    assert len(stp.placement) == 5


def test_overrides_and_digest():
    sc = tiny()
    sc2 = sc.with_overrides(epochs=7)
    assert sc2.train["epochs"] == 7
    assert sc2.digest != sc.digest
    assert ex.Scenario.from_document(json.loads(json.dumps(sc.to_document()))).digest == sc.digest
    with pytest.raises(ex.ScenarioError):
        sc.with_overrides(bogus=1)


# --- profiles ------------------------------------------------------------------


def test_profiles_without_variation_are_nominal(ieee37):
    opts = ex.ProfileOptions(daily_curve=False, jitter=0.0, res_capacity=0.0)
    prof = ex.gen_profiles(ieee37, 5, 0, opts)
    nom = LoadScenario.nominal(ieee37)
    for k in range(5):
        np.testing.assert_array_equal(prof.loads.wye[k], nom.wye)
        np.testing.assert_array_equal(prof.loads.delta[k], nom.delta)


def test_profiles_seeded(ieee37):
    a = ex.gen_profiles(ieee37, 20, 5)
    b = ex.gen_profiles(ieee37, 20, 5)
    c = ex.gen_profiles(ieee37, 20, 6)
    assert np.array_equal(a.loads.delta, b.loads.delta)
    assert not np.array_equal(a.loads.delta, c.loads.delta)
    with pytest.raises(ValueError):
        ex.gen_profiles(ieee37, 0, 5)


def test_profile_mean_matches_daily_curve(ieee37):
    opts = ex.ProfileOptions()
    prof = ex.gen_profiles(ieee37, 10_000, 1, opts)
    means = prof.load_factor.mean(axis=0)
    assert np.all(np.abs(means / ex.daily_mean(opts) - 1.0) < 0.05)


def test_res_buses_reduce_demand(ieee37):
    opts = ex.ProfileOptions(daily_curve=False, jitter=0.0, res_buses=(720,), res_jitter=0.0)
    prof = ex.gen_profiles(ieee37, 50, 2, opts)
    i = ieee37.bus_index[720]
    nom = LoadScenario.nominal(ieee37)
    injected = nom.wye[i].real - prof.loads.wye[:, i].real
    day = ex.solar_shape(prof.hours) > 0
    assert np.all(injected[day][:, ieee37.mask[i]] > 0)
    assert np.allclose(injected[~day], 0.0)


# --- datasets ---------------------------------------------------------------------


def test_noiseless_dataset_equals_model():
    stp = ex.setup(tiny())
    d = ex.gen_dataset(stp, n_samples=10, noise_scale=0.0)
    assert d.z.shape == (10, len(stp.mset))
    np.testing.assert_array_equal(d.z, stp.mset.h(d.v))
    assert d.dropped == 0


def test_stressed_profiles_abort():
    stp = ex.setup(tiny(profiles={"base": 40.0}))
    with pytest.raises(ex.DatasetError):
        ex.gen_dataset(stp, n_samples=20)


def test_split_is_deterministic_partition():
    tr, te = ex.split_indices(100, 10, 3)
    assert len(te) == 10 and len(tr) == 90
    assert set(tr) | set(te) == set(range(100)) and not set(tr) & set(te)
    assert np.array_equal(te, ex.split_indices(100, 10, 3)[1])


# --- metric ---------------------------------------------------------------------------


def test_nu_examples(rng):
    v = rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))
    assert ex.metric_nu(v, v) == 0.0
    assert ex.metric_nu(np.array([[1.1 + 0j]]), np.array([[1.0 + 0j]])) == pytest.approx(0.01)
    e = rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))
    acc = 0.0
    for s in range(4):
        for k in range(6):
            acc += abs(e[s, k]) ** 2
    assert ex.metric_nu(v + e, v) == pytest.approx(acc / 4, rel=1e-12)
    with pytest.raises(ValueError):
        ex.metric_nu(v[:3], v)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2 ** 32 - 1))
def test_nu_decomposes_over_disjoint_sets(n1, n2, seed):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal((n1 + n2, 5)) + 1j * rng.standard_normal((n1 + n2, 5))
    t = np.zeros_like(e)
    whole = ex.metric_nu(e, t)
    parts = (n1 * ex.metric_nu(e[:n1], t[:n1]) + n2 * ex.metric_nu(e[n1:], t[n1:])) / (n1 + n2)
    assert whole == pytest.approx(parts, rel=1e-12)


# --- comparison --------------------------------------------------------------------------


def test_comparison_report_contents(tiny_run):
    stp, data, report, models, preds = tiny_run
    assert set(report.nu) == {"PAWNN (4L)", "GN"}
    assert all(v >= 0 for v in report.nu.values())
    assert report.extra["n_test"] == 40
    assert set(report.per_bus_error["GN"]) == {int(b) for b in stp.feeder.bus_ids}
    assert report.timing["GN"]["median_ms"] > 0


def test_comparison_is_reproducible(tiny_run):
    stp, data, report, models, _ = tiny_run
    again, _, _ = ex.run_comparison(ex.setup(tiny()), undamped=False)
    assert again.digest == report.digest
    assert json.dumps(again.nu) == json.dumps(report.nu)


def test_gn_exact_on_observable_noiseless_data(ieee37):
    sc = tiny()
    mset = measurement_set_from_config(ieee37, _rich_config(ieee37), shunt=True)
    stp = ex.Setup(sc, ieee37, tuple(PLACEMENT_A), 4, mset)
    data = ex.gen_dataset(stp, n_samples=41, noise_scale=0.0)
    report, _, _ = ex.run_comparison(stp, data, models={}, undamped=False)
    assert report.nu["GN"] < 1e-10


def test_write_report(tiny_run, tmp_path):
    stp, data, report, _, preds = tiny_run
    _, te = ex.split_indices(len(data.v), stp.scenario.n_test, stp.scenario.seeds["split"])
    ex.write_report(report, tmp_path, stp.feeder, preds, data.v[te])
    for name in ("report.json", "nu.csv", "timing.csv", "per_bus_error.csv", "profiles.csv"):
        assert (tmp_path / name).stat().st_size > 0
    assert json.loads((tmp_path / "report.json").read_text())["nu"] == report.nu


def test_training_divergence_propagates():
    stp = ex.setup(tiny(train={"epochs": 2, "lr": 1e90}))
    data = ex.gen_dataset(stp)
    with pytest.raises(nn.TrainingDivergence):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ex.run_comparison(stp, data, gn=False)


# --- robustness ---------------------------------------------------------------------------


def test_robustness_zero_sigma_changes_nothing(tiny_run):
    stp, data, _, models, _ = tiny_run
    model = models["4L"][0]
    rep = ex.robustness_experiment(stp, model, data.z[:5], data.v[:5], 734, 0.0)
    assert all(d == 0.0 for d in rep.pawnn_delta.values())
    assert all(d == 0.0 for d in rep.gn_delta.values())


@pytest.mark.parametrize("bus", PLACEMENT_A)
def test_robustness_localised_for_every_pmu(tiny_run, bus):
    stp, data, _, models, _ = tiny_run
    rep = ex.robustness_experiment(stp, models["4L"][0], data.z[:4], data.v[:4], bus, 10.0)
    assert rep.far_buses()
    assert rep.pawnn_far_unchanged
    assert any(rep.gn_delta[b] > 0 for b in rep.far_buses())
    assert rep.pawnn_delta[bus] > 0


def test_robustness_needs_a_pmu(tiny_run):
    stp, data, _, models, _ = tiny_run
    with pytest.raises(ex.ScenarioError):
        ex.robustness_experiment(stp, models["4L"][0], data.z[:2], data.v[:2], 741, 1.0)
