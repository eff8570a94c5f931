import csv
import json
from pathlib import Path

import numpy as np
import pytest

from islris import control as C
from islris import experiments as E
from islris.cnn import init_model
from islris.geometry import ActivitySet, ScenarioConfig, place_scenario, sample_channels

SPECS = Path(__file__).resolve().parents[1] / "specs"


def small(**kw):
    return ScenarioConfig(elements_per_ris=32, **kw)


def instance(cfg, seed):
    sc = place_scenario(cfg)
    return sc, sample_channels(sc, seed)


def test_always_off_is_direct_sinr():
    sc, ch = instance(small(n_ris=2, interferer_angles=[40.0]), 0)
    rep, beta, _ = E.run_instance(sc, ch, E.OracleClassifier(), "always_off")
    assert beta == (0, 0)
    assert rep.gamma_linear == C.sinr_direct(ch, {1}, sc.tx_powers, sc.noise_power).gamma_linear


def test_unknown_policy_rejected():
    sc, ch = instance(small(), 0)
    with pytest.raises(ValueError):
        E.run_instance(sc, ch, E.OracleClassifier(), "sometimes_on")


@pytest.mark.parametrize("lam", [0.0, 45.0, 90.0, 150.0])
def test_single_ris_isl_is_best_of_on_and_off(lam):
    for seed in range(15):
        sc, ch = instance(small(interferer_angles=[lam]), seed)
        res = E.evaluate_instance(sc, ch, E.OracleClassifier())
        g = {p: res[p][0].gamma_linear for p in E.POLICIES}
        assert g["isl"] == g["exhaustive"]
        assert g["isl"] >= max(g["always_on"], g["always_off"]) * (1 - 1e-12)


def test_isl_equals_always_on_when_coupling_vanishes():
    for seed in range(10):
        sc, ch = instance(small(interferer_angles=[150.0]), seed)
        assert np.all(ch.xi[:, 1] == 0)
        res = E.evaluate_instance(sc, ch, E.OracleClassifier())
        assert res["isl"][1] == (1,)
        assert res["isl"][0].gamma_linear == pytest.approx(res["always_on"][0].gamma_linear, rel=1e-12)


def test_policy_ordering_per_instance():
    for seed in range(10):
        sc, ch = instance(small(n_ris=3, interferer_angles=[70.0], interferer_distances=[5.0]), seed)
        res = E.evaluate_instance(sc, ch, E.OracleClassifier())
        g = {p: res[p][0].gamma_linear for p in E.POLICIES}
        assert g["exhaustive"] >= g["isl"] * (1 - 1e-12)
        assert g["exhaustive"] >= max(g["always_on"], g["always_off"]) * (1 - 1e-12)


def test_misclassification_costs_sinr_on_average():
    oracle, wrong = [], []
    for seed in range(30):
        sc, ch = instance(small(n_ris=2, interferer_angles=[30.0], interferer_distances=[5.0]), seed)
        act = ActivitySet((1, 1))
        oracle.append(E.run_instance(sc, ch, E.OracleClassifier(), "isl", act)[0].gamma_db)
        wrong.append(E.run_instance(sc, ch, E.FixedClassifier(frozenset()), "isl", act)[0].gamma_db)
    assert np.mean(wrong) <= np.mean(oracle)


def test_fixed_classifier_reports_correctness():
    act = ActivitySet((1, 1))
    rng = np.random.default_rng(0)
    assert E.FixedClassifier(frozenset({1}))(act, rng) == (frozenset({1}), True)
    assert E.FixedClassifier(frozenset())(act, rng) == (frozenset(), False)


def test_model_classifier_checks_user_count():
    clf = E.ModelClassifier(init_model(16, 3, conv1=2, conv2=2, hidden=4))
    with pytest.raises(ValueError):
        clf(ActivitySet((1, 1)), np.random.default_rng(0))


def test_model_classifier_uses_model_prediction():
    m = init_model(16, 2, conv1=2, conv2=2, hidden=4)
    for k in m.params:
        m.params[k][...] = 0
    m.params["out_b"][1] = 3.0  # always "Only U1"
    clf = E.ModelClassifier(m)
    assert clf(ActivitySet((1, 1)), np.random.default_rng(0)) == (frozenset(), False)
    assert clf(ActivitySet((1, 0)), np.random.default_rng(0)) == (frozenset(), True)


def quick_spec(**kw):
    base = dict(variable="lambda", grid=[0.0, 150.0], trials=4, scenario=small(n_ris=2))
    return E.SweepSpec(**(base | kw))


@pytest.mark.parametrize("bad", [dict(variable="N"), dict(trials=0), dict(grid=[])])
def test_sweep_spec_validation(bad):
    with pytest.raises(ValueError):
        quick_spec(**bad)


def test_sweep_rows_and_files(tmp_path):
    res = E.sweep(quick_spec(), out_dir=tmp_path)
    assert [r.grid_value for r in res.rows] == [0.0, 150.0]
    assert len(res.instances) == 8
    for r in res.rows:
        assert all(r.se_db[p] >= 0 for p in E.POLICIES)
        assert r.decision_time_us >= 0
        assert 0 <= r.frac_all_on <= 1 and 0 <= r.frac_all_off <= 1
    assert res.rows[1].frac_all_on == 1.0
    assert {"results.csv", "results.json", "instances.csv"} <= {p.name for p in tmp_path.iterdir()}


def _strip_timing(path):
    rows = list(csv.reader(open(path)))
    drop = [i for i, c in enumerate(rows[0]) if c in E.TIMING_COLUMNS]
    return [[c for i, c in enumerate(r) if i not in drop] for r in rows]


def test_sweep_reproducible_and_worker_independent(tmp_path):
    a = E.sweep(quick_spec(), out_dir=tmp_path / "a")
    b = E.sweep(quick_spec(workers=3), out_dir=tmp_path / "b")
    assert _strip_timing(tmp_path / "a" / "results.csv") == _strip_timing(tmp_path / "b" / "results.csv")
    assert (tmp_path / "a" / "instances.csv").read_bytes() == (tmp_path / "b" / "instances.csv").read_bytes()
    assert [r.mean_db for r in a.rows] == [r.mean_db for r in b.rows]
    c = E.sweep(quick_spec(seed=1))
    assert [r.mean_db for r in c.rows] != [r.mean_db for r in a.rows]


def test_k_and_power_sweeps_apply_grid():
    res = E.sweep(quick_spec(variable="K", grid=[1, 3], trials=2))
    assert [len(r.isl_beta) for r in res.instances] == [1, 1, 3, 3]
    lo = E.sweep(quick_spec(variable="p_m", grid=[0.0, 30.0], trials=3))
    assert lo.rows[0].mean_db["always_off"] > lo.rows[1].mean_db["always_off"]


def test_lambda_range_draws_per_trial():
    res = E.sweep(quick_spec(variable="K", grid=[1], trials=6, lambda_range=(30.0, 120.0)))
    lams = [r.lambda_deg for r in res.instances]
    assert all(30 <= x <= 120 for x in lams) and len(set(lams)) == 6


def test_activity_probability_zero_means_no_interference():
    res = E.sweep(quick_spec(grid=[0.0], activity_prob=0.0, trials=3))
    for rec in res.instances:
        assert rec.gamma_db["isl"] >= rec.gamma_db["always_off"]
        assert rec.isl_beta == (1, 1)


def test_export_round_trip(tmp_path):
    rows = E.sweep(quick_spec()).rows
    E.export(rows, tmp_path / "r.csv", "csv")
    back = E.read_results_csv(tmp_path / "r.csv")
    assert list(back[0]) == E.csv_columns()
    for row, rec in zip(rows, back):
        assert rec["grid_value"] == row.grid_value
        for p in E.POLICIES:
            assert rec[f"{p}_mean_db"] == row.mean_db[p]
            assert rec[f"{p}_se_db"] == row.se_db[p]


def test_export_empty_is_header_only(tmp_path):
    E.export([], tmp_path / "e.csv", "csv")
    assert (tmp_path / "e.csv").read_text() == ",".join(E.csv_columns()) + "\n"


def test_export_json_schema(tmp_path):
    E.export(E.sweep(quick_spec()).rows, tmp_path / "r.json", "json", variable="lambda")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["schema_version"] == E.SCHEMA_VERSION
    assert doc["nondeterministic_columns"] == ["decision_time_us"]
    assert len(doc["rows"]) == 2
    with pytest.raises(ValueError):
        E.export([], tmp_path / "r.xml", "xml")


def test_bench_runtime_shape():
    rows = E.bench_runtime([2, 3], repetitions=5, scenario=small())
    assert [r.n_ris for r in rows] == [2, 3]
    assert all(r.drbc_ms > 0 and r.exhaustive_ms > 0 for r in rows)


def test_linear_fit():
    slope, icpt, r2 = E.linear_fit_r2([1, 2, 3, 4], [3.0, 5.0, 7.0, 9.0])
    assert (slope, icpt, r2) == pytest.approx((2.0, 1.0, 1.0))
    assert E.linear_fit_r2([1, 2, 3], [1.0, 3.0, 2.0])[2] < 1.0


@pytest.mark.parametrize("name", ["fig3a", "fig3b", "fig4a", "fig4b", "fig4c"])
def test_checked_in_sweep_specs_parse(name):
    spec = E.load_sweep_spec(SPECS / f"{name}.toml")
    assert spec.trials == 500 and spec.classifier == "oracle"
    place_scenario(E._grid_config(spec, spec.grid[0]))


def test_checked_in_bench_spec_parses():
    spec = E.load_bench_spec(SPECS / "table3.toml")
    assert spec.k_values == list(range(2, 11)) and spec.repetitions >= 100
