import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from intrinsic_dim import EstimatorConfig, harness
from intrinsic_dim.cli import main, read_sweep_file
from intrinsic_dim.errors import ParameterError, SchemaError
from intrinsic_dim.harness import GridSpec, ResultTable, Row, SweepConfig
from intrinsic_dim.report import EstimateReport

# hand-built selection toy: truth A=2, B=10, C=4, grid entries 0..3
TRUTH = {"A": 2, "B": 10, "C": 4}
MEANS = {
    "A": [2.1, 7.0, 2.6, 0.5],
    "B": [10.5, 3.0, 9.65, 20.0],
    "C": [4.38, 9.0, 4.35, 8.0],
}


def toy_table(means=MEANS, estimator="mle"):
    rows = []
    for ds, row in means.items():
        for gi, m in enumerate(row):
            rows.append(Row(ds, 100, estimator, {"k": 5 + gi}, gi, [m - 0.25, m + 0.25]))
    return ResultTable(rows)


def test_selection_toy_by_hand():
    # median |error|: gi0 0.38, gi2 0.35 -> med_abs = 2
    # median relative error: gi0 0.05, gi2 0.0875 -> med_rel = 0
    # per-dataset closest: A gi0 (0.1), B gi2 (0.35), C gi2 (0.35)
    out = {r["dataset"]: r for r in harness.hyperparam_select(toy_table(), TRUTH)}
    assert {ds: r["best_index"] for ds, r in out.items()} == {"A": 0, "B": 2, "C": 2}
    assert all(r["med_abs_index"] == 2 and r["med_rel_index"] == 0 for r in out.values())
    assert out["A"]["best"] == pytest.approx(2.1) and out["A"]["med_abs"] == pytest.approx(2.6)
    assert out["B"]["med_rel"] == pytest.approx(10.5)
    assert out["C"]["med_abs_params"] == {"k": 7}
    assert out["A"]["best_std"] == pytest.approx(math.sqrt(0.125))


def test_selection_ties_and_failures():
    means = {"A": [3.0, 1.0, 2.0], "B": [11.0, 9.0, 10.0], "C": [5.0, 3.0, 4.0]}
    out = harness.hyperparam_select(toy_table(means), TRUTH)
    # entries 0 and 1 tie on every rule for each dataset but entry 2 is exact
    assert {r["best_index"] for r in out} == {2}
    tied = {"A": [3.0, 1.0], "B": [11.0, 9.0], "C": [5.0, 3.0]}
    assert {r["med_abs_index"] for r in harness.hyperparam_select(toy_table(tied), TRUTH)} == {0}
    table = toy_table(tied)
    table.rows[0].values = [math.nan, math.nan]  # a cell whose runs all failed never wins
    assert harness.hyperparam_select(table, TRUTH)[0]["best_index"] == 1
    table.rows.pop()
    with pytest.raises(ParameterError):
        harness.hyperparam_select(table, TRUTH)


def test_row_statistics():
    r = Row("A", 10, "mle", {}, 0, [1.0, 2.0, math.nan, 6.0])
    assert (r.n_failed, r.mean, r.median) == (1, 3.0, 2.0)
    assert r.std == pytest.approx(np.std([1, 2, 6], ddof=1))
    assert Row("A", 10, "mle", {}, 0, [4.0]).std == 0.0
    assert math.isnan(Row("A", 10, "mle", {}, 0, [math.nan]).mean)


def test_grid_expansion_order():
    configs = GridSpec("mle", {"k": [5, 10], "agg": ["mean", "hmean"]}).configs()
    assert [(c.hyperparams["k"], c.hyperparams["agg"]) for c in configs] == [
        (5, "mean"), (5, "hmean"), (10, "mean"), (10, "hmean")]
    with pytest.raises(SchemaError):
        GridSpec("mle", {"kk": [1]}).configs()


def test_sweep_validation():
    with pytest.raises(ParameterError):
        SweepConfig(("M99",), (100,), (GridSpec("mle"),))
    with pytest.raises(ParameterError):
        SweepConfig(("M7_Roll",), (100,), ())


@pytest.fixture(scope="module")
def small_sweep():
    return SweepConfig(("M7_Roll", "Sphere:d=2,D=3"), (120, 200),
                       (GridSpec("mle", {"k": [5, 10]}), GridSpec("twonn"), GridSpec("wodcap", {"k": [4]})),
                       runs=3, master_seed=11)


def test_bench_rows_and_reproducibility(small_sweep):
    table = harness.bench_run(small_sweep)
    assert len(table) == 2 * 2 * 4
    assert [(r.dataset, r.n, r.estimator, r.grid_index) for r in table.rows[:4]] == [
        ("M7_Roll", 120, "mle", 0), ("M7_Roll", 120, "mle", 1), ("M7_Roll", 120, "twonn", 0),
        ("M7_Roll", 120, "wodcap", 0)]
    assert all(len(r.values) == 3 and r.n_failed == 0 and r.violations == 0 for r in table.rows)
    again = harness.bench_run(small_sweep, jobs=2)
    assert again.to_json() == table.to_json()
    back = ResultTable.from_json(table.to_json())
    assert back.to_json() == table.to_json()
    # the same clouds are shared by all configs in a cell, and differ across runs
    r = table.find(dataset="M7_Roll", n=120, estimator="twonn")[0]
    assert len(set(r.values)) == 3


def test_csv_output(small_sweep, tmp_path):
    table = harness.bench_run(SweepConfig(("M7_Roll",), (100,), (GridSpec("mle"),), runs=2))
    path = tmp_path / "t.csv"
    table.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == list(harness.CSV_FIELDS)
    assert len(lines) == 2


def test_failures_are_recorded_not_raised():
    table = harness.bench_run(SweepConfig(("M7_Roll",), (30,), (GridSpec("ph0", {"n_min": 0.2}),), runs=2))
    row = table.rows[0]
    assert row.n_failed == 2 and all("ParameterError" in e for e in row.errors)


def test_throttle_violation_counter():
    rep = EstimateReport(3.0, np.array([1.0, 4.0, 6.0]))
    assert harness.throttle_violations("lpca", {"k": 5}, rep, 10) == 1
    assert harness.throttle_violations("lpca", {"k": 5}, rep, 3) == 2
    assert harness.throttle_violations("doubling", {"k": 2}, EstimateReport(1.3), 3) == 1
    assert harness.throttle_violations("wodcap", {"k": 20}, EstimateReport(9.0), 3) == 0
    assert harness.throttle_violations("mle", {"k": 20}, EstimateReport(99.0), 3) == 0


def test_seed_derivation():
    a = harness.derive_seed(0, "M7_Roll", 625, 3)
    assert a == harness.derive_seed(0, "M7_Roll", 625, 3)
    assert len({a, harness.derive_seed(1, "M7_Roll", 625, 3), harness.derive_seed(0, "M7_Roll", 625, 4),
                harness.derive_seed(0, "M1_Sphere", 625, 3)}) == 4


def test_dataset_strings():
    assert harness.parse_dataset("Sphere:d=6,D=11") == ("Sphere", {"d": 6, "D": 11})
    assert harness.dataset_truth("SOn:n=4") == 6 and harness.dataset_truth("M10a_Cubic") == 10
    with pytest.raises(ParameterError):
        harness.parse_dataset("Sphere:d")


def test_noise_experiment_small():
    cfgs = (EstimatorConfig("mle", {"k": 10, "agg": "hmean"}), EstimatorConfig("twonn"))
    table = harness.noise_experiment("gaussian", (0.0, 1.0), cfgs, ("S6",), n=300, runs=2, master_seed=1)
    assert [(r.condition, r.estimator) for r in table.rows] == [
        ("sigma2=0.0", "mle"), ("sigma2=0.0", "twonn"), ("sigma2=1.0", "mle"), ("sigma2=1.0", "twonn")]
    clean, noisy = table.rows[0].mean, table.rows[2].mean
    assert noisy > clean + 2
    out = harness.noise_experiment("outliers", (0, 30), cfgs[:1], ("S6",), n=300, runs=2, master_seed=1)
    assert out.rows[0].values == table.rows[0].values  # zero corruption reuses the clean cloud
    with pytest.raises(ParameterError):
        harness.noise_experiment("salt", (0,), cfgs)


def test_paraboloid_sizes():
    assert harness.paraboloid_area(1.0) == pytest.approx(10.467, abs=1e-3)
    from scipy.integrate import dblquad
    ref, _ = dblquad(lambda y, x: np.sqrt(1 + 16 * x**2 + 4 * y**2 / 2.0**4), -1, 1, -1, 1)
    assert harness.paraboloid_area(2.0) == pytest.approx(ref, rel=1e-9)
    assert harness.paraboloid_size(1.0) == 10000
    assert harness.paraboloid_size(4.0) < harness.paraboloid_size(2.0) < 10000


def test_curvature_paraboloid_small():
    res = harness.curvature_paraboloid("lpca", (1.0,), 1, k_grid=(20, 40), n_ref=800)
    assert [(r["b"], r["k"]) for r in res["rows"]] == [(1.0, 20), (1.0, 40)]
    assert all(r["estimate"] in (1.0, 2.0, 3.0) for r in res["rows"])
    assert 0 <= res["summary"][0]["n_k_giving_2"] <= 2
    saddle = harness.curvature_paraboloid("lpca", (1.0,), -1, k_grid=(20,), n_ref=800)
    assert saddle["rows"][0]["estimate"] in (1.0, 2.0, 3.0)


def test_torus_cdf_and_experiment():
    assert harness.torus_area_cdf(0.0) == 0 and harness.torus_area_cdf(np.pi) == pytest.approx(1.0)
    u = np.linspace(0, np.pi, 50)
    assert np.all(np.diff(harness.torus_area_cdf(u)) > 0)
    res = harness.curvature_torus("mle", 10, n=1500, master_seed=2)
    assert res["n_over"] == len(res["rows"]) and res["n_over"] > 0
    assert 0 <= res["ks_pvalue"] <= 1
    with pytest.raises(ParameterError):
        harness.curvature_experiment("sphere")


# command line

def test_cli_generate_estimate_and_corrupt(tmp_path):
    runner = CliRunner()
    pts = tmp_path / "roll.csv"
    res = runner.invoke(main, ["generate", "--dataset", "M7_Roll", "--n", "300", "--seed", "4", "--out", str(pts)])
    assert res.exit_code == 0, res.output
    res = runner.invoke(main, ["estimate", "--estimator", "mle", "--input", str(pts), "--k", "10", "--agg", "hmean"])
    assert res.exit_code == 0, res.output
    rep = json.loads(res.output)
    assert rep["config"]["agg"] == "hmean" and 1.5 < rep["estimate"] < 2.6
    again = runner.invoke(main, ["estimate", "--estimator", "mle", "--input", str(pts), "--param", "k=10",
                                 "--param", "agg=hmean"])
    assert again.output == res.output
    noisy = tmp_path / "noisy.csv"
    res = runner.invoke(main, ["corrupt", str(pts), "--gaussian", "0.01", "--out", str(noisy)])
    assert res.exit_code == 0 and noisy.exists()
    res = runner.invoke(main, ["corrupt", str(pts), "--out", str(noisy)])
    assert res.exit_code != 0


def test_cli_estimate_errors_and_curve(tmp_path):
    runner = CliRunner()
    res = runner.invoke(main, ["estimate", "--estimator", "mle", "--dataset", "M7_Roll", "--n", "200", "--kk", "3"])
    assert res.exit_code != 0 and "kk" in res.output
    res = runner.invoke(main, ["estimate", "--estimator", "nope", "--dataset", "M7_Roll", "--n", "200"])
    assert res.exit_code != 0
    curve = tmp_path / "curve.csv"
    res = runner.invoke(main, ["estimate", "--estimator", "magnitude", "--dataset", "Sphere:d=2", "--n", "600",
                               "--tsteps", "80", "--curv-threshold", "0.3", "--curve-out", str(curve),
                               "--out", str(tmp_path / "m.json")])
    assert res.exit_code == 0, res.output
    assert curve.read_text().splitlines()[0] == "t,value" and len(curve.read_text().splitlines()) == 81
    assert json.loads((tmp_path / "m.json").read_text())["config"]["tsteps"] == 80


def test_cli_list():
    res = CliRunner().invoke(main, ["list"])
    assert res.exit_code == 0
    assert [e["name"] for e in json.loads(res.output)][-1] == "magnitude"


def test_cli_bench_and_select(tmp_path):
    cfg = tmp_path / "sweep.txt"
    cfg.write_text("# small sweep\ndatasets = M7_Roll Sphere:d=2,D=3\nsizes = 150\nruns = 2\nseed = 3\n"
                   "estimator = mle k=5,10 agg=mean\nestimator = twonn\n")
    sweep = read_sweep_file(cfg)
    assert sweep.runs == 2 and sweep.estimators[0].grid == {"k": ["5", "10"], "agg": ["mean"]}
    runner = CliRunner()
    out = tmp_path / "out"
    res = runner.invoke(main, ["bench", str(cfg), "--out-dir", str(out)])
    assert res.exit_code == 0, res.output
    assert (out / "bench.csv").exists()
    table = ResultTable.from_json((out / "bench.json").read_text())
    assert len(table) == 2 * 3
    res = runner.invoke(main, ["select", str(out / "bench.json"), "--out-dir", str(out)])
    assert res.exit_code == 0, res.output
    lines = (out / "selection.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 2 and lines[0].startswith("dataset,N,estimator,truth,best")
    bad = tmp_path / "bad.txt"
    bad.write_text("datasets = M7_Roll\ncolour = red\n")
    assert runner.invoke(main, ["bench", str(bad)]).exit_code != 0


def test_cli_bench_failures_exit_nonzero(tmp_path):
    cfg = tmp_path / "sweep.txt"
    cfg.write_text("datasets = M7_Roll\nsizes = 30\nruns = 1\nestimator = ph0 n_min=0.2\n")
    runner = CliRunner()
    assert runner.invoke(main, ["bench", str(cfg), "--out-dir", str(tmp_path)]).exit_code == 1
    res = runner.invoke(main, ["bench", str(cfg), "--out-dir", str(tmp_path), "--allow-failures"])
    assert res.exit_code == 0


def test_cli_noise_and_curvature(tmp_path):
    runner = CliRunner()
    res = runner.invoke(main, ["noise", "--kind", "outliers", "--level", "0", "--level", "25", "--estimator",
                               "mle k=10 agg=hmean", "--n", "250", "--runs", "2", "--out-dir", str(tmp_path)])
    assert res.exit_code == 0, res.output
    assert len(ResultTable.from_json((tmp_path / "noise_outliers.json").read_text())) == 3 * 2
    res = runner.invoke(main, ["curvature", "--kind", "torus", "--k", "10", "--out-dir", str(tmp_path)])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "torus_cdf.csv").exists()
