import csv
import json

import numpy as np
import pytest
import yaml
from hypothesis import given, strategies as st

from distgp.bench.cli import main
from distgp.bench.data import (Standardizer, function_dataset, ingest_csv, lattice, read_csv,
                               sample_gp_dataset, test_inputs as make_test_inputs, write_csv)
from distgp.bench.experiment import ROW_FIELDS, ExperimentConfig, run_experiment
from distgp.bench.functions import ackley, griewank
from distgp.bench.metrics import nlpd, rmse
from distgp.containers import Dataset, GaussianPrediction
from distgp.errors import ConfigError, DimensionMismatch, EmptyDataset, NonFiniteMetric, ParseError
from distgp.kernels import Hyperparameters


# -- functions -------------------------------------------------------------------


@pytest.mark.parametrize("d", [1, 2, 5])
def test_ackley_zero_at_origin(d):
    assert ackley(np.zeros((1, d)))[0] == pytest.approx(0.0, abs=1e-12)


def test_ackley_hand_value():
    assert ackley([[1.0]])[0] == pytest.approx(20 * (1 - np.exp(-0.2)), rel=1e-12)
    assert ackley([[1.0]])[0] == pytest.approx(3.625385, abs=1e-6)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=4))
def test_ackley_symmetric(x):
    x = np.array([x])
    assert ackley(x)[0] == pytest.approx(ackley(-x)[0], abs=1e-12)


def test_griewank_values():
    assert griewank(np.zeros((1, 3)))[0] == pytest.approx(0.0, abs=1e-15)
    assert griewank([[np.pi]])[0] == pytest.approx(1 + np.pi**2 / 4000 + 1, rel=1e-12)
    assert griewank([[np.pi]])[0] == pytest.approx(2.002467, abs=1e-6)


# -- metrics ---------------------------------------------------------------------


def test_rmse_values():
    assert rmse([1, 2], [1, 2]) == 0.0
    assert rmse([0, 0], [1, 1]) == 1.0
    with pytest.raises(DimensionMismatch):
        rmse([1, 2], [1])


def test_nlpd_standard_normal():
    p = GaussianPrediction(np.zeros(3), np.full(3, 0.75))
    assert nlpd(p, np.zeros(3), 0.25) == pytest.approx(0.5 * np.log(2 * np.pi), rel=1e-14)
    assert nlpd(p, np.zeros(3), 0.25) == pytest.approx(0.918939, abs=1e-6)


def test_nlpd_non_finite():
    with pytest.raises(NonFiniteMetric):
        nlpd(GaussianPrediction([0.0], [0.0]), [1.0])


@given(st.floats(-3, 3), st.floats(0.01, 4))
def test_nlpd_matches_scipy(y, v):
    from scipy.stats import norm
    p = GaussianPrediction([0.2], [v])
    assert nlpd(p, [y], 0.1) == pytest.approx(-norm.logpdf(y, 0.2, np.sqrt(v + 0.1)), rel=1e-12)


# -- data ------------------------------------------------------------------------


def test_lattice_and_test_inputs():
    L = lattice(3, 2)
    assert L.shape == (9, 2)
    np.testing.assert_array_equal(L[0], [-1, -1])
    assert make_test_inputs(400, 2).shape == (400, 2)
    assert make_test_inputs(50, 1).shape == (50, 1)


def test_function_dataset_seeded():
    a = function_dataset("ackley", 20, 2, 0.01, seed=3)
    b = function_dataset("ackley", 20, 2, 0.01, seed=3)
    np.testing.assert_array_equal(a.y, b.y)
    assert np.all(np.abs(a.X) <= 1)


def test_gp_sample_matches_covariance():
    hp = Hyperparameters.create([0.5], 1.0, 0.1)
    draws = []
    for seed in range(400):
        ds = sample_gp_dataset(hp, 3, seed)
        draws.append(ds.y[0] ** 2)
    assert np.mean(draws) == pytest.approx(1.1, rel=0.2)


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_csv_round_trip(tmp_path, rng):
    ds = Dataset(rng.standard_normal((5, 2)), rng.standard_normal(5))
    write_csv(tmp_path / "a.csv", ds)
    back, features, target = read_csv(tmp_path / "a.csv")
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.y, ds.y)
    assert features == ["x0", "x1"] and target == "y"


def test_csv_target_column(tmp_path):
    p = _write(tmp_path, "t,a,b\n1,2,3\n4,5,6\n")
    ds, features, _ = read_csv(p, "t")
    np.testing.assert_array_equal(ds.y, [1, 4])
    assert features == ["a", "b"]


def test_csv_parse_error_location(tmp_path):
    p = _write(tmp_path, "a,y\n1,2\n3,oops\n")
    with pytest.raises(ParseError) as err:
        read_csv(p)
    assert err.value.row == 3 and err.value.column == "y"


def test_csv_ragged_row(tmp_path):
    with pytest.raises(ParseError):
        read_csv(_write(tmp_path, "a,y\n1,2,3\n"))


def test_csv_missing_target(tmp_path):
    with pytest.raises(ParseError):
        read_csv(_write(tmp_path, "a,y\n1,2\n"), "z")


def test_csv_empty(tmp_path):
    with pytest.raises(EmptyDataset):
        read_csv(_write(tmp_path, ""))
    with pytest.raises(EmptyDataset):
        read_csv(_write(tmp_path, "a,y\n"))


def test_ingest_split_and_standardize(tmp_path, rng):
    ds = Dataset(rng.normal(3, 2, (10, 2)), rng.normal(5, 3, 10))
    write_csv(tmp_path / "a.csv", ds)
    train, test, scaler = ingest_csv(tmp_path / "a.csv", split_ratio=0.8, seed=1)
    assert (train.n, test.n, scaler) == (8, 2, None)
    train, test, scaler = ingest_csv(tmp_path / "a.csv", split_ratio=0.8, seed=1, standardize=True)
    assert np.all(np.abs(train.X.mean(axis=0)) <= 1e-12)
    np.testing.assert_allclose(train.X.std(axis=0), 1.0, atol=1e-12)
    raw_train, _, _ = ingest_csv(tmp_path / "a.csv", split_ratio=0.8, seed=1)
    np.testing.assert_allclose(scaler.inverse_targets(train.y), raw_train.y, atol=1e-12)


def test_ingest_bad_ratio(tmp_path, rng):
    write_csv(tmp_path / "a.csv", Dataset(rng.standard_normal((4, 1)), np.zeros(4)))
    with pytest.raises(ValueError):
        ingest_csv(tmp_path / "a.csv", split_ratio=1.0)


# -- experiment ------------------------------------------------------------------


def _cfg(tmp_path, **kw):
    raw = dict(task="aggregation_sweep", model="exact",
               dataset=dict(function="ackley", d=1, n=120, noise_variance=0.025),
               n_t=20, aggregators=["full", "poe", "opt"], experts=[2, 3], seeds=[0, 1],
               lengthscales=[0.3], output=str(tmp_path / "out"))
    raw.update(kw)
    return ExperimentConfig.from_dict(raw)


def test_single_full_cell(tmp_path):
    cfg = _cfg(tmp_path, aggregators=["full"], experts=[1], seeds=[0],
               dataset=dict(function="ackley", d=1, n=50))
    res = run_experiment(cfg, out_dir=False)
    assert len(res.rows) == 1 and np.isfinite(res.rows[0].rmse)


def test_outputs_and_determinism(tmp_path):
    cfg = _cfg(tmp_path)
    a = run_experiment(cfg)
    b = run_experiment(cfg, out_dir=tmp_path / "again")
    strip = lambda rows: [(r.aggregator, r.M, r.n_i, r.seed, r.lengthscale, r.rmse, r.nlpd)
                          for r in rows]
    assert strip(a.rows) == strip(b.rows)
    with open(tmp_path / "out" / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == ROW_FIELDS
    assert len(rows) == 1 + len(a.rows) == 1 + 2 * (1 + 2 * 2)
    summary = json.load(open(tmp_path / "out" / "summary.json"))
    for g in summary["groups"]:
        for metric in ("rmse", "nlpd", "predict_seconds", "train_seconds"):
            assert set(g[metric]) >= {"mean", "std"}
    assert all(r.n_i in (120 // r.M, -(-120 // r.M)) for r in a.rows)


def test_threads_do_not_change_rows(tmp_path):
    cfg = _cfg(tmp_path, seeds=[0])
    a = run_experiment(cfg, out_dir=False, threads=1)
    b = run_experiment(cfg, out_dir=False, threads=3)
    assert [r.rmse for r in a.rows] == [r.rmse for r in b.rows]


def test_failing_cell_becomes_nan_row(tmp_path):
    cfg = _cfg(tmp_path, aggregators=["grbcm"], experts=[1], seeds=[0])
    res = run_experiment(cfg, out_dir=False)
    assert np.isnan(res.rows[0].rmse)
    assert "TooFewExperts" in res.errors[0]["error"]


def test_nlpd_noise_flag(tmp_path):
    on = run_experiment(_cfg(tmp_path, aggregators=["poe"], experts=[2], seeds=[0]), out_dir=False)
    off = run_experiment(_cfg(tmp_path, aggregators=["poe"], experts=[2], seeds=[0],
                              nlpd_add_noise=False), out_dir=False)
    assert on.rows[0].rmse == off.rows[0].rmse
    assert on.rows[0].nlpd != off.rows[0].nlpd


def test_opticom_task(tmp_path):
    cfg = _cfg(tmp_path, task="OptiComVsCt", levels=[1, 2], aggregators=["full"],
               dataset=dict(function="griewank", d=2, n=150, noise_variance=0.01),
               kernel="matern32", noise_variance=0.01, seeds=[0], lengthscales=[0.5])
    res = run_experiment(cfg, out_dir=False)
    assert [r.aggregator for r in res.rows] == ["opticom_eta1", "ct_eta1", "opticom_eta2", "ct_eta2"]


def test_train_compare_task(tmp_path):
    cfg = _cfg(tmp_path, task="TrainCompare", aggregators=["poe"], experts=[2], seeds=[0],
               dataset=dict(gp_sample=True, d=1, n=80, noise_variance=0.01),
               train=dict(methods=["fact", "fedavg"], iterations=5))
    res = run_experiment(cfg, out_dir=False)
    assert [r.aggregator for r in res.rows] == ["fact+poe", "fedavg+poe"]
    assert all(r.train_seconds > 0 for r in res.rows)


def test_svgp_sweep(tmp_path):
    cfg = _cfg(tmp_path, model="svgp", m=10, aggregators=["full", "gpoe", "grbcm", "opt"])
    res = run_experiment(cfg, out_dir=False)
    assert not res.errors


def test_csv_dataset_source(tmp_path, rng):
    write_csv(tmp_path / "d.csv", Dataset(rng.uniform(-1, 1, (60, 1)), rng.standard_normal(60)))
    cfg = _cfg(tmp_path, dataset=dict(csv=str(tmp_path / "d.csv")), seeds=[0])
    assert not run_experiment(cfg, out_dir=False).errors


@pytest.mark.parametrize("bad, msg", [
    (dict(task="nope"), "task"),
    (dict(model="svgp", aggregators=["npae"]), "NPAE"),
    (dict(seeds=[]), "seeds"),
    (dict(n_t=0), "n_t"),
    (dict(aggregators=["median"]), "aggregators"),
    (dict(bogus=1), "unknown"),
    (dict(dataset=dict(function="ackley", csv="x.csv")), "exactly one"),
])
def test_config_validation(tmp_path, bad, msg):
    with pytest.raises(ConfigError, match=msg):
        _cfg(tmp_path, **bad)


def test_config_yaml_load(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(dict(task="Predict", dataset=dict(function="ackley", n=30),
                                        experts=4, seeds=[1])))
    cfg = ExperimentConfig.load(path)
    assert cfg.task == "predict" and cfg.experts == (4,)
    path.write_text("task: [unclosed")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(path)


# -- CLI -------------------------------------------------------------------------


def test_cli_end_to_end(tmp_path, capsys):
    assert main(["synth", "--function", "ackley", "--n", "80", "--seed", "2",
                 "--out-dir", str(tmp_path)]) == 0
    data = tmp_path / "ackley_n80_d1_seed2.csv"
    assert data.exists()
    assert main(["train", "--data", str(data), "--experts", "2", "--method", "fact",
                 "--iterations", "4", "--out-dir", str(tmp_path / "tr")]) == 0
    hp = json.load(open(tmp_path / "tr" / "hyperparameters.json"))
    assert set(hp) >= {"lengthscales", "signal_variance", "noise_variance"}
    assert (tmp_path / "tr" / "trace.csv").exists()
    assert main(["predict", "--data", str(data), "--hyperparameters",
                 str(tmp_path / "tr" / "hyperparameters.json"), "--aggregator", "gpoe",
                 "--experts", "2", "--out-dir", str(tmp_path / "pr")]) == 0
    with open(tmp_path / "pr" / "predictions.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x0", "target", "mean", "variance"] and len(rows) == 1 + 16
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(dict(dataset=dict(function="ackley", n=60), n_t=10,
                                       aggregators=["poe"], experts=[2], seeds=[0])))
    assert main(["bench", "--config", str(cfg), "--out-dir", str(tmp_path / "b"),
                 "--aggregator", "bcm"]) == 0
    with open(tmp_path / "b" / "metrics.csv") as fh:
        assert list(csv.reader(fh))[1][0] == "bcm"


def test_cli_reports_errors(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,y\n1,x\n")
    assert main(["train", "--data", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert "row 2" in capsys.readouterr().err
    assert main(["bench", "--out-dir", str(tmp_path)]) == 2
