"""Experiment configuration, orchestration and result emission.

A run expands its configuration into independent cells (one per
aggregator, expert count, seed and lengthscale), evaluates each cell and
writes one metrics CSV plus a JSON summary with per-group mean and standard
deviation. Cell failures become NaN rows and are listed in the summary.

Configuration files are YAML, for example::

    task: aggregation_sweep
    model: exact
    dataset:
      function: ackley
      d: 2
      n: 4000
      noise_variance: 0.025
    n_t: 400
    aggregators: [poe, gpoe, bcm, rbcm, grbcm, npae, opt]
    experts: [2, 4, 8]
    seeds: [0, 1, 2]
    lengthscales: [0.2, 0.3]
    signal_variance: 1.0
    noise_variance: 0.025
    output: results/
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from ..aggregation import aggregate, build_ensemble
from ..containers import Dataset, GaussianPrediction
from ..errors import ConfigError, DistGPError
from ..exact_gp import ExactGpModel
from ..experts import TrainConfig, partition, train
from ..kernels import FAMILIES, Hyperparameters
from ..numerics import parallel_map
from ..sparse_grid import opticom_coefficients
from ..svgp import SvgpModel, default_inducing_inputs
from .data import function_dataset, ingest_csv, sample_gp_dataset, test_inputs
from .functions import FUNCTIONS
from .metrics import nlpd, rmse

log = logging.getLogger(__name__)

TASKS = ("opticom_vs_ct", "aggregation_sweep", "train_compare", "predict")
MODEL_NAMES = ("exact", "svgp")
AGGREGATOR_NAMES = ("full", "poe", "gpoe", "bcm", "rbcm", "grbcm", "npae", "opt")
METRIC_FIELDS = ("rmse", "nlpd", "predict_seconds", "train_seconds")

# aggregators whose variance already contains the observation noise
_NOISY_VARIANCE = ("npae",)


def _canonical(name: str) -> str:
    """``OptiComVsCt`` / ``opticom-vs-ct`` / ``opticom_vs_ct`` -> ``opticomvsct``."""
    return "".join(ch for ch in str(name).lower() if ch.isalnum())


_TASK_LOOKUP = {_canonical(t): t for t in TASKS}
_MODEL_LOOKUP = {"exact": "exact", "exactgp": "exact", "svgp": "svgp"}


@dataclass(frozen=True)
class DatasetSpec:
    """Either a synthetic function, GP-sampled data, or a CSV file."""

    function: str | None = None
    gp_sample: bool = False
    csv: str | None = None
    d: int = 1
    n: int = 1000
    noise_variance: float = 0.025
    low: float = -1.0
    high: float = 1.0
    target_column: str | None = None
    split_ratio: float = 0.8
    standardize: bool = False


@dataclass(frozen=True)
class TrainSpec:
    methods: tuple = ("fact", "fedavg")
    iterations: int = 50
    learning_rate: float = 0.05
    local_steps_per_round: int = 1
    initial_lengthscale: float = 1.0
    initial_signal_variance: float = 1.0
    initial_noise_variance: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "aggregation_sweep"
    model: str = "exact"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    aggregators: tuple = ("poe", "gpoe", "bcm", "rbcm", "grbcm", "opt")
    experts: tuple = (4,)
    seeds: tuple = (0,)
    lengthscales: tuple = (0.3,)
    signal_variance: float = 1.0
    noise_variance: float = 0.025
    kernel: str = "rbf"
    levels: tuple = (1, 2, 3)
    m: int = 64
    n_t: int = 400
    nlpd_add_noise: bool = True
    hyperparameters: str | None = None
    train: TrainSpec = field(default_factory=TrainSpec)
    output: str = "results"
    threads: int = 1

    def __post_init__(self):
        validate(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a mapping of keys to values")
        raw = dict(raw)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        if "dataset" in raw:
            raw["dataset"] = _sub_record(DatasetSpec, raw["dataset"], "dataset")
        if "train" in raw:
            raw["train"] = _sub_record(TrainSpec, raw["train"], "train")
            if isinstance(raw["train"].methods, (list, str)):
                methods = raw["train"].methods
                methods = (methods,) if isinstance(methods, str) else tuple(methods)
                raw["train"] = replace(raw["train"], methods=methods)
        for key in ("aggregators", "experts", "seeds", "lengthscales", "levels"):
            if key in raw:
                value = raw[key]
                raw[key] = tuple(value) if isinstance(value, (list, tuple)) else (value,)
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from None
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw or {})

    def to_dict(self) -> dict:
        return asdict(self)


def _sub_record(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {unknown}")
    return cls(**raw)


def validate(cfg: ExperimentConfig) -> None:
    """Normalize names in place and check cross-field constraints."""
    task = _TASK_LOOKUP.get(_canonical(cfg.task))
    if task is None:
        raise ConfigError(f"task {cfg.task!r} is not one of {list(TASKS)}")
    object.__setattr__(cfg, "task", task)
    model = _MODEL_LOOKUP.get(_canonical(cfg.model))
    if model is None:
        raise ConfigError(f"model {cfg.model!r} is not one of {list(MODEL_NAMES)}")
    object.__setattr__(cfg, "model", model)
    aggs = tuple(str(a).lower() for a in cfg.aggregators)
    bad = [a for a in aggs if a not in AGGREGATOR_NAMES]
    if bad:
        raise ConfigError(f"unknown aggregators {bad}; choose from {list(AGGREGATOR_NAMES)}")
    if model == "svgp" and "npae" in aggs:
        raise ConfigError("NPAE is defined for exact-GP experts only; remove it for model svgp")
    object.__setattr__(cfg, "aggregators", aggs)
    if not cfg.seeds:
        raise ConfigError("seeds must be a nonempty list")
    if not cfg.lengthscales or any(not float(v) > 0 for v in cfg.lengthscales):
        raise ConfigError("lengthscales must be a nonempty list of positive numbers")
    if not cfg.experts or any(int(v) < 1 for v in cfg.experts):
        raise ConfigError("experts must be a nonempty list of integers >= 1")
    if cfg.n_t < 1:
        raise ConfigError("n_t must be >= 1")
    if cfg.m < 1:
        raise ConfigError("m must be >= 1")
    if not (cfg.noise_variance > 0 and cfg.signal_variance > 0):
        raise ConfigError("noise_variance and signal_variance must be positive")
    if cfg.kernel.lower() not in FAMILIES and cfg.kernel.lower() not in ("se", "matern"):
        raise ConfigError(f"kernel {cfg.kernel!r} is not one of {list(FAMILIES)}")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    ds = cfg.dataset
    sources = sum([ds.function is not None, bool(ds.gp_sample), ds.csv is not None])
    if sources != 1:
        raise ConfigError("dataset needs exactly one of: function, gp_sample, csv")
    if ds.function is not None and ds.function not in FUNCTIONS:
        raise ConfigError(f"dataset.function must be one of {sorted(FUNCTIONS)}")
    if ds.n < 1 or ds.d < 1:
        raise ConfigError("dataset.n and dataset.d must be >= 1")
    if task == "opticom_vs_ct" and (not cfg.levels or min(cfg.levels) < 1):
        raise ConfigError("levels must be a nonempty list of integers >= 1")
    if task == "train_compare":
        for method in cfg.train.methods:
            if method not in ("fact", "fedavg"):
                raise ConfigError(f"train.methods entry {method!r} is not 'fact' or 'fedavg'")


@dataclass
class MetricRow:
    aggregator: str
    M: int
    n_i: int
    seed: int
    lengthscale: float
    rmse: float
    nlpd: float
    predict_seconds: float
    train_seconds: float


ROW_FIELDS = tuple(f.name for f in fields(MetricRow))


@dataclass
class ExperimentResult:
    rows: list[MetricRow]
    errors: list[dict]
    summary: dict


# -- data ---------------------------------------------------------------------


@dataclass
class _Problem:
    train: Dataset
    Xs: np.ndarray
    truth: np.ndarray


def make_problem(cfg: ExperimentConfig, seed: int, lengthscale: float | None = None) -> _Problem:
    """Training data, test inputs and ground truth for one seed.

    Synthetic functions are evaluated noise-free on an evenly spaced test
    lattice; GP samples and CSV data hold out noisy targets.
    """
    ds = cfg.dataset
    if ds.function is not None:
        train_ds = function_dataset(ds.function, ds.n, ds.d, ds.noise_variance, seed, ds.low, ds.high)
        Xs = test_inputs(cfg.n_t, ds.d, ds.low, ds.high)
        return _Problem(train_ds, Xs, FUNCTIONS[ds.function](Xs))
    if ds.gp_sample:
        ell = cfg.lengthscales[0] if lengthscale is None else lengthscale
        hp = Hyperparameters.create([ell] * ds.d, cfg.signal_variance, ds.noise_variance, cfg.kernel)
        full = sample_gp_dataset(hp, ds.n + cfg.n_t, seed, ds.low, ds.high)
        idx = np.arange(full.n)
        return _Problem(full.subset(idx[: ds.n]), full.X[ds.n:], full.y[ds.n:])
    train_ds, test_ds, _ = ingest_csv(ds.csv, ds.target_column, ds.split_ratio, seed, ds.standardize)
    return _Problem(train_ds, test_ds.X, test_ds.y)


def base_hyperparameters(cfg: ExperimentConfig, lengthscale: float, d: int) -> Hyperparameters:
    if cfg.hyperparameters is not None:
        return load_hyperparameters(cfg.hyperparameters)
    return Hyperparameters.create([lengthscale] * d, cfg.signal_variance, cfg.noise_variance,
                                  cfg.kernel)


def load_hyperparameters(path) -> Hyperparameters:
    """Read ``{lengthscales, signal_variance, noise_variance[, inducing_inputs]}``."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return Hyperparameters.from_dict(data)
    except (OSError, json.JSONDecodeError, ValueError, TypeError) as exc:
        raise ConfigError(f"cannot load hyperparameters from {path}: {exc}") from None


def save_hyperparameters(hp: Hyperparameters, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(hp.to_dict(), fh, indent=2)


def with_inducing(hp: Hyperparameters, X, m: int, seed: int) -> Hyperparameters:
    if hp.inducing_inputs is not None:
        return hp
    return hp.with_inducing(default_inducing_inputs(X, m, seed))


# -- cells --------------------------------------------------------------------


def _nlpd_noise(cfg: ExperimentConfig, aggregator: str, hp: Hyperparameters) -> float:
    if not cfg.nlpd_add_noise or aggregator in _NOISY_VARIANCE:
        return 0.0
    return hp.noise_variance


def predict_cell(cfg: ExperimentConfig, prob: _Problem, hp: Hyperparameters, aggregator: str,
                 M: int, seed: int, threads: int = 1) -> GaussianPrediction:
    """Fit the experts (or the full model) and predict at the test inputs."""
    if cfg.model == "svgp":
        hp = with_inducing(hp, prob.train.X, cfg.m, seed)
    if aggregator == "full":
        if cfg.model == "svgp":
            return SvgpModel(hp, prob.train.X, prob.train.y).predict(prob.Xs)
        return ExactGpModel(hp, prob.train.X, prob.train.y).posterior(prob.Xs)
    part = partition(prob.train, M, "random", seed)
    ens = build_ensemble(prob.train, part, hp, cfg.model, central_seed=seed, threads=threads)
    return aggregate(ens, prob.Xs, aggregator, threads)


def _score(cfg, prob, pred, hp, aggregator) -> tuple[float, float]:
    return (rmse(pred.mean, prob.truth),
            nlpd(pred, prob.truth, _nlpd_noise(cfg, aggregator, hp)))


def _n_i(n: int, M: int) -> int:
    return int(math.ceil(n / M))


def _sweep_cells(cfg: ExperimentConfig):
    """One cell per (seed, lengthscale, M); the full model gets its own cell."""
    others = tuple(a for a in cfg.aggregators if a != "full")
    for seed in cfg.seeds:
        for ell in cfg.lengthscales:
            base = {"seed": int(seed), "lengthscale": float(ell)}
            if "full" in cfg.aggregators:
                yield {**base, "M": 1, "aggregators": ("full",)}
            if others:
                for M in cfg.experts:
                    yield {**base, "M": int(M), "aggregators": others}


def _cell_labels(cell: dict) -> tuple:
    return cell.get("aggregators") or (cell["aggregator"],)


def _error_row(cell: dict, n: int, exc: Exception) -> tuple[list[MetricRow], list[dict]]:
    M = cell.get("M", 1)
    rows, errors = [], []
    for label in _cell_labels(cell):
        rows.append(MetricRow(label, M, _n_i(n, M), cell["seed"], cell["lengthscale"],
                              math.nan, math.nan, math.nan, math.nan))
        errors.append({**{k: v for k, v in cell.items() if k != "aggregators"},
                       "aggregator": label, "error": f"{type(exc).__name__}: {exc}"})
    return rows, errors


_CELL_ERRORS = (DistGPError, np.linalg.LinAlgError, ValueError, FloatingPointError)


def _run_sweep_cell(cfg: ExperimentConfig, cell: dict):
    """Fit one ensemble, then evaluate every aggregator on it.

    ``predict_seconds`` is the shared expert fitting time plus the
    aggregator's own time, i.e. the full cost of producing that prediction.
    """
    seed, M = cell["seed"], cell["M"]
    prob = make_problem(cfg, seed, cell["lengthscale"])
    hp = base_hyperparameters(cfg, cell["lengthscale"], prob.train.d)
    if cfg.model == "svgp":
        hp = with_inducing(hp, prob.train.X, cfg.m, seed)
    n_i = _n_i(prob.train.n, M)
    if cell["aggregators"] == ("full",):
        start = time.perf_counter()
        pred = predict_cell(cfg, prob, hp, "full", 1, seed)
        elapsed = time.perf_counter() - start
        err, dens = _score(cfg, prob, pred, hp, "full")
        return [MetricRow("full", 1, prob.train.n, seed, cell["lengthscale"], err, dens,
                          elapsed, 0.0)], []
    start = time.perf_counter()
    ens = build_ensemble(prob.train, partition(prob.train, M, "random", seed), hp, cfg.model,
                         central_seed=seed)
    fit_seconds = time.perf_counter() - start
    rows, errors = [], []
    for agg in cell["aggregators"]:
        try:
            t0 = time.perf_counter()
            pred = aggregate(ens, prob.Xs, agg)
            elapsed = fit_seconds + time.perf_counter() - t0
            err, dens = _score(cfg, prob, pred, hp, agg)
        except _CELL_ERRORS as exc:
            log.warning("%s failed in cell %s: %s", agg, cell, exc)
            errors.append({"seed": seed, "lengthscale": cell["lengthscale"], "M": M,
                           "aggregator": agg, "error": f"{type(exc).__name__}: {exc}"})
            err = dens = elapsed = math.nan
        rows.append(MetricRow(agg, M, n_i, seed, cell["lengthscale"], err, dens, elapsed, 0.0))
    return rows, errors


def _opticom_cells(cfg: ExperimentConfig):
    for seed in cfg.seeds:
        for ell in cfg.lengthscales:
            for eta in cfg.levels:
                yield {"seed": int(seed), "lengthscale": float(ell), "eta": int(eta),
                       "aggregator": f"opticom_eta{int(eta)}"}


def _run_opticom_cell(cfg: ExperimentConfig, cell: dict):
    """One level: OptiCom and CT share the same partial-grid solves."""
    prob = make_problem(cfg, cell["seed"], cell["lengthscale"])
    d = prob.train.d
    hp = base_hyperparameters(cfg, cell["lengthscale"], d)
    box = np.tile([cfg.dataset.low, cfg.dataset.high], (d, 1)) if cfg.dataset.function else None
    start = time.perf_counter()
    sol = opticom_coefficients(prob.train.X, prob.train.y, hp, cell["eta"], d, box)
    setup = time.perf_counter() - start
    rows = []
    for label, coeffs in (("opticom", "opticom"), ("ct", "ct")):
        t0 = time.perf_counter()
        pred = sol.predict(prob.Xs, coefficients=coeffs)
        elapsed = setup + time.perf_counter() - t0
        err, dens = _score(cfg, prob, pred, hp, label)
        rows.append(MetricRow(f"{label}_eta{cell['eta']}", 1, prob.train.n, cell["seed"],
                              cell["lengthscale"], err, dens, elapsed, 0.0))
    return rows, []


def _train_cells(cfg: ExperimentConfig):
    for seed in cfg.seeds:
        for ell in cfg.lengthscales:
            for M in cfg.experts:
                for method in cfg.train.methods:
                    yield {"seed": int(seed), "lengthscale": float(ell), "M": int(M),
                           "method": method, "aggregator": method}


def _run_train_cell(cfg: ExperimentConfig, cell: dict):
    """Train on M shards, then predict with every configured aggregator."""
    prob = make_problem(cfg, cell["seed"], cell["lengthscale"])
    d = prob.train.d
    ts = cfg.train
    initial = Hyperparameters.create([ts.initial_lengthscale] * d, ts.initial_signal_variance,
                                     ts.initial_noise_variance, cfg.kernel)
    objective = cfg.model
    if objective == "svgp":
        initial = with_inducing(initial, prob.train.X, cfg.m, cell["seed"])
    part = partition(prob.train, cell["M"], "random", cell["seed"])
    tc = TrainConfig(method=cell["method"], iterations=ts.iterations,
                     learning_rate=ts.learning_rate, seed=cell["seed"],
                     local_steps_per_round=ts.local_steps_per_round)
    start = time.perf_counter()
    result = train(prob.train, part, initial, tc, objective)
    train_seconds = time.perf_counter() - start
    hp = result.hyperparameters
    rows, errors = [], []
    for agg in cfg.aggregators:
        label = f"{cell['method']}+{agg}"
        M = 1 if agg == "full" else cell["M"]
        try:
            t0 = time.perf_counter()
            pred = predict_cell(cfg, prob, hp, agg, M, cell["seed"])
            elapsed = time.perf_counter() - t0
            err, dens = _score(cfg, prob, pred, hp, agg)
        except _CELL_ERRORS as exc:
            errors.append({**cell, "aggregator": label, "error": f"{type(exc).__name__}: {exc}"})
            err = dens = elapsed = math.nan
        rows.append(MetricRow(label, M, _n_i(prob.train.n, M), cell["seed"], cell["lengthscale"],
                              err, dens, elapsed, train_seconds))
    return rows, errors


_TASK_CELLS = {
    "aggregation_sweep": (_sweep_cells, _run_sweep_cell),
    "predict": (_sweep_cells, _run_sweep_cell),
    "opticom_vs_ct": (_opticom_cells, _run_opticom_cell),
    "train_compare": (_train_cells, _run_train_cell),
}


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int | None = None) -> ExperimentResult:
    """Evaluate every cell, then write ``metrics.csv`` and ``summary.json``.

    ``out_dir`` defaults to ``cfg.output``; pass ``False`` to skip writing.
    Cells run on ``threads`` workers; rows keep the cell order regardless.
    """
    threads = cfg.threads if threads is None else threads
    make_cells, run_cell = _TASK_CELLS[cfg.task]
    cells = list(make_cells(cfg))
    n = cfg.dataset.n

    def guarded(cell):
        try:
            return run_cell(cfg, cell)
        except _CELL_ERRORS as exc:
            log.warning("cell %s failed: %s", cell, exc)
            return _error_row(cell, n, exc)

    outputs = parallel_map(guarded, cells, threads)
    rows = [r for out in outputs for r in out[0]]
    errors = [e for out in outputs for e in out[1]]
    summary = summarize(rows, errors, cfg)
    result = ExperimentResult(rows, errors, summary)
    if out_dir is not False:
        write_results(result, Path(cfg.output if out_dir is None else out_dir))
    return result


def summarize(rows: list[MetricRow], errors: list[dict], cfg: ExperimentConfig | None = None) -> dict:
    """Mean and standard deviation of every metric per ``(aggregator, M)``.

    NaN rows (failed cells) are excluded from the statistics and counted.
    """
    groups: dict[tuple, list[MetricRow]] = {}
    for r in rows:
        groups.setdefault((r.aggregator, r.M), []).append(r)
    out = []
    for (agg, M), members in groups.items():
        entry = {"aggregator": agg, "M": M, "cells": len(members)}
        for metric in METRIC_FIELDS:
            vals = np.array([getattr(r, metric) for r in members], dtype=float)
            ok = vals[np.isfinite(vals)]
            entry[metric] = {
                "mean": float(ok.mean()) if ok.size else None,
                "std": float(ok.std()) if ok.size else None,
                "failed": int(vals.size - ok.size),
            }
        out.append(entry)
    summary = {"groups": out, "errors": errors}
    if cfg is not None:
        summary["config"] = cfg.to_dict()
    return summary


def write_results(result: ExperimentResult, out_dir: Path) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "metrics.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROW_FIELDS)
        for r in result.rows:
            writer.writerow([_fmt(getattr(r, f)) for f in ROW_FIELDS])
    json_path = out_dir / "summary.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(result.summary, fh, indent=2, default=_json_default)
    return csv_path, json_path


def _fmt(value):
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return value


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (tuple, np.ndarray)):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
