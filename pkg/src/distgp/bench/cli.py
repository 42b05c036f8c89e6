"""``distgp`` command line: synth, train, predict and bench subcommands."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from ..aggregation import aggregate, build_ensemble
from ..errors import ConfigError, DistGPError
from ..exact_gp import ExactGpModel
from ..experts import TrainConfig, partition, train
from ..kernels import Hyperparameters
from ..svgp import SvgpModel, default_inducing_inputs
from .data import function_dataset, ingest_csv, read_csv, sample_gp_dataset, write_csv
from .experiment import (AGGREGATOR_NAMES, ExperimentConfig, load_hyperparameters,
                         run_experiment, save_hyperparameters)
from .functions import FUNCTIONS
from .metrics import nlpd, rmse

log = logging.getLogger("distgp")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML experiment configuration")
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--out-dir", default=None, help="directory for output files")
    p.add_argument("--threads", type=int, default=1, help="worker threads")
    p.add_argument("--model", choices=("exact", "svgp"), default=None)
    p.add_argument("--aggregator", choices=AGGREGATOR_NAMES, default=None)
    p.add_argument("--experts", type=int, default=None, metavar="M", help="number of experts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distgp",
                                     description="Distributed Gaussian-process regression benchmarks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset CSV")
    _common(p)
    p.add_argument("--function", choices=sorted(FUNCTIONS), default="ackley")
    p.add_argument("--gp-sample", action="store_true",
                   help="draw targets from a GP prior instead of a test function")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--noise-variance", type=float, default=0.025)
    p.add_argument("--lengthscale", type=float, default=0.3, help="GP-sample lengthscale")
    p.add_argument("--signal-variance", type=float, default=1.0, help="GP-sample signal variance")
    p.add_argument("--low", type=float, default=-1.0)
    p.add_argument("--high", type=float, default=1.0)

    p = sub.add_parser("train", help="distributed hyperparameter training")
    _common(p)
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--target-column", default=None)
    p.add_argument("--method", choices=("fact", "fedavg"), default="fedavg")
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--local-steps", type=int, default=1)
    p.add_argument("--init", default=None, help="initial hyperparameter JSON")
    p.add_argument("--m", type=int, default=64, help="inducing inputs for --model svgp")

    p = sub.add_parser("predict", help="one aggregated prediction run")
    _common(p)
    p.add_argument("--data", required=True, help="training CSV (split 80:20 unless --test is given)")
    p.add_argument("--test", default=None, help="test CSV; targets are used for metrics")
    p.add_argument("--target-column", default=None)
    p.add_argument("--hyperparameters", required=True, help="hyperparameter JSON")
    p.add_argument("--m", type=int, default=64, help="inducing inputs for --model svgp")

    p = sub.add_parser("bench", help="full sweep from a configuration file")
    _common(p)
    return parser


def _out_dir(args) -> Path:
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> int:
    seed = 0 if args.seed is None else args.seed
    if args.gp_sample:
        hp = Hyperparameters.create([args.lengthscale] * args.d, args.signal_variance,
                                    args.noise_variance)
        ds = sample_gp_dataset(hp, args.n, seed, args.low, args.high)
        name = "gp_sample"
    else:
        ds = function_dataset(args.function, args.n, args.d, args.noise_variance, seed,
                              args.low, args.high)
        name = args.function
    path = _out_dir(args) / f"{name}_n{args.n}_d{args.d}_seed{seed}.csv"
    write_csv(path, ds)
    print(path)
    return 0


def cmd_train(args) -> int:
    seed = 0 if args.seed is None else args.seed
    ds, _, _ = read_csv(args.data, args.target_column)
    model = args.model or "exact"
    if args.init:
        initial = load_hyperparameters(args.init)
    else:
        initial = Hyperparameters.create([1.0] * ds.d, 1.0, 0.1)
    if model == "svgp" and initial.inducing_inputs is None:
        initial = initial.with_inducing(default_inducing_inputs(ds.X, args.m, seed))
    part = partition(ds, args.experts or 1, "random", seed)
    config = TrainConfig(method=args.method, iterations=args.iterations,
                         learning_rate=args.learning_rate, seed=seed,
                         local_steps_per_round=args.local_steps)
    result = train(ds, part, initial, config, model, args.threads)
    out = _out_dir(args)
    save_hyperparameters(result.hyperparameters, out / "hyperparameters.json")
    result.write_trace_csv(out / "trace.csv")
    print(json.dumps({k: v for k, v in result.hyperparameters.to_dict().items()
                      if k != "inducing_inputs"}))
    return 0


def cmd_predict(args) -> int:
    seed = 0 if args.seed is None else args.seed
    if args.test:
        train_ds, _, _ = read_csv(args.data, args.target_column)
        test_ds, _, _ = read_csv(args.test, args.target_column)
    else:
        train_ds, test_ds, _ = ingest_csv(args.data, args.target_column, 0.8, seed)
    hp = load_hyperparameters(args.hyperparameters)
    model = args.model or "exact"
    aggregator = args.aggregator or "full"
    if model == "svgp" and hp.inducing_inputs is None:
        hp = hp.with_inducing(default_inducing_inputs(train_ds.X, args.m, seed))
    if aggregator == "full":
        if model == "svgp":
            pred = SvgpModel(hp, train_ds.X, train_ds.y).predict(test_ds.X)
        else:
            pred = ExactGpModel(hp, train_ds.X, train_ds.y).posterior(test_ds.X)
    else:
        part = partition(train_ds, args.experts or 2, "random", seed)
        ens = build_ensemble(train_ds, part, hp, model, central_seed=seed, threads=args.threads)
        pred = aggregate(ens, test_ds.X, aggregator, args.threads)
    out = _out_dir(args) / "predictions.csv"
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(test_ds.d)] + ["target", "mean", "variance"])
        for x, t, m, v in zip(test_ds.X, test_ds.y, pred.mean, pred.variance):
            w.writerow([repr(float(a)) for a in x] + [repr(float(t)), repr(float(m)), repr(float(v))])
    noise = 0.0 if aggregator == "npae" else hp.noise_variance
    print(json.dumps({"predictions": str(out), "rmse": rmse(pred.mean, test_ds.y),
                      "nlpd": nlpd(pred, test_ds.y, noise)}))
    return 0


def cmd_bench(args) -> int:
    if not args.config:
        raise ConfigError("bench needs --config")
    cfg = ExperimentConfig.load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if args.model is not None:
        overrides["model"] = args.model
    if args.aggregator is not None:
        overrides["aggregators"] = [args.aggregator]
    if args.experts is not None:
        overrides["experts"] = [args.experts]
    if args.out_dir is not None:
        overrides["output"] = args.out_dir
    if overrides:
        raw = cfg.to_dict()
        raw.update(overrides)
        cfg = ExperimentConfig.from_dict(raw)
    result = run_experiment(cfg, threads=args.threads)
    print(json.dumps({"rows": len(result.rows), "errors": len(result.errors),
                      "output": str(Path(cfg.output))}))
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "predict": cmd_predict, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (DistGPError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
