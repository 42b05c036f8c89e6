"""Partitioning data into experts and training shared hyperparameters.

Two distributed training schemes are provided:

* FACT: maximize the sum of the experts' local log marginal likelihoods
  with a single (centralized) Adam optimizer.
* FedAvg: each expert takes ``local_steps_per_round`` Adam steps on its own
  objective, then the server averages the experts' parameter vectors.

Positive hyperparameters are optimized in log space, so the averaged vector
stays positive. Inducing inputs, when trained, are optimized as-is.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .containers import Dataset
from .errors import DivergedError, TooManyExperts
from .exact_gp import ExactGpModel
from .kernels import Hyperparameters, param_names
from .numerics import parallel_map
from .svgp import SvgpModel, get_param, set_param

log = logging.getLogger(__name__)

STRATEGIES = ("random", "contiguous")


@dataclass(frozen=True)
class Partition:
    """Disjoint index sets, one per expert, covering ``range(n)``."""

    shards: tuple
    strategy: str = "random"
    seed: int = 0

    @property
    def M(self) -> int:
        return len(self.shards)

    @property
    def n(self) -> int:
        return sum(len(s) for s in self.shards)

    @property
    def sizes(self) -> list[int]:
        return [len(s) for s in self.shards]

    def split(self, dataset: Dataset) -> list[Dataset]:
        return [dataset.subset(s) for s in self.shards]


@dataclass(frozen=True)
class CentralSubset:
    """One training index drawn from each shard."""

    indices: np.ndarray

    @property
    def n_c(self) -> int:
        return len(self.indices)


def partition(dataset: Dataset | int, M: int, strategy: str = "random", seed: int = 0) -> Partition:
    """Split ``n`` points into ``M`` shards whose sizes differ by at most one.

    ``dataset`` may be a :class:`Dataset` or just the number of points.
    """
    n = dataset if isinstance(dataset, int) else dataset.n
    if M < 1:
        raise ValueError(f"need at least one expert, got M={M}")
    if M > n:
        raise TooManyExperts(f"cannot split {n} points into {M} non-empty shards")
    strategy = strategy.lower()
    if strategy == "random":
        order = np.random.default_rng(seed).permutation(n)
    elif strategy == "contiguous":
        order = np.arange(n)
    else:
        raise ValueError(f"unknown partition strategy {strategy!r}; expected {STRATEGIES}")
    shards = tuple(np.array(s, dtype=int) for s in np.array_split(order, M))
    for s in shards:
        s.setflags(write=False)
    return Partition(shards, strategy, seed)


def select_central(part: Partition, seed: int = 0) -> CentralSubset:
    rng = np.random.default_rng(seed)
    idx = np.array([int(s[rng.integers(len(s))]) for s in part.shards], dtype=int)
    return CentralSubset(idx)


# -- objectives ---------------------------------------------------------------


def fact_objective(dataset: Dataset, part: Partition, hp: Hyperparameters,
                   params=None, threads: int = 1) -> tuple[float, np.ndarray]:
    """Sum of per-shard exact log marginal likelihoods and its gradient.

    The gradient is w.r.t. the raw hyperparameters named in ``params``
    (default: every lengthscale, signal and noise variance).
    """
    if params is None:
        params = param_names(hp.dim)
    shards = part.split(dataset)

    def local(shard):
        return _exact_value_and_grad(hp, shard, params)

    results = parallel_map(local, shards, threads)
    value = sum(r[0] for r in results)
    grad = np.sum([r[1] for r in results], axis=0)
    return value, grad


def _exact_value_and_grad(hp: Hyperparameters, data: Dataset, params, rel_step=1e-5):
    model = ExactGpModel(hp, data.X, data.y)
    value = model.log_marginal_likelihood()
    if hp.kernel.family == "rbf":
        return value, model.lml_gradients(params)
    # no analytic lengthscale gradient for Matern: differentiate numerically
    analytic = [p for p in params if not p.startswith("lengthscale_")]
    g_an = dict(zip(analytic, model.lml_gradients(analytic))) if analytic else {}
    grad = np.empty(len(params))
    for k, name in enumerate(params):
        if name in g_an:
            grad[k] = g_an[name]
            continue
        theta = hp.get(name)
        h = rel_step * theta
        up = ExactGpModel(hp.set(name, theta + h), data.X, data.y).log_marginal_likelihood()
        down = ExactGpModel(hp.set(name, theta - h), data.X, data.y).log_marginal_likelihood()
        grad[k] = (up - down) / (2 * h)
    return value, grad


def _svgp_value_and_grad(hp: Hyperparameters, data: Dataset, params):
    model = SvgpModel(hp, data.X, data.y)
    return model.elbo(), model.elbo_gradient(params)


OBJECTIVES = {"exact": _exact_value_and_grad, "svgp": _svgp_value_and_grad}


# -- optimizer ------------------------------------------------------------------


class Adam:
    """Adam ascent on a fixed-length parameter vector."""

    def __init__(self, size: int, learning_rate: float = 0.1,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = learning_rate
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """One ascent step (the objective is maximized)."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params + self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    method: str = "fedavg"
    iterations: int = 200
    learning_rate: float = 0.1
    adam_betas: tuple = (0.9, 0.999)
    seed: int = 0
    local_steps_per_round: int = 1
    train_inducing: bool = False

    def __post_init__(self):
        method = self.method.lower()
        if method not in ("fact", "fedavg"):
            raise ValueError(f"unknown training method {self.method!r}; expected 'fact' or 'fedavg'")
        object.__setattr__(self, "method", method)
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.local_steps_per_round < 1:
            raise ValueError("local_steps_per_round must be >= 1")
        if method == "fedavg" and self.iterations % self.local_steps_per_round:
            raise ValueError(
                f"iterations ({self.iterations}) must be a multiple of "
                f"local_steps_per_round ({self.local_steps_per_round})"
            )

    @property
    def rounds(self) -> int:
        if self.method == "fact":
            return self.iterations
        return self.iterations // self.local_steps_per_round


@dataclass
class TrainResult:
    hyperparameters: Hyperparameters
    names: list[str]
    trace: list[dict] = field(default_factory=list)
    spread: list[float] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)

    def write_trace_csv(self, path) -> None:
        """One row per (round, parameter): ``round,parameter,value``."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "parameter", "value"])
            for row in self.trace:
                for name in self.names:
                    writer.writerow([row["round"], name, repr(row[name])])


class _Codec:
    """Maps hyperparameters to the optimizer's unconstrained vector and back."""

    def __init__(self, hp: Hyperparameters, train_inducing: bool):
        self.template = hp
        self.positive = param_names(hp.dim)
        self.inducing = []
        if train_inducing:
            if hp.inducing_inputs is None:
                raise ValueError("train_inducing needs inducing inputs in the initial hyperparameters")
            m = hp.inducing_inputs.shape[0]
            self.inducing = [f"inducing_{j}_{k}" for j in range(m) for k in range(hp.dim)]
        self.names = self.positive + self.inducing

    def encode(self, hp: Hyperparameters) -> np.ndarray:
        pos = [np.log(hp.get(p)) for p in self.positive]
        ind = [get_param(hp, p) for p in self.inducing]
        return np.array(pos + ind)

    def decode(self, vec: np.ndarray) -> Hyperparameters:
        if not np.all(np.isfinite(vec)):
            raise DivergedError(f"non-finite parameter vector {vec}")
        kpos = len(self.positive)
        with np.errstate(over="ignore", under="ignore"):
            natural = np.exp(vec[:kpos])
        if not np.all((natural > 0) & np.isfinite(natural)):
            raise DivergedError(f"positive parameters left the representable range: {vec[:kpos]}")
        ls = natural[: self.template.dim]
        hp = Hyperparameters.create(ls, float(natural[kpos - 2]), float(natural[kpos - 1]),
                                    family=self.template.kernel.family,
                                    inducing_inputs=self.template.inducing_inputs)
        if self.inducing:
            Z = vec[kpos:].reshape(-1, hp.dim)
            hp = hp.with_inducing(Z)
        return hp

    def chain(self, hp: Hyperparameters, raw_grad: np.ndarray) -> np.ndarray:
        """Raw-parameter gradient to log-space gradient."""
        out = raw_grad.copy()
        for k, p in enumerate(self.positive):
            out[k] *= hp.get(p)
        return out

    def natural(self, hp: Hyperparameters) -> dict:
        return {p: get_param(hp, p) for p in self.names}


def train(dataset: Dataset, part: Partition, initial: Hyperparameters, config: TrainConfig,
          objective: str = "exact", threads: int = 1) -> TrainResult:
    """Distributed hyperparameter training by FACT or FedAvg.

    ``objective`` is ``"exact"`` (local exact log marginal likelihood) or
    ``"svgp"`` (local collapsed ELBO; needs inducing inputs). Returns the
    final hyperparameters and a per-round trace of natural-scale values.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}; expected one of {sorted(OBJECTIVES)}")
    if objective == "svgp" and initial.inducing_inputs is None:
        raise ValueError("the svgp objective needs inducing inputs")
    local_fn = OBJECTIVES[objective]
    codec = _Codec(initial, config.train_inducing)
    shards = part.split(dataset)
    if config.method == "fact":
        return _train_fact(shards, initial, config, codec, local_fn, threads)
    return _train_fedavg(shards, initial, config, codec, local_fn, threads)


def _local_grad(local_fn, codec, vec, shard):
    hp = codec.decode(vec)
    value, raw = local_fn(hp, shard, codec.names)
    grad = codec.chain(hp, raw)
    if not (np.isfinite(value) and np.all(np.isfinite(grad))):
        raise DivergedError(f"non-finite objective or gradient at {codec.natural(hp)}")
    return value, grad


def _train_fact(shards, initial, config, codec, local_fn, threads) -> TrainResult:
    vec = codec.encode(initial)
    opt = Adam(vec.size, config.learning_rate, tuple(config.adam_betas))
    result = TrainResult(initial, codec.names)
    for it in range(1, config.iterations + 1):
        parts = parallel_map(lambda s: _local_grad(local_fn, codec, vec, s), shards, threads)
        value = sum(p[0] for p in parts)
        grad = np.sum([p[1] for p in parts], axis=0)
        vec = opt.step(vec, grad)
        hp = codec.decode(vec)
        result.objective.append(value)
        result.spread.append(0.0)
        result.trace.append({"round": it, **codec.natural(hp)})
    result.hyperparameters = codec.decode(vec)
    return result


def _train_fedavg(shards, initial, config, codec, local_fn, threads) -> TrainResult:
    """Each expert keeps its own Adam state across rounds."""
    global_vec = codec.encode(initial)
    opts = [Adam(global_vec.size, config.learning_rate, tuple(config.adam_betas)) for _ in shards]
    result = TrainResult(initial, codec.names)

    def run_expert(k):
        vec = global_vec.copy()
        value = np.nan
        for _ in range(config.local_steps_per_round):
            value, grad = _local_grad(local_fn, codec, vec, shards[k])
            vec = opts[k].step(vec, grad)
        return value, vec

    for rnd in range(1, config.rounds + 1):
        outs = parallel_map(run_expert, range(len(shards)), threads)
        local = np.array([o[1] for o in outs])
        global_vec = np.mean(local, axis=0)
        hp = codec.decode(global_vec)
        result.objective.append(float(sum(o[0] for o in outs)))
        result.spread.append(float(np.max(np.ptp(local, axis=0))))
        result.trace.append({"round": rnd, **codec.natural(hp)})
    result.hyperparameters = codec.decode(global_vec)
    return result
