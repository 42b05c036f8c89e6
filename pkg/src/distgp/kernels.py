"""Covariance functions and their hyperparameter derivatives.

Two stationary families with one lengthscale per input dimension:

* ``rbf``:      ``k(x, x') = s * exp(-r^2 / 2)``
* ``matern32``: ``k(x, x') = s * (1 + sqrt(3) r) * exp(-sqrt(3) r)``

with ``r^2 = sum_i (x_i - x'_i)^2 / l_i^2`` and ``s`` the signal variance.

Hyperparameters are addressed by name: ``lengthscale_<i>``,
``signal_variance`` and ``noise_variance`` (see :func:`param_names`).
Derivatives are taken w.r.t. these raw, positive values.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionMismatch, UnsupportedParam

FAMILIES = ("rbf", "matern32")
SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class KernelSpec:
    family: str
    lengthscales: np.ndarray
    signal_variance: float = 1.0

    def __post_init__(self):
        family = self.family.lower().replace(" ", "").replace("_", "").replace("/", "")
        aliases = {"rbf": "rbf", "se": "rbf", "matern32": "matern32", "matern": "matern32"}
        if family not in aliases:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        ls.setflags(write=False)
        if ls.ndim != 1 or ls.size == 0 or not np.all(ls > 0) or not np.all(np.isfinite(ls)):
            raise ValueError(f"lengthscales must be a non-empty vector of positive values, got {ls}")
        if not (self.signal_variance > 0 and np.isfinite(self.signal_variance)):
            raise ValueError(f"signal_variance must be positive, got {self.signal_variance}")
        object.__setattr__(self, "family", aliases[family])
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def __eq__(self, other):
        if not isinstance(other, KernelSpec):
            return NotImplemented
        return (self.family == other.family
                and np.array_equal(self.lengthscales, other.lengthscales)
                and self.signal_variance == other.signal_variance)

    def __hash__(self):
        return hash((self.family, self.lengthscales.tobytes(), self.signal_variance))


@dataclass(frozen=True)
class Hyperparameters:
    """Kernel, observation noise variance and (optionally) inducing inputs."""

    kernel: KernelSpec
    noise_variance: float
    inducing_inputs: np.ndarray | None = None

    def __post_init__(self):
        if not (self.noise_variance > 0 and np.isfinite(self.noise_variance)):
            raise ValueError(f"noise_variance must be positive, got {self.noise_variance}")
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        if self.inducing_inputs is not None:
            Z = np.atleast_2d(np.asarray(self.inducing_inputs, dtype=float)).copy()
            if Z.shape[1] != self.kernel.dim:
                raise DimensionMismatch(
                    f"inducing inputs have {Z.shape[1]} columns, kernel has {self.kernel.dim} lengthscales"
                )
            Z.setflags(write=False)
            object.__setattr__(self, "inducing_inputs", Z)

    @classmethod
    def create(cls, lengthscales, signal_variance=1.0, noise_variance=0.1,
               family="rbf", inducing_inputs=None) -> "Hyperparameters":
        return cls(KernelSpec(family, lengthscales, signal_variance), noise_variance, inducing_inputs)

    @property
    def dim(self) -> int:
        return self.kernel.dim

    def __eq__(self, other):
        if not isinstance(other, Hyperparameters):
            return NotImplemented
        if (self.inducing_inputs is None) != (other.inducing_inputs is None):
            return False
        same_z = self.inducing_inputs is None or np.array_equal(self.inducing_inputs,
                                                                other.inducing_inputs)
        return self.kernel == other.kernel and self.noise_variance == other.noise_variance and same_z

    def __hash__(self):
        z = None if self.inducing_inputs is None else self.inducing_inputs.tobytes()
        return hash((self.kernel, self.noise_variance, z))

    def with_inducing(self, Z) -> "Hyperparameters":
        return replace(self, inducing_inputs=Z)

    def get(self, name: str) -> float:
        if name.startswith("lengthscale_"):
            return float(self.kernel.lengthscales[_lengthscale_index(name, self.dim)])
        if name == "signal_variance":
            return self.kernel.signal_variance
        if name == "noise_variance":
            return self.noise_variance
        raise UnsupportedParam(f"unknown hyperparameter {name!r}")

    def set(self, name: str, value: float) -> "Hyperparameters":
        """Return a copy with one named hyperparameter replaced."""
        if name.startswith("lengthscale_"):
            ls = np.array(self.kernel.lengthscales)
            ls[_lengthscale_index(name, self.dim)] = value
            return replace(self, kernel=replace(self.kernel, lengthscales=ls))
        if name == "signal_variance":
            return replace(self, kernel=replace(self.kernel, signal_variance=value))
        if name == "noise_variance":
            return replace(self, noise_variance=value)
        raise UnsupportedParam(f"unknown hyperparameter {name!r}")

    def to_dict(self) -> dict:
        out = {
            "family": self.kernel.family,
            "lengthscales": self.kernel.lengthscales.tolist(),
            "signal_variance": self.kernel.signal_variance,
            "noise_variance": self.noise_variance,
        }
        if self.inducing_inputs is not None:
            out["inducing_inputs"] = self.inducing_inputs.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Hyperparameters":
        try:
            return cls.create(
                lengthscales=data["lengthscales"],
                signal_variance=data["signal_variance"],
                noise_variance=data["noise_variance"],
                family=data.get("family", "rbf"),
                inducing_inputs=data.get("inducing_inputs"),
            )
        except KeyError as exc:
            raise ValueError(f"hyperparameter record is missing {exc.args[0]!r}") from None


def param_names(dim: int) -> list[str]:
    return [f"lengthscale_{i}" for i in range(dim)] + ["signal_variance", "noise_variance"]


def _lengthscale_index(name: str, dim: int) -> int:
    try:
        i = int(name.rsplit("_", 1)[1])
    except ValueError:
        raise UnsupportedParam(f"bad lengthscale selector {name!r}") from None
    if not 0 <= i < dim:
        raise UnsupportedParam(f"{name!r} out of range for a {dim}-dimensional kernel")
    return i


def _check_inputs(spec: KernelSpec, X, Y):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = X if Y is None else np.atleast_2d(np.asarray(Y, dtype=float))
    for name, A in (("X", X), ("Y", Y)):
        if A.shape[1] != spec.dim:
            raise DimensionMismatch(
                f"{name} has {A.shape[1]} columns but the kernel has {spec.dim} lengthscales"
            )
    return X, Y


def _scaled_sqdist(spec: KernelSpec, X, Y) -> np.ndarray:
    if X.shape[0] == 0 or Y.shape[0] == 0:
        return np.zeros((X.shape[0], Y.shape[0]))
    return cdist(X / spec.lengthscales, Y / spec.lengthscales, "sqeuclidean")


def kernel_matrix(spec: KernelSpec, X, Y=None) -> np.ndarray:
    """Covariance matrix ``[k(x_i, y_j)]``; ``Y=None`` means ``Y = X``."""
    X, Y = _check_inputs(spec, X, Y)
    r2 = _scaled_sqdist(spec, X, Y)
    if spec.family == "rbf":
        return spec.signal_variance * np.exp(-0.5 * r2)
    r = SQRT3 * np.sqrt(r2)
    return spec.signal_variance * (1.0 + r) * np.exp(-r)


def kernel_diag(spec: KernelSpec, X) -> np.ndarray:
    """``k(x_i, x_i)`` for every row, without building the full matrix."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.full(X.shape[0], spec.signal_variance)


def kernel_matrix_grad(spec: KernelSpec, X, Y=None, param: str = "signal_variance") -> np.ndarray:
    """Entrywise derivative of the noisy covariance w.r.t. one raw parameter.

    ``noise_variance`` yields the identity when ``Y`` is ``None`` (or the very
    same array as ``X``) and zeros otherwise, since noise only enters the
    training covariance.
    """
    square = Y is None or Y is X
    X, Y = _check_inputs(spec, X, Y)
    if param == "noise_variance":
        if square:
            return np.eye(X.shape[0])
        return np.zeros((X.shape[0], Y.shape[0]))
    if param == "signal_variance":
        return kernel_matrix(spec, X, Y) / spec.signal_variance
    if param.startswith("lengthscale_"):
        i = _lengthscale_index(param, spec.dim)
        if spec.family != "rbf":
            raise UnsupportedParam(
                f"no analytic lengthscale gradient for the {spec.family} kernel; use finite differences"
            )
        li = spec.lengthscales[i]
        diff2 = (X[:, i][:, None] - Y[:, i][None, :]) ** 2
        return kernel_matrix(spec, X, Y) * diff2 / li**3
    raise UnsupportedParam(f"unknown hyperparameter {param!r}")
