"""Registry of distributions and deterministic functions.

Holds the built-ins plus user extensions registered through
:meth:`DistFuncRegistry.register_distribution` and
:meth:`DistFuncRegistry.register_function`. A registry freezes once model
compilation starts; extension callbacks must be pure given (params, rng).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .distributions import (BUILTIN_DISTRIBUTIONS, CustomDistribution,
                            Distribution, ParamError, TruncationError)

__all__ = ["DistFuncRegistry", "DeterministicFunction", "DuplicateNameError",
           "FrozenRegistryError", "ParamError", "TruncationError",
           "ExtensionError", "log_density", "sample", "default_registry"]


class DuplicateNameError(Exception):
    """Registration under a name that is already taken."""


class FrozenRegistryError(Exception):
    """Registration attempted after compilation froze the registry."""


class ExtensionError(Exception):
    """A user-registered callback failed or returned a bad shape."""


def broadcast_dims(*dims: tuple[int, ...]) -> tuple[int, ...]:
    """numpy-style broadcast of static value dims; ValueError on mismatch."""
    try:
        return tuple(np.broadcast_shapes(*dims))
    except ValueError:
        raise ValueError("dimension mismatch: cannot broadcast "
                         + " with ".join(str(tuple(d)) for d in dims)) from None


@dataclass
class DeterministicFunction:
    name: str
    n_inputs: int
    eval_fn: Callable
    dim_fn: Callable | None = None   # None: numpy broadcast of argument dims
    vectorized: bool = False
    reduces: bool = False            # folds its single argument over elements

    def dim(self, arg_dims: list[tuple[int, ...]]) -> tuple[int, ...]:
        if len(arg_dims) != self.n_inputs:
            raise ValueError(f"'{self.name}' expects {self.n_inputs} argument(s), "
                             f"got {len(arg_dims)}")
        if self.dim_fn is None:
            return broadcast_dims(*arg_dims) if arg_dims else ()
        out = self.dim_fn(list(arg_dims))
        return tuple(int(d) for d in np.atleast_1d(np.asarray(out, dtype=np.int64)))


def _safe_divide(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.divide(a, b)


def _safe_log(a):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(a)


def _safe_sqrt(a):
    with np.errstate(invalid="ignore"):
        return np.sqrt(a)


def _safe_power(a, b):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return np.power(a, b)


def _builtin_functions() -> list[DeterministicFunction]:
    fns = [
        DeterministicFunction("exp", 1, np.exp, vectorized=True),
        DeterministicFunction("log", 1, _safe_log, vectorized=True),
        DeterministicFunction("sqrt", 1, _safe_sqrt, vectorized=True),
        DeterministicFunction("abs", 1, np.abs, vectorized=True),
        DeterministicFunction("ifelse", 3,
                              lambda c, a, b: np.where(c != 0, a, b),
                              vectorized=True),
        DeterministicFunction("sum", 1, lambda a: np.sum(a, axis=-1),
                              dim_fn=lambda dims: (), vectorized=True,
                              reduces=True),
        DeterministicFunction("+", 2, np.add, vectorized=True),
        DeterministicFunction("-", 2, np.subtract, vectorized=True),
        DeterministicFunction("*", 2, np.multiply, vectorized=True),
        DeterministicFunction("/", 2, _safe_divide, vectorized=True),
        DeterministicFunction("^", 2, _safe_power, vectorized=True),
        DeterministicFunction("neg", 1, np.negative, vectorized=True),
    ]
    for op in ("==", "!=", "<", "<=", ">", ">="):
        ufunc = {"==": np.equal, "!=": np.not_equal, "<": np.less,
                 "<=": np.less_equal, ">": np.greater, ">=": np.greater_equal}[op]
        fns.append(DeterministicFunction(
            op, 2, (lambda u: lambda a, b: u(a, b).astype(np.float64))(ufunc),
            vectorized=True))
    return fns


class DistFuncRegistry:
    """Name -> distribution and name -> deterministic function tables."""

    def __init__(self):
        self.distributions: dict[str, Distribution] = {
            d.name: d for d in BUILTIN_DISTRIBUTIONS}
        self.functions: dict[str, DeterministicFunction] = {
            f.name: f for f in _builtin_functions()}
        self._frozen = False

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> None:
        """Called when compilation begins; the registry is read-only after."""
        self._frozen = True

    def _check_registration(self, name: str, n_inputs: int) -> None:
        if self._frozen:
            raise FrozenRegistryError(
                f"cannot register '{name}': registry frozen after compilation began")
        if name in self.distributions or name in self.functions:
            raise DuplicateNameError(f"name '{name}' is already registered")
        if n_inputs < 0:
            raise ValueError("n_inputs must be >= 0")

    def register_distribution(self, name: str, n_inputs: int, dim_fn,
                              sample_fn, log_density_fn=None, *,
                              is_discrete: bool = False,
                              support_fn=None) -> None:
        """Add a sampling distribution usable in ``~`` relations.

        ``sample_fn(params, rng)`` draws one variate. Without a
        ``log_density_fn`` the distribution may only appear on unobserved
        nodes (inference then uses the prior-proposal path, where the
        density cancels from the weights).
        """
        self._check_registration(name, n_inputs)
        self.distributions[name] = CustomDistribution(
            name, n_inputs, dim_fn, sample_fn, log_density_fn,
            is_discrete=is_discrete, support_fn=support_fn)

    def register_function(self, name: str, n_inputs: int, eval_fn,
                          dim_fn=None, *, vectorized: bool = False) -> None:
        """Add a deterministic function usable in ``<-`` relations."""
        self._check_registration(name, n_inputs)
        self.functions[name] = DeterministicFunction(
            name, n_inputs, eval_fn, dim_fn, vectorized=vectorized)


def default_registry() -> DistFuncRegistry:
    """A fresh registry holding only the built-ins."""
    return DistFuncRegistry()


_MODULE_REGISTRY = DistFuncRegistry()


def _lookup(name: str, registry: DistFuncRegistry | None) -> Distribution:
    reg = registry if registry is not None else _MODULE_REGISTRY
    dist = reg.distributions.get(name)
    if dist is None:
        raise KeyError(f"unknown distribution '{name}'")
    return dist


def log_density(dist_name: str, value, params, truncation=None,
                registry: DistFuncRegistry | None = None):
    """Natural-log density/mass of ``dist_name`` at ``value``.

    Returns -inf outside the support. ``truncation`` is an optional
    (lower, upper) pair (either side may be None); the density is then
    renormalized by the truncation-interval mass.
    """
    dist = _lookup(dist_name, registry)
    params = [np.asarray(p, dtype=np.float64) for p in params]
    dist.check_params(params)
    if truncation is not None and truncation != (None, None):
        lo, hi = truncation
        if not dist.supports_truncation:
            raise TruncationError(f"'{dist_name}' does not support truncation")
        return dist.log_density_truncated(value, params, lo, hi)
    return dist.log_density(value, params)


def sample(dist_name: str, params, truncation=None,
           rng: np.random.Generator | None = None, size=None,
           registry: DistFuncRegistry | None = None):
    """Draw from ``dist_name`` within the (possibly truncated) support."""
    dist = _lookup(dist_name, registry)
    params = [np.asarray(p, dtype=np.float64) for p in params]
    dist.check_params(params)
    if rng is None:
        rng = np.random.default_rng()
    if truncation is not None and truncation != (None, None):
        lo, hi = truncation
        if not dist.supports_truncation:
            raise TruncationError(f"'{dist_name}' does not support truncation")
        return dist.sample_truncated(params, lo, hi, rng, size=size)
    return dist.sample(params, rng, size=size)
