"""Built-in distributions: log-densities, samplers, supports, truncation.

Conventions follow the JAGS argument meanings: ``dnorm(mean, precision)``
(variance = 1/precision), ``dgamma(shape, rate)``, ``dcat(p)`` over 1..K with
unnormalized nonnegative weights, ``dbern(p)`` over {0, 1}.

All operations are vectorized over a leading particle axis; parameters and
values broadcast. Truncation renormalizes by the interval mass, computed on
the CDF scale or the survival-function scale, whichever is better conditioned;
a mass underflowing 1e-300 raises :class:`TruncationError`.
"""

from __future__ import annotations

import numpy as np
from scipy import special, stats

LOG_2PI = float(np.log(2.0 * np.pi))
MIN_TRUNCATION_MASS = 1e-300


class ParamError(Exception):
    """Distribution parameters outside the parameter space."""


class TruncationError(Exception):
    """Truncation interval mass underflows doubles."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _draw_shape(size, *params):
    """Shape of one draw batch: explicit size, else the params' broadcast."""
    if size is not None:
        return size
    shape = np.broadcast_shapes(*(np.shape(p) for p in params))
    return shape if shape else None


class Distribution:
    """A named distribution usable on the right of ``~`` relations."""

    name: str = ""
    n_inputs: int = 0
    is_discrete: bool = False
    vectorized: bool = False      # True: sample/log_density accept particle-axis arrays
    has_density: bool = True
    has_sampler: bool = True

    def dim(self, param_dims: list[tuple[int, ...]]) -> tuple[int, ...]:
        """Value dimensions given static parameter dimensions."""
        self._check_param_dims(param_dims)
        return ()

    def _check_param_dims(self, param_dims) -> None:
        if len(param_dims) != self.n_inputs:
            raise ValueError(f"'{self.name}' expects {self.n_inputs} parameter(s), "
                             f"got {len(param_dims)}")

    def check_params(self, params: list[np.ndarray]) -> None:
        """Raise :class:`ParamError` if any parameter value is invalid."""

    def log_density(self, value, params: list) -> np.ndarray:
        raise NotImplementedError

    def sample(self, params: list, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def support(self, params: list) -> tuple[np.ndarray, np.ndarray]:
        """Per-component (lower, upper) support bounds given parameters."""
        return (np.float64(-np.inf), np.float64(np.inf))

    # Truncation uses these; continuous built-ins override all four.
    def cdf(self, value, params):
        raise NotImplementedError(f"'{self.name}' does not support truncation")

    def ppf(self, q, params):
        raise NotImplementedError(f"'{self.name}' does not support truncation")

    def sf(self, value, params):
        return 1.0 - self.cdf(value, params)

    def isf(self, q, params):
        return self.ppf(1.0 - np.asarray(q), params)

    @property
    def supports_truncation(self) -> bool:
        return not self.is_discrete and type(self).cdf is not Distribution.cdf

    # -- truncated variants -------------------------------------------------

    def truncation_log_mass(self, lo, hi, params) -> np.ndarray:
        """log of P(lo <= X <= hi); raises on underflow."""
        lo = _as_array(-np.inf if lo is None else lo)
        hi = _as_array(np.inf if hi is None else hi)
        mass_cdf = self.cdf(hi, params) - self.cdf(lo, params)
        mass_sf = self.sf(lo, params) - self.sf(hi, params)
        mass = np.maximum(mass_cdf, mass_sf)
        if np.any(mass < MIN_TRUNCATION_MASS) or np.any(~np.isfinite(mass)):
            raise TruncationError(
                f"'{self.name}' truncation interval mass underflows"
                f" (< {MIN_TRUNCATION_MASS:g})")
        return np.log(mass)

    def log_density_truncated(self, value, params, lo, hi) -> np.ndarray:
        value = _as_array(value)
        base = self.log_density(value, params)
        log_mass = self.truncation_log_mass(lo, hi, params)
        out = base - log_mass
        lo_b = -np.inf if lo is None else lo
        hi_b = np.inf if hi is None else hi
        return np.where((value >= lo_b) & (value <= hi_b), out, -np.inf)

    def sample_truncated(self, params, lo, hi, rng: np.random.Generator, size=None):
        """Inverse-CDF sampling on the interval, survival-scale in far tails."""
        lo_a = _as_array(-np.inf if lo is None else lo)
        hi_a = _as_array(np.inf if hi is None else hi)
        c_lo, c_hi = self.cdf(lo_a, params), self.cdf(hi_a, params)
        s_lo, s_hi = self.sf(lo_a, params), self.sf(hi_a, params)
        mass_cdf = c_hi - c_lo
        mass_sf = s_lo - s_hi
        mass = np.maximum(mass_cdf, mass_sf)
        if np.any(mass < MIN_TRUNCATION_MASS) or np.any(~np.isfinite(mass)):
            raise TruncationError(
                f"'{self.name}' truncation interval mass underflows"
                f" (< {MIN_TRUNCATION_MASS:g})")
        u = rng.uniform(size=_draw_shape(size, mass_cdf, *params))
        use_cdf = mass_cdf >= mass_sf
        draw_cdf = self.ppf(np.clip(c_lo + u * mass_cdf, 0.0, 1.0), params)
        draw_sf = self.isf(np.clip(s_lo - u * mass_sf, 0.0, 1.0), params)
        out = np.where(use_cdf, draw_cdf, draw_sf)
        return np.clip(out, lo_a, hi_a)


# ---------------------------------------------------------------------------
# Continuous built-ins
# ---------------------------------------------------------------------------

class Normal(Distribution):
    name = "dnorm"
    n_inputs = 2
    vectorized = True

    def check_params(self, params):
        prec = _as_array(params[1])
        if not np.all(prec > 0):
            raise ParamError("dnorm precision must be > 0")

    def log_density(self, value, params):
        mean, prec = _as_array(params[0]), _as_array(params[1])
        value = _as_array(value)
        return 0.5 * (np.log(prec) - LOG_2PI) - 0.5 * prec * (value - mean) ** 2

    def sample(self, params, rng, size=None):
        mean, prec = _as_array(params[0]), _as_array(params[1])
        shape = _draw_shape(size, mean, prec)
        return mean + rng.standard_normal(size=shape) / np.sqrt(prec)

    def cdf(self, value, params):
        mean, prec = _as_array(params[0]), _as_array(params[1])
        return special.ndtr((_as_array(value) - mean) * np.sqrt(prec))

    def sf(self, value, params):
        mean, prec = _as_array(params[0]), _as_array(params[1])
        return special.ndtr(-(_as_array(value) - mean) * np.sqrt(prec))

    def ppf(self, q, params):
        mean, prec = _as_array(params[0]), _as_array(params[1])
        return mean + special.ndtri(_as_array(q)) / np.sqrt(prec)

    def isf(self, q, params):
        mean, prec = _as_array(params[0]), _as_array(params[1])
        return mean - special.ndtri(_as_array(q)) / np.sqrt(prec)


class Beta(Distribution):
    name = "dbeta"
    n_inputs = 2
    vectorized = True

    def check_params(self, params):
        a, b = _as_array(params[0]), _as_array(params[1])
        if not (np.all(a > 0) and np.all(b > 0)):
            raise ParamError("dbeta shape parameters must be > 0")

    def log_density(self, value, params):
        a, b = _as_array(params[0]), _as_array(params[1])
        x = _as_array(value)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = ((a - 1) * np.log(x) + (b - 1) * np.log1p(-x)
                   - special.betaln(a, b))
        return np.where((x > 0) & (x < 1), out, -np.inf)

    def sample(self, params, rng, size=None):
        return rng.beta(params[0], params[1],
                        size=_draw_shape(size, params[0], params[1]))

    def support(self, params):
        return (np.float64(0.0), np.float64(1.0))

    def cdf(self, value, params):
        return stats.beta.cdf(value, params[0], params[1])

    def ppf(self, q, params):
        return stats.beta.ppf(q, params[0], params[1])

    def sf(self, value, params):
        return stats.beta.sf(value, params[0], params[1])

    def isf(self, q, params):
        return stats.beta.isf(q, params[0], params[1])


class Gamma(Distribution):
    name = "dgamma"
    n_inputs = 2
    vectorized = True

    def check_params(self, params):
        shape, rate = _as_array(params[0]), _as_array(params[1])
        if not (np.all(shape > 0) and np.all(rate > 0)):
            raise ParamError("dgamma shape and rate must be > 0")

    def log_density(self, value, params):
        shape, rate = _as_array(params[0]), _as_array(params[1])
        x = _as_array(value)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (shape * np.log(rate) - special.gammaln(shape)
                   + (shape - 1) * np.log(x) - rate * x)
        return np.where(x > 0, out, -np.inf)

    def sample(self, params, rng, size=None):
        return rng.gamma(params[0], 1.0 / _as_array(params[1]),
                         size=_draw_shape(size, params[0], params[1]))

    def support(self, params):
        return (np.float64(0.0), np.float64(np.inf))

    def cdf(self, value, params):
        return stats.gamma.cdf(value, params[0], scale=1.0 / _as_array(params[1]))

    def ppf(self, q, params):
        return stats.gamma.ppf(q, params[0], scale=1.0 / _as_array(params[1]))

    def sf(self, value, params):
        return stats.gamma.sf(value, params[0], scale=1.0 / _as_array(params[1]))

    def isf(self, q, params):
        return stats.gamma.isf(q, params[0], scale=1.0 / _as_array(params[1]))


class Uniform(Distribution):
    name = "dunif"
    n_inputs = 2
    vectorized = True

    def check_params(self, params):
        lo, hi = _as_array(params[0]), _as_array(params[1])
        if not np.all(lo < hi):
            raise ParamError("dunif requires lower < upper")

    def log_density(self, value, params):
        lo, hi = _as_array(params[0]), _as_array(params[1])
        x = _as_array(value)
        return np.where((x >= lo) & (x <= hi), -np.log(hi - lo), -np.inf)

    def sample(self, params, rng, size=None):
        lo, hi = _as_array(params[0]), _as_array(params[1])
        return lo + (hi - lo) * rng.uniform(size=_draw_shape(size, lo, hi))

    def support(self, params):
        return (_as_array(params[0]), _as_array(params[1]))

    def cdf(self, value, params):
        lo, hi = _as_array(params[0]), _as_array(params[1])
        return np.clip((_as_array(value) - lo) / (hi - lo), 0.0, 1.0)

    def ppf(self, q, params):
        lo, hi = _as_array(params[0]), _as_array(params[1])
        return lo + (hi - lo) * _as_array(q)


class Exponential(Distribution):
    name = "dexp"
    n_inputs = 1
    vectorized = True

    def check_params(self, params):
        rate = _as_array(params[0])
        if not np.all(rate > 0):
            raise ParamError("dexp rate must be > 0")

    def log_density(self, value, params):
        rate = _as_array(params[0])
        x = _as_array(value)
        return np.where(x >= 0, np.log(rate) - rate * x, -np.inf)

    def sample(self, params, rng, size=None):
        rate = _as_array(params[0])
        return rng.exponential(1.0 / rate, size=_draw_shape(size, rate))

    def support(self, params):
        return (np.float64(0.0), np.float64(np.inf))

    def cdf(self, value, params):
        rate = _as_array(params[0])
        return -np.expm1(-rate * np.maximum(_as_array(value), 0.0))

    def sf(self, value, params):
        rate = _as_array(params[0])
        return np.exp(-rate * np.maximum(_as_array(value), 0.0))

    def ppf(self, q, params):
        rate = _as_array(params[0])
        return -np.log1p(-_as_array(q)) / rate

    def isf(self, q, params):
        rate = _as_array(params[0])
        return -np.log(_as_array(q)) / rate


# ---------------------------------------------------------------------------
# Discrete built-ins
# ---------------------------------------------------------------------------

class Bernoulli(Distribution):
    name = "dbern"
    n_inputs = 1
    is_discrete = True
    vectorized = True

    def check_params(self, params):
        p = _as_array(params[0])
        if not np.all((p >= 0) & (p <= 1)):
            raise ParamError("dbern probability must lie in [0, 1]")

    def log_density(self, value, params):
        p = _as_array(params[0])
        x = _as_array(value)
        with np.errstate(divide="ignore"):
            out = np.where(x == 1.0, np.log(p), np.log1p(-p))
        return np.where((x == 0.0) | (x == 1.0), out, -np.inf)

    def sample(self, params, rng, size=None):
        p = _as_array(params[0])
        return (rng.uniform(size=_draw_shape(size, p)) < p).astype(np.float64)

    def support(self, params):
        return (np.float64(0.0), np.float64(1.0))


class Categorical(Distribution):
    """``dcat(p)`` over 1..K; p holds unnormalized nonnegative weights."""

    name = "dcat"
    n_inputs = 1
    is_discrete = True
    vectorized = True

    def dim(self, param_dims):
        self._check_param_dims(param_dims)
        (p_dim,) = param_dims
        if len(p_dim) != 1 or p_dim[0] < 1:
            raise ValueError(f"dcat expects a weight vector, got dims {p_dim}")
        return ()

    def check_params(self, params):
        p = _as_array(params[0])
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ParamError("dcat weights must be finite and >= 0")
        if np.any(p.sum(axis=-1) <= 0):
            raise ParamError("dcat weight vector sums to zero")

    def log_density(self, value, params):
        p = np.atleast_1d(_as_array(params[0]))
        total = p.sum(axis=-1)
        value = _as_array(value)
        k = value.astype(np.int64) - 1
        n_cat = p.shape[-1]
        batch = np.broadcast_shapes(p.shape[:-1], k.shape)
        pb = np.broadcast_to(p, batch + (n_cat,))
        kb = np.broadcast_to(k, batch)
        valid = np.broadcast_to((value == np.floor(value)), batch) \
            & (kb >= 0) & (kb < n_cat)
        k_safe = np.clip(kb, 0, n_cat - 1)
        picked = np.take_along_axis(pb, k_safe[..., None], axis=-1)[..., 0]
        with np.errstate(divide="ignore"):
            out = np.log(picked) - np.log(total)
        return np.where(valid, out, -np.inf)

    def sample(self, params, rng, size=None):
        p = np.atleast_1d(_as_array(params[0]))
        cum = np.cumsum(p, axis=-1)
        total = cum[..., -1]
        if size is not None and p.ndim == 1:
            cum = np.broadcast_to(cum, (size,) + cum.shape)
            total = np.broadcast_to(np.asarray(total), (size,))
        u = rng.uniform(size=np.shape(total)) * total
        idx = (cum < np.asarray(u)[..., None]).sum(axis=-1)
        out = (idx + 1).astype(np.float64)
        return out if out.shape else float(out)

    def support(self, params):
        p = np.atleast_1d(_as_array(params[0]))
        return (np.float64(1.0), np.float64(p.shape[-1]))


class CustomDistribution(Distribution):
    """User-registered distribution built from native callbacks.

    ``sample_fn(params, rng) -> value`` draws one variate (params are numpy
    arrays shaped to their declared dims). ``log_density_fn(value, params)``
    is optional; without it the node must stay unobserved and inference relies
    on the prior-proposal path where the density cancels.
    """

    def __init__(self, name, n_inputs, dim_fn, sample_fn, log_density_fn=None,
                 *, is_discrete=False, support_fn=None):
        self.name = name
        self.n_inputs = n_inputs
        self._dim_fn = dim_fn
        self._sample_fn = sample_fn
        self._log_density_fn = log_density_fn
        self.is_discrete = is_discrete
        self._support_fn = support_fn
        self.has_density = log_density_fn is not None
        self.vectorized = False

    def dim(self, param_dims):
        self._check_param_dims(param_dims)
        out = self._dim_fn(list(param_dims))
        return tuple(int(d) for d in np.atleast_1d(out)) if not isinstance(out, tuple) else out

    def log_density(self, value, params):
        if self._log_density_fn is None:
            raise ParamError(f"distribution '{self.name}' has no density")
        return self._log_density_fn(value, params)

    def sample(self, params, rng, size=None):
        return self._sample_fn(params, rng)

    def support(self, params):
        if self._support_fn is not None:
            return self._support_fn(params)
        return super().support(params)


BUILTIN_DISTRIBUTIONS = (Normal(), Categorical(), Beta(), Gamma(), Uniform(),
                         Bernoulli(), Exponential())
