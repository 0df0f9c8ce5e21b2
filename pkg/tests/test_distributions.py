"""Contract tests for the distribution library.

Continuous densities are checked against numeric quadrature of their own
exponentiated log-density (mass 1 over the support), samplers against
analytic moments, and truncation against quadrature of the base density over
the interval.
"""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from bugsmc.distributions import ParamError, TruncationError
from bugsmc.registry import (DistFuncRegistry, DuplicateNameError,
                             FrozenRegistryError, default_registry,
                             log_density, sample)

RNG_SEED = 1234

# name -> (params, integration range, analytic mean, analytic variance)
CONTINUOUS = {
    "dnorm": ([0.7, 2.5], (-8, 8), 0.7, 1 / 2.5),
    "dbeta": ([10.0, 1.0], (0, 1), 10 / 11, 10 * 1 / (11 ** 2 * 12)),
    "dgamma": ([2.001, 1.0], (0, 60), 2.001, 2.001),
    "dunif": ([-1.0, 3.0], (-1, 3), 1.0, 16 / 12),
    "dexp": ([0.8, ], (0, 60), 1.25, 1.5625),
}


@pytest.mark.parametrize("name", sorted(CONTINUOUS))
def test_density_integrates_to_one(name):
    params, (lo, hi), _, _ = CONTINUOUS[name]
    total, _ = integrate.quad(
        lambda x: math.exp(log_density(name, x, params)), lo, hi, limit=200)
    assert 1 - 1e-4 <= total <= 1 + 1e-4


@pytest.mark.parametrize("name", sorted(CONTINUOUS))
def test_sampler_moments(name):
    params, _, mean, variance = CONTINUOUS[name]
    rng = np.random.default_rng(RNG_SEED)
    draws = sample(name, params, rng=rng, size=100_000)
    # 4 standard errors of the sample mean and of the sample variance
    se_mean = math.sqrt(variance / draws.size)
    assert abs(draws.mean() - mean) < 4 * se_mean
    fourth = np.mean((draws - mean) ** 4)
    se_var = math.sqrt(max(fourth - variance ** 2, 0.0) / draws.size)
    assert abs(draws.var() - variance) < 4 * se_var


def test_dnorm_is_precision_parameterized():
    # log density must equal a normal pdf with variance 1/precision
    for x, m, tau in [(0.0, 0.0, 1.0), (1.3, -0.5, 2.0), (-2.0, 1.0, 0.25)]:
        expected = stats.norm.logpdf(x, loc=m, scale=1 / math.sqrt(tau))
        assert log_density("dnorm", x, [m, tau]) == pytest.approx(expected,
                                                                  rel=1e-12)


def test_standard_normal_at_mode():
    assert log_density("dnorm", 0.0, [0.0, 1.0]) == pytest.approx(-0.9189385,
                                                                  abs=1e-6)


def test_dcat_row_mass():
    assert log_density("dcat", 2.0, [[0.9, 0.1]]) == pytest.approx(math.log(0.1))
    assert log_density("dcat", 1.0, [[0.9, 0.1]]) == pytest.approx(math.log(0.9))
    assert log_density("dcat", 3.0, [[0.9, 0.1]]) == -math.inf
    assert log_density("dcat", 1.5, [[0.9, 0.1]]) == -math.inf


def test_dcat_normalizes_unnormalized_weights():
    assert log_density("dcat", 2.0, [[3.0, 1.0]]) == pytest.approx(math.log(0.25))


def test_dcat_zero_weights_rejected():
    with pytest.raises(ParamError):
        log_density("dcat", 1.0, [[0.0, 0.0]])
    with pytest.raises(ParamError):
        log_density("dcat", 1.0, [[-1.0, 2.0]])


def test_dcat_degenerate_always_first():
    rng = np.random.default_rng(RNG_SEED)
    draws = sample("dcat", [[1.0, 0.0]], rng=rng, size=1000)
    assert np.all(draws == 1.0)


def test_dcat_empirical_frequencies():
    rng = np.random.default_rng(RNG_SEED)
    draws = sample("dcat", [[0.5, 0.3, 0.2]], rng=rng, size=100_000)
    freq = np.array([(draws == k).mean() for k in (1, 2, 3)])
    assert np.allclose(freq, [0.5, 0.3, 0.2], atol=0.01)


def test_dbern_support_and_mass():
    assert log_density("dbern", 1.0, [0.25]) == pytest.approx(math.log(0.25))
    assert log_density("dbern", 0.0, [0.25]) == pytest.approx(math.log(0.75))
    assert log_density("dbern", 2.0, [0.25]) == -math.inf
    with pytest.raises(ParamError):
        log_density("dbern", 1.0, [1.5])


def test_invalid_params_raise():
    with pytest.raises(ParamError):
        log_density("dnorm", 0.0, [0.0, -1.0])
    with pytest.raises(ParamError):
        sample("dgamma", [0.0, 1.0], rng=np.random.default_rng(0))
    with pytest.raises(ParamError):
        log_density("dunif", 0.0, [2.0, 1.0])


# -- truncation ---------------------------------------------------------------

def test_half_normal_renormalization_matches_quadrature():
    # oracle: integrate the untruncated density over (0, inf)
    mass, _ = integrate.quad(
        lambda x: math.exp(log_density("dnorm", x, [0.0, 1.0])), 0, 10)
    got = log_density("dnorm", 0.0, [0.0, 1.0], truncation=(0.0, None))
    assert got == pytest.approx(-0.9189385 - math.log(mass), abs=1e-6)
    assert mass == pytest.approx(0.5, abs=1e-9)


def test_truncated_density_zero_outside():
    assert log_density("dnorm", -1.0, [0.0, 1.0],
                       truncation=(0.0, None)) == -math.inf
    assert log_density("dnorm", 3.0, [0.0, 1.0],
                       truncation=(-1.0, 2.0)) == -math.inf


def test_truncated_sampling_stays_inside():
    rng = np.random.default_rng(RNG_SEED)
    draws = sample("dnorm", [0.0, 1.0], truncation=(-500.0, 500.0), rng=rng,
                   size=100_000)
    assert np.all((draws > -500.0) & (draws < 500.0))
    # a tight interval exercises the interval arithmetic
    draws = sample("dnorm", [0.0, 1.0], truncation=(0.5, 0.75), rng=rng,
                   size=100_000)
    assert np.all((draws >= 0.5) & (draws <= 0.75))


def test_truncated_sampling_matches_conditional_moments():
    rng = np.random.default_rng(RNG_SEED)
    draws = sample("dnorm", [0.0, 1.0], truncation=(0.0, None), rng=rng,
                   size=200_000)
    half_normal_mean = math.sqrt(2 / math.pi)
    assert abs(draws.mean() - half_normal_mean) < 4 * draws.std() / math.sqrt(draws.size)


def test_far_tail_truncation_uses_survival_scale():
    rng = np.random.default_rng(RNG_SEED)
    draws = sample("dnorm", [0.0, 1.0], truncation=(10.0, 11.0), rng=rng,
                   size=10_000)
    assert np.all((draws >= 10.0) & (draws <= 11.0))
    expected = stats.truncnorm.mean(10.0, 11.0)
    assert abs(draws.mean() - expected) < 0.01


def test_truncation_mass_underflow_raises():
    with pytest.raises(TruncationError):
        sample("dnorm", [0.0, 1.0], truncation=(40.0, 41.0),
               rng=np.random.default_rng(0))


def test_truncation_on_discrete_rejected():
    with pytest.raises(TruncationError):
        log_density("dcat", 1.0, [[0.5, 0.5]], truncation=(0.0, 1.5))


def test_truncated_beta_quantiles():
    rng = np.random.default_rng(RNG_SEED)
    draws = sample("dbeta", [10.0, 1.0], truncation=(None, 0.5), rng=rng,
                   size=50_000)
    assert np.all(draws <= 0.5)
    expected = stats.beta.cdf(0.4, 10, 1) / stats.beta.cdf(0.5, 10, 1)
    assert abs((draws <= 0.4).mean() - expected) < 0.01


# -- registry ----------------------------------------------------------------

def test_builtins_present():
    registry = default_registry()
    for name in ("dnorm", "dcat", "dbeta", "dgamma", "dunif", "dbern", "dexp"):
        assert name in registry.distributions
    for name in ("exp", "log", "sqrt", "abs", "ifelse", "sum",
                 "+", "-", "*", "/", "^", "==", "!=", "<", "<=", ">", ">="):
        assert name in registry.functions


def test_duplicate_registration_rejected():
    registry = default_registry()
    with pytest.raises(DuplicateNameError):
        registry.register_distribution("dnorm", 2, lambda d: (), lambda p, r: 0.0)
    with pytest.raises(DuplicateNameError):
        registry.register_function("exp", 1, np.exp)


def test_frozen_registry_rejects_registration():
    registry = default_registry()
    registry.freeze()
    with pytest.raises(FrozenRegistryError):
        registry.register_function("double", 1, lambda x: 2 * x)


def test_registered_function_evaluates():
    registry = DistFuncRegistry()
    registry.register_function("double", 1, lambda x: 2 * x)
    assert registry.functions["double"].eval_fn(3.0) == 6.0


def test_custom_distribution_density_optional():
    registry = default_registry()
    registry.register_distribution("dpoint", 1, lambda d: (),
                                   lambda params, rng: float(params[0]))
    dist = registry.distributions["dpoint"]
    assert not dist.has_density
    with pytest.raises(ParamError):
        dist.log_density(0.0, [np.float64(0.0)])
