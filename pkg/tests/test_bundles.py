import math

import numpy as np
import pytest
from scipy import integrate, stats

from bugsmc import bundles
from bugsmc.graph import CompileError
from bugsmc.model import Model, ModelError


def test_gillespie_absorbing_state():
    rng = np.random.default_rng(0)
    for dt in (0.1, 1.0, 10.0):
        out = bundles.gillespie_lv(np.array([0.0, 0.0]), 0.5, 0.0025, 0.3,
                                   dt, rng)
        assert out.tolist() == [0.0, 0.0]


def test_gillespie_returns_nonnegative_integers():
    rng = np.random.default_rng(1)
    for _ in range(200):
        out = bundles.gillespie_lv(np.array([100.0, 100.0]), 0.5, 0.0025, 0.3,
                                   1.0, rng)
        assert out.shape == (2,)
        assert np.all(out >= 0)
        assert np.all(out == np.floor(out))


def test_gillespie_pure_death_binomial_law():
    """With only the death reaction, each of the 5 predators survives dt
    independently with probability exp(-c3*dt): the survivor count is
    binomial."""
    c3, dt, n0, reps = 0.3, 1.0, 5, 10_000
    rng = np.random.default_rng(2)
    counts = np.zeros(n0 + 1)
    for _ in range(reps):
        out = bundles.gillespie_lv(np.array([0.0, float(n0)]), 0.0, 0.0, c3,
                                   dt, rng)
        counts[int(out[1])] += 1
    p_survive = math.exp(-c3 * dt)
    expected = reps * stats.binom.pmf(np.arange(n0 + 1), n0, p_survive)
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    assert chi2 < stats.chi2.ppf(1 - 1e-4, df=n0)


def test_gillespie_interevent_times_exponential():
    """At a frozen state the waiting time to the first event is exponential
    with the total hazard."""
    x = np.array([100.0, 100.0])
    c1, c2, c3 = 0.5, 0.0025, 0.3
    total = c1 * x[0] + c2 * x[0] * x[1] + c3 * x[1]
    rng = np.random.default_rng(3)
    reps = 10_000
    survived = np.zeros(reps, dtype=bool)
    dt = 1.0 / total  # one mean waiting time
    for k in range(reps):
        out = bundles.gillespie_lv(x, c1, c2, c3, dt, rng)
        survived[k] = np.array_equal(out, x)
    # P(no event within dt) = exp(-total*dt) = exp(-1)
    p_hat = survived.mean()
    p = math.exp(-1.0)
    se = math.sqrt(p * (1 - p) / reps)
    assert abs(p_hat - p) < 4 * se


def test_gillespie_mean_tracks_deterministic_rate_equations():
    """Population means over replicates follow the large-population rate
    ODE dx1/dt = c1 x1 - c2 x1 x2, dx2/dt = c2 x1 x2 - c3 x2 within 10%."""
    c1, c2, c3 = 0.5, 0.0025, 0.3
    horizon, reps = 5, 2000
    rng = np.random.default_rng(4)
    totals = np.zeros((horizon, 2))
    for _ in range(reps):
        state = np.array([100.0, 100.0])
        for t in range(horizon):
            state = bundles.gillespie_lv(state, c1, c2, c3, 1.0, rng)
            totals[t] += state
    means = totals / reps

    def ode(t, z):
        x1, x2 = z
        return [c1 * x1 - c2 * x1 * x2, c2 * x1 * x2 - c3 * x2]

    sol = integrate.solve_ivp(ode, (0, horizon), [100.0, 100.0],
                              t_eval=np.arange(1, horizon + 1), rtol=1e-8)
    reference = sol.y.T
    assert np.all(np.abs(means - reference) <= 0.10 * np.abs(reference))


def test_lv_dim_contract():
    assert bundles.lv_dim([(2,), (), (), (), ()]) == (2, 1)


def test_volatility_bundle_arrangement():
    bundle = bundles.build_volatility_bundle(t_max=12, seed=1)
    model = bundle.model()
    assert model.n_steps == 12
    assert bundle.truth["x"].shape == (12,)
    assert set(np.unique(bundle.truth["c"])) <= {1.0, 2.0}
    assert bundle.data["y"].fully_observed


def test_volatility_bundle_reproducible():
    a = bundles.build_volatility_bundle(t_max=6, seed=3)
    b = bundles.build_volatility_bundle(t_max=6, seed=3)
    assert a.data["y"].values.tobytes() == b.data["y"].values.tobytes()
    assert a.truth["x"].tobytes() == b.truth["x"].tobytes()


def test_param_bundle_exposes_pmmh_parameters():
    bundle = bundles.build_volatility_param_bundle(t_max=6, seed=3)
    assert bundle.params["pmmh_params"] == ("gamma[1]", "gamma[2]", "phi",
                                            "tau", "pi[1,1]", "pi[2,2]")
    model = bundle.model()
    for name in bundle.params["pmmh_params"]:
        assert model.graph.monitored_elements(name)
    # same observations as the fixed-parameter bundle at the same seed
    base = bundles.build_volatility_bundle(t_max=6, seed=3)
    assert np.array_equal(bundle.data["y"].values, base.data["y"].values)


def test_kinetic_bundle_requires_lv():
    bundle = bundles.build_kinetic_bundle(t_max=4, seed=2)
    assert bundle.model().n_steps == 4
    with pytest.raises((CompileError, ModelError), match="LV"):
        Model(bundle.model_source, bundle.data)   # registry without LV


def test_bundle_write_pair(tmp_path):
    bundle = bundles.build_volatility_bundle(t_max=5, seed=2)
    model_path, data_path = bundle.write(str(tmp_path))
    assert model_path.endswith(".bug") and data_path.endswith(".json")
    from bugsmc.data import load_data
    restored = load_data(data_path)
    assert restored["y"].values.tobytes() == bundle.data["y"].values.tobytes()
    rebuilt = Model.from_file(model_path, restored)
    assert rebuilt.n_steps == 5
