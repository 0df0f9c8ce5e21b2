import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bugsmc.resampling import KINDS, resample


@pytest.mark.parametrize("kind", KINDS)
def test_point_mass_always_picks_it(kind):
    weights = np.zeros(16)
    weights[0] = 1.0
    idx = resample(weights, kind, np.random.default_rng(0))
    assert idx.shape == (16,)
    assert np.all(idx == 0)


def test_systematic_uniform_weights_is_identity_set():
    n = 64
    weights = np.full(n, 1.0 / n)
    for seed in range(20):
        idx = resample(weights, "systematic", np.random.default_rng(seed))
        assert sorted(idx.tolist()) == list(range(n))


def test_stratified_uniform_weights_is_identity_set():
    n = 64
    weights = np.full(n, 1.0 / n)
    for seed in range(20):
        idx = resample(weights, "stratified", np.random.default_rng(seed))
        assert sorted(idx.tolist()) == list(range(n))


def test_multinomial_counts_chi_squared():
    # E[count_i] = N * W_i; N equals the number of weights
    weights = np.array([0.4, 0.3, 0.2, 0.05, 0.05])
    reps = 10_000
    rng = np.random.default_rng(7)
    counts = np.zeros(5)
    for _ in range(reps):
        idx = resample(weights, "multinomial", rng)
        counts += np.bincount(idx, minlength=5)
    expected = weights * weights.size * reps
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    # 4 dof at the 1e-4 quantile; failure probability ~1e-4 under H0
    assert chi2 < stats.chi2.ppf(1 - 1e-4, df=4)


def test_residual_keeps_deterministic_copies():
    weights = np.array([0.5, 0.25, 0.25])
    rng = np.random.default_rng(1)
    for _ in range(50):
        idx = resample(weights, "residual", rng)
        counts = np.bincount(idx, minlength=3)
        # floor(N*W) copies are guaranteed
        assert counts[0] >= 1 and counts[1] >= 0 and counts[2] >= 0
        assert counts.sum() == 3
    weights = np.array([0.7, 0.2, 0.1])
    idx = resample(np.array([0.7, 0.2, 0.1]), "residual", rng)
    assert np.bincount(idx, minlength=3)[0] >= 2


@pytest.mark.parametrize("kind", KINDS)
@settings(max_examples=40, deadline=None)
@given(data=st.data())
def test_output_is_n_valid_indices(kind, data):
    n = data.draw(st.integers(1, 40))
    raw = np.array(data.draw(st.lists(st.floats(0.01, 1.0), min_size=n,
                                      max_size=n)))
    weights = raw / raw.sum()
    idx = resample(weights, kind, np.random.default_rng(data.draw(
        st.integers(0, 2 ** 31))))
    assert idx.shape == (n,)
    assert np.all((idx >= 0) & (idx < n))


def test_unbiasedness_of_counts_all_kinds():
    # all four schemes satisfy E[count_i] = N * W_i with N = len(W)
    weights = np.array([0.55, 0.25, 0.15, 0.05])
    reps = 20_000
    for kind in KINDS:
        rng = np.random.default_rng(11)
        counts = np.zeros(4)
        for _ in range(reps):
            counts += np.bincount(resample(weights, kind, rng), minlength=4)
        mean_counts = counts / reps
        assert np.allclose(mean_counts, weights.size * weights, atol=0.05), kind


def test_unknown_kind_rejected():
    with pytest.raises(ValueError, match="unknown resampling kind"):
        resample(np.array([1.0]), "bogus", np.random.default_rng(0))
