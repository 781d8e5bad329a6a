import math

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import logsumexp

from pdeil_lab.density import (
    DegenerateDataError,
    GaussianModel,
    conditional_prob,
    fit_conditional,
    fit_density,
    fit_frequency,
    fit_gaussian,
    fit_kde,
    gaussian_logpdf,
    model_from_json,
    model_to_json,
)


def test_fit_gaussian_square_corners():
    m = fit_gaussian([(0, 0), (2, 0), (0, 2), (2, 2)], ridge=0.0)
    np.testing.assert_allclose(m.mean, [1, 1])
    np.testing.assert_allclose(m.covariance, np.eye(2), atol=1e-15)


def test_fit_gaussian_constant_samples_plus_ridge():
    v = np.array([0.3, -1.0, 2.0])
    m = fit_gaussian([v] * 5, ridge=1e-3)
    np.testing.assert_allclose(m.mean, v)
    np.testing.assert_allclose(m.covariance, 1e-3 * np.eye(3), atol=1e-15)


def test_fit_gaussian_monte_carlo_recovery():
    rng = np.random.default_rng(0)
    mean = np.array([1.0, -2.0])
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    m = fit_gaussian(rng.multivariate_normal(mean, cov, size=10000))
    assert np.max(np.abs(m.mean - mean)) < 0.05
    assert np.max(np.abs(m.covariance - cov)) < 0.1


def test_fit_gaussian_errors():
    with pytest.raises(DegenerateDataError):
        fit_gaussian([[1.0, 2.0]])
    with pytest.raises(ValueError):
        fit_gaussian([[1.0, 2.0], [1.0]])
    with pytest.raises(DegenerateDataError):
        fit_gaussian([[1.0, 1.0], [2.0, 2.0]], ridge=0.0)  # rank deficient


def test_standard_normal_closed_forms():
    m1 = GaussianModel.from_moments([0.0], [[1.0]])
    m2 = GaussianModel.from_moments([0.0, 0.0], np.eye(2))
    assert gaussian_logpdf(m1, [0.0]) == pytest.approx(-0.918939, abs=1e-6)
    assert gaussian_logpdf(m2, [0.0, 0.0]) == pytest.approx(-1.837877, abs=1e-6)
    with pytest.raises(ValueError):
        gaussian_logpdf(m2, [0.0])


def test_logpdf_matches_scipy_and_mode_at_mean():
    rng = np.random.default_rng(1)
    m = fit_gaussian(rng.normal(size=(50, 3)) @ rng.normal(size=(3, 3)))
    xs = rng.normal(size=(200, 3)) * 3
    ref = stats.multivariate_normal(m.mean, m.covariance).logpdf(xs)
    np.testing.assert_allclose(m.logpdf(xs), ref, rtol=1e-10)
    assert np.all(m.logpdf(m.mean) >= m.logpdf(xs))


def test_one_dimensional_pdf_integrates_to_one():
    m = GaussianModel.from_moments([0.7], [[2.25]])
    sd = 1.5
    val, _ = integrate.quad(lambda x: math.exp(m.logpdf([x])), 0.7 - 8 * sd, 0.7 + 8 * sd, epsabs=1e-12)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_log_space_stays_finite_far_away():
    m = fit_gaussian(np.random.default_rng(2).normal(size=(20, 2)), ridge=1e-6)
    vals = m.logpdf(np.array([[1e6, -1e6], [1e150, 0.0]]))
    assert np.all(np.isfinite(vals))


def test_fit_gaussian_permutation_invariant():
    xs = np.random.default_rng(3).normal(size=(40, 3))
    a = fit_gaussian(xs)
    b = fit_gaussian(xs[np.random.default_rng(4).permutation(40)])
    np.testing.assert_allclose(a.mean, b.mean, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(a.covariance, b.covariance, rtol=1e-12, atol=1e-15)


def test_kde_matches_scipy_gaussian_kde():
    xs = np.random.default_rng(5).normal(size=(100, 2))
    ours = fit_kde(xs, ridge=0.0)
    ref = stats.gaussian_kde(xs.T)  # Scott's rule by default
    q = np.random.default_rng(6).normal(size=(30, 2))
    np.testing.assert_allclose(ours.logpdf(q), ref.logpdf(q.T), rtol=1e-9)
    assert fit_density(xs, use_kde=True).kind == "kde"
    assert fit_density(xs).kind == "gaussian"


def _clusters(rng, n=200, sep=10.0):
    a = rng.normal(size=(n, 2))
    b = rng.normal(size=(n, 2)) + [sep, 0]
    return np.vstack([a, b]), np.array([0] * n + [1] * n)


def test_conditional_separated_clusters():
    states, acts = _clusters(np.random.default_rng(0))
    m = fit_conditional(states, acts)
    assert conditional_prob(m, np.array([0.0, 0.0]), 0) >= 0.99
    assert conditional_prob(m, np.array([10.0, 0.0]), 1) >= 0.99
    np.testing.assert_allclose(m.priors.sum(), 1.0, atol=1e-12)


def test_conditional_symmetric_classes_give_half():
    xs = np.random.default_rng(1).normal(size=(30, 2))
    m = fit_conditional(np.vstack([xs, xs]), [0] * 30 + [1] * 30)
    q = np.random.default_rng(2).normal(size=(20, 2)) * 5
    np.testing.assert_allclose(np.exp(m.log_posterior(q)), 0.5, atol=1e-12)


def test_conditional_posteriors_normalized_and_shift_invariant():
    states, acts = _clusters(np.random.default_rng(3), sep=2.0)
    m = fit_conditional(states, acts)
    q = np.random.default_rng(4).normal(size=(100, 2)) * 20
    post = np.exp(m.log_posterior(q))
    np.testing.assert_allclose(post.sum(axis=1), 1.0, atol=1e-9)
    assert np.all((post >= 0) & (post <= 1))
    lj = m.log_joint(q)
    for shift in (-1e4, 1e4):
        shifted = lj + shift
        np.testing.assert_allclose(shifted - logsumexp(shifted, axis=1, keepdims=True), m.log_posterior(q), atol=1e-9)


def test_conditional_errors():
    with pytest.raises(DegenerateDataError):
        fit_conditional([[0.0], [1.0], [2.0]], [0, 0, 1])
    with pytest.raises(ValueError):
        fit_conditional([[0.0], [1.0]], [0])
    states, acts = _clusters(np.random.default_rng(0), n=5)
    m = fit_conditional(states, acts)
    with pytest.raises(KeyError):
        conditional_prob(m, states[0], 7)


def test_frequency_table():
    t = fit_frequency(["a", "a", "b"], 0.0)
    assert t.prob("a") == pytest.approx(2 / 3) and t.prob("b") == pytest.approx(1 / 3)
    t = fit_frequency(["a"], 1.0, support=["a", "b"])
    assert t.prob("a") == pytest.approx(2 / 3) and t.prob("b") == pytest.approx(1 / 3)
    rng = np.random.default_rng(0)
    t = fit_frequency(list(rng.integers(0, 7, size=50)), 0.5, support=range(10))
    assert sum(t.probabilities().values()) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        fit_frequency([])


@pytest.mark.parametrize("kind", ["gaussian", "kde", "conditional"])
def test_serialization_round_trip(kind):
    rng = np.random.default_rng(9)
    xs = rng.normal(size=(30, 3))
    if kind == "gaussian":
        m = fit_gaussian(xs, ridge=1e-4)
    elif kind == "kde":
        m = fit_kde(xs)
    else:
        m = fit_conditional(xs, [0, 1, 2] * 10)
    back = model_from_json(model_to_json(m))
    q = rng.normal(size=(10, 3))
    if kind == "conditional":
        np.testing.assert_array_equal(back.log_posterior(q), m.log_posterior(q))
    else:
        np.testing.assert_array_equal(back.logpdf(q), m.logpdf(q))
        assert back.kernel.ridge == m.kernel.ridge if kind == "kde" else back.ridge == m.ridge
