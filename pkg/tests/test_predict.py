import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsgp.infer_map import MapResult, fit_map, gaussian_posterior, map_function_posterior
from nsgp.kernel import se_kernel
from nsgp.model import Hyperparams, LatentState, VariantFlags
from nsgp.objective import mll
from nsgp.predict import (PredictiveMixture, latent_conditional, mixture_moments, predict_map,
                          predict_states)

HYP = Hyperparams()
FULL = VariantFlags(True, True, True)


def _data(n=10, seed=0):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0, 1, n))
    return x, np.cos(5 * x) + 0.1 * rng.standard_normal(n)


def _result(state, y, x, flags):
    return MapResult(state=state, mll=mll(y, x, state, HYP, flags), restarts_run=1,
                     converged=True, iterations=0)


def _wiggly_state(x):
    return LatentState(ell=np.log(0.2) + 0.3 * np.sin(3 * x), sigma=0.2 * np.cos(2 * x),
                       omega=np.log(0.1) + 0.5 * x)


def test_latent_conditional_interpolates_training_values():
    x = np.linspace(0, 1, 6)
    v = np.sin(3 * x)
    cond = latent_conditional(v, x, x[[4, 1]], HYP, "ell")
    np.testing.assert_array_equal(cond.mean, v[[4, 1]])
    assert np.all(cond.cov == 0)


def test_latent_conditional_matches_textbook_formula():
    x = np.array([0.0, 0.3, 0.7])
    v = np.array([-1.0, -1.5, -2.0])
    xs = np.array([0.1, 0.5])
    cond = latent_conditional(v, x, xs, HYP, "omega")
    a, b = HYP.alpha("omega"), HYP.beta("omega")
    kxx, ksx = se_kernel(x, x, a, b), se_kernel(xs, x, a, b)
    mu = HYP.log_mean("omega")
    np.testing.assert_allclose(cond.mean, mu + ksx @ np.linalg.solve(kxx, v - mu), atol=1e-6)
    expected = se_kernel(xs, xs, a, b) - ksx @ np.linalg.solve(kxx, ksx.T)
    np.testing.assert_allclose(cond.cov, expected, atol=1e-6)


def test_latent_conditional_far_away_reverts_to_prior():
    cond = latent_conditional([0.5, 0.7], [0.0, 0.1], [5.0], HYP, "sigma")
    assert cond.mean[0] == pytest.approx(HYP.log_mean("sigma"))
    assert cond.cov[0, 0] == pytest.approx(HYP.alpha("sigma") ** 2)


def test_latent_conditional_validation():
    with pytest.raises(ValueError):
        latent_conditional([1.0], [0.0, 1.0], [0.5], HYP, "ell")
    with pytest.raises(ValueError):
        latent_conditional([], [], [0.5], HYP, "ell")


@pytest.mark.parametrize("flags", [VariantFlags(), FULL, VariantFlags(ell=True)],
                         ids=lambda f: f.name)
def test_prediction_at_training_inputs_is_function_posterior(flags):
    x, y = _data()
    state = _wiggly_state(x) if flags.ell else LatentState([np.log(0.2)], [0.0], [np.log(0.1)])
    if flags == VariantFlags(ell=True):
        state = LatentState(state.ell, [0.0], [np.log(0.1)])
    res = _result(state, y, x, flags)
    mix = predict_map(res, y, x, x, HYP, flags)
    mean, cov = map_function_posterior(res, y, x)
    assert len(mix) == 1
    np.testing.assert_allclose(mix.means[0], mean, rtol=0, atol=1e-8)
    np.testing.assert_allclose(mix.covs[0], cov, rtol=0, atol=1e-8)
    np.testing.assert_allclose(mix.noise_vars[0], np.exp(2 * state.expanded("omega", len(x))))


def test_stationary_prediction_matches_textbook_gp():
    x, y = _data(8)
    xs = np.array([0.05, 0.5, 1.2])
    state = LatentState([np.log(0.25)], [np.log(0.8)], [np.log(0.15)])
    mix = predict_map(_result(state, y, x, VariantFlags()), y, x, xs, HYP, VariantFlags())
    k = lambda a, b: 0.64 * np.exp(-(a[:, None] - b[None, :]) ** 2 / (2 * 0.0625))
    ky = k(x, x) + 0.0225 * np.eye(8)
    np.testing.assert_allclose(mix.means[0], k(xs, x) @ np.linalg.solve(ky, y), atol=1e-10)
    cov = k(xs, xs) - k(xs, x) @ np.linalg.solve(ky, k(x, xs))
    np.testing.assert_allclose(mix.covs[0], cov, atol=1e-10)
    np.testing.assert_allclose(mix.noise_vars[0], 0.0225)


def test_multiple_draws_per_state():
    x, y = _data()
    res = _result(_wiggly_state(x), y, x, FULL)
    xs = np.linspace(-0.1, 1.1, 7)
    mix = predict_map(res, y, x, xs, HYP, FULL, s=5, seed=3)
    assert mix.means.shape == (5, 7) and mix.covs.shape == (5, 7, 7)
    assert mix.latents["ell"].shape == (5, 7)
    # draws differ between components but the noise uses the conditional mean
    assert np.ptp(mix.latents["ell"][:, 0]) > 0
    assert np.ptp(mix.noise_vars[:, 0]) == 0
    again = predict_map(res, y, x, xs, HYP, FULL, s=5, seed=3)
    np.testing.assert_array_equal(mix.means, again.means)


def test_predict_states_validation():
    x, y = _data()
    with pytest.raises(ValueError):
        predict_states([], y, x, x, HYP, FULL)
    with pytest.raises(ValueError):
        predict_states([_wiggly_state(x)], y, x, x, HYP, FULL, s=0)


def test_mixture_moments_by_hand():
    mix = PredictiveMixture(x=np.zeros(1), means=np.array([[0.0], [2.0]]),
                            covs=np.array([[[1.0]], [[3.0]]]), noise_vars=np.zeros((2, 1)))
    mean, var = mixture_moments(mix)
    assert mean[0] == pytest.approx(1.0)
    assert var[0] == pytest.approx(2.0 + 1.0)
    np.testing.assert_array_equal(mix.weights, [0.5, 0.5])


def test_mixture_moments_against_monte_carlo():
    rng = np.random.default_rng(11)
    k, m, draws = 4, 3, 200_000
    means = rng.normal(0, 1, (k, m))
    sd = rng.uniform(0.2, 1.5, (k, m))
    covs = np.array([np.diag(s ** 2) for s in sd])
    mix = PredictiveMixture(x=np.zeros(m), means=means, covs=covs, noise_vars=np.zeros((k, m)))
    comp = rng.integers(k, size=draws)
    sample = means[comp] + sd[comp] * rng.standard_normal((draws, m))
    mean, var = mixture_moments(mix)
    np.testing.assert_allclose(sample.mean(0), mean, atol=0.01 * np.sqrt(var).max())
    np.testing.assert_allclose(sample.var(0), var, rtol=0.02)


def test_map_prediction_end_to_end():
    x, y = _data(12)
    res = fit_map(y, x, HYP, VariantFlags(omega=True), restarts=1, max_iters=200)
    xs = np.linspace(0, 1, 5)
    mix = predict_map(res, y, x, xs, HYP, VariantFlags(omega=True))
    mean, var = mixture_moments(mix)
    assert np.all(var >= -1e-12)
    assert np.max(np.abs(mean - np.cos(5 * xs))) < 0.5
    m_train, _ = gaussian_posterior(y, x, res.state)
    assert np.all(np.isfinite(m_train))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2 ** 31))
def test_mixture_moments_law_of_total_variance(k, m, seed):
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(k, m))
    a = rng.normal(size=(k, m, m))
    covs = a @ a.transpose(0, 2, 1) + 0.1 * np.eye(m)
    mix = PredictiveMixture(x=np.zeros(m), means=means, covs=covs, noise_vars=np.zeros((k, m)))
    mean, var = mixture_moments(mix)
    np.testing.assert_allclose(mean, means.mean(0), atol=1e-12)
    # total variance = mean within-component variance + spread of the means
    within = np.diagonal(covs, axis1=1, axis2=2).mean(0)
    np.testing.assert_allclose(var, within + means.var(0), rtol=1e-10)
    assert np.all(var >= within - 1e-12)
