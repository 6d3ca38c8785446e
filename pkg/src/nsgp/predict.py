"""Predictive distributions at target inputs.

Latents are extrapolated to the targets through their GP prior
conditionals, then each latent configuration yields one Gaussian over
f at the targets. MAP and HMC predictions are uniform mixtures of these.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from .kernel import jittered_cholesky, nonstationary_kernel, se_kernel
from .model import COMPONENTS
from .objective import data_covariance, factor_data_covariance


@dataclass(frozen=True)
class LatentConditional:
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class PredictiveMixture:
    """Uniformly weighted Gaussians over f at ``x``.

    ``noise_vars`` holds each component's observation-noise variance at
    the targets; ``latents`` maps component name to the per-component
    log-latent values at the targets.
    """

    x: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    noise_vars: np.ndarray
    latents: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.means)

    @property
    def weights(self):
        return np.full(len(self), 1.0 / len(self))


def latent_conditional(v, x, x_star, hyp, component):
    """GP conditional of a log-latent at ``x_star`` given its values ``v`` at ``x``.

    Targets that coincide exactly with a training input take the observed
    value with zero variance (the noise-free conditional), which the
    jittered solve would only approximate.
    """
    v = np.asarray(v, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
    if len(x) == 0:
        raise ValueError("need at least one conditioning input")
    if len(v) != len(x):
        raise ValueError("latent vector and inputs differ in length")
    mu = hyp.log_mean(component)
    alpha, beta = hyp.alpha(component), hyp.beta(component)

    match = x_star[:, None] == x[None, :]
    hit = match.any(axis=1)
    free = ~hit
    mean = np.empty(len(x_star))
    cov = np.zeros((len(x_star), len(x_star)))
    mean[hit] = v[np.argmax(match[hit], axis=1)]
    if free.any():
        chol, _ = jittered_cholesky(se_kernel(x, x, alpha, beta))
        xs = x_star[free]
        k_sx = se_kernel(xs, x, alpha, beta)
        mean[free] = mu + k_sx @ cho_solve((chol, True), v - mu)
        c = se_kernel(xs, xs, alpha, beta) - k_sx @ cho_solve((chol, True), k_sx.T)
        cov[np.ix_(free, free)] = 0.5 * (c + c.T)
    return LatentConditional(mean=mean, cov=cov)


def _draw(cond, rng):
    # eigen-square-root tolerates the exactly singular rows of observed targets
    vals, vecs = np.linalg.eigh(cond.cov)
    return cond.mean + vecs @ (np.sqrt(np.clip(vals, 0.0, None)) * rng.standard_normal(len(vals)))


def _components_for_state(state, y, x, x_star, hyp, flags, s, rng):
    n, m = len(x), len(x_star)
    ell, sigma, _ = state.positive(n)
    kf, w2 = data_covariance(x, state)
    chol = factor_data_covariance(kf, w2)
    a = cho_solve((chol, True), y)

    cond = {}
    for c in COMPONENTS:
        if flags[c]:
            cond[c] = latent_conditional(state[c], x, x_star, hyp, c)
        else:
            cond[c] = LatentConditional(mean=np.full(m, state[c][0]), cov=np.zeros((m, m)))

    out = []
    for _ in range(s):
        if s == 1:
            ell_t, sigma_t = cond["ell"].mean, cond["sigma"].mean
        else:
            ell_t, sigma_t = _draw(cond["ell"], rng), _draw(cond["sigma"], rng)
        omega_t = cond["omega"].mean
        k_xs = nonstationary_kernel(x, x_star, ell, np.exp(ell_t), sigma, np.exp(sigma_t))
        k_ss = nonstationary_kernel(x_star, x_star, np.exp(ell_t), np.exp(ell_t),
                                    np.exp(sigma_t), np.exp(sigma_t))
        mean = k_xs.T @ a
        cov = k_ss - k_xs.T @ cho_solve((chol, True), k_xs)
        out.append((mean, 0.5 * (cov + cov.T), np.exp(2.0 * omega_t), ell_t, sigma_t, omega_t))
    return out


def predict_states(states, y, x, x_star, hyp, flags, s=1, seed=0):
    """Mixture over ``states`` x ``s`` conditional latent draws.

    State ``i`` uses the random stream ``(seed, i)``.
    """
    if len(states) == 0:
        raise ValueError("no latent states to predict from")
    if s < 1:
        raise ValueError("s must be at least 1")
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
    parts = []
    for i, state in enumerate(states):
        rng = np.random.default_rng([seed, i])
        parts.extend(_components_for_state(state, y, x, x_star, hyp, flags, s, rng))
    means, covs, noise, ell_t, sigma_t, omega_t = (np.array(v) for v in zip(*parts))
    return PredictiveMixture(x=x_star, means=means, covs=covs, noise_vars=noise,
                             latents={"ell": ell_t, "sigma": sigma_t, "omega": omega_t})


def predict_map(result, y, x, x_star, hyp, flags, s=1, seed=0):
    """Predictive mixture of ``s`` components around a MAP state."""
    return predict_states([result.state], y, x, x_star, hyp, flags, s, seed)


def predict_hmc(samples, y, x, x_star, hyp, s=1, seed=0, thin=1):
    """Predictive mixture of ``len(samples) * s`` components."""
    if len(samples) == 0:
        raise ValueError("empty sample set")
    kept = samples.thin(thin) if thin > 1 else samples
    return predict_states(kept.states, y, x, x_star, hyp, samples.flags, s, seed)


def mixture_moments(mix):
    """Pointwise mean and variance of f under the mixture."""
    w = mix.weights
    mean = w @ mix.means
    comp_var = np.diagonal(mix.covs, axis1=1, axis2=2)
    var = w @ (comp_var + (mix.means - mean) ** 2)
    return mean, var
