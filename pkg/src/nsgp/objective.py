"""Marginal log likelihood of the latent log-functions and its gradient.

    log L = log N(y | 0, K_f + Omega) + sum_c log p(v_c)

With ``a = K_y^{-1} y`` and ``A = a a^T - K_y^{-1}`` the data-term gradients
are, for nonstationary components,

    d/d ell_i   = sum_j A_ij dK_ij/dlog(ell_i)      (plus-matrix trace)
    d/d sigma_i = [diag(A K_f)]_i
    d/d omega_i = A_ii omega_i^2

and for stationary scalars the traces 0.5 tr(A (D o K_f)) / ell^2,
tr(A K_f) and tr(A Omega), D the squared distance matrix.
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .exceptions import NumericalError
from .kernel import dlog_lengthscale_rows, jittered_cholesky, nonstationary_kernel
from .model import (COMPONENTS, NATURAL, LatentState, build_prior_factors, unwhiten,
                    whitened_gradient)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class MLLValue:
    total: float
    data_term: float
    prior_ell: float
    prior_sigma: float
    prior_omega: float


@dataclass(frozen=True)
class LatentGradient:
    ell: np.ndarray
    sigma: np.ndarray
    omega: np.ndarray

    def __getitem__(self, c):
        return getattr(self, c)

    def to_vector(self):
        return np.concatenate([self.ell, self.sigma, self.omega])


def _inputs(y, x, state):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if len(x) != len(y):
        raise ValueError(f"x has {len(x)} entries but y has {len(y)}")
    if state.frame != NATURAL:
        raise ValueError("objective expects a state in the natural frame")
    for c in COMPONENTS:
        if len(state[c]) not in (1, len(x)):
            raise ValueError(f"{c} has length {len(state[c])}, expected 1 or {len(x)}")
    return y, x


def data_covariance(x, state):
    """``(K_f, omega^2)`` at the training inputs."""
    n = len(x)
    with np.errstate(over="ignore", under="ignore"):
        ell, sigma, omega = state.positive(n)
    if not all(np.all(np.isfinite(v) & (v > 0)) for v in (ell, sigma, omega)):
        raise NumericalError("latent values overflow or underflow when exponentiated")
    return nonstationary_kernel(x, x, ell, ell, sigma, sigma), omega ** 2


def factor_data_covariance(kf, noise_var):
    ky = kf + np.diag(noise_var)
    chol, _ = jittered_cholesky(ky, try_plain=True)
    return chol


def _data_term(y, x, state, flags, want_grad):
    n = len(x)
    kf, w2 = data_covariance(x, state)
    if not (np.all(np.isfinite(kf)) and np.all(np.isfinite(w2))):
        raise NumericalError("non-finite covariance entries")
    chol = factor_data_covariance(kf, w2)
    a = cho_solve((chol, True), y, check_finite=False)
    value = -0.5 * y @ a - np.sum(np.log(np.diag(chol))) - 0.5 * n * LOG_2PI
    if not want_grad:
        return value, None

    A = np.outer(a, a) - cho_solve((chol, True), np.eye(n), check_finite=False)
    grads = {}
    ell = np.exp(state.expanded("ell", n))
    if flags.ell:
        grads["ell"] = np.sum(A * dlog_lengthscale_rows(x, ell, kf), axis=1)
    else:
        d2 = (x[:, None] - x[None, :]) ** 2
        grads["ell"] = np.array([0.5 * np.sum(A * d2 * kf) / ell[0] ** 2])
    ak = np.sum(A * kf, axis=1)
    grads["sigma"] = ak if flags.sigma else np.array([ak.sum()])
    aw = np.diag(A) * w2
    grads["omega"] = aw if flags.omega else np.array([aw.sum()])
    return value, grads


def _prior_term(state, c, hyp, flags, factors, want_grad):
    v = state[c]
    mu = hyp.log_mean(c)
    if flags[c] and len(v) == factors[c].shape[0]:
        chol = factors[c]
        w = solve_triangular(chol, v - mu, lower=True, check_finite=False)
        value = -0.5 * w @ w - np.sum(np.log(np.diag(chol))) - 0.5 * len(v) * LOG_2PI
        grad = -solve_triangular(chol.T, w, lower=False, check_finite=False) if want_grad else None
    else:
        alpha = hyp.alpha(c)
        r = (v[0] - mu) / alpha
        value = -0.5 * r * r - np.log(alpha) - 0.5 * LOG_2PI
        grad = np.array([-r / alpha]) if want_grad else None
    return value, grad


def mll_and_gradient(y, x, state, hyp, flags, factors=None, data_weight=1.0, want_grad=True):
    """Value and natural-frame gradient together (one factorization).

    ``data_weight`` scales the data term; 0 leaves the prior alone, which
    is useful for checking samplers against a known target.
    """
    y, x = _inputs(y, x, state)
    n = len(x)
    if factors is None and any(flags[c] for c in COMPONENTS):
        factors = build_prior_factors(x, hyp)
    if data_weight != 0:
        data, dgrad = _data_term(y, x, state, flags, want_grad)
    else:
        data, dgrad = 0.0, None
    priors, grads = {}, {}
    for c in COMPONENTS:
        priors[c], pgrad = _prior_term(state, c, hyp, flags, factors, want_grad)
        if want_grad:
            g = pgrad if dgrad is None else data_weight * dgrad[c] + pgrad
            grads[c] = np.broadcast_to(g, flags.sizes(n)[c]).copy()
    data = data_weight * data
    value = MLLValue(total=data + priors["ell"] + priors["sigma"] + priors["omega"],
                     data_term=data, prior_ell=priors["ell"], prior_sigma=priors["sigma"],
                     prior_omega=priors["omega"])
    return value, (LatentGradient(**grads) if want_grad else None)


def mll(y, x, state, hyp, flags, factors=None, data_weight=1.0):
    return mll_and_gradient(y, x, state, hyp, flags, factors, data_weight, want_grad=False)[0]


def mll_gradient(y, x, state, hyp, flags, factors=None, data_weight=1.0):
    return mll_and_gradient(y, x, state, hyp, flags, factors, data_weight)[1]


class WhitenedObjective:
    """MLL as a function of the flat whitened latent vector.

    Calls return ``(value, gradient)``; the most recent evaluation is
    cached so line searches and tree building do not refactorize.
    """

    def __init__(self, y, x, hyp, flags, factors=None, data_weight=1.0):
        self.y = np.asarray(y, dtype=float)
        self.x = np.asarray(x, dtype=float)
        self.n = len(self.x)
        self.hyp = hyp
        self.flags = flags
        self.factors = factors if factors is not None else build_prior_factors(self.x, hyp)
        self.data_weight = data_weight
        self.dim = sum(flags.sizes(self.n).values())
        self._key = None
        self._cached = None

    def state(self, theta):
        white = LatentState.from_vector(theta, self.flags, self.n, frame="whitened")
        return unwhiten(white, self.factors, self.hyp, self.flags)

    def evaluate(self, theta):
        """Full ``(MLLValue, natural state)`` at ``theta``."""
        state = self.state(theta)
        value = mll(self.y, self.x, state, self.hyp, self.flags, self.factors, self.data_weight)
        return value, state

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        key = theta.tobytes()
        if key == self._key:
            return self._cached
        state = self.state(theta)
        value, grad = mll_and_gradient(self.y, self.x, state, self.hyp, self.flags,
                                       self.factors, self.data_weight)
        parts = []
        for c in COMPONENTS:
            g = grad[c]
            parts.append(whitened_gradient(g, self.factors, c) if self.flags[c] else g)
        result = (float(value.total), np.concatenate(parts))
        if not (np.isfinite(result[0]) and np.all(np.isfinite(result[1]))):
            raise NumericalError("non-finite objective or gradient")
        self._key, self._cached = key, result
        return result
