"""Covariance functions.

The signal covariance is the one-dimensional Gibbs kernel

    k(x, x') = s(x) s(x') sqrt(2 l(x) l(x') / (l(x)^2 + l(x')^2))
               * exp(-(x - x')^2 / (l(x)^2 + l(x')^2))

with input-dependent lengthscale ``l`` and signal standard deviation ``s``.
The latent log-functions get ordinary squared exponential priors.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import NumericalError

JITTER_START = 1e-8
JITTER_MAX = 1e-2


def _as_vector(v, name):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {v.shape}")
    return v


def _check_positive(v, name):
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        raise ValueError(f"{name} must be finite and strictly positive")


def nonstationary_kernel(x_rows, x_cols, ell_rows, ell_cols, sigma_rows, sigma_cols):
    """Gibbs kernel matrix between ``x_rows`` and ``x_cols``.

    Each side carries its own lengthscale and signal-sd vectors, so the
    same routine serves the training matrix and train/target cross terms.
    """
    x_rows = _as_vector(x_rows, "x_rows")
    x_cols = _as_vector(x_cols, "x_cols")
    ell_rows = _as_vector(ell_rows, "ell_rows")
    ell_cols = _as_vector(ell_cols, "ell_cols")
    sigma_rows = _as_vector(sigma_rows, "sigma_rows")
    sigma_cols = _as_vector(sigma_cols, "sigma_cols")
    if not (len(x_rows) == len(ell_rows) == len(sigma_rows)):
        raise ValueError("row inputs and row latents differ in length")
    if not (len(x_cols) == len(ell_cols) == len(sigma_cols)):
        raise ValueError("column inputs and column latents differ in length")
    for v, name in ((ell_rows, "ell_rows"), (ell_cols, "ell_cols"),
                    (sigma_rows, "sigma_rows"), (sigma_cols, "sigma_cols")):
        _check_positive(v, name)

    l2_sum = ell_rows[:, None] ** 2 + ell_cols[None, :] ** 2
    d2 = (x_rows[:, None] - x_cols[None, :]) ** 2
    prefactor = np.sqrt(2.0 * np.outer(ell_rows, ell_cols) / l2_sum)
    return np.outer(sigma_rows, sigma_cols) * prefactor * np.exp(-d2 / l2_sum)


def se_kernel(x_rows, x_cols, alpha, beta):
    """Squared exponential ``alpha^2 exp(-(x - x')^2 / (2 beta^2))``."""
    if not alpha > 0 or not beta > 0:
        raise ValueError("alpha and beta must be strictly positive")
    x_rows = _as_vector(x_rows, "x_rows")
    x_cols = _as_vector(x_cols, "x_cols")
    d2 = (x_rows[:, None] - x_cols[None, :]) ** 2
    return alpha ** 2 * np.exp(-0.5 * d2 / beta ** 2)


@dataclass(frozen=True)
class DerivativePlusMatrix:
    """Derivative of a symmetric kernel matrix w.r.t. one latent entry.

    Only row ``index`` and column ``index`` are nonzero; ``row`` holds the
    row values and the column is its transpose.
    """

    index: int
    row: np.ndarray

    def dense(self):
        n = len(self.row)
        out = np.zeros((n, n))
        out[self.index, :] = self.row
        out[:, self.index] = self.row
        return out


def dlog_lengthscale_rows(x, ell, kf):
    """All plus-matrix rows at once.

    Entry ``(i, j)`` is d K[i, j] / d log(ell_i); row ``i`` of the result is
    the row of the plus matrix for latent entry ``i``. ``kf`` is the kernel
    matrix already evaluated at ``(x, ell, sigma)``.
    """
    li2 = ell[:, None] ** 2
    lsum = li2 + ell[None, :] ** 2
    d2 = (x[:, None] - x[None, :]) ** 2
    # d log k_ij / d log l_i = 1/2 - l_i^2/L + 2 d^2 l_i^2 / L^2, L = l_i^2 + l_j^2
    ratio = li2 / lsum
    return kf * (0.5 - ratio + 2.0 * (d2 / lsum) * ratio)


def dK_dlog_lengthscale(x, ell, sigma, i):
    """Plus matrix d K_y / d log(ell_i) for training inputs ``x``."""
    x = _as_vector(x, "x")
    ell = _as_vector(ell, "ell")
    sigma = _as_vector(sigma, "sigma")
    n = len(x)
    if not 0 <= i < n:
        raise IndexError(f"latent index {i} out of range for n={n}")
    kf = nonstationary_kernel(x, x, ell, ell, sigma, sigma)
    li2 = ell[i] ** 2
    lsum = li2 + ell ** 2
    d2 = (x[i] - x) ** 2
    row = kf[i] * (0.5 - li2 / lsum + 2.0 * d2 * li2 / lsum ** 2)
    return DerivativePlusMatrix(index=i, row=row)


def jittered_cholesky(k, start=JITTER_START, maximum=JITTER_MAX, try_plain=False):
    """Lower Cholesky factor of ``k`` plus a relative diagonal jitter.

    The jitter is ``start * mean(diag(k))`` and grows tenfold per failed
    attempt until ``maximum * mean(diag(k))``. With ``try_plain`` the
    unjittered matrix is attempted first. Returns ``(L, jitter)``.
    """
    k = np.asarray(k, dtype=float)
    n = k.shape[0]
    scale = float(np.mean(np.diag(k))) if n else 1.0
    if not np.isfinite(scale) or scale <= 0:
        raise NumericalError("kernel matrix has a nonpositive or non-finite diagonal")
    if try_plain:
        try:
            return np.linalg.cholesky(k), 0.0
        except np.linalg.LinAlgError:
            pass
    rel = start
    while rel <= maximum * (1 + 1e-12):
        jitter = rel * scale
        try:
            return np.linalg.cholesky(k + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            rel *= 10.0
    raise NumericalError(f"Cholesky failed with jitter up to {maximum:g} x mean diagonal")
