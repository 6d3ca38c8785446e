"""MAP estimation of the latent log-functions by whitened gradient ascent."""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from .exceptions import NumericalError, OptimizationError
from .model import COMPONENTS, LatentState, build_prior_factors
from .objective import MLLValue, WhitenedObjective, data_covariance, factor_data_covariance

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
CONTRACTION = 0.5
MIN_STEP = 1e-14


@dataclass(frozen=True)
class MapResult:
    state: LatentState
    mll: MLLValue
    restarts_run: int
    converged: bool
    iterations: int
    restart_index: int = 0
    history: tuple = field(default=(), repr=False)
    initial_mll: tuple = field(default=(), repr=False)


def initial_point(objective, restart, seed, scale=0.1):
    """Whitened start for a restart; restart 0 sits at the prior mean."""
    hyp, flags, n = objective.hyp, objective.flags, objective.n
    rng = np.random.default_rng([seed, restart])
    parts = []
    for c in COMPONENTS:
        size = flags.sizes(n)[c]
        base = np.zeros(size) if flags[c] else np.full(size, hyp.log_mean(c))
        if restart > 0:
            base = base + scale * rng.standard_normal(size)
        parts.append(base)
    return np.concatenate(parts)


def gradient_ascent(objective, theta, max_iters=2000, grad_tol=1e-5):
    """Steepest ascent with Armijo backtracking.

    The trial step starts at 1.0 and afterwards at twice the last accepted
    step, capped at 1.0 (a Newton step for the whitened prior).
    Returns ``(theta, value, iterations, converged, history)``.
    """
    value, grad = objective(theta)
    history = [value]
    step = 1.0
    for it in range(max_iters):
        if np.max(np.abs(grad)) <= grad_tol:
            return theta, value, it, True, history
        slope = grad @ grad
        t = min(1.0, 2.0 * step)
        while True:
            candidate = theta + t * grad
            try:
                # overlong trial steps can overflow; NaN/inf values are rejected below
                with np.errstate(all="ignore"):
                    cand_value, cand_grad = objective(candidate)
            except NumericalError:
                cand_value = -np.inf
            # strict increase: below roundoff the Armijo margin alone accepts noise
            if cand_value > value and cand_value >= value + ARMIJO_C * t * slope:
                break
            t *= CONTRACTION
            if t < MIN_STEP:
                # no ascent possible along the gradient at machine precision
                return theta, value, it, False, history
        theta, value, grad, step = candidate, cand_value, cand_grad, t
        history.append(value)
    return theta, value, max_iters, bool(np.max(np.abs(grad)) <= grad_tol), history


def _run_restart(args):
    y, x, hyp, flags, factors, restart, seed, max_iters, grad_tol = args
    objective = WhitenedObjective(y, x, hyp, flags, factors)
    theta0 = initial_point(objective, restart, seed)
    try:
        start_value = objective(theta0)[0]
        theta, value, iters, converged, history = gradient_ascent(
            objective, theta0, max_iters, grad_tol)
    except NumericalError as err:
        return {"restart": restart, "error": str(err)}
    return {"restart": restart, "theta": theta, "value": value, "iterations": iters,
            "converged": converged, "history": tuple(history), "start": start_value}


def fit_map(y, x, hyp, flags, restarts=10, max_iters=2000, grad_tol=1e-5, seed=0,
            factors=None, workers=1):
    """Best of ``restarts`` gradient ascents, by MLL."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        raise ValueError("MAP fitting needs at least two data points")
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    if factors is None:
        factors = build_prior_factors(x, hyp)
    jobs = [(y, x, hyp, flags, factors, r, seed, max_iters, grad_tol) for r in range(restarts)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_restart, jobs))
    else:
        outcomes = [_run_restart(job) for job in jobs]

    good = [o for o in outcomes if "error" not in o]
    if not good:
        raise OptimizationError("all MAP restarts failed",
                                [f"restart {o['restart']}: {o['error']}" for o in outcomes])
    for o in outcomes:
        if "error" in o:
            log.warning("restart %d failed: %s", o["restart"], o["error"])
    # ties resolve to the lowest restart index
    best = max(good, key=lambda o: (o["value"], -o["restart"]))
    objective = WhitenedObjective(y, x, hyp, flags, factors)
    value, state = objective.evaluate(best["theta"])
    return MapResult(state=state, mll=value, restarts_run=restarts, converged=best["converged"],
                     iterations=best["iterations"], restart_index=best["restart"],
                     history=best["history"], initial_mll=tuple(o["start"] for o in good))


def gaussian_posterior(y, x, state):
    """Mean and covariance of f at the training inputs given the latents."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    kf, w2 = data_covariance(x, state)
    chol = factor_data_covariance(kf, w2)
    mean = kf @ cho_solve((chol, True), y)
    cov = kf - kf @ cho_solve((chol, True), kf)
    return mean, 0.5 * (cov + cov.T)


def map_function_posterior(result, y, x):
    return gaussian_posterior(y, x, result.state)

