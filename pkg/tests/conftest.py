import numpy as np
import pytest

from nsgp.model import LatentState, build_prior_factors, dimension
from nsgp.objective import WhitenedObjective, data_covariance


def central_difference(f, z, h=1e-4):
    """Fourth-order central differences of scalar ``f`` at ``z``."""
    z = np.asarray(z, dtype=float)
    out = np.empty(len(z))
    for i in range(len(z)):
        e = np.zeros(len(z))
        e[i] = h
        out[i] = (-f(z + 2 * e) + 8 * f(z + e) - 8 * f(z - e) + f(z - 2 * e)) / (12 * h)
    return out


def random_instance(rng, flags, hyp, n):
    """Inputs, latents drawn from the prior, and y drawn from the model."""
    x = np.sort(rng.uniform(0, 1, n))
    factors = build_prior_factors(x, hyp)
    z = rng.standard_normal(dimension(flags, n))
    state = WhitenedObjective(np.zeros(n), x, hyp, flags, factors).state(z)
    kf, w2 = data_covariance(x, state)
    y = np.linalg.cholesky(kf + np.diag(w2) + 1e-10 * np.eye(n)) @ rng.standard_normal(n)
    return x, y, state, z, factors


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def as_state(vec, flags, n):
    return LatentState.from_vector(vec, flags, n)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(module.RESULTS):
        terminalreporter.write_line(line)
