"""No-U-Turn sampling of the whitened latent posterior.

The sampler is the efficient NUTS with slice variable and fixed step size
(no dual averaging), identity mass matrix. Chains draw from independent
streams seeded by ``(seed, chain_id)`` so results do not depend on how
chains are scheduled.
"""
import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import NumericalError, ParseError, SamplingError
from .infer_map import gaussian_posterior
from .model import COMPONENTS, LatentState, VariantFlags, build_prior_factors, whiten
from .objective import WhitenedObjective
from .predict import PredictiveMixture

DELTA_MAX = 1000.0


@dataclass(frozen=True)
class NutsConfig:
    step_size: float = 0.01
    max_tree_depth: int = 10
    n_samples: int = 1000
    n_warmup: int = None
    n_chains: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be at least 1")
        if self.n_warmup is None:
            # warmup is 20% of the whole chain
            object.__setattr__(self, "n_warmup", self.n_samples // 4)
        if self.n_samples < 1 or self.n_chains < 1 or self.n_warmup < 0:
            raise ValueError("sample, chain and warmup counts must be positive")


@dataclass
class SampleSet:
    """Post-warmup draws ordered by (chain, draw index)."""

    states: list
    mll: np.ndarray
    chain: np.ndarray
    index: np.ndarray
    flags: VariantFlags
    whitened: np.ndarray = None
    acceptance: dict = field(default_factory=dict)
    tree_depth: np.ndarray = None

    def __len__(self):
        return len(self.states)

    def thin(self, stride):
        if stride < 1:
            raise ValueError("thinning stride must be at least 1")
        keep = np.arange(0, len(self), stride)
        return self.subset(keep)

    def subset(self, keep):
        keep = np.asarray(keep, dtype=int)
        return SampleSet(
            states=[self.states[i] for i in keep], mll=self.mll[keep], chain=self.chain[keep],
            index=self.index[keep], flags=self.flags,
            whitened=None if self.whitened is None else self.whitened[keep],
            acceptance=dict(self.acceptance),
            tree_depth=None if self.tree_depth is None else self.tree_depth[keep])


def leapfrog(theta, r, grad, eps, logp_and_grad):
    r = r + 0.5 * eps * grad
    theta = theta + eps * r
    logp, grad = logp_and_grad(theta)
    r = r + 0.5 * eps * grad
    return theta, r, grad, logp


class _Target:
    """Wraps an objective; numerical failure becomes log density -inf."""

    def __init__(self, fn):
        self.fn = fn
        self.failures = 0

    def __call__(self, theta):
        try:
            # divergent trajectories overflow; the non-finite check below handles them
            with np.errstate(all="ignore"):
                logp, grad = self.fn(theta)
        except (NumericalError, np.linalg.LinAlgError):
            self.failures += 1
            return -np.inf, np.zeros_like(theta)
        if not (np.isfinite(logp) and np.all(np.isfinite(grad))):
            self.failures += 1
            return -np.inf, np.zeros_like(theta)
        return logp, grad


def _no_u_turn(theta_minus, theta_plus, r_minus, r_plus):
    span = theta_plus - theta_minus
    return span @ r_minus >= 0 and span @ r_plus >= 0


def _build_tree(theta, r, grad, log_u, v, j, eps, target, rng):
    if j == 0:
        theta1, r1, grad1, logp1 = leapfrog(theta, r, grad, v * eps, target)
        joint = logp1 - 0.5 * r1 @ r1
        n1 = int(log_u <= joint)
        s1 = int(joint > log_u - DELTA_MAX)
        return theta1, r1, grad1, theta1, r1, grad1, theta1, grad1, logp1, n1, s1

    (theta_m, r_m, grad_m, theta_p, r_p, grad_p,
     theta1, grad1, logp1, n1, s1) = _build_tree(theta, r, grad, log_u, v, j - 1, eps, target, rng)
    if s1:
        if v == -1:
            (theta_m, r_m, grad_m, _, _, _,
             theta2, grad2, logp2, n2, s2) = _build_tree(theta_m, r_m, grad_m, log_u, v, j - 1,
                                                         eps, target, rng)
        else:
            (_, _, _, theta_p, r_p, grad_p,
             theta2, grad2, logp2, n2, s2) = _build_tree(theta_p, r_p, grad_p, log_u, v, j - 1,
                                                         eps, target, rng)
        if n1 + n2 > 0 and rng.uniform() < n2 / (n1 + n2):
            theta1, grad1, logp1 = theta2, grad2, logp2
        s1 = int(s2 and _no_u_turn(theta_m, theta_p, r_m, r_p))
        n1 = n1 + n2
    return theta_m, r_m, grad_m, theta_p, r_p, grad_p, theta1, grad1, logp1, n1, s1


def nuts_transition(theta, logp, grad, eps, target, rng, max_depth=10):
    """One NUTS transition from ``theta``. Returns ``(theta, logp, grad, depth)``."""
    r0 = rng.standard_normal(len(theta))
    log_u = logp - 0.5 * r0 @ r0 - rng.exponential()
    theta_m = theta_p = theta
    r_m = r_p = r0
    grad_m = grad_p = grad
    n, s, depth = 1, 1, 0
    while s and depth < max_depth:
        v = 1 if rng.uniform() < 0.5 else -1
        if v == -1:
            (theta_m, r_m, grad_m, _, _, _,
             theta1, grad1, logp1, n1, s1) = _build_tree(theta_m, r_m, grad_m, log_u, v, depth,
                                                         eps, target, rng)
        else:
            (_, _, _, theta_p, r_p, grad_p,
             theta1, grad1, logp1, n1, s1) = _build_tree(theta_p, r_p, grad_p, log_u, v, depth,
                                                         eps, target, rng)
        if s1 and rng.uniform() < n1 / n:
            theta, logp, grad = theta1, logp1, grad1
        n += n1
        s = int(s1 and _no_u_turn(theta_m, theta_p, r_m, r_p))
        depth += 1
    return theta, logp, grad, depth


def run_chain(logp_and_grad, theta0, n_draws, eps, rng, max_depth=10):
    """Draw ``n_draws`` successive NUTS states starting from ``theta0``.

    Returns ``(draws, logp, depths, failed)`` where ``failed`` counts the
    transitions that met at least one numerical failure.
    """
    target = _Target(logp_and_grad)
    theta = np.asarray(theta0, dtype=float)
    logp, grad = target(theta)
    if not np.isfinite(logp):
        raise SamplingError("initial point has zero posterior density")
    draws = np.empty((n_draws, len(theta)))
    logps = np.empty(n_draws)
    depths = np.empty(n_draws, dtype=int)
    failed = 0
    for i in range(n_draws):
        before = target.failures
        theta, logp, grad, depths[i] = nuts_transition(theta, logp, grad, eps, target, rng,
                                                       max_depth)
        failed += target.failures > before
        draws[i] = theta
        logps[i] = logp
    return draws, logps, depths, failed


def _chain_start(objective, chain_id, seed, init_theta):
    if chain_id == 0 and init_theta is not None:
        return np.asarray(init_theta, dtype=float)
    rng = np.random.default_rng([seed, chain_id, 1])
    parts = []
    for c in COMPONENTS:
        size = objective.flags.sizes(objective.n)[c]
        base = np.zeros(size) if objective.flags[c] else np.full(size, objective.hyp.log_mean(c))
        parts.append(base + 0.1 * rng.standard_normal(size))
    return np.concatenate(parts)


def _run_chain_job(args):
    y, x, hyp, flags, factors, data_weight, cfg, chain_id, init_theta = args
    objective = WhitenedObjective(y, x, hyp, flags, factors, data_weight)
    theta0 = _chain_start(objective, chain_id, cfg.seed, init_theta)
    rng = np.random.default_rng([cfg.seed, chain_id])
    draws, logps, depths, failed = run_chain(objective, theta0, cfg.n_warmup + cfg.n_samples,
                                             cfg.step_size, rng, cfg.max_tree_depth)
    accepted = np.any(np.diff(draws, axis=0) != 0, axis=1)
    return {"draws": draws[cfg.n_warmup:], "logp": logps[cfg.n_warmup:],
            "depth": depths[cfg.n_warmup:], "failed": failed,
            "moved": float(np.mean(accepted)) if len(accepted) else 0.0}


def sample_posterior(y, x, hyp, flags, cfg=NutsConfig(), init=None, data_weight=1.0,
                     factors=None, workers=1):
    """Sample the latent posterior with NUTS in whitened coordinates.

    ``init`` optionally gives a natural-frame LatentState (typically the
    MAP) to start chain 0 from.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if factors is None:
        factors = build_prior_factors(x, hyp)
    init_theta = None
    if init is not None:
        init_theta = whiten(init, factors, hyp, flags).to_vector()
    jobs = [(y, x, hyp, flags, factors, data_weight, cfg, k, init_theta)
            for k in range(cfg.n_chains)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chain_job, jobs))
    else:
        results = [_run_chain_job(job) for job in jobs]

    total = cfg.n_chains * (cfg.n_warmup + cfg.n_samples)
    failed = sum(r["failed"] for r in results)
    if failed > 0.5 * total:
        raise SamplingError(f"{failed} of {total} transitions hit numerical failures",
                            {"failed_per_chain": [r["failed"] for r in results]})

    objective = WhitenedObjective(y, x, hyp, flags, factors, data_weight)
    whitened = np.concatenate([r["draws"] for r in results])
    return SampleSet(
        states=[objective.state(t) for t in whitened],
        mll=np.concatenate([r["logp"] for r in results]),
        chain=np.repeat(np.arange(cfg.n_chains), cfg.n_samples),
        index=np.tile(np.arange(cfg.n_samples), cfg.n_chains),
        flags=flags, whitened=whitened,
        acceptance={"moved_fraction": [r["moved"] for r in results],
                    "failed_transitions": [r["failed"] for r in results]},
        tree_depth=np.concatenate([r["depth"] for r in results]))


def posterior_mixture(samples, y, x, thin=1):
    """Uniform mixture of the per-sample Gaussian posteriors of f at ``x``."""
    if len(samples) == 0:
        raise ValueError("empty sample set")
    kept = samples.thin(thin) if thin > 1 else samples
    means, covs = [], []
    for state in kept.states:
        mean, cov = gaussian_posterior(y, x, state)
        means.append(mean)
        covs.append(cov)
    n = len(x)
    noise = np.array([np.exp(2.0 * s.expanded("omega", n)) for s in kept.states])
    return PredictiveMixture(x=np.asarray(x, dtype=float), means=np.array(means),
                             covs=np.array(covs), noise_vars=noise)


# --- columnar text format ---------------------------------------------------

def _columns(flags, n):
    names = ["chain", "index", "mll"]
    for c in COMPONENTS:
        size = flags.sizes(n)[c]
        names += [f"{c}_{i}" for i in range(size)]
    return names


def write_samples(samples, fh, n):
    """Tab-separated draws: chain, index, mll, then natural-frame latents."""
    fh.write(f"# variant={samples.flags.name} n={n}\n")
    writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
    writer.writerow(_columns(samples.flags, n))
    for k, state in enumerate(samples.states):
        row = [int(samples.chain[k]), int(samples.index[k]), repr(float(samples.mll[k]))]
        row += [repr(float(v)) for v in state.to_vector()]
        writer.writerow(row)


def read_samples(fh):
    header = fh.readline()
    if not header.startswith("# "):
        raise ParseError("missing '# variant=... n=...' header", 1)
    meta = dict(item.split("=", 1) for item in header[2:].split())
    try:
        flags = VariantFlags.from_name(meta["variant"])
        n = int(meta["n"])
    except (KeyError, ValueError) as err:
        raise ParseError(f"bad sample header: {err}", 1) from err
    reader = csv.reader(fh, delimiter="\t")
    columns = next(reader)
    if columns != _columns(flags, n):
        raise ParseError("column names do not match the declared variant", 2)
    states, mlls, chains, idx = [], [], [], []
    for lineno, row in enumerate(reader, start=3):
        try:
            values = [float(v) for v in row]
        except ValueError as err:
            raise ParseError(f"non-numeric entry: {err}", lineno) from err
        if len(values) != len(columns):
            raise ParseError(f"expected {len(columns)} fields, got {len(values)}", lineno)
        chains.append(int(values[0]))
        idx.append(int(values[1]))
        mlls.append(values[2])
        states.append(LatentState.from_vector(values[3:], flags, n))
    return SampleSet(states=states, mll=np.array(mlls), chain=np.array(chains, dtype=int),
                     index=np.array(idx, dtype=int), flags=flags)


def samples_to_text(samples, n):
    buf = io.StringIO()
    write_samples(samples, buf, n)
    return buf.getvalue()
