"""Hyperparameters, variant flags, latent state and prior whitening.

Latents live in log space. A nonstationary component is a length-n vector
at the training inputs with prior N(mu, K_c), K_c a squared exponential
matrix. A stationary component is one scalar with prior N(mu, alpha_c^2)
and is replicated over the inputs when the kernel is built.

Whitening maps a nonstationary latent ``v`` to ``L_c^{-1} (v - mu)`` with
``K_c = L_c L_c^T``; stationary scalars pass through unchanged.
"""
import configparser
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import ParseError
from .kernel import jittered_cholesky, se_kernel

COMPONENTS = ("ell", "sigma", "omega")
NATURAL = "natural"
WHITENED = "whitened"


@dataclass(frozen=True)
class Hyperparams:
    """The nine fixed prior parameters.

    ``mu_*`` are given on the original (positive) scale and the prior mean
    of the log-latent is ``log(mu)``, unless ``mu_in_log_domain`` is set,
    in which case they are used as log-means directly.
    """

    mu_ell: float = 0.2
    mu_sigma: float = 0.5
    mu_omega: float = 0.1
    alpha_ell: float = 1.0
    alpha_sigma: float = 1.0
    alpha_omega: float = 1.0
    beta_ell: float = 0.1
    beta_sigma: float = 0.1
    beta_omega: float = 0.2
    mu_in_log_domain: bool = False

    def __post_init__(self):
        for c in COMPONENTS:
            if not self.alpha(c) > 0 or not self.beta(c) > 0:
                raise ValueError(f"alpha_{c} and beta_{c} must be strictly positive")
            if not self.mu_in_log_domain and not getattr(self, f"mu_{c}") > 0:
                raise ValueError(f"mu_{c} must be positive when given on the original scale")

    def alpha(self, c):
        return getattr(self, f"alpha_{c}")

    def beta(self, c):
        return getattr(self, f"beta_{c}")

    def log_mean(self, c):
        mu = getattr(self, f"mu_{c}")
        return float(mu) if self.mu_in_log_domain else float(np.log(mu))


@dataclass(frozen=True)
class VariantFlags:
    """Which latents are input dependent. All False is the vanilla GP."""

    omega: bool = False
    sigma: bool = False
    ell: bool = False

    def __getitem__(self, c):
        return getattr(self, c)

    @property
    def name(self):
        parts = [c for c in ("omega", "sigma", "ell") if self[c]]
        return "-".join(parts) if parts else "gp"

    @classmethod
    def from_name(cls, name):
        if name == "gp":
            return cls()
        parts = name.split("-")
        unknown = set(parts) - set(COMPONENTS)
        if unknown or not parts:
            raise ValueError(f"unknown variant name {name!r}")
        return cls(**{p: True for p in parts})

    def sizes(self, n):
        return {c: (n if self[c] else 1) for c in COMPONENTS}


# Model variants compared in the experiments, in report order.
VARIANTS = tuple(VariantFlags.from_name(s) for s in (
    "gp", "omega", "sigma", "ell", "omega-sigma", "omega-ell", "omega-sigma-ell"))

ALL_FLAGS = tuple(VariantFlags(omega=o, sigma=s, ell=e)
                  for o in (False, True) for s in (False, True) for e in (False, True))


@dataclass(frozen=True)
class LatentState:
    """Log-latents ``ell``, ``sigma``, ``omega`` in one coordinate frame.

    Each is a length-n vector (nonstationary) or a length-1 array holding
    the stationary scalar.
    """

    ell: np.ndarray
    sigma: np.ndarray
    omega: np.ndarray
    frame: str = NATURAL

    def __post_init__(self):
        if self.frame not in (NATURAL, WHITENED):
            raise ValueError(f"unknown frame {self.frame!r}")
        for c in COMPONENTS:
            object.__setattr__(self, c, np.atleast_1d(np.asarray(getattr(self, c), dtype=float)))

    def __getitem__(self, c):
        return getattr(self, c)

    def expanded(self, c, n):
        v = self[c]
        if len(v) == n:
            return v
        if len(v) == 1:
            return np.full(n, v[0])
        raise ValueError(f"{c} has length {len(v)}, cannot expand to {n}")

    def positive(self, n):
        """``(ell, sigma, omega)`` on the original scale, each of length n."""
        return tuple(np.exp(self.expanded(c, n)) for c in COMPONENTS)

    def to_vector(self):
        return np.concatenate([self.ell, self.sigma, self.omega])

    @classmethod
    def from_vector(cls, vec, flags, n, frame=NATURAL):
        sizes = flags.sizes(n)
        vec = np.asarray(vec, dtype=float)
        if len(vec) != sum(sizes.values()):
            raise ValueError(f"vector of length {len(vec)} does not match flags/n")
        parts, at = {}, 0
        for c in COMPONENTS:
            parts[c] = vec[at:at + sizes[c]].copy()
            at += sizes[c]
        return cls(frame=frame, **parts)

    @classmethod
    def at_prior_mean(cls, hyp, flags, n):
        return cls(**{c: np.full(flags.sizes(n)[c], hyp.log_mean(c)) for c in COMPONENTS})


def dimension(flags, n):
    return sum(flags.sizes(n).values())


@dataclass(frozen=True)
class PriorFactors:
    """Cholesky factors of the three (jittered) prior covariances."""

    x: np.ndarray
    ell: np.ndarray
    sigma: np.ndarray
    omega: np.ndarray
    jitter: dict = field(default_factory=dict)

    def __getitem__(self, c):
        return getattr(self, c)


def build_prior_factors(x, hyp):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if len(x) < 1:
        raise ValueError("need at least one input")
    factors, jitter = {}, {}
    for c in COMPONENTS:
        k = se_kernel(x, x, hyp.alpha(c), hyp.beta(c))
        # n=1 factor is exactly alpha
        factors[c], jitter[c] = jittered_cholesky(k, try_plain=len(x) == 1)
    return PriorFactors(x=x, jitter=jitter, **factors)


def _check_lengths(state, factors):
    n = len(factors.x)
    for c in COMPONENTS:
        if len(state[c]) not in (1, n):
            raise ValueError(f"{c} has length {len(state[c])}, expected 1 or {n}")
    return n


def whiten(state, factors, hyp, flags):
    if state.frame != NATURAL:
        raise ValueError("whiten expects a state in the natural frame")
    n = _check_lengths(state, factors)
    out = {}
    for c in COMPONENTS:
        v = state[c]
        if flags[c] and len(v) == n:
            v = solve_triangular(factors[c], v - hyp.log_mean(c), lower=True)
        out[c] = v
    return LatentState(frame=WHITENED, **out)


def unwhiten(state, factors, hyp, flags):
    if state.frame != WHITENED:
        raise ValueError("unwhiten expects a state in the whitened frame")
    n = _check_lengths(state, factors)
    out = {}
    for c in COMPONENTS:
        v = state[c]
        if flags[c] and len(v) == n:
            v = hyp.log_mean(c) + factors[c] @ v
        out[c] = v
    return LatentState(frame=NATURAL, **out)


def whitened_gradient(g_natural, factors, component):
    """Chain rule through ``v = mu + L w``: returns ``L^T g``."""
    g_natural = np.asarray(g_natural, dtype=float)
    chol = factors[component]
    if chol.shape[0] != len(g_natural):
        raise ValueError(f"gradient of length {len(g_natural)} does not match factor {chol.shape}")
    return chol.T @ g_natural


# --- configuration file -----------------------------------------------------

_FLOAT_KEYS = ("mu_ell", "mu_sigma", "mu_omega", "alpha_ell", "alpha_sigma", "alpha_omega",
               "beta_ell", "beta_sigma", "beta_omega")
_BOOL_KEYS = ("nonstat_omega", "nonstat_sigma", "nonstat_ell", "mu_in_log_domain")
_INT_KEYS = ("seed", "restarts", "max_iters", "max_tree_depth", "n_samples", "n_warmup",
             "n_chains", "thin", "s")
_OTHER_FLOAT_KEYS = ("grad_tol", "step_size")


@dataclass
class RunConfig:
    """Everything a key-value config file can set."""

    hyp: Hyperparams = field(default_factory=Hyperparams)
    flags: VariantFlags = field(default_factory=lambda: VariantFlags(True, True, True))
    seed: int = 0
    options: dict = field(default_factory=dict)


def parse_config(text, mu_in_log_domain=None):
    """Parse ``key = value`` lines (``#`` comments) into a RunConfig.

    A non-None ``mu_in_log_domain`` overrides the file's setting before the
    prior means are validated.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string("[nsgp]\n" + text)
    except configparser.Error as err:
        line = getattr(err, "lineno", None)
        raise ParseError(str(err).splitlines()[0], None if line is None else line - 1) from err
    section = parser["nsgp"]
    hyp_kw, flag_kw, options, seed = {}, {}, {}, 0
    for key, raw in section.items():
        try:
            if key in _FLOAT_KEYS:
                hyp_kw[key] = float(raw)
            elif key in _BOOL_KEYS:
                value = section.getboolean(key)
                if key == "mu_in_log_domain":
                    hyp_kw[key] = value
                else:
                    flag_kw[key.removeprefix("nonstat_")] = value
            elif key == "seed":
                seed = int(raw)
            elif key in _INT_KEYS:
                options[key] = int(raw)
            elif key in _OTHER_FLOAT_KEYS:
                options[key] = float(raw)
            else:
                raise ParseError(f"unknown configuration key {key!r}")
        except ValueError as err:
            if isinstance(err, ParseError):
                raise
            raise ParseError(f"bad value for {key!r}: {raw!r}") from err
    if mu_in_log_domain is not None:
        hyp_kw["mu_in_log_domain"] = mu_in_log_domain
    try:
        hyp = Hyperparams(**hyp_kw)
    except ValueError as err:
        raise ParseError(str(err)) from err
    flags = replace(VariantFlags(True, True, True), **flag_kw)
    return RunConfig(hyp=hyp, flags=flags, seed=seed, options=options)


def load_config(path, mu_in_log_domain=None):
    with open(path) as fh:
        return parse_config(fh.read(), mu_in_log_domain)
