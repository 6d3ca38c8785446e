"""Datasets, metrics and the experiment runner.

Synthetic generators draw f from the nonstationary GP with known smooth
log-latents on a regular grid over [0, 1]; the jump set adds a step at
t = 0.4 to a smooth curve. All modelling happens on normalized data:
inputs scaled to [0, 1], outputs to [-1, 1].
"""
import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .exceptions import NumericalError, OptimizationError, ParseError, SamplingError
from .infer_hmc import NutsConfig, sample_posterior
from .infer_map import fit_map, gaussian_posterior
from .kernel import jittered_cholesky, nonstationary_kernel
from .model import COMPONENTS, VARIANTS, Hyperparams, VariantFlags
from .predict import mixture_moments, predict_hmc, predict_map

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NormParams:
    x_offset: float = 0.0
    x_scale: float = 1.0
    y_offset: float = 0.0
    y_scale: float = 1.0

    @classmethod
    def fit(cls, x, y):
        x_range = float(np.max(x) - np.min(x))
        y_half = 0.5 * float(np.max(y) - np.min(y))
        return cls(x_offset=float(np.min(x)), x_scale=x_range if x_range > 0 else 1.0,
                   y_offset=0.5 * float(np.max(y) + np.min(y)),
                   y_scale=y_half if y_half > 0 else 1.0)

    def x_to_norm(self, x):
        return (np.asarray(x, dtype=float) - self.x_offset) / self.x_scale

    def x_from_norm(self, x):
        return np.asarray(x, dtype=float) * self.x_scale + self.x_offset

    def y_to_norm(self, y):
        return (np.asarray(y, dtype=float) - self.y_offset) / self.y_scale

    def y_from_norm(self, y):
        return np.asarray(y, dtype=float) * self.y_scale + self.y_offset


@dataclass
class Dataset:
    """Raw and normalized data with a train/test split.

    ``truth`` (synthetic data only) maps ``f``, ``ell``, ``sigma``,
    ``omega`` to raw-scale values at ``x``; the latents are absent when
    the generator has no GP truth for them.
    """

    name: str
    x: np.ndarray
    y: np.ndarray
    norm: NormParams
    train: np.ndarray
    test: np.ndarray
    truth: dict = None

    @property
    def x_norm(self):
        return self.norm.x_to_norm(self.x)

    @property
    def y_norm(self):
        return self.norm.y_to_norm(self.y)

    @property
    def x_train(self):
        return self.x_norm[self.train]

    @property
    def y_train(self):
        return self.y_norm[self.train]

    @property
    def x_test(self):
        return self.x_norm[self.test]

    @property
    def y_test(self):
        return self.y_norm[self.test]

    def truth_log_latents(self):
        """True log-latents at ``x`` in normalized units."""
        if not self.truth or not all(c in self.truth for c in COMPONENTS):
            raise ValueError(f"dataset {self.name!r} carries no latent truth")
        return {"ell": np.log(self.truth["ell"] / self.norm.x_scale),
                "sigma": np.log(self.truth["sigma"] / self.norm.y_scale),
                "omega": np.log(self.truth["omega"] / self.norm.y_scale)}


def make_dataset(name, x, y, truth=None, fraction=0.5, seed=0):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ds = Dataset(name=name, x=x, y=y, norm=NormParams.fit(x, y),
                 train=np.arange(len(x)), test=np.array([], dtype=int), truth=truth)
    return split(ds, fraction, seed) if fraction < 1 else ds


def split(dataset, fraction=0.5, seed=0):
    """Uniform train/test split; the training set has ceil(fraction * n) points."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    n = len(dataset.x)
    n_train = min(max(math.ceil(fraction * n - 1e-9), 1), n - 1) if n > 1 else n
    perm = np.random.default_rng(seed).permutation(n)
    return replace(dataset, train=np.sort(perm[:n_train]), test=np.sort(perm[n_train:]))


# --- synthetic generators ----------------------------------------------------

def _const(value):
    return lambda t: np.full_like(t, np.log(value))


def _wave(center, amplitude, phase=0.0):
    return lambda t: np.log(center) + amplitude * np.sin(2 * np.pi * t + phase)


ELL_FLAT, SIGMA_FLAT, OMEGA_FLAT = _const(0.1), _const(1.0), _const(0.15)
ELL_WAVE = _wave(0.08, 1.2)
SIGMA_WAVE = _wave(1.0, 0.8, phase=1.0)
OMEGA_WAVE = _wave(0.15, 1.2, phase=np.pi / 2)
# milder waves for the three-way set, kept within about one prior sd of
# the prior means so the latents stay recoverable (max/min ratio 3.3)
ELL_MILD = _wave(0.12, 0.6)
SIGMA_MILD = _wave(1.0, 0.6, phase=1.0)
OMEGA_MILD = _wave(0.15, 0.6, phase=np.pi / 2)

# name -> (default n, log ell(t), log sigma(t), log omega(t))
GENERATORS = {
    "D_sigma": (100, ELL_FLAT, SIGMA_WAVE, OMEGA_FLAT),
    "D_ell": (150, ELL_WAVE, SIGMA_FLAT, OMEGA_FLAT),
    "D_omega_sigma": (100, ELL_FLAT, SIGMA_WAVE, OMEGA_WAVE),
    "D_omega_ell": (150, ELL_WAVE, SIGMA_FLAT, OMEGA_WAVE),
    "D_omega_sigma_ell": (90, ELL_MILD, SIGMA_MILD, OMEGA_MILD),
}
JUMP_N = 101
JUMP_AT = 0.4
JUMP_NOISE = 0.1
DATASET_NAMES = tuple(GENERATORS) + ("J",)


def _jump_signal(t):
    return np.sin(2 * np.pi * t) + 2.5 * (t >= JUMP_AT)


def generate_raw(name, n=None, seed=0):
    """Raw ``(x, y, truth)`` for a named synthetic dataset."""
    rng = np.random.default_rng(seed)
    if name == "J":
        n = n or JUMP_N
        t = np.linspace(0.0, 1.0, n)
        f = _jump_signal(t)
        omega = np.full(n, JUMP_NOISE)
        return t, f + omega * rng.standard_normal(n), {"f": f, "omega": omega}
    if name not in GENERATORS:
        raise ValueError(f"unknown dataset {name!r}; choose from {', '.join(DATASET_NAMES)}")
    default_n, log_ell, log_sigma, log_omega = GENERATORS[name]
    n = n or default_n
    t = np.linspace(0.0, 1.0, n)
    ell, sigma, omega = np.exp(log_ell(t)), np.exp(log_sigma(t)), np.exp(log_omega(t))
    kf = nonstationary_kernel(t, t, ell, ell, sigma, sigma)
    chol, _ = jittered_cholesky(kf)
    f = chol @ rng.standard_normal(n)
    y = f + omega * rng.standard_normal(n)
    return t, y, {"f": f, "ell": ell, "sigma": sigma, "omega": omega}


def generate_dataset(name, n=None, seed=0, fraction=0.5):
    x, y, truth = generate_raw(name, n, seed)
    return make_dataset(name, x, y, truth, fraction, seed)


# --- CSV ---------------------------------------------------------------------

def read_table(path, required=("x", "y")):
    """Numeric CSV with a header naming at least ``required``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file", 1)
    header = [h.strip() for h in rows[0]]
    missing = [c for c in required if c not in header]
    if missing:
        raise ParseError(f"header lacks column(s) {', '.join(missing)}", 1)
    columns = {h: [] for h in header}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
        for h, cell in zip(header, row):
            try:
                value = float(cell)
            except ValueError:
                raise ParseError(f"not a number: {cell!r}", lineno) from None
            if not math.isfinite(value):
                raise ParseError(f"non-finite value {cell!r}", lineno)
            columns[h].append(value)
    return {h: np.array(v) for h, v in columns.items()}


def load_csv(path, fraction=0.5, seed=0, name=None):
    """Load an ``x,y`` CSV, normalize it and split it.

    ``fraction=1`` keeps every point for training. A ``<path>.truth.csv``
    sidecar written by :func:`write_dataset` is picked up if present.
    """
    table = read_table(path)
    if len(table["x"]) < 2:
        raise ParseError("need at least two data rows")
    truth = None
    try:
        side = read_table(f"{path}.truth.csv", required=("x",))
    except FileNotFoundError:
        pass
    else:
        truth = {k: v for k, v in side.items() if k in ("f",) + COMPONENTS}
    return make_dataset(name or str(path), table["x"], table["y"], truth, fraction, seed)


def _fmt(v):
    return repr(float(v))


def write_dataset(path, x, y, truth=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y"])
        w.writerows([_fmt(a), _fmt(b)] for a, b in zip(x, y))
    if truth:
        keys = [k for k in ("f",) + COMPONENTS if k in truth]
        with open(f"{path}.truth.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x"] + keys)
            for i, xi in enumerate(x):
                w.writerow([_fmt(xi)] + [_fmt(truth[k][i]) for k in keys])


# --- metrics -----------------------------------------------------------------

def mse(y_test, mean):
    y_test, mean = np.asarray(y_test, dtype=float), np.asarray(mean, dtype=float)
    if y_test.shape != mean.shape:
        raise ValueError("observations and predictions differ in length")
    return float(np.mean((y_test - mean) ** 2))


def nlpd(y_test, mix):
    """Mean negative log density of observations under the mixture plus noise."""
    y_test = np.asarray(y_test, dtype=float)
    if mix.means.shape[1] != len(y_test):
        raise ValueError("observations and predictions differ in length")
    var = np.diagonal(mix.covs, axis1=1, axis2=2) + mix.noise_vars
    var = np.clip(var, 1e-300, None)
    logpdf = -0.5 * (np.log(2 * np.pi * var) + (y_test - mix.means) ** 2 / var)
    per_point = logsumexp(logpdf, axis=0) - np.log(len(mix))
    return float(-np.mean(per_point))


# --- experiments ---------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    hyp: Hyperparams = Hyperparams()
    restarts: int = 10
    max_iters: int = 2000
    grad_tol: float = 1e-5
    nuts: NutsConfig = NutsConfig()
    s: int = 1
    thin: int = 10
    seed: int = 0
    init_at_map: bool = True


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    COLUMNS = ("dataset", "variant", "inference", "seed", "mll", "mse", "nlpd", "status")

    def to_tsv(self, runtime=False):
        cols = list(self.COLUMNS) + (["runtime"] if runtime else [])
        lines = ["\t".join(cols)]
        for row in self.rows:
            cells = []
            for c in cols:
                v = row.get(c)
                cells.append(f"{v:.6f}" if isinstance(v, float) else str(v))
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"

    def lookup(self, dataset, variant):
        for row in self.rows:
            if row["dataset"] == dataset and row["variant"] == variant:
                return row
        raise KeyError((dataset, variant))


def fit_and_score(ds, flags, inference, cfg):
    """Fit one variant on the training split and score the test split.

    Returns ``(mll, mse, nlpd, mixture, fit)``.
    """
    result = fit_map(ds.y_train, ds.x_train, cfg.hyp, flags, cfg.restarts, cfg.max_iters,
                     cfg.grad_tol, cfg.seed)
    if inference == "map":
        mix = predict_map(result, ds.y_train, ds.x_train, ds.x_test, cfg.hyp, flags, cfg.s,
                          cfg.seed)
        fit, mll_value = result, result.mll.total
    elif inference == "hmc":
        fit = sample_posterior(ds.y_train, ds.x_train, cfg.hyp, flags, cfg.nuts,
                               init=result.state if cfg.init_at_map else None)
        mix = predict_hmc(fit, ds.y_train, ds.x_train, ds.x_test, cfg.hyp, cfg.s, cfg.seed,
                          cfg.thin)
        mll_value = float(np.mean(fit.mll))
    else:
        raise ValueError(f"unknown inference {inference!r}")
    mean, _ = mixture_moments(mix)
    return mll_value, mse(ds.y_test, mean), nlpd(ds.y_test, mix), mix, fit


def run_experiment(datasets, variants=VARIANTS, inference="map", config=ExperimentConfig()):
    """Evaluate every (dataset, variant) cell; failures are recorded, not raised."""
    report = EvalReport()
    for ds in datasets:
        for flags in variants:
            row = {"dataset": ds.name, "variant": flags.name, "inference": inference,
                   "seed": config.seed}
            start = time.perf_counter()
            try:
                mll_value, err, score, _, _ = fit_and_score(ds, flags, inference, config)
                row.update(mll=mll_value, mse=err, nlpd=score, status="ok")
            except (NumericalError, OptimizationError, SamplingError) as exc:
                log.warning("cell %s/%s failed: %s", ds.name, flags.name, exc)
                row.update(mll=float("nan"), mse=float("nan"), nlpd=float("nan"),
                           status=f"failed: {type(exc).__name__}")
            row["runtime"] = time.perf_counter() - start
            report.rows.append(row)
    return report


def latent_rmse(state, truth_log, idx=None):
    """RMSE between fitted and true log-latents at the training inputs."""
    out = {}
    for c in COMPONENTS:
        true = truth_log[c] if idx is None else truth_log[c][idx]
        out[c] = float(np.sqrt(np.mean((state.expanded(c, len(true)) - true) ** 2)))
    return out


def latent_reconstruction_error(dataset, sizes, config=ExperimentConfig(),
                                flags=VariantFlags(True, True, True)):
    """Per-size RMSE of the fitted log-latents (and f) against the truth.

    Subsamples are nested: each size takes a prefix of one fixed random
    permutation of the data.
    """
    truth_log = dataset.truth_log_latents()
    n = len(dataset.x)
    perm = np.random.default_rng(config.seed).permutation(n)
    f_true = dataset.norm.y_to_norm(dataset.truth["f"])
    rows = []
    for size in sizes:
        if not 2 <= size <= n:
            raise ValueError(f"subsample size {size} outside [2, {n}]")
        idx = np.sort(perm[:size])
        x, y = dataset.x_norm[idx], dataset.y_norm[idx]
        result = fit_map(y, x, config.hyp, flags, config.restarts, config.max_iters,
                         config.grad_tol, config.seed)
        errs = latent_rmse(result.state, truth_log, idx)
        mean, _ = gaussian_posterior(y, x, result.state)
        rows.append({"size": int(size), "rmse_ell": errs["ell"], "rmse_sigma": errs["sigma"],
                     "rmse_omega": errs["omega"],
                     "rmse_f": float(np.sqrt(np.mean((mean - f_true[idx]) ** 2))),
                     "mll": result.mll.total, "fit": result, "idx": idx})
    return rows
