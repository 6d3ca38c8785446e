"""Command-line interface.

    nsgp generate --name D_ell --seed 0 --out data.csv
    nsgp fit --method map --config run.cfg --data data.csv --out model.json
    nsgp predict --model model.json --targets grid.csv --out pred.csv
    nsgp evaluate --suite suite.cfg --out report.tsv
    nsgp reconstruct --data data.csv --out curve.tsv

Exit status is 0 on success, 2 for unreadable input and 3 when the
numerics fail (no restart converged to a finite value, sampler broke down).
"""
import argparse
import configparser
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from .exceptions import NumericalError, OptimizationError, ParseError, SamplingError
from .harness import (DATASET_NAMES, ExperimentConfig, NormParams, generate_dataset,
                      generate_raw, latent_reconstruction_error, load_csv, read_table,
                      run_experiment, write_dataset)
from .infer_hmc import NutsConfig, read_samples, sample_posterior, write_samples
from .infer_map import MapResult, fit_map
from .model import (VARIANTS, Hyperparams, LatentState, RunConfig, VariantFlags,
                    load_config, parse_config)
from .predict import mixture_moments, predict_hmc, predict_map

log = logging.getLogger("nsgp")

EXIT_PARSE = 2
EXIT_NUMERICAL = 3
MODEL_FORMAT = "nsgp-model/1"
Z95 = 1.959963984540054


def _floats(v):
    return [float(a) for a in np.atleast_1d(v)]


def _run_config(path, mu_in_log_domain=False):
    override = True if mu_in_log_domain else None
    if path:
        return load_config(path, override)
    return RunConfig(hyp=Hyperparams(mu_in_log_domain=bool(mu_in_log_domain)))


def experiment_config(run_cfg):
    """ExperimentConfig from the options of a parsed config file."""
    opts = run_cfg.options
    nuts_kw = {k: opts[k] for k in ("step_size", "max_tree_depth", "n_samples", "n_warmup",
                                    "n_chains") if k in opts}
    exp_kw = {k: opts[k] for k in ("restarts", "max_iters", "grad_tol", "s", "thin")
              if k in opts}
    try:
        nuts = NutsConfig(seed=run_cfg.seed, **nuts_kw)
        return ExperimentConfig(hyp=run_cfg.hyp, nuts=nuts, seed=run_cfg.seed, **exp_kw)
    except ValueError as err:
        raise ParseError(str(err)) from err


# --- generate ----------------------------------------------------------------

def cmd_generate(args):
    x, y, truth = generate_raw(args.name, args.n, args.seed)
    write_dataset(args.out, x, y, truth)
    return 0


# --- fit ---------------------------------------------------------------------

def _model_dict(method, run_cfg, ds, fit):
    return {
        "format": MODEL_FORMAT,
        "method": method,
        "variant": run_cfg.flags.name,
        "seed": run_cfg.seed,
        "hyperparams": asdict(run_cfg.hyp),
        "options": dict(sorted(run_cfg.options.items())),
        "norm": asdict(ds.norm),
        "x": _floats(ds.x_train),
        "y": _floats(ds.y_train),
        "mll": float(fit.mll.total),
        "state": {c: _floats(fit.state[c]) for c in ("ell", "sigma", "omega")},
    }


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def cmd_fit(args):
    run_cfg = _run_config(args.config, args.mu_in_log_domain)
    exp = experiment_config(run_cfg)
    ds = load_csv(args.data, fraction=args.train_fraction, seed=run_cfg.seed)
    fit = fit_map(ds.y_train, ds.x_train, exp.hyp, run_cfg.flags, exp.restarts, exp.max_iters,
                  exp.grad_tol, exp.seed)
    model = _model_dict(args.method, run_cfg, ds, fit)
    if args.method == "hmc":
        samples = sample_posterior(ds.y_train, ds.x_train, exp.hyp, run_cfg.flags, exp.nuts,
                                   init=fit.state)
        sample_path = args.out + ".samples.tsv"
        with open(sample_path, "w", newline="") as fh:
            write_samples(samples, fh, len(ds.x_train))
        model["samples"] = os.path.basename(sample_path)
        model["mean_sample_mll"] = float(np.mean(samples.mll))
    _write_json(args.out, model)
    return 0


# --- predict -----------------------------------------------------------------

def _load_model(path):
    try:
        with open(path) as fh:
            model = json.load(fh)
    except json.JSONDecodeError as err:
        raise ParseError(f"model file is not JSON: {err.msg}", err.lineno) from err
    if model.get("format") != MODEL_FORMAT:
        raise ParseError(f"not an {MODEL_FORMAT} file", 1)
    try:
        hyp = Hyperparams(**model["hyperparams"])
        flags = VariantFlags.from_name(model["variant"])
        norm = NormParams(**model["norm"])
        state = LatentState(**model["state"])
        x, y = np.array(model["x"], dtype=float), np.array(model["y"], dtype=float)
    except (KeyError, TypeError, ValueError) as err:
        raise ParseError(f"incomplete model file: {err}") from err
    return model, hyp, flags, norm, state, x, y


def cmd_predict(args):
    model, hyp, flags, norm, state, x, y = _load_model(args.model)
    targets = read_table(args.targets, required=("x",))["x"]
    x_star = norm.x_to_norm(targets)
    opts = model.get("options", {})
    s, seed = int(opts.get("s", 1)), int(model.get("seed", 0))
    if model["method"] == "hmc":
        sample_path = os.path.join(os.path.dirname(os.path.abspath(args.model)), model["samples"])
        with open(sample_path) as fh:
            samples = read_samples(fh)
        mix = predict_hmc(samples, y, x, x_star, hyp, s, seed, int(opts.get("thin", 10)))
    else:
        result = MapResult(state=state, mll=None, restarts_run=0, converged=True, iterations=0)
        mix = predict_map(result, y, x, x_star, hyp, flags, s, seed)
    mean, var = mixture_moments(mix)
    mean_raw = norm.y_from_norm(mean)
    var_raw = var * norm.y_scale ** 2
    sd = np.sqrt(np.clip(var_raw, 0.0, None))
    latents = {
        "ell": np.mean(np.exp(mix.latents["ell"]), axis=0) * norm.x_scale,
        "sigma": np.mean(np.exp(mix.latents["sigma"]), axis=0) * norm.y_scale,
        "omega": np.mean(np.exp(mix.latents["omega"]), axis=0) * norm.y_scale,
    }
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "mean", "var", "lower95", "upper95", "ell", "sigma", "omega"])
        for i, xi in enumerate(targets):
            w.writerow([repr(float(v)) for v in (
                xi, mean_raw[i], var_raw[i], mean_raw[i] - Z95 * sd[i], mean_raw[i] + Z95 * sd[i],
                latents["ell"][i], latents["sigma"][i], latents["omega"][i])])
    return 0


# --- evaluate ----------------------------------------------------------------

SUITE_KEYS = ("datasets", "variants", "inference", "fraction")


def parse_suite(text):
    """A config file plus ``datasets``, ``variants``, ``inference`` and ``fraction``.

    ``datasets`` lists generator names or CSV paths; ``variants`` lists
    variant names or ``all``.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string("[suite]\n" + text)
    except configparser.Error as err:
        raise ParseError(str(err).splitlines()[0]) from err
    section = dict(parser["suite"])
    suite = {k: section.pop(k) for k in SUITE_KEYS if k in section}
    run_cfg = parse_config("\n".join(f"{k} = {v}" for k, v in section.items()))
    names = [d.strip() for d in suite.get("datasets", ",".join(DATASET_NAMES)).split(",")
             if d.strip()]
    raw_variants = suite.get("variants", "all").strip()
    try:
        variants = (VARIANTS if raw_variants == "all" else
                    tuple(VariantFlags.from_name(v.strip()) for v in raw_variants.split(",")))
    except ValueError as err:
        raise ParseError(str(err)) from err
    inference = suite.get("inference", "map").strip()
    if inference not in ("map", "hmc"):
        raise ParseError(f"inference must be map or hmc, not {inference!r}")
    try:
        fraction = float(suite.get("fraction", 0.5))
    except ValueError as err:
        raise ParseError(f"bad fraction: {suite['fraction']!r}") from err
    return names, variants, inference, fraction, run_cfg


def cmd_evaluate(args):
    with open(args.suite) as fh:
        names, variants, inference, fraction, run_cfg = parse_suite(fh.read())
    base = os.path.dirname(os.path.abspath(args.suite))
    datasets = []
    for name in names:
        if name in DATASET_NAMES:
            datasets.append(generate_dataset(name, seed=run_cfg.seed, fraction=fraction))
        else:
            path = name if os.path.isabs(name) else os.path.join(base, name)
            datasets.append(load_csv(path, fraction=fraction, seed=run_cfg.seed, name=name))
    report = run_experiment(datasets, variants, inference, experiment_config(run_cfg))
    with open(args.out, "w") as fh:
        fh.write(report.to_tsv(runtime=False))
    failed = [r for r in report.rows if r["status"] != "ok"]
    return EXIT_NUMERICAL if failed and len(failed) == len(report.rows) else 0


# --- reconstruct -------------------------------------------------------------

def cmd_reconstruct(args):
    run_cfg = _run_config(args.config, args.mu_in_log_domain)
    ds = load_csv(args.data, fraction=1.0, seed=run_cfg.seed)
    if not ds.truth or not all(c in ds.truth for c in ("ell", "sigma", "omega")):
        raise ParseError(f"{args.data}.truth.csv with ell, sigma and omega columns is required")
    sizes = [len(ds.x)] if not args.sizes else [int(s) for s in args.sizes.split(",")]
    rows = latent_reconstruction_error(ds, sizes, experiment_config(run_cfg), run_cfg.flags)
    cols = ("size", "rmse_ell", "rmse_sigma", "rmse_omega", "rmse_f", "mll")
    with open(args.out, "w") as fh:
        fh.write("\t".join(cols) + "\n")
        for row in rows:
            fh.write("\t".join(str(row[c]) if c == "size" else f"{row[c]:.6f}" for c in cols) + "\n")
    return 0


# --- entry point -------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="nsgp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset as CSV")
    g.add_argument("--name", required=True, choices=DATASET_NAMES)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=None, help="number of points (default per dataset)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit a model to an x,y CSV")
    f.add_argument("--method", choices=("map", "hmc"), default="map")
    f.add_argument("--config", help="key = value configuration file")
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True, help="model JSON (hmc also writes OUT.samples.tsv)")
    f.add_argument("--train-fraction", type=float, default=1.0,
                   help="fit on a random fraction of the rows (default: all)")
    f.add_argument("--mu-in-log-domain", action="store_true",
                   help="read mu_* as log-scale prior means")
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("predict", help="predict at target inputs from a fitted model")
    r.add_argument("--model", required=True)
    r.add_argument("--targets", required=True, help="CSV with an x column")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="score variants on datasets (TSV report)")
    e.add_argument("--suite", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("reconstruct", help="latent RMSE against the truth sidecar")
    c.add_argument("--data", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--config")
    c.add_argument("--sizes", help="comma-separated subsample sizes (default: all points)")
    c.add_argument("--mu-in-log-domain", action="store_true")
    c.set_defaults(func=cmd_reconstruct)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with np.errstate(over="ignore", under="ignore"):
            return args.func(args)
    except ParseError as err:
        print(f"nsgp: parse error: {err}", file=sys.stderr)
        return EXIT_PARSE
    except (OSError, ValueError) as err:
        print(f"nsgp: {err}", file=sys.stderr)
        return EXIT_PARSE
    except (NumericalError, OptimizationError, SamplingError) as err:
        print(f"nsgp: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
