"""Fully nonstationary, heteroscedastic Gaussian process regression.

Noise, signal variance and lengthscale are latent log-GPs; inference is
by MAP gradient ascent or NUTS in whitened coordinates.
"""
from .exceptions import NumericalError, OptimizationError, ParseError, SamplingError
from .harness import Dataset, EvalReport, generate_dataset, load_csv, nlpd, run_experiment
from .infer_hmc import NutsConfig, SampleSet, sample_posterior
from .infer_map import MapResult, fit_map, map_function_posterior
from .kernel import nonstationary_kernel, se_kernel
from .model import (VARIANTS, Hyperparams, LatentState, VariantFlags, build_prior_factors,
                    parse_config, unwhiten, whiten)
from .objective import WhitenedObjective, mll, mll_gradient
from .predict import PredictiveMixture, mixture_moments, predict_hmc, predict_map

__version__ = "0.1.0"
