"""Bayesian matrix completion with a Gibbs sampler under adaptive relaxed
spectral regularization, with Monte Carlo EM for the hyperparameters."""

__version__ = "0.1.0"

from .data import ObservedMatrix, parse_csv_triplets, parse_movielens, preprocess_eachmovie, read_ratings, split
from .errors import ConfigError, DataError, GasrError, NumericalError
from .evaluation import MetricReport, evaluate, nmae, rmse
from .gibbs import FactorState, Hyperparameters, gibbs_sweep, init_state, log_joint
from .mcem import SufficientStats, em_step
from .posterior import PosteriorAccumulator, RankEstimate, recover_rank
from .runner import FitResult, RunConfig, RunReport, fit, run_missing_rate_experiment
from .special import RngStream, digamma, trigamma
from .synthetic import SyntheticSpec, generate

__all__ = [
    "ObservedMatrix", "parse_csv_triplets", "parse_movielens", "preprocess_eachmovie",
    "read_ratings", "split",
    "ConfigError", "DataError", "GasrError", "NumericalError",
    "MetricReport", "evaluate", "nmae", "rmse",
    "FactorState", "Hyperparameters", "gibbs_sweep", "init_state", "log_joint",
    "SufficientStats", "em_step",
    "PosteriorAccumulator", "RankEstimate", "recover_rank",
    "FitResult", "RunConfig", "RunReport", "fit", "run_missing_rate_experiment",
    "RngStream", "digamma", "trigamma",
    "SyntheticSpec", "generate",
]
