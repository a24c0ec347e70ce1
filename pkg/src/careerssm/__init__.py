"""Latent-class local-level models for athletic performance panels with informative missingness."""

from .errors import CareerSSMError, NumericalError, ValidationError
from .estimator import LatentClassSSM, check_panel
from .gibbs import ChainConfig, PosteriorDraws, Priors, empirical_priors, run_chain
from .missingness import ModelVariant
from .panel import (
    CareerState,
    PerformancePanel,
    SplitPlan,
    derive_career_states,
    derive_careers,
    split_train_test,
    validate_panel,
)
from .predictive import NewRunnerPattern, prediction_bands, sample_predictive
from .scoring import crps_ensemble, interval_score, pairwise_compare, score_models
from .synthgen import GeneratorConfig, desk_config, generate

__version__ = "0.1.0"

__all__ = [
    "CareerSSMError", "NumericalError", "ValidationError", "LatentClassSSM", "check_panel",
    "ChainConfig", "PosteriorDraws", "Priors", "empirical_priors", "run_chain", "ModelVariant",
    "CareerState", "PerformancePanel", "SplitPlan", "derive_career_states", "derive_careers",
    "split_train_test", "validate_panel", "NewRunnerPattern", "prediction_bands",
    "sample_predictive", "crps_ensemble", "interval_score", "pairwise_compare", "score_models",
    "GeneratorConfig", "desk_config", "generate",
]
