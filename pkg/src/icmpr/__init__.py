"""Multi-parameter regression Weibull models with gamma frailty for interval-censored data."""

from .data import Dataset
from .errors import (
    DataError,
    DomainError,
    IcmprError,
    InvalidCovarianceError,
    InvalidParameterError,
    NonIdentifiableError,
    SpecError,
)
from .estimator import FitOptions, FitResult, fit, initialize, predict_median, wald_tests
from .likelihood import log_interval_prob, log_likelihood, observed_information, score
from .model import (
    ModelSpec,
    ModelType,
    ParamTriple,
    Theta,
    cum_hazard,
    evaluate_parameters,
    hazard,
    marginal_hazard,
    marginal_survivor,
    median_time,
)
from .selection import fit_model_grid, information_criteria, stepwise
from .turnbull import turnbull_fit, turnbull_support

__version__ = "0.1.0"
