"""Bias-corrected maximum likelihood for heteroskedastic errors-in-variables regression."""

from ._backend import BACKEND
from .bias import BiasReport, bias_mu_i, bias_psi, bias_sigma_i, bias_vector, correct, var_mu_i
from .errors import (
    DegenerateData,
    DimensionError,
    EIVError,
    NonConvergence,
    NonPDCovariance,
    ParseError,
    SingularInformation,
    SizeGuard,
    TooManyFailures,
)
from .estimator import FitConfig, FitResult, fit, initial_theta, standard_errors
from .likelihood import LikelihoodBundle, evaluate, fisher_information, log_likelihood, score
from .model import (
    Dataset,
    ModelDims,
    Observation,
    Theta,
    mean_and_cov,
    moment_derivatives,
    pack_theta,
    unpack_theta,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BiasReport",
    "Dataset",
    "DegenerateData",
    "DimensionError",
    "EIVError",
    "FitConfig",
    "FitResult",
    "LikelihoodBundle",
    "ModelDims",
    "NonConvergence",
    "NonPDCovariance",
    "Observation",
    "ParseError",
    "SingularInformation",
    "SizeGuard",
    "Theta",
    "TooManyFailures",
    "bias_mu_i",
    "bias_psi",
    "bias_sigma_i",
    "bias_vector",
    "correct",
    "evaluate",
    "fisher_information",
    "fit",
    "initial_theta",
    "log_likelihood",
    "mean_and_cov",
    "moment_derivatives",
    "pack_theta",
    "score",
    "standard_errors",
    "unpack_theta",
    "var_mu_i",
]
