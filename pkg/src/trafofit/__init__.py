"""Conditional transformation models: F(y|x) = F_Z(h(y|x)) with monotone h.

Responses may be continuous, counts, ordinal or censored; the shift and
interacting predictors may hold linear, spline, factor, lasso, neural-network
and autoregressive terms.
"""

from .bases import BasisSpec, register_custom_basis
from .estimator import (
    BoxCoxNN,
    ColrNN,
    CoxphNN,
    LehmannNN,
    LmNN,
    PolrNN,
    SurvregNN,
    TransformationModel,
    cotramNN,
)
from .formula import FormulaError, ModelSpec, Term, parse_formula, parse_ontram
from .latent import get_latent
from .loss import ResponseValue, encode_response, log_lik
from .model import CompiledModel, TrafoOptions, compile_model, constrain_theta, load_model
from .simulate import simulate
from .timeseries import build_lags
from .train import (
    EarlyStopping,
    EnsembleModel,
    FitConfig,
    FitHistory,
    ReduceLROnPlateau,
    WeightControl,
    cross_validate,
    ensemble,
    fit,
)

__version__ = "0.1.0"

__all__ = [
    "BasisSpec",
    "register_custom_basis",
    "TransformationModel",
    "BoxCoxNN",
    "ColrNN",
    "cotramNN",
    "CoxphNN",
    "LehmannNN",
    "LmNN",
    "PolrNN",
    "SurvregNN",
    "FormulaError",
    "ModelSpec",
    "Term",
    "parse_formula",
    "parse_ontram",
    "get_latent",
    "ResponseValue",
    "encode_response",
    "log_lik",
    "CompiledModel",
    "TrafoOptions",
    "compile_model",
    "constrain_theta",
    "load_model",
    "simulate",
    "build_lags",
    "EarlyStopping",
    "EnsembleModel",
    "FitConfig",
    "FitHistory",
    "ReduceLROnPlateau",
    "WeightControl",
    "cross_validate",
    "ensemble",
    "fit",
]
