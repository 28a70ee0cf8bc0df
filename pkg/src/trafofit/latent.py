"""Parameter-free latent distributions F_Z used by transformation models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = ["LatentDistribution", "get_latent", "LATENT_NAMES"]

_LOG_2PI_HALF = 0.5 * np.log(2.0 * np.pi)


def _logistic_cdf(z):
    return special.expit(z)


def _logistic_logpdf(z):
    # log f(z) = -|z| - 2 log(1 + exp(-|z|)), symmetric and overflow-free
    a = np.abs(z)
    return -a - 2.0 * np.log1p(np.exp(-a))


def _logistic_dlogpdf(z):
    return 1.0 - 2.0 * special.expit(z)


def _logistic_quantile(p):
    return special.logit(p)


def _normal_cdf(z):
    return special.ndtr(z)


def _normal_logpdf(z):
    return -0.5 * np.square(z) - _LOG_2PI_HALF


def _normal_dlogpdf(z):
    return -z


def _normal_quantile(p):
    z = special.ndtri(p)
    # one Newton step polishes ndtri in the far tails
    with np.errstate(over="ignore", under="ignore"):
        z = z - (special.ndtr(z) - p) / np.exp(_normal_logpdf(z))
    return z


def _minev_cdf(z):
    # 1 - exp(-exp(z))
    with np.errstate(over="ignore"):
        return -np.expm1(-np.exp(z))


def _minev_logpdf(z):
    with np.errstate(over="ignore"):
        return z - np.exp(z)


def _minev_dlogpdf(z):
    with np.errstate(over="ignore"):
        return 1.0 - np.exp(z)


def _minev_quantile(p):
    return np.log(-np.log1p(-p))


def _maxev_cdf(z):
    with np.errstate(over="ignore"):
        return np.exp(-np.exp(-z))


def _maxev_logpdf(z):
    with np.errstate(over="ignore"):
        return -z - np.exp(-z)


def _maxev_dlogpdf(z):
    with np.errstate(over="ignore"):
        return -1.0 + np.exp(-z)


def _maxev_quantile(p):
    return -np.log(-np.log(p))


_KINDS = {
    "normal": (_normal_cdf, _normal_logpdf, _normal_dlogpdf, _normal_quantile),
    "logistic": (_logistic_cdf, _logistic_logpdf, _logistic_dlogpdf, _logistic_quantile),
    "gompertz": (_minev_cdf, _minev_logpdf, _minev_dlogpdf, _minev_quantile),
    "gumbel": (_maxev_cdf, _maxev_logpdf, _maxev_dlogpdf, _maxev_quantile),
}

_ALIASES = {
    "normal": "normal",
    "stdnormal": "normal",
    "gaussian": "normal",
    "logistic": "logistic",
    "stdlogistic": "logistic",
    "gompertz": "gompertz",
    "minev": "gompertz",
    "minextremevalue": "gompertz",
    "gumbel": "gumbel",
    "maxev": "gumbel",
    "maxextremevalue": "gumbel",
}

LATENT_NAMES = tuple(_KINDS)


@dataclass(frozen=True)
class LatentDistribution:
    """A standard latent distribution selected by name.

    ``name`` is one of ``"normal"``, ``"logistic"``, ``"gompertz"``
    (minimum extreme value) or ``"gumbel"`` (maximum extreme value).
    All methods are vectorized over numpy arrays.
    """

    name: str

    def __post_init__(self):
        if self.name not in _KINDS:
            raise ValueError(
                f"unknown latent distribution {self.name!r}; expected one of {LATENT_NAMES}"
            )

    def cdf(self, z):
        """F_Z(z); ``-inf`` maps to 0 and ``+inf`` to 1."""
        z = np.asarray(z, dtype=float)
        out = np.asarray(_KINDS[self.name][0](z), dtype=float)
        return out

    def log_pdf(self, z):
        return _KINDS[self.name][1](np.asarray(z, dtype=float))

    def pdf(self, z):
        return np.exp(self.log_pdf(z))

    def dlog_pdf(self, z):
        """Derivative of ``log_pdf`` with respect to z."""
        return _KINDS[self.name][2](np.asarray(z, dtype=float))

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        if np.any((p <= 0.0) | (p >= 1.0)) or np.any(np.isnan(p)):
            raise ValueError("quantile requires probabilities strictly inside (0, 1)")
        return _KINDS[self.name][3](p)


def get_latent(name) -> LatentDistribution:
    """Resolve a latent distribution from a config name or instance."""
    if isinstance(name, LatentDistribution):
        return name
    key = str(name).lower().replace("_", "").replace("-", "").replace(" ", "")
    if key not in _ALIASES:
        raise ValueError(
            f"unknown latent distribution {name!r}; expected one of {LATENT_NAMES}"
        )
    return LatentDistribution(_ALIASES[key])
