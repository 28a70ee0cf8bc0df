"""Censored negative log-likelihood of transformation models.

Every response is encoded as exact, left-, right- or interval-censored.
Exact values contribute ``-log f_Z(h(y|x)) - log h'(y|x)``; censored ones
``-log(F_Z(h(upper|x)) - F_Z(h(lower|x)))`` with an infinite bound turning
the corresponding CDF into 0 or 1.  Probability differences are floored at
:data:`PROB_FLOOR` before the logarithm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "EXACT",
    "LEFT",
    "RIGHT",
    "INTERVAL",
    "PROB_FLOOR",
    "ResponseValue",
    "ResponseArray",
    "ResponseError",
    "encode_response",
    "encode_responses",
    "nll_contribution",
    "total_loss",
    "log_lik",
    "nll_from_h",
]

EXACT, LEFT, RIGHT, INTERVAL = 0, 1, 2, 3
STATUS_NAMES = {EXACT: "exact", LEFT: "left", RIGHT: "right", INTERVAL: "interval"}
PROB_FLOOR = 1e-16


class ResponseError(ValueError):
    """A response value is invalid for the declared response type."""


@dataclass(frozen=True)
class ResponseValue:
    """One observation's response.

    ``lower``/``upper`` hold the censoring bounds (``-inf``/``+inf`` when
    open); for exact observations both equal the value.  For ordinal
    responses the bounds are 1-based cut indices.
    """

    status: int
    lower: float
    upper: float
    raw: object = None

    @property
    def kind(self) -> str:
        return STATUS_NAMES[self.status]

    @classmethod
    def exact(cls, y, raw=None):
        return cls(EXACT, float(y), float(y), raw)

    @classmethod
    def left(cls, upper, raw=None):
        return cls(LEFT, -np.inf, float(upper), raw)

    @classmethod
    def right(cls, lower, raw=None):
        return cls(RIGHT, float(lower), np.inf, raw)

    @classmethod
    def interval(cls, lower, upper, raw=None):
        lower, upper = float(lower), float(upper)
        if not lower < upper:
            raise ResponseError(f"interval needs lower < upper, got ({lower}, {upper}]")
        return cls(INTERVAL, lower, upper, raw)


@dataclass
class ResponseArray:
    """Vectorized :class:`ResponseValue` storage for a whole data set."""

    status: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __len__(self):
        return self.status.size

    def __getitem__(self, i) -> ResponseValue:
        return ResponseValue(int(self.status[i]), float(self.lower[i]), float(self.upper[i]))

    def subset(self, idx) -> "ResponseArray":
        return ResponseArray(self.status[idx], self.lower[idx], self.upper[idx])

    @classmethod
    def from_values(cls, values) -> "ResponseArray":
        values = list(values)
        return cls(
            np.array([v.status for v in values], dtype=np.int8),
            np.array([v.lower for v in values], dtype=float),
            np.array([v.upper for v in values], dtype=float),
        )


def encode_response(raw, response_type: str, levels=None, event=None) -> ResponseValue:
    """Encode one raw response; see :func:`encode_responses`."""
    arr = encode_responses(
        np.asarray([raw], dtype=object if response_type == "ordinal" else float),
        response_type,
        levels=levels,
        event=None if event is None else np.asarray([event]),
    )
    rv = arr[0]
    return ResponseValue(rv.status, rv.lower, rv.upper, raw)


def encode_responses(y, response_type: str, levels=None, event=None, upper=None) -> ResponseArray:
    """Map raw responses to censoring status and bounds.

    * continuous: exact.
    * survival: exact when ``event`` is 1, right-censored at the time otherwise.
    * count: 0 is left-censored at 0; y >= 1 is interval-censored on (y-1, y].
    * ordinal (levels 1..K): level 1 is left-censored at cut 1, level K
      right-censored at cut K-1, others interval-censored on (k-1, k].
    * interval: ``y`` holds lower and ``upper`` the upper bounds (+-inf allowed).
    """
    if response_type == "ordinal":
        if levels is None:
            raise ResponseError("ordinal responses need their level list")
        K = len(levels)
        lookup = {lev: i + 1 for i, lev in enumerate(levels)}
        try:
            k = np.array([lookup[_plain(v)] for v in np.asarray(y, dtype=object)], dtype=float)
        except KeyError as err:
            raise ResponseError(f"unknown ordinal level {err.args[0]!r}") from None
        status = np.full(k.size, INTERVAL, dtype=np.int8)
        lower, upper_b = k - 1.0, k.copy()
        first, last = k == 1, k == K
        status[first] = LEFT
        lower[first] = -np.inf
        status[last] = RIGHT
        lower[last] = K - 1.0
        upper_b[last] = np.inf
        return ResponseArray(status, lower, upper_b)

    y = np.asarray(y, dtype=float)
    if np.any(np.isnan(y)):
        raise ResponseError(f"missing response at row {int(np.flatnonzero(np.isnan(y))[0])}")
    if response_type == "continuous":
        if not np.all(np.isfinite(y)):
            raise ResponseError("continuous responses must be finite")
        return ResponseArray(np.full(y.size, EXACT, dtype=np.int8), y.copy(), y.copy())
    if response_type == "survival":
        if event is None:
            raise ResponseError("survival responses need an event indicator")
        ev = np.asarray(event, dtype=float)
        if not np.all(np.isin(ev, (0.0, 1.0))):
            raise ResponseError("event indicator must be 0 or 1")
        status = np.where(ev == 1.0, EXACT, RIGHT).astype(np.int8)
        upper_b = np.where(ev == 1.0, y, np.inf)
        return ResponseArray(status, y.copy(), upper_b)
    if response_type == "count":
        if np.any(y < 0):
            raise ResponseError("counts must be nonnegative")
        if np.any(y != np.floor(y)):
            raise ResponseError("counts must be integers")
        status = np.where(y == 0, LEFT, INTERVAL).astype(np.int8)
        lower = np.where(y == 0, -np.inf, y - 1.0)
        return ResponseArray(status, lower, y.copy())
    if response_type == "interval":
        if upper is None:
            raise ResponseError("interval responses need an upper-bound column")
        lo, hi = y, np.asarray(upper, dtype=float)
        if np.any(np.isnan(hi)):
            raise ResponseError("missing upper bound")
        if np.any(lo > hi):
            raise ResponseError("interval responses need lower <= upper")
        status = np.full(lo.size, INTERVAL, dtype=np.int8)
        status[lo == hi] = EXACT
        status[np.isneginf(lo) & np.isfinite(hi)] = LEFT
        status[np.isfinite(lo) & np.isposinf(hi)] = RIGHT
        return ResponseArray(status, lo.copy(), hi.copy())
    raise ResponseError(f"unknown response type {response_type!r}")


def _plain(v):
    return v.item() if isinstance(v, np.generic) else v


# --------------------------------------------------------------------------
# likelihood entry points on compiled models


def nll_contribution(model, rv: ResponseValue, x_row) -> float:
    """Negative log-likelihood of a single observation."""
    return float(model.nll_rows(x_row, responses=ResponseArray.from_values([rv]))[0])


def total_loss(model, batch, n_total=None) -> float:
    """Mean NLL of ``batch`` (a frame) plus all penalties."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    return float(model.loss(batch, n_total=n_total))


def log_lik(model, newdata, convert_fun="loglik"):
    """Summarize per-observation NLL contributions.

    ``convert_fun`` is ``"loglik"`` (negated sum, the default), ``"identity"``
    (vector of NLL contributions), ``"mean"`` (average NLL) or a callable
    applied to the NLL vector.
    """
    nll = model.nll_rows(newdata)
    return convert(nll, convert_fun)


def nll_from_h(latent, status, h_lo, h_hi, hp):
    """NLL contributions given h at the response bounds (and h' for exact rows)."""
    status = np.asarray(status)
    exact = status == EXACT
    out = np.empty(status.shape, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[exact] = -latent.log_pdf(h_hi[exact]) - np.log(np.maximum(hp[exact], 1e-300))
        c = ~exact
        prob = latent.cdf(h_hi[c]) - latent.cdf(h_lo[c])
    out[c] = -np.log(np.maximum(prob, PROB_FLOOR))
    return out


def convert(nll, convert_fun):
    if callable(convert_fun):
        return convert_fun(nll)
    if convert_fun in ("loglik", "sum-negated", "sum_negated", None):
        return -float(np.sum(nll))
    if convert_fun == "identity":
        return nll
    if convert_fun == "mean":
        return float(np.mean(nll))
    raise ValueError(f"unknown convert_fun {convert_fun!r}")
