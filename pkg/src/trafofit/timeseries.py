"""Lagged responses and autoregressive transformation (AT(p)) shift terms."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .terms import FeatureError, _column, _Processor

__all__ = ["build_lags", "lag_names", "AtpLagTerm", "atplag_contribution"]


def lag_names(response: str, p: int) -> list:
    return [f"{response}_lag_{j}" for j in range(1, p + 1)]


def build_lags(series, p: int, exog=None, response: str = "y") -> pd.DataFrame:
    """Training frame with ``response`` at t = p+1..T and its lags ``<response>_lag_j``.

    ``series`` is a 1-d sequence or a frame holding ``response``; in the
    latter case every other column is treated as exogenous and aligned at t.
    ``exog`` may add further columns (frame or dict of equal-length arrays).
    """
    if isinstance(series, pd.DataFrame):
        frame = series.reset_index(drop=True)
        y = frame[response].to_numpy()
        extra = frame.drop(columns=[response])
    else:
        y = np.asarray(series)
        extra = pd.DataFrame(index=range(len(y)))
    if exog is not None:
        exog = pd.DataFrame(exog).reset_index(drop=True)
        if len(exog) != len(y):
            raise ValueError("exogenous columns must match the series length")
        extra = pd.concat([extra, exog], axis=1)
    p = int(p)
    T = len(y)
    if p < 1:
        raise ValueError("lag order must be >= 1")
    if p >= T:
        raise ValueError(f"lag order {p} needs a series longer than {p}, got {T}")
    out = {response: y[p:]}
    for j, name in enumerate(lag_names(response, p), start=1):
        out[name] = y[p - j:T - j]
    frame = pd.DataFrame(out)
    for col in extra.columns:
        frame[col] = extra[col].to_numpy()[p:]
    return frame


class AtpLagTerm(_Processor):
    """phi_j * h0(y_{t-j}), with h0 the baseline transformation of the model.

    h0 uses the response basis and the intercept column of theta, so the lag
    enters through the same transformation as the response and adds only the
    single coefficient phi_j.
    """

    kind = "atplag"

    def __init__(self, term, role, key, basis=None):
        super().__init__(term, role, key)
        self.basis = basis

    @property
    def slice_name(self):
        return f"autoregressive:{self.label}"

    def fit(self, frame):
        if self.basis.kind == "discrete":
            raise FeatureError("atplag() needs a continuous or count response basis")
        _column(frame, self.term.name)
        return self

    def features(self, frame):
        lag = _column(frame, self.term.name)
        return {f"{self.key}:a": self.basis.evaluate(lag).value}

    def init_params(self, rng):
        return {self.slice_name: np.zeros(1)}

    def build(self, g, ctx=None):
        baseline = g.reshape(g.take(ctx.theta, [0], axis=1), (-1,))
        h0 = g.input(f"{self.key}:a") @ baseline
        return h0 * g.param(self.slice_name, shape=(1,))

    def coef_names(self, store):
        return [(self.label, self.slice_name, 0)]


def atplag_contribution(model, lags, phi=None) -> np.ndarray:
    """Sum over j of phi_j * h0(lag_j) for rows of lag values.

    ``lags`` is an ``(n, p)`` array (or 1-d for p = 1).  ``phi`` defaults to
    the model's fitted autoregressive coefficients.
    """
    lags = np.asarray(lags, dtype=float)
    if lags.ndim == 1:
        lags = lags[:, None]
    if phi is None:
        phi = np.array(list(model.coef("autoregressive").values()), dtype=float)
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if phi.size != lags.shape[1]:
        raise ValueError("need one coefficient per lag column")
    theta0 = model.theta()[:, 0]
    total = np.zeros(lags.shape[0])
    for j in range(lags.shape[1]):
        total += phi[j] * (model.basis.evaluate(lags[:, j]).value @ theta0)
    return total
