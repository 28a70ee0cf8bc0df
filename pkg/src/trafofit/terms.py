"""Feature processors for interacting and shifting terms.

A processor learns its metadata from the training frame (factor levels,
spline knots and penalty strength, scaling ranges), turns any frame into
per-row feature arrays, declares its parameter slices and builds its graph
contribution.  Processors are immutable once the model is compiled and can
be rebuilt from :meth:`state` without the training data.
"""

from __future__ import annotations

import numpy as np
import pandas as pd
from scipy.interpolate import BSpline

from .formula import Term

__all__ = [
    "FeatureError",
    "is_categorical",
    "factor_levels",
    "InterceptTerm",
    "LinearTerm",
    "LassoTerm",
    "FactorTerm",
    "SmoothTerm",
    "DeepTerm",
    "ScaledLinearTerm",
    "smooth_edf",
    "calibrate_lambda",
    "ACTIVATIONS",
]

ACTIVATIONS = ("linear", "relu", "tanh", "sigmoid", "softplus")


class FeatureError(ValueError):
    """Missing or mistyped covariate columns."""


def is_categorical(col: pd.Series) -> bool:
    return (
        isinstance(col.dtype, pd.CategoricalDtype)
        or col.dtype == object
        or pd.api.types.is_bool_dtype(col)
        or pd.api.types.is_string_dtype(col)
    )


def factor_levels(col: pd.Series) -> list:
    if isinstance(col.dtype, pd.CategoricalDtype):
        return [_plain(v) for v in col.cat.categories]
    return sorted({_plain(v) for v in col.dropna().unique()}, key=lambda v: (str(type(v)), v))


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


def _column(frame, name, kind="numeric"):
    if name not in frame.columns:
        raise FeatureError(f"column {name!r} not found in data")
    col = frame[name]
    if col.isna().any():
        row = int(np.flatnonzero(col.isna().to_numpy())[0])
        raise FeatureError(f"missing value in column {name!r} at row {row}")
    if kind == "numeric":
        if is_categorical(col):
            raise FeatureError(f"column {name!r} is categorical but used as a numeric term")
        return col.to_numpy(dtype=float)
    return col


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class _Processor:
    """Shared plumbing: naming of input keys and parameter slices."""

    kind = ""

    def __init__(self, term: Term, role: str, key: str):
        self.term = term
        self.role = role
        self.key = key

    @property
    def label(self) -> str:
        return self.term.label

    @property
    def slice_name(self) -> str:
        return f"{self.role}:{self.label}"

    def fit(self, frame):
        return self

    def features(self, frame) -> dict:
        return {}

    def init_params(self, rng) -> dict:
        return {}

    def penalty(self, g, inv_n):
        return None

    def coef_names(self, store) -> list:
        """(coefficient name, slice name, flat index) triples."""
        return []

    def coefficients(self, store) -> dict:
        out = {}
        for name, sl, idx in self.coef_names(store):
            out[name] = float(store.get(sl).ravel()[idx])
        return out

    def state(self) -> dict:
        return {}

    def load_state(self, state: dict):
        return self


class InterceptTerm(_Processor):
    """Constant shift (the formula's implicit or explicit ``1``)."""

    kind = "intercept"

    def init_params(self, rng):
        return {self.slice_name: np.zeros(1)}

    def build(self, g, ctx=None):
        return g.param(self.slice_name, shape=(1,))

    def coef_names(self, store):
        return [("1", self.slice_name, 0)]


class LinearTerm(_Processor):
    kind = "linear"

    def features(self, frame):
        return {f"{self.key}:x": _column(frame, self.term.name)}

    def init_params(self, rng):
        return {self.slice_name: _glorot(rng, 1, 1, (1,))}

    def build(self, g, ctx=None):
        return g.input(f"{self.key}:x") * g.param(self.slice_name, shape=(1,))

    def coef_names(self, store):
        return [(self.label, self.slice_name, 0)]


class LassoTerm(LinearTerm):
    """Linear term with a smoothed L1 penalty ``lambda * sqrt(beta^2 + 1e-8)``."""

    kind = "lasso"

    def penalty(self, g, inv_n):
        beta = g.param(self.slice_name, shape=(1,))
        lam = float(self.term.penalty)
        return g.sum(g.sqrt(g.square(beta) + 1e-8)) * lam


class ScaledLinearTerm(_Processor):
    """Numeric interacting column mapped to [0, 1] by the training range.

    Values outside the training range are clipped so the column stays
    nonnegative, which the monotonicity of h relies on.
    """

    kind = "scaled_linear"

    def fit(self, frame):
        x = _column(frame, self.term.name)
        lo, hi = float(np.min(x)), float(np.max(x))
        if hi <= lo:
            hi = lo + 1.0
        self.range = (lo, hi)
        return self

    def features(self, frame):
        x = _column(frame, self.term.name)
        lo, hi = self.range
        return {f"{self.key}:x": np.clip((x - lo) / (hi - lo), 0.0, 1.0)[:, None]}

    def columns(self):
        return [self.label]

    def build(self, g, ctx=None):
        return g.input(f"{self.key}:x")

    def state(self):
        return {"range": list(self.range)}

    def load_state(self, state):
        self.range = tuple(state["range"])
        return self


class FactorTerm(_Processor):
    """Treatment-coded factor; the first level is the reference.

    As a shift term the contribution is a coefficient lookup by level index,
    so no one-hot matrix is formed.  As an interacting term it yields K-1
    dummy columns.
    """

    kind = "factor"

    def fit(self, frame):
        col = _column(frame, self.term.name, kind="any")
        self.levels = factor_levels(col)
        if len(self.levels) < 2:
            raise FeatureError(f"factor {self.term.name!r} needs at least two levels")
        return self

    def level_index(self, frame) -> np.ndarray:
        col = _column(frame, self.term.name, kind="any")
        lookup = {lev: i for i, lev in enumerate(self.levels)}
        raw = col.to_numpy()
        idx = np.empty(raw.shape[0], dtype=np.intp)
        try:
            # fast path for numeric codes
            uniq, inv = np.unique(raw, return_inverse=True)
            mapped = np.array([lookup.get(_plain(u), -1) for u in uniq], dtype=np.intp)
            idx = mapped[inv.reshape(-1)]
        except TypeError:
            idx = np.array([lookup.get(_plain(v), -1) for v in raw], dtype=np.intp)
        if np.any(idx < 0):
            bad = raw[np.flatnonzero(idx < 0)[0]]
            raise FeatureError(f"unseen level {bad!r} of factor {self.term.name!r}")
        return idx

    def features(self, frame):
        idx = self.level_index(frame)
        if self.role == "interacting":
            dummies = np.zeros((idx.size, len(self.levels) - 1))
            rows = np.flatnonzero(idx > 0)
            dummies[rows, idx[rows] - 1] = 1.0
            return {f"{self.key}:x": dummies}
        return {f"{self.key}:idx": idx}

    def columns(self):
        return [f"{self.label}{lev}" for lev in self.levels[1:]]

    def init_params(self, rng):
        if self.role == "interacting":
            return {}
        k = len(self.levels) - 1
        return {self.slice_name: _glorot(rng, k, 1, (k,))}

    def build(self, g, ctx=None):
        if self.role == "interacting":
            return g.input(f"{self.key}:x")
        k = len(self.levels) - 1
        table = g.concat([g.const(np.zeros(1)), g.param(self.slice_name, shape=(k,))])
        return g.take(table, f"{self.key}:idx")

    def coef_names(self, store):
        if self.role == "interacting":
            return []
        return [
            (f"{self.label}{lev}", self.slice_name, i)
            for i, lev in enumerate(self.levels[1:])
        ]

    def coefficients(self, store):
        out = {f"{self.label}{self.levels[0]}": 0.0}
        out.update(super().coefficients(store))
        return out

    def state(self):
        return {"levels": list(self.levels)}

    def load_state(self, state):
        self.levels = list(state["levels"])
        return self


def smooth_edf(B, S, lam) -> float:
    """Effective degrees of freedom trace((B'B + lam S)^-1 B'B)."""
    BtB = B.T @ B
    return float(np.trace(np.linalg.solve(BtB + lam * S, BtB)))


def calibrate_lambda(B, S, df, tol=1e-4) -> float:
    """Bisection on log(lambda) so that the effective df matches ``df``."""
    BtB = B.T @ B
    scale = np.trace(BtB) / max(np.trace(S), 1e-12)
    max_df = smooth_edf(B, S, scale * 1e-12)
    if df >= max_df - 1e-9:
        return 0.0
    # edf is decreasing in lambda
    lo, hi = np.log(scale) - 30.0, np.log(scale) + 30.0
    if smooth_edf(B, S, np.exp(hi)) > df:
        raise ValueError(f"requested df={df} is below the smoother's null space dimension")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if smooth_edf(B, S, np.exp(mid)) > df:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol * 1e-3:
            break
    return float(np.exp(0.5 * (lo + hi)))


class SmoothTerm(_Processor):
    """Cubic B-spline shift term with a second-order difference penalty.

    Knots are equidistant over the training range.  A sum-to-zero constraint
    (over the training rows) removes the constant the baseline transformation
    already carries, and lambda is calibrated once so that the effective
    degrees of freedom match the requested ``df``.
    """

    kind = "smooth"
    degree = 3

    def fit(self, frame):
        x = _column(frame, self.term.name)
        k = int(self.term.n_basis or 10)
        lo, hi = float(np.min(x)), float(np.max(x))
        if hi <= lo:
            raise FeatureError(f"smooth term on constant column {self.term.name!r}")
        n_inner = k - self.degree
        step = (hi - lo) / n_inner
        self.knots = lo + step * np.arange(-self.degree, n_inner + self.degree + 1)
        B = self._raw_design(x)
        C = B.sum(axis=0)[:, None]
        Q, _ = np.linalg.qr(C, mode="complete")
        self.Z = Q[:, 1:]
        D = np.diff(np.eye(k), n=2, axis=0)
        self.D = D @ self.Z
        Bc = B @ self.Z
        S = self.D.T @ self.D
        max_df = k - 1
        if self.term.df > max_df + 1e-9:
            raise FeatureError(
                f"{self.label}: df={self.term.df} exceeds the {max_df} functions left "
                "after the sum-to-zero constraint"
            )
        self.lam = calibrate_lambda(Bc, S, float(self.term.df))
        self.edf = smooth_edf(Bc, S, self.lam)
        return self

    def _raw_design(self, x):
        return BSpline.design_matrix(x, self.knots, self.degree, extrapolate=True).toarray()

    @property
    def n_coef(self):
        return self.Z.shape[1]

    def features(self, frame):
        x = _column(frame, self.term.name)
        return {f"{self.key}:x": self._raw_design(x) @ self.Z}

    def init_params(self, rng):
        return {self.slice_name: _glorot(rng, self.n_coef, 1, (self.n_coef,))}

    def build(self, g, ctx=None):
        return g.input(f"{self.key}:x") @ g.param(self.slice_name, shape=(self.n_coef,))

    def penalty(self, g, inv_n):
        if self.lam == 0.0:
            return None
        beta = g.param(self.slice_name, shape=(self.n_coef,))
        diff = g.const(self.D) @ beta
        return g.sum(g.square(diff)) * inv_n * self.lam

    def coef_names(self, store):
        return [(f"{self.label}{j + 1}", self.slice_name, j) for j in range(self.n_coef)]

    def state(self):
        return {
            "knots": self.knots.tolist(),
            "Z": self.Z.tolist(),
            "D": self.D.tolist(),
            "lam": self.lam,
            "edf": self.edf,
        }

    def load_state(self, state):
        self.knots = np.asarray(state["knots"], dtype=float)
        self.Z = np.asarray(state["Z"], dtype=float)
        self.D = np.asarray(state["D"], dtype=float)
        self.lam = float(state["lam"])
        self.edf = float(state["edf"])
        return self


class DeepTerm(_Processor):
    """Fully connected network on the listed numeric columns.

    ``arch`` is ``{"layers": [{"units", "activation", "dropout"}, ...],
    "output_dim": int}``.  The final layer is linear; as an interacting term
    its outputs pass through softplus so every column is positive.
    """

    kind = "deep"

    def __init__(self, term, role, key, arch=None):
        super().__init__(term, role, key)
        arch = dict(arch or {})
        layers = arch.get("layers", [])
        self.layers = []
        for spec in layers:
            act = spec.get("activation", "relu") or "linear"
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}; expected one of {ACTIVATIONS}")
            rate = float(spec.get("dropout", 0.0) or 0.0)
            if not 0.0 <= rate < 1.0:
                raise ValueError("dropout rate must lie in [0, 1)")
            self.layers.append({"units": int(spec["units"]), "activation": act, "dropout": rate})
        out = int(arch.get("output_dim", 1))
        if role == "shifting" or role == "scale":
            out = 1
        self.output_dim = out

    @property
    def slice_name(self):
        return f"{self.role}:{self.label}"

    def _widths(self):
        return [len(self.term.varnames)] + [l["units"] for l in self.layers] + [self.output_dim]

    def features(self, frame):
        cols = [_column(frame, v) for v in self.term.varnames]
        return {f"{self.key}:x": np.column_stack(cols)}

    def dropout_inputs(self, n, rng, train):
        """Inverted-dropout masks, or all-ones masks outside training."""
        out = {}
        for j, layer in enumerate(self.layers):
            rate = layer["dropout"]
            if rate <= 0.0:
                continue
            if train:
                keep = rng.random((n, layer["units"])) >= rate
                out[f"{self.key}:mask{j}"] = keep / (1.0 - rate)
            else:
                out[f"{self.key}:mask{j}"] = np.ones((n, layer["units"]))
        return out

    def init_params(self, rng):
        params = {}
        widths = self._widths()
        for j in range(len(widths) - 1):
            params[f"{self.slice_name}/W{j}"] = _glorot(
                rng, widths[j], widths[j + 1], (widths[j], widths[j + 1])
            )
            params[f"{self.slice_name}/b{j}"] = np.zeros(widths[j + 1])
        return params

    def build(self, g, ctx=None):
        widths = self._widths()
        h = g.input(f"{self.key}:x")
        for j in range(len(widths) - 1):
            W = g.param(f"{self.slice_name}/W{j}", shape=(widths[j], widths[j + 1]))
            b = g.param(f"{self.slice_name}/b{j}", shape=(widths[j + 1],))
            h = h @ W + b
            if j < len(self.layers):
                h = _activate(g, h, self.layers[j]["activation"])
                if self.layers[j]["dropout"] > 0.0:
                    h = h * g.input(f"{self.key}:mask{j}")
        if self.role == "interacting":
            return g.softplus(h)
        return g.reshape(h, (-1,))

    def columns(self):
        if self.output_dim == 1:
            return [self.label]
        return [f"{self.label}{j + 1}" for j in range(self.output_dim)]

    def state(self):
        return {"layers": self.layers, "output_dim": self.output_dim}


def _activate(g, h, act):
    if act == "linear":
        return h
    return getattr(g, act)(h)
