"""Compiled conditional transformation models.

``h(y|x) = sum_l b_l(x) * a(y)' theta_l + s(x)' beta`` is evaluated column by
column instead of materializing the Kronecker product a(y) (x) b(x).  Each
interacting column l owns its own raw weight slice; the basis constraint maps
raw weights to nondecreasing (or positive-slope) theta.  Together with
b(x) >= 0 this keeps h nondecreasing in y for every x.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from types import SimpleNamespace

import numpy as np
import pandas as pd

from . import bases as _bases
from .bases import BasisSpec, default_support
from .formula import FormulaError, ModelSpec, format_formula, parse_formula, resolve_terms
from .grad import Graph, ParameterStore, softplus_inverse
from .latent import get_latent
from .loss import EXACT, PROB_FLOOR, ResponseArray, ResponseError, convert, encode_responses
from .terms import (
    DeepTerm,
    FactorTerm,
    FeatureError,
    InterceptTerm,
    LassoTerm,
    LinearTerm,
    ScaledLinearTerm,
    SmoothTerm,
    factor_levels,
    is_categorical,
)
from .timeseries import AtpLagTerm

__all__ = [
    "RESPONSE_TYPES",
    "MODEL_ALIASES",
    "PREDICT_TYPES",
    "TrafoOptions",
    "CompiledModel",
    "compile_model",
    "constrain_theta",
    "load_model",
]

FORMAT_VERSION = 1
RESPONSE_TYPES = ("continuous", "count", "ordinal", "survival", "interval")
PREDICT_TYPES = ("trafo", "pdf", "cdf", "interaction", "shift", "terms")

MODEL_ALIASES = {
    "BoxCoxNN": {"basis": "bernstein", "latent": "normal"},
    "ColrNN": {"basis": "bernstein", "latent": "logistic"},
    "cotramNN": {"basis": "bernstein", "latent": "logistic", "response_type": "count"},
    "CoxphNN": {"basis": "bernstein", "latent": "gompertz"},
    "LehmannNN": {"basis": "bernstein", "latent": "gumbel"},
    "LmNN": {"basis": "linear", "latent": "normal"},
    "PolrNN": {"basis": "discrete", "latent": "logistic", "response_type": "ordinal"},
    "SurvregNN": {"basis": "loglinear", "latent": "gompertz"},
}

_CHUNK = 65536


@dataclass
class TrafoOptions:
    """Response basis, latent distribution and data-schema options."""

    order: int = 10
    support: tuple | None = None
    basis: str | None = None
    latent: str = "logistic"
    response_type: str = "auto"
    event: str | None = None
    upper: str | None = None
    networks: dict = field(default_factory=dict)
    categorical: tuple = ()

    def to_dict(self):
        d = asdict(self)
        d["support"] = list(self.support) if self.support is not None else None
        d["categorical"] = list(self.categorical)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown trafo options: {sorted(unknown)}")
        if known.get("support") is not None:
            known["support"] = tuple(known["support"])
        known["categorical"] = tuple(known.get("categorical", ()))
        return cls(**known)


def constrain_theta(theta_raw, basis_kind="bernstein"):
    """Numpy version of the coefficient constraint (for inspection and tests).

    Monotone kinds (bernstein, discrete): cumulative sum of the first raw
    weight and softplus of the others, column by column.  Slope kinds
    (linear, loglinear, shiftscale): first row kept, later rows softplus.
    """
    from .grad import softplus

    w = np.asarray(theta_raw, dtype=float)
    vec = w.ndim == 1
    if vec:
        w = w[:, None]
    out = np.concatenate([w[:1], softplus(w[1:])], axis=0)
    if basis_kind in ("bernstein", "discrete"):
        out = np.cumsum(out, axis=0)
    elif basis_kind not in ("linear", "loglinear", "shiftscale"):
        raise ValueError(f"no built-in constraint for basis {basis_kind!r}")
    return out[:, 0] if vec else out


class _Design:
    """Row-aligned feature arrays plus encoded responses for one frame."""

    def __init__(self, n, features, responses=None, a_lo=None, a_hi=None, ad=None):
        self.n = n
        self.features = features
        self.responses = responses
        self.a_lo = a_lo
        self.a_hi = a_hi
        self.ad = ad


class CompiledModel:
    """Processors, parameter store and evaluation graph of one model.

    Build instances with :func:`compile_model` or :func:`load_model`.
    """

    def __init__(self, spec, options, basis, latent, response_type, levels, seed):
        self.spec = spec
        self.options = options
        self.basis = basis
        self.latent = latent
        self.response_type = response_type
        self.levels = levels
        self.seed = seed
        self.store = ParameterStore()
        self.shift_procs = []
        self.inter_procs = []
        self.scale_procs = []
        self.theta_columns = []
        self.n_train = None
        self.response_range = None

    # -- structure ------------------------------------------------------
    @property
    def shiftscale(self) -> bool:
        return self.basis.kind == "shiftscale"

    @property
    def n_basis(self) -> int:
        return self.basis.n_functions

    @property
    def formula(self) -> str:
        return format_formula(self.spec)

    def _make_processors(self, frame=None):
        spec = self.spec
        key = iter(range(10**6))
        k = lambda: f"t{next(key)}"  # noqa: E731
        nets = self.options.networks or {}
        if spec.shift_intercept:
            from .formula import Term

            self.shift_procs.append(InterceptTerm(Term("intercept", "1"), "shifting", k()))
        for t in spec.shifting:
            if t.kind == "linear":
                p = LinearTerm(t, "shifting", k())
            elif t.kind == "lasso":
                p = LassoTerm(t, "shifting", k())
            elif t.kind == "factor":
                p = FactorTerm(t, "shifting", k())
            elif t.kind == "smooth":
                p = SmoothTerm(t, "shifting", k())
            elif t.kind == "deep":
                p = DeepTerm(t, "shifting", k(), _network(nets, t))
            elif t.kind == "atplag":
                p = AtpLagTerm(t, "shifting", k(), basis=self.basis)
            else:
                raise FormulaError(f"unsupported shifting term {t.label!r}")
            self.shift_procs.append(p)
        for t in spec.interacting:
            if t.kind == "intercept":
                continue
            if t.kind in ("smooth", "lasso", "atplag"):
                raise FormulaError(f"{t.kind} terms are not supported as interacting terms: {t.label}")
            if self.shiftscale:
                if t.kind == "linear":
                    p = LinearTerm(t, "scale", k())
                elif t.kind == "factor":
                    p = FactorTerm(t, "scale", k())
                else:
                    p = DeepTerm(t, "scale", k(), _network(nets, t))
                self.scale_procs.append(p)
                continue
            if t.kind == "linear":
                p = ScaledLinearTerm(t, "interacting", k())
            elif t.kind == "factor":
                p = FactorTerm(t, "interacting", k())
            elif t.kind == "deep":
                p = DeepTerm(t, "interacting", k(), _network(nets, t))
            else:
                raise FormulaError(f"unsupported interacting term {t.label!r}")
            self.inter_procs.append(p)
        if frame is not None:
            for p in self.processors:
                p.fit(frame)
            self._set_theta_columns()

    def _set_theta_columns(self):
        self.theta_columns = ["1"]
        if not self.shiftscale:
            for p in self.inter_procs:
                self.theta_columns.extend(p.columns())

    @property
    def processors(self):
        return self.shift_procs + self.inter_procs + self.scale_procs

    def _init_params(self, frame=None):
        rng = np.random.default_rng(self.seed)
        M = self.n_basis
        for j, col in enumerate(self.theta_columns):
            self.store.add(f"interacting:{col}", self._theta_init(j == 0, rng, frame))
        for p in self.processors:
            for name, val in p.init_params(rng).items():
                self.store.add(name, val)

    def _theta_init(self, baseline, rng, frame):
        M = self.n_basis
        kind = self.basis.kind
        noise = rng.normal(0.0, 0.05, size=M)
        if kind in ("bernstein", "discrete"):
            if baseline:
                lo, hi = self.latent.quantile(0.02), self.latent.quantile(0.98)
                if kind == "discrete":
                    K = M + 1
                    cuts = self.latent.quantile(np.arange(1, K) / K)
                    raw = np.concatenate([[cuts[0]], softplus_inverse(np.maximum(np.diff(cuts), 1e-3))])
                else:
                    step = (hi - lo) / max(M - 1, 1)
                    raw = np.concatenate([[lo], np.full(M - 1, softplus_inverse(step))])
            else:
                raw = np.concatenate([[0.0], np.full(M - 1, softplus_inverse(1e-2))])
            return raw + noise
        if kind in ("linear", "loglinear", "shiftscale"):
            if baseline:
                y = getattr(self, "response_range_values", None)
                if y is not None and y.size > 1 and np.std(y) > 0:
                    v = np.log(y) if kind == "loglinear" else y
                    mu, sd = float(np.mean(v)), float(np.std(v))
                    return np.array([-mu / sd, softplus_inverse(1.0 / sd)]) + noise
                return np.array([0.0, softplus_inverse(1.0)]) + noise
            return np.array([0.0, softplus_inverse(1e-2)]) + noise
        # custom bases start from zeros plus noise
        return noise

    # -- graph ----------------------------------------------------------
    def _constraint(self, g, raw):
        if self.basis.constraint == "monotone":
            return _bases.monotone_constraint(g, raw)
        if self.basis.constraint == "slope":
            return _bases.positive_slope_constraint(g, raw)
        return _bases.get_custom_basis(self.basis.kind).constraint_fn(g, raw)

    def _build_graph(self):
        g = Graph()
        M, L = self.n_basis, len(self.theta_columns)
        cols = [
            g.reshape(g.param(f"interacting:{c}", shape=(M,)), (M, 1)) for c in self.theta_columns
        ]
        raw = cols[0] if L == 1 else g.concat(cols, axis=1)
        raw.attrs["shape_hint"] = (M, L)
        theta = self._constraint(g, raw)
        ctx = SimpleNamespace(theta=theta, basis=self.basis)
        nodes = {"theta": theta}

        if self.shiftscale:
            gamma = g.input("zero")
            for p in self.scale_procs:
                gamma = gamma + p.build(g, ctx)
            B = g.reshape(g.exp(gamma * 0.5), (-1, 1))
            nodes["gamma"] = gamma
        else:
            blocks = [g.input("one")] + [p.build(g, ctx) for p in self.inter_procs]
            B = blocks[0] if len(blocks) == 1 else g.concat(blocks, axis=1)
        nodes["B"] = B

        shift = g.input("zero")
        terms = {}
        for p in self.shift_procs:
            c = p.build(g, ctx)
            terms[p.label] = c
            shift = shift + c
        nodes["shift"] = shift
        nodes["terms"] = terms

        # exact rows
        B_e = g.take(B, "idx_e", axis=0)
        s_e = g.take(shift, "idx_e")
        h_e = g.sum((g.input("A_e") @ theta) * B_e, axis=1) + s_e
        hp_e = g.sum((g.input("Ad_e") @ theta) * B_e, axis=1)
        nll_e = -g.log_pdf(h_e, self.latent) - g.log(g.floor_at(hp_e, 1e-300))
        # censored rows: F(h(upper)) - F(h(lower)), open bounds give 1 and 0
        B_c = g.take(B, "idx_c", axis=0)
        s_c = g.take(shift, "idx_c")
        h_lo = g.sum((g.input("A_lo") @ theta) * B_c, axis=1) + s_c
        h_hi = g.sum((g.input("A_hi") @ theta) * B_c, axis=1) + s_c
        inf_lo, inf_hi = g.input("inf_lo"), g.input("inf_hi")
        F_lo = g.cdf(h_lo, self.latent) * (1.0 - inf_lo)
        F_hi = g.cdf(h_hi, self.latent) * (1.0 - inf_hi) + inf_hi
        prob = F_hi - F_lo
        nll_c = -g.log(g.floor_at(prob, PROB_FLOOR))
        nll = g.take(g.concat([nll_e, nll_c]), "perm_inv")
        nodes.update(nll=nll, prob_c=prob)

        loss = g.sum(nll) * g.input("inv_n")
        penalties = [pen for p in self.processors if (pen := p.penalty(g, g.input("inv_ntotal"))) is not None]
        for pen in penalties:
            loss = loss + pen
        nodes["loss"] = loss
        nodes["penalty"] = penalties

        inter_q = (g.input("A_q") @ theta) * B
        nodes["inter_q"] = inter_q
        nodes["h_q"] = g.sum(inter_q, axis=1) + shift
        nodes["hp_q"] = g.sum((g.input("Ad_q") @ theta) * B, axis=1)
        self.graph = g
        self.nodes = nodes

    # -- data -----------------------------------------------------------
    def encode(self, frame) -> ResponseArray:
        name = self.spec.response
        if name not in frame.columns:
            raise FeatureError(f"response column {name!r} not found in data")
        col = frame[name]
        kw = {}
        if self.response_type == "survival":
            kw["event"] = _require(frame, self.options.event).to_numpy()
        if self.response_type == "interval":
            kw["upper"] = _require(frame, self.options.upper).to_numpy(dtype=float)
        if self.response_type == "ordinal":
            return encode_responses(col.to_numpy(dtype=object), "ordinal", levels=self.levels)
        if is_categorical(col):
            raise ResponseError(f"response {name!r} is categorical but the model expects {self.response_type}")
        return encode_responses(col.to_numpy(dtype=float), self.response_type, **kw)

    def _dummy_point(self):
        if self.basis.kind == "discrete":
            return 1.0
        if self.basis.support is not None:
            lo, hi = self.basis.support
            return 0.5 * (lo + hi)
        return 1.0

    def _basis_rows(self, values):
        """Basis values/derivatives at finite ``values``; NaN/inf rows get dummies."""
        values = np.asarray(values, dtype=float)
        ok = np.isfinite(values)
        safe = np.where(ok, values, self._dummy_point())
        ev = self.basis.evaluate(safe)
        return ev.value, ev.derivative

    def features(self, frame) -> dict:
        missing = [v for v in self.spec.variables if v not in frame.columns]
        if missing:
            raise FeatureError("column(s) not found in data: " + ", ".join(repr(m) for m in missing))
        feats = {}
        for p in self.processors:
            feats.update(p.features(frame))
        return feats

    def design(self, frame, responses=None, with_response=True) -> _Design:
        frame = _as_frame(frame)
        feats = self.features(frame)
        d = _Design(len(frame), feats)
        if not with_response:
            return d
        resp = responses if responses is not None else self.encode(frame)
        if len(resp) != len(frame):
            raise ValueError("responses and data differ in length")
        d.responses = resp
        exact = resp.status == EXACT
        d.a_lo, _ = self._basis_rows(np.where(exact, np.nan, resp.lower))
        d.a_hi, d.ad = self._basis_rows(resp.upper)
        d.ad = np.where(exact[:, None], d.ad, 0.0)
        return d

    def batch_inputs(self, design: _Design, idx=None, train=False, rng=None, n_total=None) -> dict:
        if idx is None:
            idx = np.arange(design.n)
        idx = np.asarray(idx, dtype=np.intp)
        n = idx.size
        inputs = {k: v[idx] for k, v in design.features.items()}
        inputs["one"] = np.ones((n, 1))
        inputs["zero"] = np.zeros(n)
        inputs["inv_n"] = np.asarray(1.0 / max(n, 1))
        inputs["inv_ntotal"] = np.asarray(1.0 / (n_total or self.n_train or max(n, 1)))
        for p in self.processors:
            if isinstance(p, DeepTerm):
                inputs.update(p.dropout_inputs(n, rng, train))
        if design.responses is not None:
            st = design.responses.status[idx]
            ex = np.flatnonzero(st == EXACT)
            ce = np.flatnonzero(st != EXACT)
            rows_e, rows_c = idx[ex], idx[ce]
            inputs["idx_e"], inputs["idx_c"] = ex, ce
            inputs["A_e"] = design.a_hi[rows_e]
            inputs["Ad_e"] = design.ad[rows_e]
            inputs["A_lo"] = design.a_lo[rows_c]
            inputs["A_hi"] = design.a_hi[rows_c]
            inputs["inf_lo"] = np.isneginf(design.responses.lower[rows_c]).astype(float)
            inputs["inf_hi"] = np.isposinf(design.responses.upper[rows_c]).astype(float)
            order = np.concatenate([ex, ce])
            inputs["perm_inv"] = np.argsort(order, kind="stable")
        return inputs

    # -- likelihood -----------------------------------------------------
    def loss_and_grad(self, inputs):
        return self.graph.value_and_grad(self.store, inputs, self.nodes["loss"])

    def loss_value(self, inputs) -> float:
        return float(self.graph.forward(self.store, inputs, self.nodes["loss"]))

    def loss(self, frame, n_total=None) -> float:
        d = self.design(frame)
        return self.loss_value(self.batch_inputs(d, n_total=n_total or d.n))

    def nll_rows(self, frame, responses=None, design=None) -> np.ndarray:
        """Per-observation negative log-likelihood contributions."""
        d = design if design is not None else self.design(frame, responses=responses)
        out = np.empty(d.n)
        for start in range(0, d.n, _CHUNK):
            idx = np.arange(start, min(start + _CHUNK, d.n))
            out[idx] = self.graph.forward(self.store, self.batch_inputs(d, idx), self.nodes["nll"])
        return out

    def response_h(self, frame=None, design=None):
        """h at the lower/upper response bounds and h' at exact responses, per row.

        Open bounds give -inf/+inf; ``hp`` is NaN for censored rows.
        """
        d = design if design is not None else self.design(frame)
        r = d.responses
        rows = np.arange(d.n)
        exact = r.status == EXACT
        h_hi, hp = self._h_design(d, rows, r.upper, d.a_hi, d.ad)
        h_lo, _ = self._h_design(d, rows, r.lower, d.a_lo, d.ad)
        h_lo = np.where(exact, h_hi, h_lo)
        return h_lo, h_hi, np.where(exact, hp, np.nan)

    def _h_design(self, d, rows, bounds, A, Ad):
        inputs = self.batch_inputs(_Design(d.n, d.features), rows)
        inputs["A_q"], inputs["Ad_q"] = A[rows], Ad[rows]
        h, hp = self.graph.forward(self.store, inputs, [self.nodes["h_q"], self.nodes["hp_q"]])
        h = np.broadcast_to(h, rows.shape).copy()
        h[np.isneginf(bounds)] = -np.inf
        h[np.isposinf(bounds)] = np.inf
        return h, np.broadcast_to(hp, rows.shape).copy()

    def log_lik(self, newdata, convert_fun="loglik"):
        return convert(self.nll_rows(newdata), convert_fun)

    # -- evaluation -----------------------------------------------------
    def theta(self) -> np.ndarray:
        """Constrained coefficients, shape (M, L)."""
        g = self.graph
        return np.array(g.forward(self.store, {}, self.nodes["theta"]))

    def _run(self, design, rows, yvals, nodes):
        """Evaluate prediction nodes for ``rows`` of ``design`` at response ``yvals``."""
        rows = np.asarray(rows, dtype=np.intp)
        inputs = self.batch_inputs(_Design(design.n, design.features), rows)
        yvals = np.asarray(yvals, dtype=float)
        A, Ad = self._basis_rows(yvals)
        inputs["A_q"], inputs["Ad_q"] = A, Ad
        out = self.graph.forward(self.store, inputs, [self.nodes[k] for k in nodes])
        return [np.asarray(o) for o in out]

    def _h_at(self, design, rows, yvals, with_prime=False):
        """h (and h') at response values; handles ordinal +inf and the -inf floor."""
        yvals = np.asarray(yvals, dtype=float)
        upper_inf = np.isposinf(yvals)
        lower_inf = np.isneginf(yvals)
        if self.basis.kind == "discrete":
            K = len(self.levels)
            upper_inf = upper_inf | (yvals >= K)
            lower_inf = lower_inf | (yvals <= 0)
        safe = np.where(upper_inf | lower_inf, np.nan, yvals)
        h, hp = self._run(design, rows, safe, ["h_q", "hp_q"])
        h = np.broadcast_to(h, safe.shape).copy()
        h[upper_inf] = np.inf
        h[lower_inf] = -np.inf
        return (h, np.broadcast_to(hp, safe.shape).copy()) if with_prime else h

    def eval_h(self, frame, y):
        """h(y|x) for each row of ``frame`` at matching ``y`` (level indices for ordinal)."""
        d = self.design(frame, with_response=False)
        y = np.broadcast_to(np.asarray(y, dtype=float), (d.n,))
        return self._h_at(d, np.arange(d.n), y)

    def eval_h_prime(self, frame, y):
        d = self.design(frame, with_response=False)
        y = np.broadcast_to(np.asarray(y, dtype=float), (d.n,))
        return self._h_at(d, np.arange(d.n), y, with_prime=True)[1]

    def default_grid(self, K=100):
        if self.basis.kind == "discrete":
            return np.arange(1, len(self.levels) + 1, dtype=float)
        if self.response_type == "count":
            hi = self.basis.support[1] if self.basis.support else self.response_range[1]
            return np.arange(0, int(np.floor(hi)) + 1, dtype=float)
        if self.basis.support is not None:
            lo, hi = self.basis.support
        else:
            lo, hi = self.response_range
        return np.linspace(lo, hi, int(K))

    def _response_values(self, frame):
        """Observed responses as basis inputs (level index for ordinal)."""
        col = frame[self.spec.response]
        if self.basis.kind == "discrete":
            lookup = {lev: i + 1 for i, lev in enumerate(self.levels)}
            try:
                return np.array([lookup[_plain(v)] for v in col.to_numpy(dtype=object)], dtype=float)
            except KeyError as err:
                raise ResponseError(f"unknown ordinal level {err.args[0]!r}") from None
        return col.to_numpy(dtype=float)

    def predict(self, newdata, type="trafo", K=100, q=None):
        """Predictions at the observed response, or on a response grid.

        With the response column present (and no ``q``) the result has one
        value per row (``(n, L)`` for ``"interaction"``).  Otherwise it is
        evaluated on ``q`` or the default grid and has shape ``(n, G)``
        (``(n, G, L)`` for interaction).  ``"shift"`` returns ``(n,)`` and
        ``"terms"`` a frame of per-term shift contributions.
        """
        if type not in PREDICT_TYPES:
            raise ValueError(f"unknown prediction type {type!r}; expected one of {PREDICT_TYPES}")
        frame = _as_frame(newdata)
        d = self.design(frame, with_response=False)
        rows = np.arange(d.n)
        if type in ("shift", "terms"):
            inputs = self.batch_inputs(d, rows)
            if type == "shift":
                return np.broadcast_to(
                    self.graph.forward(self.store, inputs, self.nodes["shift"]), (d.n,)
                ).copy()
            terms = self.nodes["terms"]
            vals = self.graph.forward(self.store, inputs, list(terms.values())) if terms else []
            return pd.DataFrame(
                {k: np.broadcast_to(v, (d.n,)).copy() for k, v in zip(terms, vals)}
            )
        if q is None and self.spec.response in frame.columns:
            y = self._response_values(frame)
            return self._predict_at(d, rows, y, type)
        grid = self.default_grid(K) if q is None else np.atleast_1d(np.asarray(q, dtype=float))
        G = grid.size
        rep_rows = np.repeat(rows, G)
        rep_y = np.tile(grid, d.n)
        if type == "pdf" and self.response_type == "count" and self.basis.kind != "discrete":
            # the top grid count absorbs the upper tail so level probabilities sum to one
            F = self.latent.cdf(self._h_at(d, rep_rows, rep_y)).reshape(d.n, G)
            below = self.latent.cdf(
                self._h_at(d, rep_rows, np.where(rep_y - 1.0 < 0, -np.inf, rep_y - 1.0))
            ).reshape(d.n, G)
            out = F - below
            if q is None:
                out[:, -1] = 1.0 - below[:, -1]
            return out
        out = self._predict_at(d, rep_rows, rep_y, type)
        if type == "interaction":
            return out.reshape(d.n, G, -1)
        return out.reshape(d.n, G)

    def _predict_at(self, design, rows, y, type):
        if type == "interaction":
            safe = np.where(np.isfinite(y), y, np.nan)
            return self._run(design, rows, safe, ["inter_q"])[0]
        if type == "trafo":
            return self._h_at(design, rows, y)
        if type == "cdf":
            return self.latent.cdf(self._h_at(design, rows, y))
        # pdf
        if self.basis.kind == "discrete" or self.response_type == "count":
            upper = self.latent.cdf(self._h_at(design, rows, y))
            prev = y - 1.0
            lower = self.latent.cdf(self._h_at(design, rows, np.where(prev < (1 if self.basis.kind == "discrete" else 0), -np.inf, prev)))
            return upper - lower
        h, hp = self._h_at(design, rows, y, with_prime=True)
        return self.latent.pdf(h) * hp

    # -- coefficients ---------------------------------------------------
    def coef(self, which="shifting"):
        """Named coefficients: shifting betas, constrained theta, AR or scale terms."""
        if which == "shifting":
            out = {}
            for p in self.shift_procs:
                if not isinstance(p, AtpLagTerm):
                    out.update(p.coefficients(self.store))
            return out
        if which == "interacting":
            th = self.theta()
            return {c: th[:, j].copy() for j, c in enumerate(self.theta_columns)}
        if which == "autoregressive":
            ar = [p for p in self.shift_procs if isinstance(p, AtpLagTerm)]
            if not ar:
                raise ValueError("model has no autoregressive (atplag) terms")
            out = {}
            for p in ar:
                out.update(p.coefficients(self.store))
            return out
        if which == "scale":
            out = {}
            for p in self.scale_procs:
                out.update(p.coefficients(self.store))
            return out
        raise ValueError(f"unknown coefficient group {which!r}")

    def coef_index(self) -> dict:
        """Coefficient name -> (slice name, flat index) over all scalar coefficients."""
        out = {}
        for p in self.processors:
            for name, sl, i in p.coef_names(self.store):
                out.setdefault(name, (sl, i))
                out[f"{p.role}:{name}"] = (sl, i)
        return out

    # -- persistence ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "kind": "model",
            "formula": self.formula,
            "categorical": sorted(
                {t.name for t in self.spec.interacting + self.spec.shifting if t.kind == "factor" and t.bare}
            ),
            "options": self.options.to_dict(),
            "basis": self.basis.to_dict(),
            "latent": self.latent.name,
            "response_type": self.response_type,
            "levels": list(self.levels) if self.levels is not None else None,
            "response_range": list(self.response_range) if self.response_range else None,
            "n_train": self.n_train,
            "seed": self.seed,
            "processors": [{"role": p.role, "label": p.label, "state": p.state()} for p in self.processors],
            "parameters": [
                {
                    "name": sl.name,
                    "shape": list(sl.shape),
                    "values": self.store.get(sl.name).ravel().tolist(),
                    "trainable": sl.trainable,
                    "lr_multiplier": sl.lr_multiplier,
                }
                for sl in self.store.slices.values()
            ],
        }

    @classmethod
    def from_dict(cls, d) -> "CompiledModel":
        if d.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported model file format {d.get('format')!r}")
        options = TrafoOptions.from_dict(d["options"])
        spec = parse_formula(d["formula"], networks=tuple(options.networks or {}))
        spec = resolve_terms(spec, d.get("categorical", []))
        m = cls(
            spec,
            options,
            BasisSpec.from_dict(d["basis"]),
            get_latent(d["latent"]),
            d["response_type"],
            d.get("levels"),
            d.get("seed", 0),
        )
        m.response_range = tuple(d["response_range"]) if d.get("response_range") else None
        m.n_train = d.get("n_train")
        m._make_processors(frame=None)
        states = d["processors"]
        if len(states) != len(m.processors):
            raise ValueError("model file does not match its formula")
        for p, st in zip(m.processors, states):
            p.load_state(st["state"])
        m._set_theta_columns()
        for prm in d["parameters"]:
            sl = m.store.add(prm["name"], np.asarray(prm["values"], dtype=float).reshape(prm["shape"]))
            sl.trainable = bool(prm.get("trainable", True))
            sl.lr_multiplier = float(prm.get("lr_multiplier", 1.0))
        m._build_graph()
        return m

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    def copy(self) -> "CompiledModel":
        m = CompiledModel.from_dict(json.loads(json.dumps(self.to_dict())))
        m.response_range_values = getattr(self, "response_range_values", None)
        return m

    def reinitialized(self, seed) -> "CompiledModel":
        """Structural copy with freshly initialized parameters from ``seed``."""
        m = self.copy()
        flags = {n: (sl.trainable, sl.lr_multiplier) for n, sl in m.store.slices.items()}
        m.seed = int(seed)
        m.store = ParameterStore()
        m._init_params()
        for n, (tr, mult) in flags.items():
            m.store.slices[n].trainable = tr
            m.store.slices[n].lr_multiplier = mult
        return m

    def __repr__(self):
        return f"<CompiledModel {self.formula!r} basis={self.basis.kind} latent={self.latent.name}>"

    def summary(self) -> str:
        """Text summary in the style of a print method."""
        lines = [
            f"{self.response_type.capitalize()} outcome conditional transformation model",
            "",
            f"Interacting:  {self.spec.response}"
            + (" | " + " + ".join(t.source() for t in self.spec.interacting if t.kind != "intercept")
               if len(self.spec.interacting) > 1 else ""),
            f"Shifting:  ~{format_formula(self.spec).split('~', 1)[1].strip()}",
            "",
            "Shift coefficients:",
        ]
        coefs = self.coef("shifting")
        if coefs:
            width = max(len(k) for k in coefs)
            for k, v in coefs.items():
                lines.append(f"  {k:<{width}}  {v: .5f}")
        else:
            lines.append("  (none)")
        return "\n".join(lines)


def load_model(path):
    """Load a model or ensemble saved as JSON."""
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if d.get("kind") == "ensemble":
        from .train import EnsembleModel

        return EnsembleModel.from_dict(d)
    return CompiledModel.from_dict(d)


# --------------------------------------------------------------------------
# compilation


def _as_frame(data) -> pd.DataFrame:
    if isinstance(data, pd.DataFrame):
        return data
    if isinstance(data, dict):
        return pd.DataFrame(data)
    raise TypeError("data must be a pandas DataFrame or a dict of columns")


def _require(frame, col):
    if col is None or col not in frame.columns:
        raise FeatureError(f"column {col!r} not found in data")
    return frame[col]


DEFAULT_NETWORK = {"layers": [{"units": 16, "activation": "tanh"}], "output_dim": 1}


def _network(nets, term):
    """Architecture for a deep term: by label, then network name, then the default."""
    for key in (term.label, term.name):
        if key in nets:
            return nets[key]
    return DEFAULT_NETWORK


def _plain(v):
    return v.item() if isinstance(v, np.generic) else v


def _detect_response_type(col, options):
    if options.response_type != "auto":
        if options.response_type not in RESPONSE_TYPES:
            raise ValueError(f"unknown response type {options.response_type!r}")
        return options.response_type
    if options.basis == "discrete":
        return "ordinal"
    if options.event is not None:
        return "survival"
    if options.upper is not None:
        return "interval"
    if is_categorical(col):
        return "ordinal"
    if pd.api.types.is_integer_dtype(col):
        return "count"
    return "continuous"


def compile_model(formula, data, options=None, seed=0, **kwargs) -> CompiledModel:
    """Parse, validate and compile a model against its training data.

    ``formula`` is a formula string, a :class:`ModelSpec` or a dict with
    ``response``/``intercept``/``shift`` one-sided formulas.  ``options`` is a
    :class:`TrafoOptions` (or dict); keyword arguments override its fields.
    """
    from .formula import parse_ontram

    if options is None:
        options = TrafoOptions()
    elif isinstance(options, dict):
        options = TrafoOptions.from_dict(options)
    if kwargs:
        options = TrafoOptions.from_dict({**options.to_dict(), **kwargs})
    frame = _as_frame(data)
    if len(frame) == 0:
        raise ValueError("data must not be empty")
    nets = tuple(options.networks or {})
    if isinstance(formula, ModelSpec):
        spec = formula
    elif isinstance(formula, dict):
        spec = parse_ontram(formula["response"], formula["intercept"], formula["shift"], networks=nets)
    else:
        spec = parse_formula(formula, networks=nets)

    missing = [v for v in (spec.response,) + spec.variables if v not in frame.columns]
    for extra in (options.event, options.upper):
        if extra is not None and extra not in frame.columns:
            missing.append(extra)
    if missing:
        raise FeatureError("column(s) not found in data: " + ", ".join(repr(m) for m in missing))

    categorical = {c for c in frame.columns if is_categorical(frame[c])} | set(options.categorical)
    spec = resolve_terms(spec, categorical - {spec.response})

    col = frame[spec.response]
    if col.isna().any():
        raise ResponseError(
            f"missing value in response {spec.response!r} at row {int(np.flatnonzero(col.isna().to_numpy())[0])}"
        )
    rtype = _detect_response_type(col, options)

    levels = None
    kind = options.basis
    if rtype == "ordinal":
        levels = factor_levels(col.astype("category") if not is_categorical(col) else col)
        if kind not in (None, "discrete"):
            raise ValueError(f"ordinal responses need the discrete basis, not {kind!r}")
        kind = "discrete"
    elif kind == "discrete":
        raise ValueError("the discrete basis needs an ordinal response")
    if kind is None:
        kind = "bernstein"
    if kind == "shiftscale" and rtype == "ordinal":
        raise ValueError("shift-scale basis cannot be combined with a discrete response")

    m = CompiledModel(spec, options, None, get_latent(options.latent), rtype, levels, seed)
    resp_probe = m.encode(frame) if rtype != "ordinal" else None
    if resp_probe is not None:
        finite = np.concatenate([resp_probe.lower, resp_probe.upper])
        finite = finite[np.isfinite(finite)]
        m.response_range = (float(np.min(finite)), float(np.max(finite)))
        m.response_range_values = resp_probe.upper[resp_probe.status == EXACT]
        if m.response_range_values.size < 2:
            m.response_range_values = finite
    else:
        m.response_range_values = None

    support = options.support
    if kind == "bernstein" and support is None:
        support = default_support(finite, "count" if rtype == "count" else "continuous")
    m.basis = BasisSpec(
        kind=kind,
        order=options.order if kind == "bernstein" else 1,
        support=tuple(support) if support is not None else None,
        levels=list(levels) if levels is not None else [],
        count=(rtype == "count" and kind == "bernstein"),
    )
    m.n_train = len(frame)
    m._make_processors(frame)
    m._init_params(frame)
    m._build_graph()
    # surface support violations and bad responses at compile time
    m.design(frame)
    return m
