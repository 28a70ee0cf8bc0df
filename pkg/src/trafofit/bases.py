"""Response bases a(y) and their derivatives a'(y).

Every evaluator is vectorized: ``y`` may be a scalar or a 1-d array and the
result holds ``(n, M)`` matrices.  Bases whose coefficients must obey a
constraint also carry the graph transform that enforces it (see
:func:`monotone_constraint` and :func:`positive_slope_constraint`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import comb

__all__ = [
    "BasisDomainError",
    "BasisEval",
    "BasisSpec",
    "bernstein",
    "count_basis",
    "discrete_basis",
    "linear_basis",
    "log_linear_basis",
    "register_custom_basis",
    "get_custom_basis",
    "monotone_constraint",
    "positive_slope_constraint",
    "default_support",
    "BASIS_KINDS",
]

BASIS_KINDS = ("bernstein", "linear", "loglinear", "discrete", "shiftscale")


class BasisDomainError(ValueError):
    """A response value lies outside the domain of its basis."""


@dataclass
class BasisEval:
    value: np.ndarray
    derivative: np.ndarray
    # rows standing for the +inf cut of the largest ordinal level
    infinite: np.ndarray | None = None

    @property
    def n_functions(self) -> int:
        return self.value.shape[-1]


@dataclass
class BasisSpec:
    """Which response basis a model uses.

    ``kind`` is one of :data:`BASIS_KINDS` or the name of a registered custom
    basis.  ``support`` is required for Bernstein bases; ``levels`` for
    discrete ones.
    """

    kind: str
    order: int = 1
    support: tuple | None = None
    levels: list = field(default_factory=list)
    count: bool = False

    def __post_init__(self):
        if self.kind not in BASIS_KINDS and self.kind not in _CUSTOM:
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.kind == "bernstein":
            if int(self.order) < 1:
                raise ValueError("Bernstein order must be >= 1")
            self.order = int(self.order)
            if self.support is None:
                raise ValueError("Bernstein basis needs a support interval")
        if self.support is not None:
            lo, hi = (float(v) for v in self.support)
            if not lo < hi:
                raise ValueError(f"support needs lower < upper, got {self.support}")
            self.support = (lo, hi)
        if self.kind == "discrete":
            if len(self.levels) < 2:
                raise ValueError("discrete basis needs at least two levels")
            if len(set(self.levels)) != len(self.levels):
                raise ValueError("discrete levels must be distinct")

    @property
    def n_functions(self) -> int:
        if self.kind == "bernstein":
            return self.order + 1
        if self.kind == "discrete":
            return len(self.levels) - 1
        if self.kind in ("linear", "loglinear", "shiftscale"):
            return 2
        return _CUSTOM[self.kind].n_functions

    @property
    def constraint(self) -> str:
        """'monotone' (cumulative softplus), 'slope' (positive slope) or custom."""
        if self.kind in ("bernstein", "discrete"):
            return "monotone"
        if self.kind in ("linear", "loglinear", "shiftscale"):
            return "slope"
        return "custom"

    def evaluate(self, y) -> BasisEval:
        """Evaluate the basis at response values (level indices for discrete)."""
        if self.kind == "bernstein":
            if self.count:
                return count_basis(y, self.order, self.support)
            return bernstein(y, self.order, self.support)
        if self.kind in ("linear", "shiftscale"):
            return linear_basis(y)
        if self.kind == "loglinear":
            return log_linear_basis(y)
        if self.kind == "discrete":
            return discrete_basis(y, len(self.levels))
        return _CUSTOM[self.kind].evaluate(y)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "order": self.order,
            "support": list(self.support) if self.support is not None else None,
            "levels": list(self.levels),
            "count": self.count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        sup = d.get("support")
        return cls(
            kind=d["kind"],
            order=d.get("order", 1),
            support=tuple(sup) if sup is not None else None,
            levels=list(d.get("levels", [])),
            count=bool(d.get("count", False)),
        )


def _as_1d(y):
    return np.atleast_1d(np.asarray(y, dtype=float))


def _bernstein_values(t, P):
    k = np.arange(P + 1)
    t = t[:, None]
    return comb(P, k) * t**k * (1.0 - t) ** (P - k)


def bernstein(y, P: int, support) -> BasisEval:
    """Bernstein polynomials of order ``P`` on ``support`` and their y-derivatives."""
    lo, hi = float(support[0]), float(support[1])
    y = _as_1d(y)
    bad = (y < lo) | (y > hi) | ~np.isfinite(y)
    if np.any(bad):
        raise BasisDomainError(
            f"{int(bad.sum())} response value(s) outside Bernstein support [{lo}, {hi}], "
            f"e.g. {y[bad][0]!r}"
        )
    t = (y - lo) / (hi - lo)
    value = _bernstein_values(t, P)
    lower = _bernstein_values(t, P - 1) if P >= 1 else np.zeros((y.size, 0))
    deriv = np.zeros_like(value)
    # d/dt B_{k,P} = P (B_{k-1,P-1} - B_{k,P-1})
    deriv[:, 1:] += lower
    deriv[:, :-1] -= lower
    deriv *= P / (hi - lo)
    return BasisEval(value, deriv)


def count_basis(y, P: int, support) -> BasisEval:
    """Bernstein basis evaluated at the integer part of nonnegative counts."""
    y = _as_1d(y)
    if np.any(y < 0):
        raise BasisDomainError("counts must be nonnegative")
    return bernstein(np.floor(y), P, support)


def discrete_basis(k, K: int) -> BasisEval:
    """Unit vectors e_k of length K-1 for 1-based level indices ``k``.

    Level ``K`` has no basis row: its cut is +inf, flagged in ``infinite``.
    """
    k = np.atleast_1d(np.asarray(k))
    if not np.issubdtype(k.dtype, np.integer):
        if np.any(k != np.round(k)):
            raise BasisDomainError("ordinal level indices must be integers")
        k = k.astype(int)
    if np.any((k < 1) | (k > K)):
        raise BasisDomainError(f"level index out of range 1..{K}")
    value = np.zeros((k.size, K - 1))
    finite = k < K
    value[np.flatnonzero(finite), k[finite] - 1] = 1.0
    return BasisEval(value, np.zeros_like(value), infinite=~finite)


def linear_basis(y) -> BasisEval:
    y = _as_1d(y)
    if not np.all(np.isfinite(y)):
        raise BasisDomainError("linear basis needs finite responses")
    value = np.column_stack([np.ones_like(y), y])
    deriv = np.column_stack([np.zeros_like(y), np.ones_like(y)])
    return BasisEval(value, deriv)


def log_linear_basis(y) -> BasisEval:
    y = _as_1d(y)
    if np.any(~(y > 0)) or not np.all(np.isfinite(y)):
        raise BasisDomainError("log-linear basis needs positive finite responses")
    value = np.column_stack([np.ones_like(y), np.log(y)])
    deriv = np.column_stack([np.zeros_like(y), 1.0 / y])
    return BasisEval(value, deriv)


def default_support(y, response_type: str = "continuous") -> tuple:
    """Observed range widened by 10% per side; counts use [0, max + 1]."""
    y = np.asarray(y, dtype=float)
    y = y[np.isfinite(y)]
    if y.size == 0:
        raise ValueError("cannot derive a support from an empty response")
    if response_type == "count":
        return (0.0, float(np.max(y)) + 1.0)
    lo, hi = float(np.min(y)), float(np.max(y))
    width = hi - lo if hi > lo else max(abs(lo), 1.0)
    return (lo - 0.1 * width, hi + 0.1 * width)


# --------------------------------------------------------------------------
# coefficient constraints, expressed as graph transforms of raw weights


def monotone_constraint(graph, raw):
    """Column-wise cumulative softplus: theta_1 = w_1, theta_m = theta_{m-1} + softplus(w_m)."""
    first = graph.take(raw, [0], axis=0)
    rest = graph.softplus(graph.take(raw, np.arange(1, _rows(raw)), axis=0))
    return graph.cumsum(graph.concat([first, rest], axis=0), axis=0)


def positive_slope_constraint(graph, raw):
    """Keep the first row, softplus all later rows."""
    first = graph.take(raw, [0], axis=0)
    rest = graph.softplus(graph.take(raw, np.arange(1, _rows(raw)), axis=0))
    return graph.concat([first, rest], axis=0)


def _rows(node):
    shape = node.attrs.get("shape_hint")
    if shape is None:
        raise ValueError("raw weight node needs a 'shape_hint' attribute")
    return shape[0]


# --------------------------------------------------------------------------
# custom bases


@dataclass
class CustomBasis:
    name: str
    eval_fn: Callable
    deriv_fn: Callable
    constraint_fn: Callable
    n_functions: int

    def evaluate(self, y) -> BasisEval:
        y = _as_1d(y)
        value = np.atleast_2d(np.asarray(self.eval_fn(y), dtype=float))
        deriv = np.atleast_2d(np.asarray(self.deriv_fn(y), dtype=float))
        if value.shape[0] != y.size and value.shape[1] == y.size:
            value, deriv = value.T, deriv.T
        if value.shape != deriv.shape:
            raise ValueError(
                f"custom basis {self.name!r}: value shape {value.shape} "
                f"!= derivative shape {deriv.shape}"
            )
        if value.shape[1] != self.n_functions:
            raise ValueError(
                f"custom basis {self.name!r} returned {value.shape[1]} functions, "
                f"expected {self.n_functions}"
            )
        return BasisEval(value, deriv)


_CUSTOM: dict[str, CustomBasis] = {}


def register_custom_basis(name, eval_fn, deriv_fn, constraint_fn, probe=(0.5,)):
    """Make a user basis available as ``BasisSpec(kind=name)``.

    ``eval_fn`` and ``deriv_fn`` map a 1-d array of responses to ``(n, M)``
    matrices.  ``constraint_fn(graph, raw)`` receives the raw ``(M, L)``
    weight node and returns the constrained weights as a graph node, e.g.
    :func:`positive_slope_constraint`.  ``probe`` values are used to infer M
    and to check that value and derivative have equal length.
    """
    if name in BASIS_KINDS or name in _CUSTOM:
        raise ValueError(f"basis {name!r} is already registered")
    probe = _as_1d(probe)
    value = np.atleast_2d(np.asarray(eval_fn(probe), dtype=float))
    deriv = np.atleast_2d(np.asarray(deriv_fn(probe), dtype=float))
    if value.shape != deriv.shape:
        raise ValueError(
            f"eval_fn and deriv_fn disagree in shape: {value.shape} vs {deriv.shape}"
        )
    _CUSTOM[name] = CustomBasis(name, eval_fn, deriv_fn, constraint_fn, value.shape[-1])


def get_custom_basis(name) -> CustomBasis:
    return _CUSTOM[name]


def _unregister(name):
    _CUSTOM.pop(name, None)
