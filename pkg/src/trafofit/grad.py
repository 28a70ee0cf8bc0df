"""Reverse-mode differentiation over a static graph of array-valued nodes.

A :class:`Graph` is built once (symbolic inputs, parameter references) and
executed many times with different bound inputs.  Nodes are appended in
topological order, so a forward pass is a single sweep over ``graph.nodes``
and the backward pass is the reverse sweep.

Parameters live in a :class:`ParameterStore`: one flat float vector cut into
named, disjoint slices.  Each slice carries a trainable flag and a learning
rate multiplier; gradients of frozen slices are reported as zero.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy import special

from .latent import LatentDistribution

__all__ = [
    "GradientError",
    "Graph",
    "Node",
    "ParameterStore",
    "Slice",
    "softplus",
    "softplus_inverse",
]


class GradientError(RuntimeError):
    """Raised for unresolved graph inputs or NaN values during evaluation."""


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_inverse(y):
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("softplus_inverse requires positive values")
    # log(expm1(y)) written to stay finite for large y
    return y + np.log(-np.expm1(-y))


# --------------------------------------------------------------------------
# parameter store


@dataclass
class Slice:
    name: str
    offset: int
    shape: tuple
    trainable: bool = True
    lr_multiplier: float = 1.0

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=int))

    @property
    def stop(self) -> int:
        return self.offset + self.size


class ParameterStore:
    """Flat parameter vector with named, disjoint slices."""

    def __init__(self):
        self.slices: dict[str, Slice] = {}
        self.values = np.zeros(0)

    def add(self, name: str, init) -> Slice:
        if name in self.slices:
            raise ValueError(f"duplicate parameter slice {name!r}")
        init = np.asarray(init, dtype=float)
        sl = Slice(name, self.values.size, tuple(init.shape))
        self.slices[name] = sl
        self.values = np.concatenate([self.values, init.ravel()])
        return sl

    @property
    def size(self) -> int:
        return self.values.size

    def get(self, name: str) -> np.ndarray:
        sl = self._slice(name)
        return self.values[sl.offset:sl.stop].reshape(sl.shape)

    def set(self, name: str, value) -> None:
        sl = self._slice(name)
        value = np.asarray(value, dtype=float)
        if value.size != sl.size:
            raise ValueError(
                f"slice {name!r} expects {sl.size} values, got {value.size}"
            )
        self.values[sl.offset:sl.stop] = value.ravel()

    def _slice(self, name: str) -> Slice:
        try:
            return self.slices[name]
        except KeyError:
            raise GradientError(f"unresolved parameter {name!r}") from None

    def trainable_mask(self) -> np.ndarray:
        mask = np.zeros(self.size)
        for sl in self.slices.values():
            if sl.trainable:
                mask[sl.offset:sl.stop] = 1.0
        return mask

    def lr_multipliers(self) -> np.ndarray:
        mult = np.ones(self.size)
        for sl in self.slices.values():
            mult[sl.offset:sl.stop] = sl.lr_multiplier
        return mult

    def copy(self) -> "ParameterStore":
        other = ParameterStore()
        other.slices = {
            k: Slice(s.name, s.offset, s.shape, s.trainable, s.lr_multiplier)
            for k, s in self.slices.items()
        }
        other.values = self.values.copy()
        return other


# --------------------------------------------------------------------------
# graph


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Node:
    __slots__ = ("graph", "id", "op", "children", "attrs", "value", "adjoint", "aux")

    def __init__(self, graph, op, children=(), **attrs):
        self.graph = graph
        self.id = len(graph.nodes)
        self.op = op
        self.children = tuple(children)
        self.attrs = attrs
        self.value = None
        self.adjoint = None
        self.aux = None
        graph.nodes.append(self)

    def __repr__(self):
        label = self.attrs.get("name") or self.attrs.get("label") or ""
        return f"Node({self.id}, {self.op}{', ' + label if label else ''})"

    def _lift(self, other):
        if isinstance(other, Node):
            return other
        return self.graph.const(other)

    def __add__(self, other):
        return self.graph.add(self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.graph.sub(self, self._lift(other))

    def __rsub__(self, other):
        return self.graph.sub(self._lift(other), self)

    def __mul__(self, other):
        return self.graph.mul(self, self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.graph.div(self, self._lift(other))

    def __neg__(self):
        return self.graph.neg(self)

    def __matmul__(self, other):
        return self.graph.matmul(self, other)


class Graph:
    """A reusable computation graph; see module docstring."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._needed_cache: dict[tuple, list[int]] = {}
        self._const_ids: dict[float, Node] = {}
        # node values are cached on the nodes, so executions are serialized
        self._lock = threading.RLock()

    # -- leaves ---------------------------------------------------------
    def const(self, value, label=None) -> Node:
        value = np.asarray(value, dtype=float)
        if value.ndim == 0:
            key = float(value)
            if key in self._const_ids and label is None:
                return self._const_ids[key]
            node = Node(self, "const", value=value, label=label)
            if label is None:
                self._const_ids[key] = node
            return node
        return Node(self, "const", value=value, label=label)

    def input(self, name: str) -> Node:
        return Node(self, "input", name=name)

    def param(self, name: str, shape=None) -> Node:
        return Node(self, "param", name=name, shape_hint=shape)

    # -- arithmetic -----------------------------------------------------
    def add(self, a, b):
        return Node(self, "add", (a, b))

    def sub(self, a, b):
        return Node(self, "sub", (a, b))

    def mul(self, a, b):
        return Node(self, "mul", (a, b))

    def div(self, a, b):
        return Node(self, "div", (a, b))

    def neg(self, a):
        return Node(self, "neg", (a,))

    def exp(self, a):
        return Node(self, "exp", (a,))

    def log(self, a):
        return Node(self, "log", (a,))

    def softplus(self, a):
        return Node(self, "softplus", (a,))

    def sigmoid(self, a):
        return Node(self, "sigmoid", (a,))

    def tanh(self, a):
        return Node(self, "tanh", (a,))

    def relu(self, a):
        return Node(self, "relu", (a,))

    def square(self, a):
        return Node(self, "square", (a,))

    def sqrt(self, a):
        return Node(self, "sqrt", (a,))

    def floor_at(self, a, lower: float):
        """max(a, lower); the gradient is zero where the floor binds."""
        return Node(self, "floor", (a,), lower=float(lower))

    # -- linear algebra and reductions ----------------------------------
    def matmul(self, a, b):
        return Node(self, "matmul", (a, b))

    def dot(self, a, b):
        return Node(self, "dot", (a, b))

    def sum(self, a, axis=None):
        return Node(self, "sum", (a,), axis=axis)

    def cumsum(self, a, axis=0):
        return Node(self, "cumsum", (a,), axis=axis)

    def take(self, a, index, axis=0):
        """Gather along ``axis``; ``index`` is an integer array or input name."""
        if isinstance(index, str):
            return Node(self, "take", (a,), index_input=index, axis=axis)
        return Node(self, "take", (a,), index=np.asarray(index, dtype=np.intp), axis=axis)

    def concat(self, parts, axis=0):
        return Node(self, "concat", tuple(parts), axis=axis)

    def reshape(self, a, shape):
        return Node(self, "reshape", (a,), shape=tuple(shape))

    # -- latent distribution --------------------------------------------
    def cdf(self, a, dist: LatentDistribution):
        return Node(self, "cdf", (a,), dist=dist)

    def log_pdf(self, a, dist: LatentDistribution):
        return Node(self, "logpdf", (a,), dist=dist)

    # -- execution ------------------------------------------------------
    def _needed(self, outputs):
        key = tuple(o.id for o in outputs)
        if key not in self._needed_cache:
            seen = set()
            stack = list(key)
            while stack:
                i = stack.pop()
                if i in seen:
                    continue
                seen.add(i)
                stack.extend(c.id for c in self.nodes[i].children)
            self._needed_cache[key] = sorted(seen)
        return self._needed_cache[key]

    def forward(self, params: ParameterStore, inputs: dict, outputs, check_nan=True):
        """Evaluate ``outputs`` (a node or list of nodes); values cache on nodes."""
        with self._lock:
            return self._forward(params, inputs, outputs, check_nan)

    def _forward(self, params, inputs, outputs, check_nan):
        single = isinstance(outputs, Node)
        outs = [outputs] if single else list(outputs)
        order = self._needed(outs)
        for i in order:
            node = self.nodes[i]
            node.adjoint = None
            node.value = self._eval(node, params, inputs)
        if check_nan:
            for o in outs:
                if np.any(np.isnan(o.value)):
                    self._raise_first_nan(order)
        vals = [o.value for o in outs]
        return vals[0] if single else vals

    def _raise_first_nan(self, order):
        for i in order:
            node = self.nodes[i]
            if np.any(np.isnan(node.value)):
                raise GradientError(f"NaN produced at {node!r}")
        raise GradientError("NaN produced in graph output")

    def backward(self, params: ParameterStore, output: Node, seed=1.0) -> np.ndarray:
        """Reverse sweep after :meth:`forward`; returns the flat gradient."""
        order = self._needed([output])
        if output.value is None:
            raise GradientError("backward called before forward")
        for i in order:
            self.nodes[i].adjoint = None
        output.adjoint = np.broadcast_to(
            np.asarray(seed, dtype=float), np.shape(output.value)
        ).astype(float)
        grad = np.zeros(params.size)
        for i in reversed(order):
            node = self.nodes[i]
            g = node.adjoint
            if g is None:
                continue
            if node.op == "param":
                sl = params._slice(node.attrs["name"])
                grad[sl.offset:sl.stop] += np.reshape(g, -1)
                continue
            if not node.children:
                continue
            for child, cg in zip(node.children, self._vjp(node, g, params)):
                if cg is None:
                    continue
                if child.adjoint is None:
                    child.adjoint = np.array(cg, dtype=float, copy=True)
                else:
                    child.adjoint = child.adjoint + cg
        return grad * params.trainable_mask()

    def value_and_grad(self, params, inputs, output, seed=1.0):
        with self._lock:
            value = self._forward(params, inputs, output, True)
            return value, self.backward(params, output, seed)

    # -- op kernels -----------------------------------------------------
    def _eval(self, node, params, inputs):
        op = node.op
        a = node.attrs
        ch = [c.value for c in node.children]
        if op == "const":
            return a["value"]
        if op == "input":
            try:
                return inputs[a["name"]]
            except KeyError:
                raise GradientError(f"unresolved input {a['name']!r}") from None
        if op == "param":
            return params.get(a["name"])
        if op == "add":
            return ch[0] + ch[1]
        if op == "sub":
            return ch[0] - ch[1]
        if op == "mul":
            return ch[0] * ch[1]
        if op == "div":
            return ch[0] / ch[1]
        if op == "neg":
            return -ch[0]
        if op == "exp":
            with np.errstate(over="ignore"):
                return np.exp(ch[0])
        if op == "log":
            with np.errstate(divide="ignore"):
                return np.log(ch[0])
        if op == "softplus":
            return softplus(ch[0])
        if op == "sigmoid":
            return special.expit(ch[0])
        if op == "tanh":
            return np.tanh(ch[0])
        if op == "relu":
            return np.maximum(ch[0], 0.0)
        if op == "square":
            return np.square(ch[0])
        if op == "sqrt":
            with np.errstate(invalid="ignore"):
                return np.sqrt(ch[0])
        if op == "floor":
            return np.maximum(ch[0], a["lower"])
        if op == "matmul":
            return ch[0] @ ch[1]
        if op == "dot":
            return np.dot(ch[0], ch[1])
        if op == "sum":
            return np.sum(ch[0], axis=a["axis"])
        if op == "cumsum":
            return np.cumsum(ch[0], axis=a["axis"])
        if op == "take":
            if "index" in a:
                idx = a["index"]
            else:
                try:
                    idx = inputs[a["index_input"]]
                except KeyError:
                    raise GradientError(f"unresolved input {a['index_input']!r}") from None
            node.aux = idx
            return np.take(ch[0], idx, axis=a["axis"])
        if op == "concat":
            return np.concatenate(ch, axis=a["axis"])
        if op == "reshape":
            return np.reshape(ch[0], a["shape"])
        if op == "cdf":
            return a["dist"].cdf(ch[0])
        if op == "logpdf":
            return a["dist"].log_pdf(ch[0])
        raise GradientError(f"unknown op {op!r}")

    def _vjp(self, node, g, params):
        op = node.op
        a = node.attrs
        kids = node.children
        x = kids[0].value if kids else None
        y = node.value
        if op == "add":
            return (_unbroadcast(g, np.shape(x)), _unbroadcast(g, np.shape(kids[1].value)))
        if op == "sub":
            return (_unbroadcast(g, np.shape(x)), _unbroadcast(-g, np.shape(kids[1].value)))
        if op == "mul":
            b = kids[1].value
            return (_unbroadcast(g * b, np.shape(x)), _unbroadcast(g * x, np.shape(b)))
        if op == "div":
            b = kids[1].value
            return (
                _unbroadcast(g / b, np.shape(x)),
                _unbroadcast(-g * x / np.square(b), np.shape(b)),
            )
        if op == "neg":
            return (-g,)
        if op == "exp":
            return (g * y,)
        if op == "log":
            return (g / x,)
        if op == "softplus":
            return (g * special.expit(x),)
        if op == "sigmoid":
            return (g * y * (1.0 - y),)
        if op == "tanh":
            return (g * (1.0 - np.square(y)),)
        if op == "relu":
            return (g * (x > 0.0),)
        if op == "square":
            return (2.0 * g * x,)
        if op == "sqrt":
            return (g / (2.0 * y),)
        if op == "floor":
            return (g * (x > a["lower"]),)
        if op == "matmul":
            b = kids[1].value
            if b.ndim == 1:
                return (np.outer(g, b), x.T @ g)
            return (g @ b.T, x.T @ g)
        if op == "dot":
            b = kids[1].value
            return (g * b, g * x)
        if op == "sum":
            axis = a["axis"]
            if axis is None:
                return (np.broadcast_to(g, np.shape(x)),)
            return (np.broadcast_to(np.expand_dims(g, axis), np.shape(x)),)
        if op == "cumsum":
            axis = a["axis"]
            rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
            return (rev,)
        if op == "take":
            return (self._take_vjp(node, g, x),)
        if op == "concat":
            axis = a["axis"]
            sizes = [np.shape(k.value)[axis] for k in kids]
            splits = np.cumsum(sizes)[:-1]
            return tuple(np.split(g, splits, axis=axis))
        if op == "reshape":
            return (np.reshape(g, np.shape(x)),)
        if op == "cdf":
            dens = np.where(np.isfinite(x), a["dist"].pdf(np.where(np.isfinite(x), x, 0.0)), 0.0)
            return (g * dens,)
        if op == "logpdf":
            return (g * a["dist"].dlog_pdf(x),)
        raise GradientError(f"no vjp for op {op!r}")

    def _take_vjp(self, node, g, x):
        a = node.attrs
        idx = node.aux
        axis = a["axis"]
        if x.ndim == 1:
            return np.bincount(idx, weights=g, minlength=x.shape[0])
        out = np.zeros_like(x)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return out
