"""Reverse-mode differentiation over an explicitly built computation graph.

A :class:`Graph` is a list of nodes in topological order (a node can only
reference nodes created before it).  Leaves are named *inputs* (data) and
named *params* (trainable); every other node is an operation.  Values are
2-d ``float64`` arrays, except the results of :meth:`Graph.sum` and
:meth:`Graph.mean`, which are 0-d.  Binary arithmetic broadcasts like numpy.

Typical use::

    g = Graph()
    x = g.input("x")
    w = g.param("w")
    g.set_loss(g.sum(g.matmul(x, w)))
    loss, grads = forward_backward(g, {"x": X, "w": W})
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError, ShapeError

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class Node:
    kind: str
    inputs: tuple[int, ...]
    name: str
    attrs: dict = field(default_factory=dict)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# Each entry: (forward(values, attrs) -> out, backward(g, values, out, attrs) -> grads)
def _fw_matmul(v, a):
    x, y = v
    if x.shape[-1] != y.shape[0]:
        raise ShapeError(f"matmul shapes {x.shape} and {y.shape} do not align")
    return x @ y


def _bw_matmul(g, v, out, a):
    x, y = v
    return g @ y.T, x.T @ g


def _fw_elu(v, a):
    x = v[0]
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _bw_elu(g, v, out, a):
    x = v[0]
    return (g * np.where(x > 0, 1.0, out + 1.0),)


def _fw_log_softmax(v, a):
    x = v[0]
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _bw_log_softmax(g, v, out, a):
    return (g - np.exp(out) * g.sum(axis=1, keepdims=True),)


def _fw_concat(v, a):
    rows = {x.shape[0] for x in v if x.shape[1] > 0}
    if len(rows) > 1:
        raise ShapeError(f"concat_cols row counts differ: {sorted(rows)}")
    n = rows.pop() if rows else v[0].shape[0]
    return np.concatenate([x if x.shape[1] > 0 else np.empty((n, 0)) for x in v], axis=1)


def _bw_concat(g, v, out, a):
    grads, start = [], 0
    for x in v:
        stop = start + x.shape[1]
        grads.append(g[:, start:stop] if x.shape[1] > 0 else np.zeros_like(x))
        start = stop
    return tuple(grads)


def _fw_slice(v, a):
    x = v[0]
    if a["stop"] > x.shape[1]:
        raise ShapeError(f"slice [{a['start']}:{a['stop']}] exceeds {x.shape[1]} columns")
    return x[:, a["start"]:a["stop"]]


def _bw_slice(g, v, out, a):
    full = np.zeros_like(v[0])
    full[:, a["start"]:a["stop"]] = g
    return (full,)


_OPS = {
    "matmul": (_fw_matmul, _bw_matmul),
    "add": (lambda v, a: v[0] + v[1],
            lambda g, v, o, a: (_unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape))),
    "sub": (lambda v, a: v[0] - v[1],
            lambda g, v, o, a: (_unbroadcast(g, v[0].shape), _unbroadcast(-g, v[1].shape))),
    "mul": (lambda v, a: v[0] * v[1],
            lambda g, v, o, a: (_unbroadcast(g * v[1], v[0].shape),
                                _unbroadcast(g * v[0], v[1].shape))),
    "div": (lambda v, a: v[0] / v[1],
            lambda g, v, o, a: (_unbroadcast(g / v[1], v[0].shape),
                                _unbroadcast(-g * o / v[1], v[1].shape))),
    "scale": (lambda v, a: a["c"] * v[0], lambda g, v, o, a: (a["c"] * g,)),
    "add_const": (lambda v, a: v[0] + a["c"], lambda g, v, o, a: (g,)),
    "exp": (lambda v, a: np.exp(v[0]), lambda g, v, o, a: (g * o,)),
    "log": (lambda v, a: np.log(v[0]), lambda g, v, o, a: (g / v[0],)),
    "sqrt": (lambda v, a: np.sqrt(v[0]), lambda g, v, o, a: (g * 0.5 / o,)),
    "square": (lambda v, a: v[0] * v[0], lambda g, v, o, a: (2.0 * g * v[0],)),
    "elu": (_fw_elu, _bw_elu),
    "softplus": (lambda v, a: np.logaddexp(0.0, v[0]),
                 lambda g, v, o, a: (g * _sigmoid(v[0]),)),
    "sigmoid": (lambda v, a: _sigmoid(v[0]), lambda g, v, o, a: (g * o * (1.0 - o),)),
    "sum": (lambda v, a: np.asarray(v[0].sum()),
            lambda g, v, o, a: (np.full(v[0].shape, float(g)),)),
    "mean": (lambda v, a: np.asarray(v[0].mean()) if v[0].size else np.asarray(0.0),
             lambda g, v, o, a: (np.full(v[0].shape, float(g) / max(v[0].size, 1)),)),
    "sum_cols": (lambda v, a: v[0].sum(axis=1, keepdims=True),
                 lambda g, v, o, a: (np.broadcast_to(g, v[0].shape).copy(),)),
    "slice_cols": (_fw_slice, _bw_slice),
    "concat_cols": (_fw_concat, _bw_concat),
    "log_softmax": (_fw_log_softmax, _bw_log_softmax),
}


class Graph:
    """An append-only computation graph with a single scalar loss node."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.inputs: dict[str, int] = {}
        self.params: dict[str, int] = {}
        self.loss: int | None = None

    def __len__(self):
        return len(self.nodes)

    def _append(self, kind, inputs=(), name=None, **attrs) -> int:
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ValueError(f"node {i} does not exist")
        idx = len(self.nodes)
        self.nodes.append(Node(kind, tuple(inputs), name or f"{kind}#{idx}", attrs))
        return idx

    # leaves
    def input(self, name: str) -> int:
        if name in self.inputs or name in self.params:
            raise ValueError(f"duplicate binding name {name!r}")
        self.inputs[name] = self._append("input", name=name)
        return self.inputs[name]

    def param(self, name: str) -> int:
        if name in self.inputs or name in self.params:
            raise ValueError(f"duplicate binding name {name!r}")
        self.params[name] = self._append("param", name=name)
        return self.params[name]

    def const(self, value, name=None) -> int:
        return self._append("const", name=name, value=np.atleast_2d(np.asarray(value, float)))

    # operations
    def op(self, kind: str, *inputs: int, name=None, **attrs) -> int:
        if kind not in _OPS:
            raise ValueError(f"unknown operation {kind!r}")
        return self._append(kind, inputs, name, **attrs)

    def matmul(self, a, b, name=None):
        return self.op("matmul", a, b, name=name)

    def add(self, a, b, name=None):
        return self.op("add", a, b, name=name)

    def sub(self, a, b, name=None):
        return self.op("sub", a, b, name=name)

    def mul(self, a, b, name=None):
        return self.op("mul", a, b, name=name)

    def div(self, a, b, name=None):
        return self.op("div", a, b, name=name)

    def scale(self, a, c: float, name=None):
        return self.op("scale", a, name=name, c=float(c))

    def add_const(self, a, c: float, name=None):
        return self.op("add_const", a, name=name, c=float(c))

    def exp(self, a, name=None):
        return self.op("exp", a, name=name)

    def log(self, a, name=None):
        return self.op("log", a, name=name)

    def sqrt(self, a, name=None):
        return self.op("sqrt", a, name=name)

    def square(self, a, name=None):
        return self.op("square", a, name=name)

    def elu(self, a, name=None):
        return self.op("elu", a, name=name)

    def softplus(self, a, name=None):
        return self.op("softplus", a, name=name)

    def sigmoid(self, a, name=None):
        return self.op("sigmoid", a, name=name)

    def sum(self, a, name=None):
        return self.op("sum", a, name=name)

    def mean(self, a, name=None):
        return self.op("mean", a, name=name)

    def sum_cols(self, a, name=None):
        return self.op("sum_cols", a, name=name)

    def slice_cols(self, a, start: int, stop: int, name=None):
        if not 0 <= start <= stop:
            raise ValueError("invalid column slice")
        return self.op("slice_cols", a, name=name, start=int(start), stop=int(stop))

    def concat_cols(self, *parts, name=None):
        return self.op("concat_cols", *parts, name=name)

    def log_softmax(self, a, name=None):
        return self.op("log_softmax", a, name=name)

    def set_loss(self, node: int):
        self.loss = node

    # composite helpers
    def gaussian_log_pdf(self, x, mean, var, name=None):
        """Elementwise log N(x; mean, var) as a node of the same shape."""
        diff = self.sub(x, mean)
        quad = self.div(self.square(diff), var)
        return self.scale(self.add_const(self.add(self.log(var), quad), _LOG_2PI), -0.5, name=name)

    def kl_std_normal(self, mean, var, name=None):
        """Row-wise KL(N(mean, var) || N(0, I)) as an (n, 1) node."""
        inner = self.sub(self.add(self.square(mean), var), self.log(var))
        summed = self.sum_cols(self.add_const(inner, -1.0))
        return self.scale(summed, 0.5, name=name)


def _check_finite(graph, idx, value):
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite value at node {graph.nodes[idx].name!r}")


def evaluate(graph: Graph, bindings: dict, outputs=None, check=True) -> list:
    """Run the forward pass and return every node value (or just ``outputs``)."""
    values: list = [None] * len(graph.nodes)
    for idx, node in enumerate(graph.nodes):
        if node.kind in ("input", "param"):
            if node.name not in bindings:
                raise KeyError(f"no binding for {node.kind} {node.name!r}")
            val = np.asarray(bindings[node.name], dtype=float)
            if val.ndim == 1:
                val = val[None, :]
        elif node.kind == "const":
            val = node.attrs["value"]
        else:
            fw = _OPS[node.kind][0]
            with np.errstate(all="ignore"):
                val = fw([values[i] for i in node.inputs], node.attrs)
        if check:
            _check_finite(graph, idx, val)
        values[idx] = val
    if outputs is None:
        return values
    return [values[i] for i in outputs]


def forward_backward(graph: Graph, bindings: dict, values=None):
    """Evaluate the loss and its exact gradient with respect to every param.

    Returns ``(loss, grads)`` where ``grads`` maps each param name to an
    array shaped like its binding.  Params that the loss does not depend on
    get zero gradients.
    """
    if graph.loss is None:
        raise ValueError("graph has no loss node")
    if values is None:
        values = evaluate(graph, bindings)
    loss_val = values[graph.loss]
    if np.size(loss_val) != 1:
        raise ShapeError(f"loss node has shape {np.shape(loss_val)}, expected scalar")

    grads: list = [None] * len(graph.nodes)
    grads[graph.loss] = np.ones_like(loss_val)
    for idx in range(graph.loss, -1, -1):
        g = grads[idx]
        node = graph.nodes[idx]
        if g is None or node.kind in ("input", "param", "const"):
            continue
        bw = _OPS[node.kind][1]
        with np.errstate(all="ignore"):
            in_grads = bw(g, [values[i] for i in node.inputs], values[idx], node.attrs)
        for src, gi in zip(node.inputs, in_grads):
            grads[src] = gi if grads[src] is None else grads[src] + gi

    out = {}
    for name, idx in graph.params.items():
        g = grads[idx]
        out[name] = np.zeros_like(values[idx]) if g is None else np.array(g, dtype=float)
        _check_finite(graph, idx, out[name])
    return float(loss_val), out
