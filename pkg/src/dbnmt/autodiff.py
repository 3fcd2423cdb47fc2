"""Define-by-run reverse-mode automatic differentiation over numpy arrays.

A :class:`Graph` records every operation applied to its nodes and evaluates it
eagerly. The recorded tape can be replayed with new input values
(:func:`forward_eval`) and differentiated (:func:`backward`). Nodes carry
operator overloads so layer code reads like ordinary array math::

    g = Graph()
    w = g.input(np.zeros(3), name="w")
    x = g.const(np.ones(3))
    loss = sigmoid(w * x).sum()
    grads = backward(g, loss)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels

__all__ = [
    "GraphError",
    "ShapeError",
    "Node",
    "Graph",
    "forward_eval",
    "backward",
    "check_gradients",
    "GradCheckReport",
]


class GraphError(ValueError):
    """Raised for malformed graphs: unbound inputs, non-scalar losses, bad arguments."""


class ShapeError(GraphError):
    """Operand shapes are incompatible for an op; names both offending nodes."""

    def __init__(self, op: str, a: "Node", b: "Node", detail: str = ""):
        msg = f"{op}: incompatible shapes {a.label}{a.shape} and {b.label}{b.shape}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.nodes = (a.id, b.id)


@dataclass(frozen=True)
class Op:
    forward: Callable
    backward: Callable


OPS: dict[str, Op] = {}


def _register(name):
    def deco(cls):
        OPS[name] = Op(cls.forward, cls.backward)
        return cls

    return deco


class Node:
    __slots__ = ("graph", "id", "op", "parents", "payload", "value", "cache", "requires_grad", "name")

    def __init__(self, graph, id, op, parents, payload, value, cache, requires_grad, name=None):
        self.graph = graph
        self.id = id
        self.op = op
        self.parents = parents
        self.payload = payload
        self.value = value
        self.cache = cache
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def label(self) -> str:
        return f"#{self.id}:{self.name or self.op}"

    def __repr__(self):
        return f"Node({self.label}, shape={self.shape})"

    def _lift(self, other):
        if isinstance(other, Node):
            return other
        return self.graph.const(np.asarray(other, dtype=self.graph.dtype))

    def __add__(self, other):
        return add(self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, self._lift(other))

    def __rsub__(self, other):
        return sub(self._lift(other), self)

    def __mul__(self, other):
        if not isinstance(other, Node) and np.ndim(other) == 0:
            return scale(self, float(other))
        return mul(self, self._lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return sum_(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


class Graph:
    """A tape of nodes in creation (hence topological) order."""

    def __init__(self, dtype=np.float64, grad_reverse_transparent: bool = False):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Node] = []
        # when set, grad-reverse nodes pass gradients through unchanged;
        # used by the finite-difference checker
        self.grad_reverse_transparent = grad_reverse_transparent

    def __len__(self):
        return len(self.nodes)

    def input(self, value, name: str | None = None, requires_grad: bool = True) -> Node:
        arr = np.ascontiguousarray(value, dtype=self.dtype)
        if not np.all(np.isfinite(arr)):
            raise GraphError(f"non-finite values bound to input {name!r}")
        node = Node(self, len(self.nodes), "input", (), None, arr, None, requires_grad, name)
        self.nodes.append(node)
        return node

    def const(self, value, name: str | None = None) -> Node:
        return self.input(value, name=name, requires_grad=False)

    def apply(self, op: str, parents: tuple, payload=None, name: str | None = None) -> Node:
        for p in parents:
            if p.graph is not self:
                raise GraphError(f"{op}: operand {p.label} belongs to another graph")
        value, cache = OPS[op].forward(payload, *[p.value for p in parents])
        node = Node(
            self,
            len(self.nodes),
            op,
            parents,
            payload,
            value,
            cache,
            any(p.requires_grad for p in parents),
            name,
        )
        self.nodes.append(node)
        return node

    def inputs(self) -> list[Node]:
        return [n for n in self.nodes if n.op == "input"]

    def params(self) -> list[Node]:
        return [n for n in self.nodes if n.op == "input" and n.requires_grad]

    def bindings(self) -> dict[int, np.ndarray]:
        return {n.id: n.value for n in self.inputs()}


# ---------------------------------------------------------------------------
# op helpers


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    nlead = grad.ndim - len(shape)
    if nlead:
        grad = grad.sum(axis=tuple(range(nlead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _sigmoid(a):
    return 0.5 * (np.tanh(0.5 * a) + 1.0)


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a, b) from None


@_register("add")
class _Add:
    @staticmethod
    def forward(_, a, b):
        return a + b, None

    @staticmethod
    def backward(_, g, cache, out, a, b):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


@_register("sub")
class _Sub:
    @staticmethod
    def forward(_, a, b):
        return a - b, None

    @staticmethod
    def backward(_, g, cache, out, a, b):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


@_register("mul")
class _Mul:
    @staticmethod
    def forward(_, a, b):
        return a * b, None

    @staticmethod
    def backward(_, g, cache, out, a, b):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@_register("scale")
class _Scale:
    @staticmethod
    def forward(c, a):
        return a * a.dtype.type(c), None

    @staticmethod
    def backward(c, g, cache, out, a):
        return (g * g.dtype.type(c),)


@_register("matmul")
class _Matmul:
    @staticmethod
    def forward(_, a, b):
        return np.matmul(a, b), None

    @staticmethod
    def backward(_, g, cache, out, a, b):
        ga = np.matmul(g, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


@_register("linear")
class _Linear:
    """``x @ W.T`` for x of shape (..., in) and W of shape (out, in)."""

    @staticmethod
    def forward(_, x, w):
        return x @ w.T, None

    @staticmethod
    def backward(_, g, cache, out, x, w):
        gx = g @ w
        gw = g.reshape(-1, g.shape[-1]).T @ x.reshape(-1, x.shape[-1])
        return gx, gw


@_register("sigmoid")
class _SigmoidOp:
    @staticmethod
    def forward(_, a):
        return _sigmoid(a), None

    @staticmethod
    def backward(_, g, cache, out, a):
        return (g * out * (1.0 - out),)


@_register("tanh")
class _Tanh:
    @staticmethod
    def forward(_, a):
        return np.tanh(a), None

    @staticmethod
    def backward(_, g, cache, out, a):
        return (g * (1.0 - out * out),)


@_register("relu")
class _Relu:
    @staticmethod
    def forward(_, a):
        return np.maximum(a, 0.0), None

    @staticmethod
    def backward(_, g, cache, out, a):
        return (g * (a > 0),)


@_register("exp")
class _Exp:
    @staticmethod
    def forward(_, a):
        return np.exp(a), None

    @staticmethod
    def backward(_, g, cache, out, a):
        return (g * out,)


@_register("log")
class _Log:
    @staticmethod
    def forward(_, a):
        return np.log(a), None

    @staticmethod
    def backward(_, g, cache, out, a):
        return (g / a,)


@_register("sum")
class _Sum:
    @staticmethod
    def forward(axis, a):
        return np.asarray(a.sum(axis=axis)), None

    @staticmethod
    def backward(axis, g, cache, out, a):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)


@_register("reshape")
class _Reshape:
    @staticmethod
    def forward(shape, a):
        return a.reshape(shape), None

    @staticmethod
    def backward(shape, g, cache, out, a):
        return (g.reshape(a.shape),)


@_register("broadcast")
class _Broadcast:
    @staticmethod
    def forward(shape, a):
        return np.ascontiguousarray(np.broadcast_to(a, shape)), None

    @staticmethod
    def backward(shape, g, cache, out, a):
        return (_unbroadcast(g, a.shape),)


@_register("concat")
class _Concat:
    @staticmethod
    def forward(axis, *xs):
        return np.concatenate(xs, axis=axis), None

    @staticmethod
    def backward(axis, g, cache, out, *xs):
        bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return tuple(np.split(g, bounds, axis=axis))


@_register("stack")
class _Stack:
    @staticmethod
    def forward(axis, *xs):
        return np.stack(xs, axis=axis), None

    @staticmethod
    def backward(axis, g, cache, out, *xs):
        return tuple(np.moveaxis(g, axis, 0))


@_register("slice")
class _Slice:
    @staticmethod
    def forward(payload, a):
        axis, start, stop = payload
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, stop)
        return a[tuple(idx)], None

    @staticmethod
    def backward(payload, g, cache, out, a):
        axis, start, stop = payload
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, stop)
        full = np.zeros_like(a)
        full[tuple(idx)] = g
        return (full,)


@_register("take")
class _Take:
    """Index along axis 0 with an integer array (row gather)."""

    @staticmethod
    def forward(index, a):
        return a[index], None

    @staticmethod
    def backward(index, g, cache, out, a):
        full = np.zeros_like(a)
        np.add.at(full, index, g)
        return (full,)


@_register("embed")
class _Embed:
    @staticmethod
    def forward(ids, table):
        return table[ids], None

    @staticmethod
    def backward(ids, g, cache, out, table):
        full = np.zeros_like(table)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)


@_register("softmax")
class _Softmax:
    """Softmax over ``axis``; masked-out entries (payload mask False) get zero probability."""

    @staticmethod
    def forward(payload, a):
        axis, mask = payload
        if mask is not None:
            a = np.where(mask, a, -np.inf)
        e = np.exp(a - a.max(axis=axis, keepdims=True))
        return e / e.sum(axis=axis, keepdims=True), None

    @staticmethod
    def backward(payload, g, cache, out, a):
        axis, _ = payload
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)


@_register("log_softmax")
class _LogSoftmax:
    """Log-softmax over the last axis."""

    @staticmethod
    def forward(_, a):
        flat = np.ascontiguousarray(a.reshape(-1, a.shape[-1]))
        return kernels.log_softmax_rows(flat).reshape(a.shape), None

    @staticmethod
    def backward(_, g, cache, out, a):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)


@_register("cross_entropy")
class _CrossEntropy:
    """``-sum(mask * logp[..., target])`` over all leading positions; scalar output."""

    @staticmethod
    def forward(payload, logp):
        targets, mask = payload
        picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
        return np.asarray(-(picked * mask).sum(), dtype=logp.dtype), None

    @staticmethod
    def backward(payload, g, cache, out, logp):
        targets, mask = payload
        full = np.zeros_like(logp)
        np.put_along_axis(full, targets[..., None], (-g * mask)[..., None].astype(logp.dtype), axis=-1)
        return (full,)


@_register("sigmoid_xent")
class _SigmoidXent:
    """Binary cross-entropy from logits: ``-sum(y log s(a) + (1-y) log(1-s(a)))``."""

    @staticmethod
    def forward(labels, a):
        # -log s(a) = softplus(-a); -log(1 - s(a)) = softplus(a)
        loss = labels * np.logaddexp(0.0, -a) + (1.0 - labels) * np.logaddexp(0.0, a)
        return np.asarray(loss.sum(), dtype=a.dtype), None

    @staticmethod
    def backward(labels, g, cache, out, a):
        return (g * (_sigmoid(a) - labels),)


@_register("lerp")
class _Lerp:
    """``b + z * (a - b)`` kept inside [min(a, b), max(a, b)] despite rounding."""

    @staticmethod
    def forward(_, z, a, b):
        out = b + z * (a - b)
        return np.clip(out, np.minimum(a, b), np.maximum(a, b)), None

    @staticmethod
    def backward(_, g, cache, out, z, a, b):
        return (
            _unbroadcast(g * (a - b), z.shape),
            _unbroadcast(g * z, a.shape),
            _unbroadcast(g * (1.0 - z), b.shape),
        )


@_register("grad_reverse")
class _GradReverse:
    @staticmethod
    def forward(c, a):
        return a, None

    @staticmethod
    def backward(c, g, cache, out, a):
        return (g * g.dtype.type(-c),)


@_register("conv_seq")
class _ConvSeq:
    """Valid 1-D convolution over time.

    x: (B, T, m), w: (C, l, m), b: (C,) -> (B, T - l + 1, C).
    """

    @staticmethod
    def forward(_, x, w, b):
        C, l, m = w.shape
        win = np.lib.stride_tricks.sliding_window_view(x, l, axis=1)  # (B, T', m, l)
        cols = np.ascontiguousarray(np.swapaxes(win, -1, -2)).reshape(x.shape[0], -1, l * m)
        return cols @ w.reshape(C, l * m).T + b, cols

    @staticmethod
    def backward(_, g, cols, out, x, w, b):
        C, l, m = w.shape
        B, Tp, _ = g.shape
        gw = (g.reshape(-1, C).T @ cols.reshape(-1, l * m)).reshape(C, l, m)
        gb = g.sum(axis=(0, 1))
        gcols = (g @ w.reshape(C, l * m)).reshape(B, Tp, l, m)
        gx = np.zeros_like(x)
        for k in range(l):
            gx[:, k:k + Tp, :] += gcols[:, :, k, :]
        return gx, gw, gb


@_register("max_over_time")
class _MaxOverTime:
    """(B, T, C) -> (B, C), maximum over the first ``valid[b]`` steps."""

    @staticmethod
    def forward(valid, x):
        vals, idx = kernels.max_over_time(np.ascontiguousarray(x), valid)
        return vals, idx

    @staticmethod
    def backward(valid, g, idx, out, x):
        return (kernels.max_over_time_backward(np.ascontiguousarray(g), idx, x.shape[1]),)


@_register("gru_cell")
class _GruCell:
    """Fused GRU step with a per-row keep mask.

    Parents: x (B, I), h (B, H), W (3H, I), U (3H, H), b (3H,). Gate order is
    ``[update | reset | candidate]``; rows with mask 0 keep ``h`` unchanged.
    """

    @staticmethod
    def forward(mask, x, h, W, U, b):
        H = h.shape[1]
        gx = x @ W.T + b
        ghzr = h @ U[: 2 * H].T
        z, r, rh = kernels.gru_gates(gx, ghzr, h)
        ghn = rh @ U[2 * H:].T
        n, out = kernels.gru_output(gx, ghn, h, z, mask)
        return out, (z, r, rh, n)

    @staticmethod
    def backward(mask, g, cache, out, x, h, W, U, b):
        z, r, rh, n = cache
        H = h.shape[1]
        da, dh = kernels.gru_backward_a(np.ascontiguousarray(g), mask, h, z, n)
        dan = da[:, 2 * H:]
        drh = dan @ U[2 * H:]
        kernels.gru_backward_b(np.ascontiguousarray(drh), h, r, da, dh)
        dazr = da[:, : 2 * H]
        dh += dazr @ U[: 2 * H]
        dU = np.empty_like(U)
        dU[: 2 * H] = dazr.T @ h
        dU[2 * H:] = dan.T @ rh
        return da @ W, dh, da.T @ x, dU, da.sum(axis=0)


# ---------------------------------------------------------------------------
# public functional API


def add(a: Node, b: Node) -> Node:
    _check_broadcast("add", a, b)
    return a.graph.apply("add", (a, b))


def sub(a: Node, b: Node) -> Node:
    _check_broadcast("sub", a, b)
    return a.graph.apply("sub", (a, b))


def mul(a: Node, b: Node) -> Node:
    _check_broadcast("mul", a, b)
    return a.graph.apply("mul", (a, b))


def scale(a: Node, c: float) -> Node:
    return a.graph.apply("scale", (a,), float(c))


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim < 2 or b.value.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a, b)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a, b, "batch dims") from None
    return a.graph.apply("matmul", (a, b))


def linear(x: Node, w: Node, b: Node | None = None) -> Node:
    """``x @ w.T (+ b)`` with ``w`` stored as (out, in)."""
    if w.value.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError("linear", x, w)
    y = x.graph.apply("linear", (x, w))
    return y if b is None else add(y, b)


def sigmoid(a: Node) -> Node:
    return a.graph.apply("sigmoid", (a,))


def tanh(a: Node) -> Node:
    return a.graph.apply("tanh", (a,))


def relu(a: Node) -> Node:
    return a.graph.apply("relu", (a,))


def exp(a: Node) -> Node:
    return a.graph.apply("exp", (a,))


def log(a: Node) -> Node:
    return a.graph.apply("log", (a,))


def sum_(a: Node, axis: int | None = None) -> Node:
    return a.graph.apply("sum", (a,), axis)


def reshape(a: Node, shape) -> Node:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.value.size:
        raise GraphError(f"reshape: cannot view {a.label}{a.shape} as {shape}")
    return a.graph.apply("reshape", (a,), shape)


def broadcast(a: Node, shape) -> Node:
    shape = tuple(shape)
    try:
        np.broadcast_to(a.value, shape)
    except ValueError:
        raise GraphError(f"broadcast: {a.label}{a.shape} does not broadcast to {shape}") from None
    return a.graph.apply("broadcast", (a,), shape)


def concat(nodes, axis: int = -1) -> Node:
    nodes = tuple(nodes)
    ref = nodes[0]
    ax = axis % ref.value.ndim
    for other in nodes[1:]:
        if other.value.ndim != ref.value.ndim or any(
            s != t for i, (s, t) in enumerate(zip(ref.shape, other.shape)) if i != ax
        ):
            raise ShapeError("concat", ref, other, f"axis={axis}")
    return ref.graph.apply("concat", nodes, ax)


def stack(nodes, axis: int = 0) -> Node:
    nodes = tuple(nodes)
    for other in nodes[1:]:
        if other.shape != nodes[0].shape:
            raise ShapeError("stack", nodes[0], other)
    return nodes[0].graph.apply("stack", nodes, axis)


def slice_(a: Node, axis: int, start: int | None, stop: int | None) -> Node:
    return a.graph.apply("slice", (a,), (axis % a.value.ndim, start, stop))


def take(a: Node, index) -> Node:
    return a.graph.apply("take", (a,), np.asarray(index, dtype=np.int64))


def embed(table: Node, ids) -> Node:
    ids = np.asarray(ids, dtype=np.int64)
    V = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise GraphError(f"embed: token id out of range [0, {V}) for {table.label}")
    return table.graph.apply("embed", (table,), ids)


def softmax(a: Node, axis: int = -1, mask=None) -> Node:
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape:
            raise GraphError(f"softmax: mask shape {mask.shape} != {a.label}{a.shape}")
    return a.graph.apply("softmax", (a,), (axis, mask))


def log_softmax(a: Node) -> Node:
    return a.graph.apply("log_softmax", (a,))


def cross_entropy(logp: Node, targets, mask=None) -> Node:
    """Summed negative log-likelihood of ``targets`` under ``logp`` (last axis = classes)."""
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logp.shape[:-1]:
        raise GraphError(f"cross_entropy: targets {targets.shape} vs {logp.label}{logp.shape}")
    if mask is None:
        mask = np.ones(targets.shape)
    return logp.graph.apply("cross_entropy", (logp,), (targets, np.asarray(mask, dtype=logp.graph.dtype)))


def sigmoid_xent(logits: Node, labels) -> Node:
    labels = np.asarray(labels, dtype=logits.graph.dtype)
    if labels.shape != logits.shape:
        raise GraphError(f"sigmoid_xent: labels {labels.shape} vs {logits.label}{logits.shape}")
    return logits.graph.apply("sigmoid_xent", (logits,), labels)


def lerp(z: Node, a: Node, b: Node) -> Node:
    """Elementwise ``z * a + (1 - z) * b``; exact when ``a == b`` and never outside [a, b]."""
    if a.shape != b.shape:
        raise ShapeError("lerp", a, b)
    _check_broadcast("lerp", z, a)
    return a.graph.apply("lerp", (z, a, b))


def grad_reverse(a: Node, scale: float = 1.0) -> Node:
    """Identity on the forward pass; multiplies the incoming gradient by ``-scale``."""
    if not scale > 0:
        raise GraphError(f"grad_reverse: scale must be positive, got {scale}")
    return a.graph.apply("grad_reverse", (a,), float(scale))


def conv_seq(x: Node, w: Node, b: Node) -> Node:
    if w.value.ndim != 3 or x.value.ndim != 3 or w.shape[2] != x.shape[2]:
        raise ShapeError("conv_seq", x, w)
    if x.shape[1] < w.shape[1]:
        raise ShapeError("conv_seq", x, w, "sequence shorter than kernel")
    return x.graph.apply("conv_seq", (x, w, b))


def max_over_time(x: Node, valid=None) -> Node:
    B, T = x.shape[:2]
    valid = np.full(B, T, dtype=np.int64) if valid is None else np.asarray(valid, dtype=np.int64)
    if valid.shape != (B,) or valid.min() < 1 or valid.max() > T:
        raise GraphError(f"max_over_time: bad valid lengths for {x.label}{x.shape}")
    return x.graph.apply("max_over_time", (x,), valid)


def gru_cell(x: Node, h: Node, W: Node, U: Node, b: Node, mask=None) -> Node:
    H = h.shape[1]
    if W.shape != (3 * H, x.shape[1]):
        raise ShapeError("gru_cell", x, W)
    if U.shape != (3 * H, H) or b.shape != (3 * H,):
        raise ShapeError("gru_cell", h, U)
    if x.shape[0] != h.shape[0]:
        raise ShapeError("gru_cell", x, h, "batch")
    if mask is None:
        mask = np.ones(h.shape[0], dtype=h.graph.dtype)
    else:
        mask = np.ascontiguousarray(mask, dtype=h.graph.dtype)
    return h.graph.apply("gru_cell", (x, h, W, U, b), mask)


# ---------------------------------------------------------------------------
# evaluation and differentiation


def forward_eval(graph: Graph, bindings: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    """Replay the tape with the given input values; returns every node's value.

    Every input node must appear in ``bindings`` (keyed by node id). The
    graph's stored values and caches are updated so a subsequent
    :func:`backward` differentiates at the new point.
    """
    values: dict[int, np.ndarray] = {}
    for node in graph.nodes:
        if node.op == "input":
            if node.id not in bindings:
                raise GraphError(f"unbound input {node.label}")
            val = np.ascontiguousarray(bindings[node.id], dtype=graph.dtype)
            if val.shape != node.shape:
                raise GraphError(f"input {node.label}: bound shape {val.shape} != {node.shape}")
            node.value = val
        else:
            node.value, node.cache = OPS[node.op].forward(node.payload, *[p.value for p in node.parents])
        values[node.id] = node.value
    return values


def backward(graph: Graph, loss: Node, seed=None) -> dict[int, np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. every node that reaches it.

    Input nodes that do not require grad or are not connected get a zero
    gradient so the result covers every input.
    """
    if loss.value.size != 1 and seed is None:
        raise GraphError(f"backward: loss {loss.label} is not scalar, shape {loss.shape}")
    grads: dict[int, np.ndarray] = {
        loss.id: np.ones_like(loss.value) if seed is None else np.asarray(seed, dtype=graph.dtype)
    }
    transparent = graph.grad_reverse_transparent
    for node in reversed(graph.nodes[: loss.id + 1]):
        g = grads.get(node.id)
        if g is None or node.op == "input" or not node.requires_grad:
            continue
        if node.op == "grad_reverse" and transparent:
            parent_grads = (g,)
        else:
            parent_grads = OPS[node.op].backward(
                node.payload, g, node.cache, node.value, *[p.value for p in node.parents]
            )
        for p, pg in zip(node.parents, parent_grads):
            if not p.requires_grad or pg is None:
                continue
            if p.id in grads:
                grads[p.id] = grads[p.id] + pg
            else:
                grads[p.id] = pg
    for node in graph.inputs():
        if node.id not in grads:
            grads[node.id] = np.zeros_like(node.value)
    return grads


@dataclass
class GradCheckReport:
    """Finite-difference comparison per parameter node.

    ``errors`` maps a node label to the maximum relative error over its
    entries. ``reversal_checks`` maps each grad-reverse node label to whether
    the gradient at its input equals ``-scale`` times the gradient at its
    output; those nodes are contract-checked rather than differenced.
    """

    errors: dict[str, float] = field(default_factory=dict)
    reversal_checks: dict[str, bool] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_error < tol and all(self.reversal_checks.values())


def check_gradients(
    graph: Graph, loss: Node, eps: float = 1e-5, max_entries: int | None = None, stencil: int = 2
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``stencil=2`` is the usual two-point difference; ``stencil=4`` uses the
    fourth-order five-point formula, which tolerates a larger ``eps`` and so
    resolves small gradient entries that cancellation would otherwise swamp.

    Grad-reverse nodes are made transparent while differencing (finite
    differences see the identity forward pass); separately, the real backward
    pass is checked to apply exactly ``-scale`` at each of them.
    ``max_entries`` caps how many entries per parameter are probed.
    """
    if not 0 < eps < 1e-2:
        raise GraphError(f"eps must lie in (0, 1e-2), got {eps}")
    if stencil not in (2, 4):
        raise GraphError(f"stencil must be 2 or 4, got {stencil}")
    base = {k: v.copy() for k, v in graph.bindings().items()}
    forward_eval(graph, base)
    report = GradCheckReport()

    grl_nodes = [n for n in graph.nodes if n.op == "grad_reverse" and n.id <= loss.id]
    if grl_nodes:
        true_grads = backward(graph, loss)
        for n in grl_nodes:
            upstream = true_grads.get(n.id)
            if upstream is None:
                upstream = np.ones_like(n.value)
            routed = backward(graph, n, seed=upstream)[n.parents[0].id]
            expected = upstream * upstream.dtype.type(-n.payload)
            report.reversal_checks[n.label] = bool(np.array_equal(routed, expected))

    saved = graph.grad_reverse_transparent
    graph.grad_reverse_transparent = True
    try:
        analytic = backward(graph, loss)
    finally:
        graph.grad_reverse_transparent = saved

    for node in graph.params():
        a = analytic[node.id]
        flat = base[node.id].reshape(-1)
        idxs = range(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idxs = np.random.default_rng(node.id).choice(flat.size, max_entries, replace=False)
        worst = 0.0
        for i in idxs:
            pert = dict(base)
            bumped = flat.copy()

            def f(step):
                bumped[i] = flat[i] + step
                pert[node.id] = bumped.reshape(node.shape)
                return float(forward_eval(graph, pert)[loss.id])

            if stencil == 2:
                num = (f(eps) - f(-eps)) / (2 * eps)
            else:
                num = (8 * (f(eps) - f(-eps)) - (f(2 * eps) - f(-2 * eps))) / (12 * eps)
            an = float(a.reshape(-1)[i])
            err = abs(an - num) / max(1e-8, abs(an) + abs(num))
            worst = max(worst, err)
        report.errors[node.label] = worst
    forward_eval(graph, base)
    return report
