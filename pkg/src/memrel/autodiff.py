"""Reverse-mode automatic differentiation over dense float64 arrays.

Everything downstream (embeddings, encoder, attention, memory, classifiers)
is composed from the primitives in this module.  Graphs are built eagerly:
each op computes its forward value immediately and records a closure that
scatters the incoming gradient into its operands.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when an op's operand shapes do not conform."""


class NonFiniteError(FloatingPointError):
    """Raised when a function value or gradient turns non-finite."""


class Node:
    """One value in the computation graph.

    data is always float64.  grad is lazily allocated and only ever
    accumulates into nodes with requires_grad = True.
    """

    __slots__ = ("data", "grad", "requires_grad", "op_tag", "parents", "_backward")

    def __init__(self, data, requires_grad=False, op_tag="leaf", parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op_tag = op_tag
        self.parents = tuple(parents)
        self._backward = backward_fn

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Node(op={self.op_tag!r}, shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Node:
    return Node(data, requires_grad=True, op_tag="param")


def constant(data) -> Node:
    return Node(data, requires_grad=False, op_tag="const")


def as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


class ParamRegistry:
    """Insertion-ordered map of named trainable nodes."""

    def __init__(self):
        self._params: dict[str, Node] = {}

    def register(self, name: str, node: Node) -> Node:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        if not node.requires_grad:
            raise ValueError(f"parameter {name!r} must have requires_grad=True")
        self._params[name] = node
        return node

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gdim, sdim) in enumerate(zip(g.shape, shape)):
        if sdim == 1 and gdim != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def _accumulate(node: Node, g: np.ndarray):
    if not node.requires_grad:
        return
    g = _unbroadcast(np.asarray(g, dtype=np.float64), node.data.shape)
    if node.grad is None:
        node.grad = np.zeros_like(node.data)
    node.grad += g


def _result(data, parents, op_tag, backward_fn) -> Node:
    requires = any(p.requires_grad for p in parents)
    return Node(data, requires_grad=requires, op_tag=op_tag,
                parents=parents, backward_fn=backward_fn if requires else None)


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} do not broadcast")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(out, (a, b), "add", backward)


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.data.shape} and {b.data.shape} do not broadcast")

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _result(out, (a, b), "mul", backward)


def scale(a, s: float) -> Node:
    a = as_node(a)
    s = float(s)

    def backward(g):
        _accumulate(a, g * s)

    return _result(a.data * s, (a,), "scale", backward)


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.data.shape} x {b.data.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        _accumulate(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        _accumulate(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _result(out, (a, b), "matmul", backward)


def transpose(a) -> Node:
    """Swap the last two axes."""
    a = as_node(a)
    if a.data.ndim < 2:
        raise ShapeError(f"transpose: need at least 2 dims, got {a.data.shape}")

    def backward(g):
        _accumulate(a, np.swapaxes(g, -1, -2))

    return _result(np.swapaxes(a.data, -1, -2), (a,), "transpose", backward)


def sigmoid(a) -> Node:
    a = as_node(a)
    out = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _accumulate(a, g * out * (1.0 - out))

    return _result(out, (a,), "sigmoid", backward)


def relu(a) -> Node:
    a = as_node(a)
    mask = a.data > 0.0

    def backward(g):
        _accumulate(a, g * mask)

    return _result(a.data * mask, (a,), "relu", backward)


def softmax(a, axis: int = -1) -> Node:
    a = as_node(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(a, out * (g - dot))

    return _result(out, (a,), "softmax", backward)


def conv1d(x, w, b=None) -> Node:
    """Same-padded 1-D convolution over the second-to-last axis.

    x: (..., N, C_in); w: (k, C_in, C_out); b: (C_out,) or None.
    Output: (..., N, C_out).  Zero padding keeps the sequence length.
    """
    x, w = as_node(x), as_node(w)
    if w.data.ndim != 3:
        raise ShapeError(f"conv1d: kernel must be (k, C_in, C_out), got {w.data.shape}")
    if x.data.ndim < 2 or x.data.shape[-1] != w.data.shape[1]:
        raise ShapeError(f"conv1d: input {x.data.shape} does not match kernel {w.data.shape}")
    k = w.data.shape[0]
    n = x.data.shape[-2]
    left, right = (k - 1) // 2, k // 2
    pad = [(0, 0)] * (x.data.ndim - 2) + [(left, right), (0, 0)]
    xp = np.pad(x.data, pad)
    # windows: (..., N, k, C_in)
    windows = np.stack([xp[..., t:t + n, :] for t in range(k)], axis=-2)
    out = np.einsum("...nki,kio->...no", windows, w.data)
    if b is not None:
        b = as_node(b)
        if b.data.shape != (w.data.shape[2],):
            raise ShapeError(f"conv1d: bias {b.data.shape} does not match kernel {w.data.shape}")
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        wk, ci = w.data.shape[0], w.data.shape[1]
        _accumulate(w, np.einsum("bki,bo->kio",
                                 windows.reshape(-1, wk, ci),
                                 g.reshape(-1, g.shape[-1])))
        if b is not None:
            _accumulate(b, g.reshape(-1, g.shape[-1]).sum(axis=0))
        gwin = np.einsum("...no,kio->...nki", g, w.data)
        gxp = np.zeros_like(xp)
        for t in range(k):
            gxp[..., t:t + n, :] += gwin[..., :, t, :]
        _accumulate(x, gxp[..., left:left + n, :])

    return _result(out, parents, "conv1d", backward)


def seq_max(x) -> Node:
    """Max over the second-to-last (sequence) axis; ties go to the lower index."""
    x = as_node(x)
    if x.data.ndim < 2:
        raise ShapeError(f"seq_max: need at least 2 dims, got {x.data.shape}")
    idx = np.argmax(x.data, axis=-2)
    out = np.take_along_axis(x.data, idx[..., None, :], axis=-2)[..., 0, :]

    def backward(g):
        gx = np.zeros_like(x.data)
        _scatter_add_seq(gx, idx[..., None, :], g[..., None, :])
        _accumulate(x, gx)

    return _result(out, (x,), "seq_max", backward)


def seq_top2(x) -> Node:
    """(max, second-max) per feature over the sequence axis.

    x: (..., N, C) -> (..., 2C), laid out as all maxes then all second
    maxes.  Ties break toward the lower sequence index; for N = 1 the
    second max equals the max.
    """
    x = as_node(x)
    if x.data.ndim < 2:
        raise ShapeError(f"seq_top2: need at least 2 dims, got {x.data.shape}")
    n = x.data.shape[-2]
    order = np.argsort(-x.data, axis=-2, kind="stable")
    i0 = order[..., 0:1, :]
    i1 = order[..., 1:2, :] if n > 1 else i0
    v0 = np.take_along_axis(x.data, i0, axis=-2)[..., 0, :]
    v1 = np.take_along_axis(x.data, i1, axis=-2)[..., 0, :]
    out = np.concatenate([v0, v1], axis=-1)

    def backward(g):
        c = x.data.shape[-1]
        gx = np.zeros_like(x.data)
        _scatter_add_seq(gx, i0, g[..., None, :c])
        _scatter_add_seq(gx, i1, g[..., None, c:])
        _accumulate(x, gx)

    return _result(out, (x,), "seq_top2", backward)


def _scatter_add_seq(target, idx, vals):
    """Scatter-add vals into target along axis -2 at positions idx."""
    grid = list(np.indices(idx.shape, sparse=False))
    grid[-2] = idx
    np.add.at(target, tuple(grid), vals)


def concat(nodes, axis: int = -1) -> Node:
    nodes = [as_node(n) for n in nodes]
    if not nodes:
        raise ShapeError("concat: no operands")
    out = np.concatenate([n.data for n in nodes], axis=axis)
    sizes = [n.data.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for n, piece in zip(nodes, np.split(g, splits, axis=axis)):
            _accumulate(n, piece)

    return _result(out, tuple(nodes), "concat", backward)


def gather(table, idx) -> Node:
    """Row lookup: table (V, d), idx int array of any shape -> idx.shape + (d,)."""
    table = as_node(table)
    if table.data.ndim != 2:
        raise ShapeError(f"gather: table must be 2-D, got {table.data.shape}")
    idx = np.asarray(idx)
    out = table.data[idx]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.ravel(), g.reshape(-1, table.data.shape[1]))
        _accumulate(table, gt)

    return _result(out, (table,), "gather", backward)


def dropout(x, p: float, rng: np.random.Generator, train: bool) -> Node:
    """Inverted dropout: scale by 1/(1-p) at train time, identity at eval."""
    x = as_node(x)
    if not train or p <= 0.0:
        return x
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)

    def backward(g):
        _accumulate(x, g * mask)

    return _result(x.data * mask, (x,), "dropout", backward)


def cross_entropy(logits, onehot) -> Node:
    """Fused softmax + cross-entropy against one-hot targets.

    logits: (..., n); onehot: same shape with one-hot rows.  Returns the
    per-example losses with shape (...,).  d loss / d logits is the
    standard softmax(logits) - onehot.
    """
    logits, onehot = as_node(logits), as_node(onehot)
    if logits.data.shape != onehot.data.shape:
        raise ShapeError(f"cross_entropy: logits {logits.data.shape} vs target {onehot.data.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    probs = np.exp(z - logz)
    out = (logz[..., 0] - (onehot.data * z).sum(axis=-1))

    def backward(g):
        _accumulate(logits, g[..., None] * (probs - onehot.data))

    return _result(out, (logits, onehot), "cross_entropy", backward)


def sum_all(x) -> Node:
    x = as_node(x)

    def backward(g):
        _accumulate(x, np.full(x.data.shape, g))

    return _result(x.data.sum(), (x,), "sum_all", backward)


def mean_all(x) -> Node:
    x = as_node(x)
    size = x.data.size

    def backward(g):
        _accumulate(x, np.full(x.data.shape, g / size))

    return _result(x.data.mean(), (x,), "mean_all", backward)


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(root: Node):
    """Populate grads of every reachable requires_grad node with dRoot/dNode."""
    if root.data.shape != ():
        raise ShapeError(f"backward: root must be scalar, got shape {root.data.shape}")
    topo: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones(())
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def check_gradients(scalar_fn, params: ParamRegistry, epsilon: float = 1e-5) -> float:
    """Compare analytic gradients with central differences.

    scalar_fn must rebuild and return a scalar Node from the current
    parameter values, deterministically.  Returns the worst relative
    error max(|a - n| / max(|a|, |n|, 1e-8)) over every coordinate.
    """
    if not (0.0 < epsilon <= 1e-3):
        raise ValueError(f"epsilon must be in (0, 1e-3], got {epsilon}")
    params.zero_grad()
    out = scalar_fn()
    if out.data.shape != ():
        raise ShapeError("check_gradients: scalar_fn must return a scalar node")
    if not np.isfinite(out.data):
        raise NonFiniteError("check_gradients: non-finite function value at base point")
    backward(out)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        aflat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = float(scalar_fn().data)
            flat[i] = orig - epsilon
            fm = float(scalar_fn().data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"non-finite function value perturbing {name}[{i}]")
            numeric = (fp - fm) / (2.0 * epsilon)
            rel = abs(aflat[i] - numeric) / max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
