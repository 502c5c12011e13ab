"""Minimal define-by-run reverse-mode autodiff over float64 numpy arrays.

Every differentiable operation appends a :class:`Node` to an implicit
graph; nodes carry a global sequence number, so sorting by it recovers the
append (topological) order.  :func:`backward` walks that order in reverse.

There is no broadcasting: binary elementwise ops demand identical shapes.
``matmul`` accepts matrix-matrix, matrix-vector, vector-matrix and
vector-vector operands; ``concat`` joins vectors and ``hcat`` joins the
columns of matrices.
"""
import itertools
import threading
from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, DomainError, OracleError

_seq = itertools.count()
_state = threading.local()


def grad_enabled():
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Evaluate operations without recording graph nodes."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.node = None
        self.name = name

    @classmethod
    def _wrap(cls, arr, requires_grad=False):
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = requires_grad
        t.node = None
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        """Row-major flat copy of the entries."""
        return self.data.ravel().tolist()

    def item(self):
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.data.shape[0]

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Node:
    """One recorded operation: inputs, outputs and the local gradient rule.

    ``backward`` receives one upstream gradient per output and returns one
    gradient (or ``None``) per input.
    """

    __slots__ = ("op", "inputs", "outputs", "backward", "seq")

    def __init__(self, op, inputs, outputs, backward):
        self.op = op
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward
        self.seq = next(_seq)


class Graph:
    """The operation records reachable from a root, in append order."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root):
        seen = set()
        nodes = []
        stack = [root]
        while stack:
            t = stack.pop()
            n = t.node
            if n is None or id(n) in seen:
                continue
            seen.add(id(n))
            nodes.append(n)
            stack.extend(n.inputs)
        nodes.sort(key=lambda n: n.seq)
        return cls(nodes)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def _record(op, inputs, arrays, backward):
    needs = grad_enabled() and any(t.requires_grad for t in inputs)
    outs = [Tensor._wrap(a, needs) for a in arrays]
    if needs:
        node = Node(op, inputs, outs, backward)
        for o in outs:
            o.node = node
    return outs


def backward(root, graph=None):
    """Accumulate d(root)/d(leaf) into every reachable leaf's ``grad``.

    Returns a dict mapping each reachable leaf tensor that requires grad to
    its gradient array.  Leaf gradients accumulate across calls until
    reset; intermediate gradients are recomputed each call.
    """
    if root.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if graph is None:
        graph = Graph.from_root(root)
    nodes = graph.nodes
    leaves = {}
    for n in nodes:
        for o in n.outputs:
            o.grad = None
        for t in n.inputs:
            if t.node is None and t.requires_grad:
                leaves[id(t)] = t
    if not nodes:
        if root.requires_grad:
            root.grad = np.ones_like(root.data) if root.grad is None else root.grad + 1.0
            return {root: root.grad}
        return {}
    root.grad = np.ones_like(root.data)
    for n in reversed(nodes):
        gs = [o.grad for o in n.outputs]
        if all(g is None for g in gs):
            continue
        gs = [np.zeros_like(o.data) if g is None else g for o, g in zip(n.outputs, gs)]
        for t, g in zip(n.inputs, n.backward(*gs)):
            if g is None or not t.requires_grad:
                continue
            t.grad = g if t.grad is None else t.grad + g
    return {t: t.grad for t in leaves.values()}


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    A, B = a.data, b.data
    if A.ndim not in (1, 2) or B.ndim not in (1, 2) or A.shape[-1] != B.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {A.shape} x {B.shape}")

    def bw(g):
        if A.ndim == 2 and B.ndim == 2:
            return g @ B.T, A.T @ g
        if A.ndim == 2:
            return np.outer(g, B), A.T @ g
        if B.ndim == 2:
            return B @ g, np.outer(A, g)
        return g * B, g * A

    return _record("matmul", (a, b), [A @ B], bw)[0]


def transpose(a):
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got {a.data.shape}")
    return _record("transpose", (a,), [np.ascontiguousarray(a.data.T)],
                   lambda g: (np.ascontiguousarray(g.T),))[0]


def affine(x, W, b):
    """``x @ W.T + b`` for a vector or for every row of a matrix."""
    X, Wd, bd = x.data, W.data, b.data
    if Wd.ndim != 2 or bd.shape != (Wd.shape[0],) or X.shape[-1] != Wd.shape[1]:
        raise DimensionError(f"affine shape mismatch: x {X.shape}, W {Wd.shape}, b {bd.shape}")
    out = X @ Wd.T + bd

    def bw(g):
        if X.ndim == 1:
            return Wd.T @ g, np.outer(g, X), g
        return g @ Wd, g.T @ X, g.sum(axis=0)

    return _record("affine", (x, W, b), [out], bw)[0]


# ---------------------------------------------------------------- elementwise

def _same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shapes differ {a.data.shape} vs {b.data.shape}")


def add(a, b):
    _same_shape(a, b, "add")
    return _record("add", (a, b), [a.data + b.data], lambda g: (g, g))[0]


def sub(a, b):
    _same_shape(a, b, "sub")
    return _record("sub", (a, b), [a.data - b.data], lambda g: (g, -g))[0]


def mul(a, b):
    _same_shape(a, b, "mul")
    A, B = a.data, b.data
    return _record("mul", (a, b), [A * B], lambda g: (g * B, g * A))[0]


def scale(a, k):
    k = float(k)
    return _record("scale", (a,), [a.data * k], lambda g: (g * k,))[0]


def sigmoid(a):
    y = kernels.sigmoid(a.data)
    return _record("sigmoid", (a,), [y], lambda g: (g * y * (1.0 - y),))[0]


def tanh(a):
    y = np.tanh(a.data)
    return _record("tanh", (a,), [y], lambda g: (g * (1.0 - y * y),))[0]


def exp(a):
    y = np.exp(a.data)
    return _record("exp", (a,), [y], lambda g: (g * y,))[0]


def log(a):
    A = a.data
    if np.any(A <= 0):
        raise DomainError("log of a non-positive value")
    return _record("log", (a,), [np.log(A)], lambda g: (g / A,))[0]


def clamp(a, lo, hi):
    A = a.data
    inside = (A >= lo) & (A <= hi)
    return _record("clamp", (a,), [np.clip(A, lo, hi)], lambda g: (g * inside,))[0]


def elementwise(op, *args, **kwargs):
    """Dispatch by name: add, sub, mul, sigmoid, tanh, exp, log, scale."""
    table = {"add": add, "sub": sub, "mul": mul, "sigmoid": sigmoid, "tanh": tanh,
             "exp": exp, "log": log, "scale": scale}
    try:
        fn = table[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args, **kwargs)


# ---------------------------------------------------------------- reductions & softmax

def sum(a):
    shape = a.data.shape
    return _record("sum", (a,), [np.array(a.data.sum())],
                   lambda g: (np.full(shape, float(g)),))[0]


def _check_vector(a, op):
    if a.data.ndim != 1 or a.data.shape[0] == 0:
        raise DimensionError(f"{op} needs a non-empty vector, got shape {a.data.shape}")


def softmax(a):
    _check_vector(a, "softmax")
    z = a.data - a.data.max()
    y = np.exp(z)
    y /= y.sum()
    return _record("softmax", (a,), [y], lambda g: (y * (g - g @ y),))[0]


def log_softmax(a):
    _check_vector(a, "log_softmax")
    z = a.data - a.data.max()
    out = z - np.log(np.exp(z).sum())

    def bw(g):
        return (g - np.exp(out) * g.sum(),)

    return _record("log_softmax", (a,), [out], bw)[0]


def nll_rows(logits, targets, ignore_index=None):
    """Summed negative log-likelihood of ``targets`` under row-wise softmax."""
    Z = logits.data
    targets = np.asarray(targets, dtype=np.int64)
    if Z.ndim != 2 or Z.shape[0] != targets.shape[0]:
        raise ContractError(f"nll: {Z.shape[0] if Z.ndim == 2 else Z.shape} logit rows "
                            f"for {targets.shape[0]} targets")
    if targets.size and (targets.min() < 0 or targets.max() >= Z.shape[1]):
        raise ContractError("nll: target id outside the vocabulary")
    keep = np.ones(len(targets), dtype=bool)
    if ignore_index is not None:
        keep = targets != ignore_index
    rows = np.arange(len(targets))
    m = Z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(Z - m).sum(axis=1))
    picked = Z[rows, targets] - lse
    loss = -picked[keep].sum()

    def bw(g):
        P = np.exp(Z - lse[:, None])
        P[rows, targets] -= 1.0
        P[~keep] = 0.0
        return (P * float(g),)

    return _record("nll", (logits,), [np.array(loss)], bw)[0]


# ---------------------------------------------------------------- structure

def concat(*parts):
    for p in parts:
        if p.data.ndim != 1:
            raise DimensionError(f"concat takes vectors, got shape {p.data.shape}")
    sizes = [p.data.shape[0] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([p.data for p in parts])
    return _record("concat", tuple(parts), [out], lambda g: tuple(np.split(g, cuts)))[0]


def hcat(*parts):
    """Join matrices with equal row counts side by side."""
    rows = {p.data.shape[0] for p in parts}
    if any(p.data.ndim != 2 for p in parts) or len(rows) != 1:
        raise DimensionError(f"hcat shapes {[p.data.shape for p in parts]}")
    cuts = np.cumsum([p.data.shape[1] for p in parts])[:-1]
    out = np.concatenate([p.data for p in parts], axis=1)
    return _record("hcat", tuple(parts), [out],
                   lambda g: tuple(np.ascontiguousarray(s) for s in np.split(g, cuts, axis=1)))[0]


def stack(vectors):
    vectors = list(vectors)
    if not vectors:
        raise DimensionError("stack of an empty list")
    shapes = {v.data.shape for v in vectors}
    if len(shapes) != 1 or len(next(iter(shapes))) != 1:
        raise DimensionError(f"stack needs equal-length vectors, got {sorted(shapes)}")
    out = np.stack([v.data for v in vectors])
    return _record("stack", tuple(vectors), [out], lambda g: tuple(g))[0]


def take_rows(M, ids):
    """Rows ``ids`` of matrix ``M`` (an embedding lookup)."""
    ids = np.asarray(ids, dtype=np.int64)
    if M.data.ndim != 2:
        raise DimensionError(f"take_rows needs a matrix, got {M.data.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= M.data.shape[0]):
        raise ContractError(f"row id outside [0, {M.data.shape[0]})")
    shape = M.data.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, ids, g)
        return (out,)

    return _record("take_rows", (M,), [M.data[ids]], bw)[0]


def row(M, i):
    shape = M.data.shape

    def bw(g):
        out = np.zeros(shape)
        out[i] = g
        return (out,)

    return _record("row", (M,), [M.data[i].copy()], bw)[0]


def slice(a, start, stop):
    if a.data.ndim != 1:
        raise DimensionError("slice takes a vector")
    n = a.data.shape[0]

    def bw(g):
        out = np.zeros(n)
        out[start:stop] = g
        return (out,)

    return _record("slice", (a,), [a.data[start:stop].copy()], bw)[0]


# ---------------------------------------------------------------- fused recurrent ops

def _c(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def lstm_cell(x, h, c, W_in, W_rec, b):
    """One LSTM step as a single graph node.  Returns ``(h_new, c_new)``."""
    H = h.data.shape[0]
    if (W_in.data.shape != (4 * H, x.data.shape[0]) or W_rec.data.shape != (4 * H, H)
            or b.data.shape != (4 * H,) or c.data.shape != (H,)):
        raise DimensionError(
            f"lstm_cell: x {x.data.shape}, h {h.data.shape}, c {c.data.shape}, "
            f"W_in {W_in.data.shape}, W_rec {W_rec.data.shape}, b {b.data.shape}")
    Wi, Wr, xd, hd, cd = _c(W_in.data), _c(W_rec.data), _c(x.data), _c(h.data), _c(c.data)
    h_new, c_new, gates, tc = kernels.lstm_cell_forward(Wi, Wr, _c(b.data), xd, hd, cd)
    backend = kernels._active

    def bw(dh, dc):
        dx, dh_prev, dc_prev, dWi, dWr, db = backend.lstm_cell_backward(
            Wi, Wr, xd, hd, cd, gates, tc, _c(dh), _c(dc))
        return dx, dh_prev, dc_prev, dWi, dWr, db

    return tuple(_record("lstm_cell", (x, h, c, W_in, W_rec, b), [h_new, c_new], bw))


def lstm_sequence(X, W_in, W_rec, b, reverse=False):
    """Run an LSTM over the rows of ``X`` from zero state; returns hidden rows."""
    L, D = X.data.shape if X.data.ndim == 2 else (None, None)
    H = W_rec.data.shape[1] if W_rec.data.ndim == 2 else -1
    if (L is None or W_in.data.shape != (4 * H, D) or W_rec.data.shape != (4 * H, H)
            or b.data.shape != (4 * H,)):
        raise DimensionError(f"lstm_sequence: X {X.data.shape}, W_in {W_in.data.shape}, "
                             f"W_rec {W_rec.data.shape}, b {b.data.shape}")
    Wi, Wr, Xd = _c(W_in.data), _c(W_rec.data), _c(X.data)
    Hs, Cs, G, TC = kernels.lstm_seq_forward(Wi, Wr, _c(b.data), Xd, bool(reverse))
    backend = kernels._active

    def bw(dHs):
        return backend.lstm_seq_backward(Wi, Wr, Xd, Hs, Cs, G, TC, _c(dHs), bool(reverse))

    return _record("lstm_sequence", (X, W_in, W_rec, b), [Hs], bw)[0]


def attention(q, W_q, keys_proj, v, keys):
    """Additive attention of query ``q`` over the rows of ``keys``.

    ``keys_proj`` holds the keys already mapped into attention space
    (``keys @ W_key.T``).  Returns ``(context, weights)`` where ``weights``
    is a plain array.
    """
    L = keys.data.shape[0]
    A = v.data.shape[0]
    if (keys.data.ndim != 2 or L == 0 or keys_proj.data.shape != (L, A)
            or W_q.data.shape != (A, q.data.shape[0])):
        raise DimensionError(f"attention: q {q.data.shape}, W_q {W_q.data.shape}, "
                             f"keys_proj {keys_proj.data.shape}, v {v.data.shape}, "
                             f"keys {keys.data.shape}")
    Wq, qd, kd = _c(W_q.data), _c(q.data), _c(keys.data)
    vd = _c(v.data)
    ctx, w, t = kernels.attention_forward(Wq, _c(keys_proj.data), vd, kd, qd)
    backend = kernels._active

    def bw(dctx):
        dq, dWq, dkp, dv, dkeys = backend.attention_backward(Wq, vd, kd, qd, w, t, _c(dctx))
        return dq, dWq, dkp, dv, dkeys

    return _record("attention", (q, W_q, keys_proj, v, keys), [ctx], bw)[0], w


# ---------------------------------------------------------------- gradient oracle

def finite_difference_check(f, params, eps=1e-5):
    """Largest relative error between analytic and central-difference gradients.

    ``f`` takes no arguments and returns a scalar Tensor; any randomness
    inside it must be reseeded on every call.  For each parameter the error
    is ``|g_a - g_n| / max(|g_a|, |g_n|, 1e-8)`` with Euclidean norms over
    that parameter's entries; the maximum over parameters is returned.
    """
    params = list(params)
    base = f()
    if float(f().data) != float(base.data):
        raise OracleError("function is not deterministic under its fixed seed")
    for p in params:
        p.grad = None
    backward(base)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        nflat = numeric.reshape(-1)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(f().data)
                flat[i] = orig - eps
                fm = float(f().data)
                flat[i] = orig
                nflat[i] = (fp - fm) / (2 * eps)
        diff = np.linalg.norm(analytic - numeric)
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
        worst = max(worst, diff / denom)
    return worst
