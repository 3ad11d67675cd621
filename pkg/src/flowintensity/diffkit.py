"""Small tape-based reverse-mode automatic differentiation.

A :class:`CompGraph` is built once as a list of primitive nodes in topological
order and then replayed many times with different parameter vectors and inputs.
Node values are numpy arrays, so a single graph evaluates a whole batch of
points at once; the designated output node must reduce to a scalar.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOGIT_EPS = 1e-7


class GraphError(RuntimeError):
    """Raised for malformed graphs, arity mismatches and non-finite values."""


def sigmoid(t, out=None):
    """Logistic function, 1 / (1 + exp(-t)).

    exp overflow for t << 0 yields exactly 0 rather than nan.
    """
    with np.errstate(over="ignore"):
        if out is None:
            out = np.array(t, dtype=float)
        np.negative(t, out=out)
        np.exp(out, out=out)
        out += 1.0
        return np.reciprocal(out, out=out)


def logit(p):
    """Inverse logistic function with inputs clamped to [1e-7, 1 - 1e-7]."""
    p = np.clip(np.asarray(p, dtype=float), LOGIT_EPS, 1.0 - LOGIT_EPS)
    return np.log(p) - np.log1p(-p)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


@dataclass
class ParamVector:
    """Flat vector of trainable parameters plus a named slice layout.

    ``layout`` maps a key such as ``(layer, dim, group)`` to ``(slice, shape)``.
    """

    values: np.ndarray
    layout: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @classmethod
    def from_blocks(cls, blocks):
        """Build from an ordered mapping ``key -> array``."""
        layout = {}
        chunks = []
        offset = 0
        for key, arr in blocks.items():
            arr = np.asarray(arr, dtype=float)
            layout[key] = (slice(offset, offset + arr.size), arr.shape)
            chunks.append(arr.ravel())
            offset += arr.size
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(values, layout)

    def __len__(self):
        return self.values.size

    def get(self, key):
        sl, shape = self.layout[key]
        return self.values[sl].reshape(shape)

    def set(self, key, value):
        sl, shape = self.layout[key]
        self.values[sl] = np.asarray(value, dtype=float).reshape(-1)

    def copy(self):
        return ParamVector(self.values.copy(), dict(self.layout))

    def check_bijective(self):
        """True iff the layout covers every scalar exactly once."""
        hits = np.zeros(self.values.size, dtype=int)
        for sl, shape in self.layout.values():
            if sl.stop - sl.start != int(np.prod(shape, dtype=int)):
                return False
            hits[sl] += 1
        return bool(np.all(hits == 1))


# op codes
CONST, INPUT, PARAM = "const", "input", "param"
ADD, SUB, MUL, DIV, NEG = "add", "sub", "mul", "div", "neg"
EXP, LOG, SIGMOID, LOGIT = "exp", "log", "sigmoid", "logit"
MATMUL, SUM, LSE, COLUMNS = "matmul", "sum", "logsumexp", "columns"


class CompGraph:
    """Static computation graph with preallocated value/adjoint buffers.

    Nodes are appended through the builder methods, each returning an integer
    node id. Because ids are issued in creation order, the node list is
    already topologically sorted.
    """

    def __init__(self, n_params=None, n_inputs=None):
        self.n_params = n_params
        self.n_inputs = n_inputs
        self.ops = []
        self.args = []
        self.extra = []
        self.output = None
        self.values = []
        self.adjoints = []
        self._adj_buf = []
        self._grad_mask = None
        self._shape_key = None
        self._evaluated = False

    def __len__(self):
        return len(self.ops)

    def _push(self, op, args=(), extra=None):
        for a in args:
            if not (0 <= a < len(self.ops)):
                raise GraphError(f"node {a} does not precede new {op} node")
        self._shape_key = None
        self._grad_mask = None
        self.ops.append(op)
        self.args.append(tuple(args))
        self.extra.append(extra)
        self.values.append(None)
        self.adjoints.append(None)
        return len(self.ops) - 1

    # leaves
    def constant(self, value):
        return self._push(CONST, extra=np.asarray(value, dtype=float))

    def input(self, column=None):
        """The input array, or one column of it kept 2-d, shape (n, 1)."""
        return self._push(INPUT, extra=column)

    def parameter(self, sl, shape):
        return self._push(PARAM, extra=(sl, tuple(shape)))

    # arithmetic
    def add(self, a, b):
        return self._push(ADD, (a, b))

    def sub(self, a, b):
        return self._push(SUB, (a, b))

    def mul(self, a, b):
        return self._push(MUL, (a, b))

    def div(self, a, b):
        return self._push(DIV, (a, b))

    def neg(self, a):
        return self._push(NEG, (a,))

    def exp(self, a):
        return self._push(EXP, (a,))

    def log(self, a):
        return self._push(LOG, (a,))

    def sigmoid(self, a):
        return self._push(SIGMOID, (a,))

    def logit(self, a):
        return self._push(LOGIT, (a,))

    def matmul(self, a, b):
        """``a @ b``; operands are at most 2-d."""
        return self._push(MATMUL, (a, b))

    def sum(self, a, axis=None):
        """Sum over ``axis`` (kept as size-1) or over everything when None."""
        return self._push(SUM, (a,), extra=axis)

    def logsumexp(self, a):
        """Stable log-sum-exp over the last axis, kept as size-1."""
        return self._push(LSE, (a,))

    def columns(self, a, start, stop):
        """Columns ``start:stop`` of a node along its last axis."""
        return self._push(COLUMNS, (a,), extra=(start, stop))

    def column(self, a, k):
        return self.columns(a, k, k + 1)

    def set_output(self, node):
        self.output = node

    # evaluation
    def forward_eval(self, params, inputs):
        """Evaluate every node; return the (scalar) output value."""
        if self.output is None:
            raise GraphError("no output node designated")
        theta = params.values if isinstance(params, ParamVector) else np.asarray(params, float)
        x = np.asarray(inputs, dtype=float)
        if self.n_params is not None and theta.size != self.n_params:
            raise GraphError(f"expected {self.n_params} parameters, got {theta.size}")
        if self.n_inputs is not None and (x.ndim != 2 or x.shape[1] != self.n_inputs):
            raise GraphError(f"expected inputs of shape (n, {self.n_inputs}), got {x.shape}")
        # buffers from the previous pass are reused when the input shape is unchanged
        reuse = self._shape_key == x.shape
        self._shape_key = None
        vals = self.values
        with np.errstate(all="ignore"):
            for i, (op, args, extra) in enumerate(zip(self.ops, self.args, self.extra)):
                out = vals[i] if reuse and op in _BUFFERED else None
                if not isinstance(out, np.ndarray):
                    out = None
                if op == CONST:
                    v = extra
                elif op == INPUT:
                    v = x if extra is None else x[:, extra:extra + 1]
                elif op == PARAM:
                    sl, shape = extra
                    v = theta[sl].reshape(shape)
                elif op == ADD:
                    v = np.add(vals[args[0]], vals[args[1]], out=out)
                elif op == SUB:
                    v = np.subtract(vals[args[0]], vals[args[1]], out=out)
                elif op == MUL:
                    v = np.multiply(vals[args[0]], vals[args[1]], out=out)
                elif op == DIV:
                    v = np.divide(vals[args[0]], vals[args[1]], out=out)
                elif op == NEG:
                    v = np.negative(vals[args[0]], out=out)
                elif op == EXP:
                    v = np.exp(vals[args[0]], out=out)
                elif op == LOG:
                    v = np.log(vals[args[0]], out=out)
                elif op == SIGMOID:
                    v = sigmoid(vals[args[0]], out=out)
                elif op == LOGIT:
                    v = logit(vals[args[0]])
                elif op == MATMUL:
                    v = np.matmul(vals[args[0]], vals[args[1]], out=out)
                elif op == SUM:
                    a = vals[args[0]]
                    v = np.sum(a) if extra is None else np.sum(a, axis=extra, keepdims=True)
                elif op == LSE:
                    a = vals[args[0]]
                    m = np.max(a, axis=-1, keepdims=True)
                    v = m + np.log(np.sum(np.exp(a - m), axis=-1, keepdims=True))
                elif op == COLUMNS:
                    v = vals[args[0]][..., extra[0]:extra[1]]
                else:  # pragma: no cover
                    raise GraphError(f"unknown op {op}")
                vals[i] = v
        out = vals[self.output]
        if not np.all(np.isfinite(out)):
            self._evaluated = False
            bad = next(i for i, v in enumerate(vals) if not np.all(np.isfinite(v)))
            raise GraphError(f"non-finite value at node {bad} ({self.ops[bad]})")
        self._shape_key = x.shape
        self._evaluated = True
        return float(out) if np.size(out) == 1 else out

    def _needs_grad(self):
        if self._grad_mask is None or len(self._grad_mask) != len(self.ops):
            mask = []
            for op, args in zip(self.ops, self.args):
                mask.append(op == PARAM or any(mask[a] for a in args))
            self._grad_mask = mask
        return self._grad_mask

    def backward_grad(self, params):
        """Gradient of the output w.r.t. the flat parameter vector.

        Must follow a successful :meth:`forward_eval` with the same parameters.
        """
        if not self._evaluated:
            raise GraphError("backward_grad called before forward_eval")
        theta = params.values if isinstance(params, ParamVector) else np.asarray(params, float)
        if theta.size != (self.n_params if self.n_params is not None else theta.size):
            raise GraphError("parameter vector does not match the graph")
        grad = np.zeros(theta.size)
        vals = self.values
        mask = self._needs_grad()
        adj = self.adjoints
        if len(self._adj_buf) != len(self.ops) or any(
            b is not None and b.shape != np.shape(v) for b, v in zip(self._adj_buf, vals)
        ):
            self._adj_buf = [None] * len(self.ops)
        touched = [False] * len(self.ops)
        scratch = {}

        def scr(shape):
            buf = scratch.get(shape)
            if buf is None:
                buf = scratch[shape] = np.empty(shape)
            return buf

        def acc(j, src):
            if not mask[j]:
                return
            shape = np.shape(vals[j])
            buf = self._adj_buf[j]
            if buf is None:
                buf = self._adj_buf[j] = np.zeros(shape)
            src_shape = np.shape(src)
            if src_shape != shape and np.broadcast_shapes(src_shape, shape) != shape:
                src = _unbroadcast(src, shape)
            if touched[j]:
                np.add(buf, src, out=buf)
            else:
                np.copyto(buf, src)
                touched[j] = True
            adj[j] = buf

        with np.errstate(all="ignore"):
            out_shape = np.shape(vals[self.output])
            acc(self.output, np.ones(out_shape))
            for i in range(self.output, -1, -1):
                if not touched[i]:
                    continue
                g = adj[i]
                op, args = self.ops[i], self.args[i]
                if op == PARAM:
                    sl, _ = self.extra[i]
                    grad[sl] += g.reshape(-1)
                elif op == ADD:
                    acc(args[0], g)
                    acc(args[1], g)
                elif op == SUB:
                    acc(args[0], g)
                    if mask[args[1]]:
                        acc(args[1], np.negative(g, out=scr(g.shape)))
                elif op == MUL:
                    a, b = args
                    if mask[a]:
                        acc(a, np.multiply(g, vals[b], out=scr(g.shape)))
                    if mask[b]:
                        acc(b, np.multiply(g, vals[a], out=scr(g.shape)))
                elif op == DIV:
                    a, b = args
                    if mask[a]:
                        acc(a, np.divide(g, vals[b], out=scr(g.shape)))
                    if mask[b]:
                        t = np.multiply(g, vals[i], out=scr(g.shape))
                        np.divide(t, vals[b], out=t)
                        acc(b, np.negative(t, out=t))
                elif op == NEG:
                    acc(args[0], np.negative(g, out=scr(g.shape)))
                elif op == EXP:
                    acc(args[0], np.multiply(g, vals[i], out=scr(g.shape)))
                elif op == LOG:
                    acc(args[0], np.divide(g, vals[args[0]], out=scr(g.shape)))
                elif op == SIGMOID:
                    s = vals[i]
                    t = np.subtract(1.0, s, out=scr(g.shape))
                    np.multiply(t, s, out=t)
                    acc(args[0], np.multiply(t, g, out=t))
                elif op == LOGIT:
                    p = vals[args[0]]
                    inside = (p > LOGIT_EPS) & (p < 1.0 - LOGIT_EPS)
                    acc(args[0], np.where(inside, g / (p * (1.0 - p)), 0.0))
                elif op == MATMUL:
                    a, b = vals[args[0]], vals[args[1]]
                    if mask[args[0]]:
                        acc(args[0], _matmul_grad_left(g, a, b))
                    if mask[args[1]]:
                        acc(args[1], _matmul_grad_right(g, a, b))
                elif op == SUM:
                    acc(args[0], g)
                elif op == LSE:
                    a = vals[args[0]]
                    t = np.subtract(a, vals[i], out=scr(a.shape))
                    np.exp(t, out=t)
                    acc(args[0], np.multiply(t, g, out=t))
                elif op == COLUMNS:
                    j = args[0]
                    if mask[j]:
                        start, stop = self.extra[i]
                        t = scr(np.shape(vals[j]))
                        t.fill(0.0)
                        t[..., start:stop] = g
                        acc(j, t)
        for j in range(len(adj)):
            adj[j] = adj[j] if touched[j] else None
        if not np.all(np.isfinite(grad)):
            raise GraphError("non-finite adjoint")
        return grad


_BUFFERED = {ADD, SUB, MUL, DIV, NEG, EXP, LOG, SIGMOID, MATMUL}


def _matmul_grad_left(g, a, b):
    if np.ndim(b) == 1:
        return np.multiply.outer(g, b) if np.ndim(a) == 2 else g * b
    if np.ndim(a) == 1:
        return b @ g
    return g @ b.T


def _matmul_grad_right(g, a, b):
    if np.ndim(a) == 1:
        return np.multiply.outer(a, g) if np.ndim(b) == 2 else g * a
    if np.ndim(b) == 1:
        return a.T @ g
    return a.T @ g


def forward_eval(graph, params, inputs):
    return graph.forward_eval(params, inputs)


def backward_grad(graph, params, inputs):
    """Run a forward pass on ``inputs`` then return the parameter gradient."""
    graph.forward_eval(params, inputs)
    return graph.backward_grad(params)
