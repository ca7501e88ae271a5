"""Reverse-mode automatic differentiation over a dynamically built tape.

Values are float64 numpy arrays (scalars are 0-d arrays). Every recorded
operation appends one node to the tape; node ids are topologically ordered by
construction, so the backward pass is a single reverse sweep that visits each
node at most once.

Most helpers (``cat``, ``clip``, ``tanh``, ...) accept either a :class:`Var`
or a plain numpy array and dispatch accordingly, which lets model code run
both in recorded mode (training) and in plain numpy (inference) from a single
implementation.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import TapeError

ArrayLike = "np.ndarray | float | Var"


def _as_value(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(adj: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum an adjoint back down to the shape of the input it belongs to."""
    if adj.shape == shape:
        return adj
    # Sum over leading axes added by broadcasting.
    extra = adj.ndim - len(shape)
    if extra > 0:
        adj = adj.sum(axis=tuple(range(extra)))
    # Sum over axes that were 1 in the input.
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and adj.shape[i] != 1)
    if axes:
        adj = adj.sum(axis=axes, keepdims=True)
    return adj


class Var:
    """Handle to one node of a :class:`Tape`."""

    __slots__ = ("tape", "idx", "value")

    def __init__(self, tape: "Tape", idx: int, value: np.ndarray):
        self.tape = tape
        self.idx = idx
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(idx={self.idx}, value={self.value!r})"

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Var):
            return self.tape._record("add", (self, other), self.value + other.value)
        return self.tape._record("add_k", (self,), self.value + _as_value(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Var):
            return self.tape._record("sub", (self, other), self.value - other.value)
        return self.tape._record("add_k", (self,), self.value - _as_value(other))

    def __rsub__(self, other):
        return self.tape._record("neg_k", (self,), _as_value(other) - self.value)

    def __neg__(self):
        return self.tape._record("neg", (self,), -self.value)

    def __mul__(self, other):
        if isinstance(other, Var):
            return self.tape._record("mul", (self, other), self.value * other.value)
        k = _as_value(other)
        return self.tape._record("mul_k", (self,), self.value * k, ctx=k)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            return self.tape._record("div", (self, other), self.value / other.value)
        k = _as_value(other)
        return self.tape._record("mul_k", (self,), self.value / k, ctx=1.0 / k)

    def __rtruediv__(self, other):
        k = _as_value(other)
        return self.tape._record("rdiv_k", (self,), k / self.value, ctx=k)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TapeError("only constant exponents are supported")
        return self.tape._record("pow_k", (self,), self.value ** p, ctx=float(p))

    def __getitem__(self, key):
        return self.tape._record("slice", (self,), self.value[key], ctx=key)

    # -- reductions ------------------------------------------------------
    def sum(self):
        return self.tape._record("sum", (self,), _as_value(self.value.sum()))

    def mean(self):
        return self.sum() * (1.0 / self.value.size)

    def reshape(self, shape):
        return self.tape._record("reshape", (self,), self.value.reshape(shape))


class Tape:
    """Append-only record of operations for one reverse-mode sweep."""

    def __init__(self):
        self._kinds: list[str] = []
        self._inputs: list[tuple] = []
        self._values: list[np.ndarray] = []
        self._ctx: list = []

    def __len__(self):
        return len(self._kinds)

    def _record(self, kind: str, inputs: tuple, value, ctx=None) -> Var:
        value = _as_value(value)
        self._kinds.append(kind)
        self._inputs.append(tuple(v.idx for v in inputs))
        self._values.append(value)
        self._ctx.append(ctx)
        return Var(self, len(self._kinds) - 1, value)

    def leaf(self, value) -> Var:
        """Insert an input node (parameter or state) onto the tape."""
        return self._record("leaf", (), value)

    def constant(self, value) -> Var:
        """Insert a node whose gradient is discarded."""
        return self._record("const", (), value)

    # -- backward --------------------------------------------------------
    def backward(self, output: Var) -> list:
        """Adjoints of every node with respect to a scalar ``output``.

        Nodes that do not influence the output keep adjoint ``None``.
        """
        if not isinstance(output, Var) or output.tape is not self:
            raise TapeError("output does not belong to this tape")
        if not (0 <= output.idx < len(self._kinds)):
            raise TapeError(f"output node {output.idx} out of range")
        if output.value.size != 1:
            raise TapeError("backward requires a scalar output node")

        kinds, inputs, values, ctxs = self._kinds, self._inputs, self._values, self._ctx
        adj: list = [None] * len(kinds)
        adj[output.idx] = np.ones_like(values[output.idx])

        def acc(i: int, contribution: np.ndarray):
            contribution = _unbroadcast(contribution, values[i].shape)
            if adj[i] is None:
                # copy guards against aliasing an upstream adjoint buffer
                adj[i] = np.array(contribution, copy=True)
            else:
                adj[i] += contribution

        for nid in range(output.idx, -1, -1):
            d = adj[nid]
            if d is None:
                continue
            kind = kinds[nid]
            if kind in ("leaf", "const"):
                continue
            ins = inputs[nid]
            ctx = ctxs[nid]
            if kind == "add":
                acc(ins[0], d)
                acc(ins[1], d)
            elif kind == "add_k":
                acc(ins[0], d)
            elif kind == "sub":
                acc(ins[0], d)
                acc(ins[1], -d)
            elif kind == "neg" or kind == "neg_k":
                acc(ins[0], -d)
            elif kind == "mul":
                acc(ins[0], d * values[ins[1]])
                acc(ins[1], d * values[ins[0]])
            elif kind == "mul_k":
                acc(ins[0], d * ctx)
            elif kind == "div":
                b = values[ins[1]]
                acc(ins[0], d / b)
                acc(ins[1], -d * values[nid] / b)
            elif kind == "rdiv_k":
                a = values[ins[0]]
                acc(ins[0], -d * ctx / (a * a))
            elif kind == "pow_k":
                p = ctx
                acc(ins[0], d * p * values[ins[0]] ** (p - 1.0))
            elif kind == "slice":
                g = np.zeros_like(values[ins[0]])
                g[ctx] += d  # basic indexing only, so no repeated positions
                acc(ins[0], g)
            elif kind == "sum":
                acc(ins[0], np.broadcast_to(d, values[ins[0]].shape))
            elif kind == "reshape":
                acc(ins[0], d.reshape(values[ins[0]].shape))
            elif kind == "tanh":
                y = values[nid]
                acc(ins[0], d * (1.0 - y * y))
            elif kind == "sigmoid":
                y = values[nid]
                acc(ins[0], d * y * (1.0 - y))
            elif kind == "softplus":
                acc(ins[0], d * _sigmoid_value(values[ins[0]]))
            elif kind == "exp":
                acc(ins[0], d * values[nid])
            elif kind == "log":
                acc(ins[0], d / values[ins[0]])
            elif kind == "sqrt":
                acc(ins[0], d * 0.5 / values[nid])
            elif kind == "clip":
                lo, hi = ctx
                x = values[ins[0]]
                mask = np.ones_like(x)
                if lo is not None:
                    mask = mask * (x >= lo)
                if hi is not None:
                    mask = mask * (x <= hi)
                acc(ins[0], d * mask)
            elif kind == "cat":
                offsets = ctx
                for i, nidx in enumerate(ins):
                    acc(nidx, d[offsets[i]:offsets[i + 1]])
            elif kind == "stack":
                for i, nidx in enumerate(ins):
                    acc(nidx, d[i])
            elif kind == "linear":
                x, w = values[ins[0]], values[ins[1]]
                acc(ins[0], d @ w)
                acc(ins[1], d.T @ x)
                acc(ins[2], d.sum(axis=0))
            else:  # pragma: no cover
                raise TapeError(f"no backward rule for op kind {kind!r}")
        return adj

    def gradient(self, output: Var, leaves: Sequence[Var]) -> list[np.ndarray]:
        """Gradients of a scalar output with respect to the given leaves.

        Leaves the output never touched get a zero gradient of matching shape.
        """
        adj = self.backward(output)
        out = []
        for leaf in leaves:
            g = adj[leaf.idx]
            out.append(np.zeros_like(leaf.value) if g is None else g)
        return out


# -- dispatch helpers (Var or ndarray) ------------------------------------

def value_of(x) -> np.ndarray:
    """Underlying numpy value of a Var or array."""
    return x.value if isinstance(x, Var) else _as_value(x)


def _unary(x, kind: str, fn):
    if isinstance(x, Var):
        return x.tape._record(kind, (x,), fn(x.value))
    return fn(_as_value(x))


def _sigmoid_value(v: np.ndarray) -> np.ndarray:
    # overflow-free for any argument sign
    z = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def tanh(x):
    return _unary(x, "tanh", np.tanh)


def sigmoid(x):
    return _unary(x, "sigmoid", _sigmoid_value)


def softplus(x):
    # log1p(exp(-|x|)) + max(x, 0): stable for large |x|
    return _unary(x, "softplus", lambda v: np.log1p(np.exp(-np.abs(v))) + np.maximum(v, 0.0))


def exp(x):
    return _unary(x, "exp", np.exp)


def log(x):
    return _unary(x, "log", np.log)


def sqrt(x):
    return _unary(x, "sqrt", np.sqrt)


def softplus_inverse(y: float) -> float:
    """Raw value r with softplus(r) == y, for initializing positive parameters."""
    if y <= 0:
        raise ValueError("softplus is strictly positive")
    # expm1 keeps precision for small y; for large y the identity is ~y
    return float(np.log(np.expm1(y))) if y < 30 else float(y)


def clip(x, lo, hi):
    """Clamp with zero gradient outside [lo, hi]."""
    if isinstance(x, Var):
        return x.tape._record("clip", (x,), np.clip(x.value, lo, hi), ctx=(lo, hi))
    return np.clip(_as_value(x), lo, hi)


def cat(parts: Iterable) -> "Var | np.ndarray":
    """Concatenate 1-d pieces (0-d pieces are treated as length-1)."""
    parts = list(parts)
    tape = None
    for p in parts:
        if isinstance(p, Var):
            tape = p.tape
            break
    if tape is None:
        return np.concatenate([np.atleast_1d(_as_value(p)) for p in parts])
    vs = [p if isinstance(p, Var) else tape.constant(p) for p in parts]
    vs = [v if v.value.ndim > 0 else v.reshape((1,)) for v in vs]
    offsets = np.cumsum([0] + [v.value.shape[0] for v in vs])
    return tape._record("cat", tuple(vs), np.concatenate([v.value for v in vs]),
                        ctx=offsets)


def stack(rows: Sequence) -> "Var | np.ndarray":
    """Stack equal-length 1-d pieces into a matrix (rows axis 0)."""
    rows = list(rows)
    tape = next((r.tape for r in rows if isinstance(r, Var)), None)
    if tape is None:
        return np.stack([_as_value(r) for r in rows])
    vs = [r if isinstance(r, Var) else tape.constant(r) for r in rows]
    return tape._record("stack", tuple(vs), np.stack([v.value for v in vs]))


def linear(x, w, b):
    """Affine map ``x @ w.T + b`` for a sample-row matrix x of shape (m, in).

    ``w`` has shape (out, in) and ``b`` shape (out,), matching the stored
    layer layout.
    """
    if isinstance(x, Var) or isinstance(w, Var) or isinstance(b, Var):
        tape = next(v.tape for v in (x, w, b) if isinstance(v, Var))
        xv = x if isinstance(x, Var) else tape.constant(x)
        wv = w if isinstance(w, Var) else tape.constant(w)
        bv = b if isinstance(b, Var) else tape.constant(b)
        return tape._record("linear", (xv, wv, bv),
                            xv.value @ wv.value.T + bv.value)
    return _as_value(x) @ _as_value(w).T + _as_value(b)
