"""Dense f64 matrices and a small tape-based reverse-mode gradient engine.

Dense matrices are plain 2-D ``float64`` numpy arrays. Differentiable values are
:class:`Var` objects owned by a :class:`Tape`; every op below accepts either a
``Var`` or a raw array. When none of the inputs lives on a tape, the op simply
returns an array, so the same code path serves inference (arrays in, arrays
out) and training (vars in, vars out).

Example
-------
>>> tape = Tape()
>>> w = tape.leaf(np.ones((2, 2)))
>>> loss = fro_norm(matmul(np.eye(2), w))
>>> grads = tape.backward(loss)
>>> grads[w].shape
(2, 2)
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, NumericError, ShapeError


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate and return ``x`` as a finite 2-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericError(f"{name} contains non-finite entries")
    return arr


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "index")

    def __init__(self, value: np.ndarray, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, index={self.index})"


class Gradients:
    """Result of a backward pass; missing entries read as zeros."""

    def __init__(self, grads: dict[int, np.ndarray], tape: "Tape"):
        self._grads = grads
        self._tape = tape

    def __getitem__(self, var: Var) -> np.ndarray:
        g = self._grads.get(var.index)
        if g is None:
            return np.zeros_like(var.value)
        return g

    def __contains__(self, var: Var) -> bool:
        return var.index in self._grads


class Tape:
    """Ordered record of primitive ops.

    Ops are appended in evaluation order, which is a topological order, so a
    backward pass is a single reverse sweep. ``backward`` never mutates the
    recorded values and keeps its accumulators local, so repeated calls on the
    same trace give bit-identical gradients.
    """

    def __init__(self):
        self._values: list[np.ndarray] = []
        self._parents: list[tuple[int, ...]] = []
        self._backward: list[Callable | None] = []

    def __len__(self):
        return len(self._values)

    def leaf(self, value) -> Var:
        value = np.asarray(value, dtype=np.float64)
        return self._push(value, (), None)

    def _push(self, value, parents, backward) -> Var:
        idx = len(self._values)
        self._values.append(value)
        self._parents.append(parents)
        self._backward.append(backward)
        return Var(value, self, idx)

    def backward(self, out: Var, seed: np.ndarray | None = None) -> Gradients:
        if out.tape is not self:
            raise ValueError("output does not belong to this tape")
        if seed is None:
            if out.value.size != 1:
                raise ShapeError(f"backward needs a scalar output, got shape {out.value.shape}")
            seed = np.ones_like(out.value)
        grads: dict[int, np.ndarray] = {out.index: np.asarray(seed, dtype=np.float64)}
        for idx in range(out.index, -1, -1):
            g = grads.get(idx)
            fn = self._backward[idx]
            if g is None or fn is None:
                continue
            parent_grads = fn(g)
            for pidx, pg in zip(self._parents[idx], parent_grads):
                if pidx < 0 or pg is None:
                    continue
                acc = grads.get(pidx)
                grads[pidx] = pg if acc is None else acc + pg
        return Gradients(grads, self)


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is not None and x.tape is not tape:
                raise ValueError("operands recorded on different tapes")
            tape = x.tape
    return tape


def _finish(value: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(value).all():
        raise NumericError(f"{op} produced non-finite values")
    return value


def _record(value, inputs, backward, op):
    value = _finish(value, op)
    tape = _tape_of(*inputs)
    if tape is None:
        return value
    parents = tuple(x.index if isinstance(x, Var) else -1 for x in inputs)
    return tape._push(value, parents, backward)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    av, bv = _val(a), _val(b)
    out = av + bv
    return _record(out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)), "add")


def sub(a, b):
    av, bv = _val(a), _val(b)
    out = av - bv
    return _record(out, (a, b), lambda g: (_unbroadcast(g, av.shape), -_unbroadcast(g, bv.shape)), "sub")


def mul(a, b):
    """Elementwise product with numpy broadcasting (e.g. scalar times matrix)."""
    av, bv = _val(a), _val(b)
    out = av * bv
    return _record(
        out, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)), "mul"
    )


def div(a, b):
    av, bv = _val(a), _val(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = av / bv
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * av / (bv * bv), bv.shape)),
        "div",
    )


def matmul(a, b):
    av, bv = _val(a), _val(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    return _record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def affine(x, w, b):
    """``x @ w + b`` with ``b`` a length-``w.cols`` row vector."""
    xv, wv, bv = _val(x), _val(w), _val(b)
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[0]:
        raise ShapeError(f"affine shape mismatch: X{xv.shape} @ W{wv.shape}")
    if bv.size != wv.shape[1]:
        raise ShapeError(f"affine bias length {bv.size} does not match W{wv.shape}")
    bshape = bv.shape
    out = xv @ wv + bv.reshape(1, -1)
    return _record(
        out,
        (x, w, b),
        lambda g: (g @ wv.T, xv.T @ g, g.sum(axis=0).reshape(bshape)),
        "affine",
    )


def spmm(graph, x):
    """Sparse-dense product ``graph @ x``; the graph is a constant."""
    xv = _val(x)
    if xv.ndim != 2 or xv.shape[0] != graph.n:
        raise ShapeError(f"spmm shape mismatch: graph ({graph.n}x{graph.n}) @ {xv.shape}")
    out = graph.matmul(xv)
    return _record(out, (x,), lambda g: (graph.transpose().matmul(g),), "spmm")


def scale(x, c: float):
    xv = _val(x)
    return _record(xv * c, (x,), lambda g: (g * c,), "scale")


def sqrt(x):
    xv = _val(x)
    y = np.sqrt(xv)
    return _record(y, (x,), lambda g: (g * 0.5 / y,), "sqrt")


def total(x):
    xv = _val(x)
    return _record(np.asarray(xv.sum()), (x,), lambda g: (np.full_like(xv, float(g)),), "sum")


def mean_rows(x):
    """Column means of a matrix, as a length-``cols`` vector."""
    xv = _val(x)
    n = xv.shape[0]
    return _record(xv.mean(axis=0), (x,), lambda g: (np.broadcast_to(g / n, xv.shape).copy(),), "mean_rows")


def fro_norm(x):
    """Frobenius (or Euclidean) norm. Subgradient at zero is zero."""
    xv = _val(x)
    nrm = float(np.sqrt(np.sum(xv * xv)))

    def back(g):
        if nrm == 0.0:
            return (np.zeros_like(xv),)
        return (xv * (float(g) / nrm),)

    return _record(np.asarray(nrm), (x,), back, "fro_norm")


def concat_cols(xs: Sequence):
    vals = [_val(x) for x in xs]
    widths = [v.shape[1] for v in vals]
    out = np.concatenate(vals, axis=1)
    cuts = np.cumsum([0] + widths)

    def back(g):
        return tuple(g[:, cuts[i] : cuts[i + 1]] for i in range(len(vals)))

    return _record(out, tuple(xs), back, "concat_cols")


def reshape(x, shape):
    xv = _val(x)
    return _record(xv.reshape(shape), (x,), lambda g: (g.reshape(xv.shape),), "reshape")


def head(v, count: int):
    """First ``count`` entries of a vector."""
    vv = _val(v)

    def back(g):
        out = np.zeros_like(vv)
        out[:count] = g
        return (out,)

    return _record(vv[:count].copy(), (v,), back, "head")


def take(v, i: int):
    """Entry ``i`` of a vector, as a 0-d value."""
    vv = _val(v)

    def back(g):
        out = np.zeros_like(vv)
        out[i] = g
        return (out,)

    return _record(np.asarray(vv[i]), (v,), back, "take")


def weighted_sum(weights, mats: Sequence):
    """``sum_i weights[i] * mats[i]`` for a weight vector and equal-shape matrices."""
    wv = _val(weights)
    vals = [_val(m) for m in mats]
    if wv.shape != (len(vals),):
        raise ShapeError(f"weight vector shape {wv.shape} does not match {len(vals)} matrices")
    out = wv[0] * vals[0]
    for wi, v in zip(wv[1:], vals[1:]):
        out += wi * v

    def back(g):
        gw = np.array([np.vdot(g, v) for v in vals])
        return (gw,) + tuple(g * wi for wi in wv)

    return _record(out, (weights, *mats), back, "weighted_sum")


# --------------------------------------------------------------- nonlinearity


def tanh(x):
    xv = _val(x)
    y = np.tanh(xv)
    return _record(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(x):
    xv = _val(x)
    mask = xv > 0.0  # subgradient at 0 is 0
    return _record(np.where(mask, xv, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x):
    xv = _val(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * xv))
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _softmax_values(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max())
    return e / e.sum()


def softmax(v):
    """Softmax of a non-empty vector; shift invariant and overflow safe."""
    vv = _val(v)
    if vv.ndim != 1:
        raise ShapeError(f"softmax expects a vector, got shape {vv.shape}")
    if vv.size == 0:
        raise DomainError("softmax of an empty vector")
    if not np.isfinite(vv).all():
        raise NumericError("softmax input contains non-finite entries")
    y = _softmax_values(vv)
    return _record(y, (v,), lambda g: (y * (g - np.dot(g, y)),), "softmax")


def masked_softmax(v, active: int):
    """Softmax over the first ``active`` entries; the remainder get exactly 0."""
    vv = _val(v)
    if active < 1 or active > vv.size:
        raise DomainError(f"active count {active} outside [1, {vv.size}]")
    y = np.zeros_like(vv)
    y[:active] = _softmax_values(vv[:active])

    def back(g):
        out = np.zeros_like(vv)
        ya, ga = y[:active], g[:active]
        out[:active] = ya * (ga - np.dot(ga, ya))
        return (out,)

    return _record(y, (v,), back, "masked_softmax")


# --------------------------------------------------------------- validation


def grad_check(f: Callable, x, eps: float = 1e-6) -> float:
    """Compare the tape gradient of scalar ``f`` at ``x`` with central differences.

    Returns ``max |analytic - numeric| / max(1, |analytic|)`` over entries.
    """
    if not (1e-8 <= eps <= 1e-3):
        raise DomainError(f"eps must lie in [1e-8, 1e-3], got {eps}")
    x = np.array(x, dtype=np.float64)
    tape = Tape()
    xv = tape.leaf(x)
    out = f(xv)
    if not isinstance(out, Var):
        # f ignored its input entirely
        analytic = np.zeros_like(x)
    else:
        analytic = tape.backward(out)[xv]

    def probe(z):
        val = float(np.asarray(_val(f(z))))
        if not np.isfinite(val):
            raise NumericError("f is not finite at a probe point")
        return val

    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = probe(x.copy())
        flat[i] = orig - eps
        fm = probe(x.copy())
        flat[i] = orig
        nflat[i] = (fp - fm) / (2.0 * eps)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
