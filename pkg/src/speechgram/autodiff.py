"""Tape-based reverse-mode differentiation over numpy arrays.

A :class:`Graph` is an append-only list of nodes.  Every operator computes its
value eagerly when recorded; :meth:`Graph.backward` walks the tape in reverse
and accumulates vector-Jacobian products into the requested variables.  A
graph can be re-evaluated with new variable values (:meth:`Graph.evaluate`),
which is how the optimizers reuse one graph across iterations.

Values are plain ``numpy.ndarray`` objects.  Only the operator set needed by
the feature pipeline, the acoustic network and the losses is provided; there
is no implicit broadcasting.
"""
from __future__ import annotations

import builtins
import contextlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PRECISIONS = {"high": np.float64, "single": np.float32}
_dtype = np.float64


class ShapeError(ValueError):
    """Raised when operator inputs have incompatible shapes."""


def set_precision(name: str) -> None:
    global _dtype
    if name not in PRECISIONS:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(PRECISIONS)}")
    _dtype = PRECISIONS[name]


def get_dtype():
    return _dtype


@contextlib.contextmanager
def precision(name: str):
    previous = _dtype
    set_precision(name)
    try:
        yield
    finally:
        _set_dtype(previous)


def _set_dtype(dtype) -> None:
    global _dtype
    _dtype = dtype


def asarray(value) -> np.ndarray:
    return np.asarray(value, dtype=_dtype)


# ---------------------------------------------------------------------------
# Operator registry


@dataclass(frozen=True)
class Op:
    name: str
    forward: Callable
    # one vjp per input: vjp(g, out, inputs, attrs) -> gradient for that input
    vjps: tuple
    check: Callable | None = None


OPS: dict[str, Op] = {}


def defop(name, forward, *vjps, check=None):
    OPS[name] = Op(name, forward, tuple(vjps), check)


def _shape_err(op, *shapes, why="incompatible shapes"):
    shown = ", ".join(str(tuple(s)) for s in shapes)
    return ShapeError(f"{op}: {why}: {shown}")


def _same_shape(op):
    def check(inputs, attrs):
        a, b = inputs
        if a.shape != b.shape:
            raise _shape_err(op, a.shape, b.shape)
    return check


# elementwise binary
defop("add", lambda a, b: a + b,
      lambda g, o, x, k: g, lambda g, o, x, k: g, check=_same_shape("add"))
defop("sub", lambda a, b: a - b,
      lambda g, o, x, k: g, lambda g, o, x, k: -g, check=_same_shape("sub"))
defop("mul", lambda a, b: a * b,
      lambda g, o, x, k: g * x[1], lambda g, o, x, k: g * x[0], check=_same_shape("mul"))
defop("div", lambda a, b: a / b,
      lambda g, o, x, k: g / x[1],
      lambda g, o, x, k: -g * x[0] / (x[1] * x[1]),
      check=_same_shape("div"))

# scalar and unary
defop("add_scalar", lambda a, s: a + s, lambda g, o, x, k: g)
defop("mul_scalar", lambda a, s: a * s, lambda g, o, x, k: g * k["s"])
defop("square", lambda a: a * a, lambda g, o, x, k: 2.0 * g * x[0])
defop("sqrt", np.sqrt, lambda g, o, x, k: g / (2.0 * o))
defop("log", np.log, lambda g, o, x, k: g / x[0])
defop("exp", np.exp, lambda g, o, x, k: g * o)
# relu'(0) = 0
defop("relu", lambda a: np.maximum(a, 0), lambda g, o, x, k: g * (x[0] > 0))


def _check_matmul(inputs, attrs):
    a, b = inputs
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_err("matmul", a.shape, b.shape)


defop("matmul", lambda a, b: a @ b,
      lambda g, o, x, k: g @ x[1].T, lambda g, o, x, k: x[0].T @ g, check=_check_matmul)


# 2-D convolution, stride 1, zero "same" padding.  x: H x W x Cin, w: kh x kw x Cin x Cout


def _im2col(x, kh, kw):
    h, w, c = x.shape
    xp = np.pad(x, ((kh // 2, kh // 2), (kw // 2, kw // 2), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(0, 1))  # h, w, c, kh, kw
    return win.transpose(0, 1, 3, 4, 2).reshape(h * w, kh * kw * c)


def _conv2d(x, w):
    kh, kw, cin, cout = w.shape
    cols = _im2col(x, kh, kw)
    return (cols @ w.reshape(-1, cout)).reshape(x.shape[0], x.shape[1], cout)


def _conv2d_dx(g, o, inputs, attrs):
    x, w = inputs
    h, wd, c = x.shape
    kh, kw, _, cout = w.shape
    dcols = (g.reshape(-1, cout) @ w.reshape(-1, cout).T).reshape(h, wd, kh, kw, c)
    dxp = np.zeros((h + kh - 1, wd + kw - 1, c), dtype=g.dtype)
    for a in range(kh):
        for b in range(kw):
            dxp[a:a + h, b:b + wd] += dcols[:, :, a, b, :]
    return dxp[kh // 2:kh // 2 + h, kw // 2:kw // 2 + wd]


def _conv2d_dw(g, o, inputs, attrs):
    x, w = inputs
    kh, kw, cin, cout = w.shape
    cols = _im2col(x, kh, kw)
    return (cols.T @ g.reshape(-1, cout)).reshape(w.shape)


def _check_conv(inputs, attrs):
    x, w = inputs
    if x.ndim != 3 or w.ndim != 4 or x.shape[2] != w.shape[2]:
        raise _shape_err("conv2d", x.shape, w.shape)
    if w.shape[0] % 2 == 0 or w.shape[1] % 2 == 0:
        raise _shape_err("conv2d", w.shape, why="kernel extents must be odd")


defop("conv2d", _conv2d, _conv2d_dx, _conv2d_dw, check=_check_conv)


# non-overlapping max pooling over the first two axes; odd extents are floored


def _pool_windows(x, ph, pw):
    h, w, c = x.shape
    ho, wo = h // ph, w // pw
    v = x[:ho * ph, :wo * pw].reshape(ho, ph, wo, pw, c)
    return v.transpose(0, 2, 4, 1, 3).reshape(ho, wo, c, ph * pw)


def _maxpool(x, ph, pw):
    return _pool_windows(x, ph, pw).max(axis=-1)


def _maxpool_vjp(g, o, inputs, attrs):
    (x,) = inputs
    ph, pw = attrs["ph"], attrs["pw"]
    h, w, c = x.shape
    ho, wo = h // ph, w // pw
    # np.argmax returns the first maximum, i.e. the lowest flat index in the window
    idx = _pool_windows(x, ph, pw).argmax(axis=-1)
    routed = np.zeros((ho, wo, c, ph * pw), dtype=g.dtype)
    np.put_along_axis(routed, idx[..., None], g[..., None], axis=-1)
    routed = routed.reshape(ho, wo, c, ph, pw).transpose(0, 3, 1, 4, 2).reshape(ho * ph, wo * pw, c)
    out = np.zeros_like(x, dtype=g.dtype)
    out[:ho * ph, :wo * pw] = routed
    return out


def _check_pool(inputs, attrs):
    (x,) = inputs
    if x.ndim != 3:
        raise _shape_err("maxpool2d", x.shape, why="expected a 3-D input")
    if x.shape[0] < attrs["ph"] or x.shape[1] < attrs["pw"]:
        raise _shape_err("maxpool2d", x.shape, (attrs["ph"], attrs["pw"]), why="input smaller than window")


defop("maxpool2d", _maxpool, _maxpool_vjp, check=_check_pool)


# per-channel affine over the last axis (frozen batch-norm, biases)


def _check_affine(inputs, attrs):
    x, scale, shift = inputs
    c = x.shape[-1]
    if scale.shape != (c,) or shift.shape != (c,):
        raise _shape_err("affine", x.shape, scale.shape, shift.shape)


defop("affine", lambda x, s, b: x * s + b,
      lambda g, o, x, k: g * x[1],
      lambda g, o, x, k: (g * x[0]).reshape(-1, x[0].shape[-1]).sum(axis=0),
      lambda g, o, x, k: g.reshape(-1, x[0].shape[-1]).sum(axis=0),
      check=_check_affine)


# reductions


def _expand(g, shape, axes):
    if axes is None:
        return np.broadcast_to(g, shape)
    for a in sorted(axes):
        g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def _count(shape, axes):
    if axes is None:
        return int(np.prod(shape))
    return int(np.prod([shape[a] for a in axes]))


defop("sum", lambda x, axes: np.sum(x, axis=axes),
      lambda g, o, x, k: _expand(g, x[0].shape, k["axes"]).copy())
defop("mean", lambda x, axes: np.mean(x, axis=axes),
      lambda g, o, x, k: _expand(g, x[0].shape, k["axes"]) / _count(x[0].shape, k["axes"]))


# structural


def _concat_vjp(i):
    def vjp(g, o, inputs, attrs):
        axis = attrs["axis"]
        start = builtins.sum(a.shape[axis] for a in inputs[:i])
        sl = [slice(None)] * g.ndim
        sl[axis] = slice(start, start + inputs[i].shape[axis])
        return g[tuple(sl)]
    return vjp


def _check_concat(inputs, attrs):
    axis = attrs["axis"]
    ref = inputs[0].shape
    for a in inputs[1:]:
        if a.ndim != len(ref) or any(s != r for d, (s, r) in enumerate(zip(a.shape, ref)) if d != axis):
            raise _shape_err("concat", *[x.shape for x in inputs])


# gather along axis 0: out[idx...] = x[index[idx...]]


def _gather_vjp(g, o, inputs, attrs):
    (x,) = inputs
    index = attrs["index"]
    if x.ndim == 1:
        return np.bincount(index.ravel(), weights=g.ravel(), minlength=x.shape[0]).astype(g.dtype)
    out = np.zeros(x.shape, dtype=g.dtype)
    np.add.at(out, index.ravel(), g.reshape((-1,) + x.shape[1:]))
    return out


def _check_gather(inputs, attrs):
    (x,) = inputs
    index = attrs["index"]
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise _shape_err("gather", x.shape, index.shape, why="index out of range")


defop("gather", lambda x, index: x[index], _gather_vjp, check=_check_gather)
defop("reshape", lambda x, shape: x.reshape(shape), lambda g, o, x, k: g.reshape(x[0].shape))
defop("transpose", lambda x, axes: x.transpose(axes),
      lambda g, o, x, k: g.transpose(np.argsort(k["axes"])))


# ---------------------------------------------------------------------------
# Graph


class Node:
    """Handle to one recorded value in a :class:`Graph`."""

    __slots__ = ("graph", "index")

    def __init__(self, graph: "Graph", index: int):
        self.graph = graph
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.graph.values[self.index]

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self):
        op = self.graph.ops[self.index]
        return f"Node({op}, shape={self.shape})"

    def __hash__(self):
        return hash((id(self.graph), self.index))

    def __eq__(self, other):
        return isinstance(other, Node) and other.graph is self.graph and other.index == self.index

    # arithmetic sugar; scalars become scalar ops, arrays become constants
    def _lift(self, other):
        return other if isinstance(other, Node) else self.graph.constant(other)

    def __add__(self, other):
        if np.isscalar(other):
            return add_scalar(self, other)
        return add(self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        if np.isscalar(other):
            return add_scalar(self, -other)
        return sub(self, self._lift(other))

    def __rsub__(self, other):
        if np.isscalar(other):
            return add_scalar(mul_scalar(self, -1.0), other)
        return sub(self._lift(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return mul_scalar(self, other)
        return mul(self, self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return mul_scalar(self, 1.0 / other)
        return div(self, self._lift(other))

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, self._lift(other))


class Graph:
    """Append-only tape of eagerly evaluated operations."""

    def __init__(self):
        self.ops: list[str] = []
        self.inputs: list[tuple[int, ...]] = []
        self.attrs: list[dict] = []
        self.values: list[np.ndarray] = []
        self.variables: list[int] = []
        self._needs_grad: list[bool] = []

    def __len__(self):
        return len(self.values)

    def _append(self, op, inputs, attrs, value, needs_grad):
        self.ops.append(op)
        self.inputs.append(inputs)
        self.attrs.append(attrs)
        self.values.append(value)
        self._needs_grad.append(needs_grad)
        return Node(self, len(self.values) - 1)

    def variable(self, value) -> Node:
        node = self._append("variable", (), {}, asarray(value).copy(), True)
        self.variables.append(node.index)
        return node

    def constant(self, value) -> Node:
        return self._append("constant", (), {}, asarray(value), False)

    def record(self, op: str, inputs: Sequence[Node], **attrs) -> Node:
        if op not in OPS:
            raise KeyError(f"unsupported operator {op!r}")
        for n in inputs:
            if n.graph is not self:
                raise ValueError(f"{op}: input belongs to a different graph")
        spec = OPS[op]
        values = [self.values[n.index] for n in inputs]
        if spec.check is not None:
            spec.check(values, attrs)
        value = spec.forward(*values, **attrs)
        needs = any(self._needs_grad[n.index] for n in inputs)
        return self._append(op, tuple(n.index for n in inputs), attrs, np.asarray(value), needs)

    def evaluate(self, assignments: dict[Node, np.ndarray] | None = None) -> None:
        """Recompute every node, optionally after replacing variable values."""
        if assignments:
            for node, value in assignments.items():
                if self.ops[node.index] != "variable":
                    raise ValueError("only variables can be reassigned")
                value = asarray(value)
                if value.shape != self.values[node.index].shape:
                    raise _shape_err("evaluate", self.values[node.index].shape, value.shape)
                self.values[node.index] = value.copy()
        for i, op in enumerate(self.ops):
            if op in ("variable", "constant"):
                continue
            args = [self.values[j] for j in self.inputs[i]]
            self.values[i] = np.asarray(OPS[op].forward(*args, **self.attrs[i]))

    def backward(self, loss: Node, wrt: Iterable[Node] | None = None) -> dict[Node, np.ndarray]:
        """Gradients of the scalar ``loss`` with respect to ``wrt`` (default: all variables)."""
        if loss.graph is not self:
            raise ValueError("loss node belongs to a different graph")
        if self.values[loss.index].size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {self.values[loss.index].shape}")
        targets = [Node(self, i) for i in self.variables] if wrt is None else list(wrt)
        grads: dict[int, np.ndarray] = {loss.index: np.ones_like(self.values[loss.index])}
        for i in range(loss.index, -1, -1):
            if self.ops[i] in ("variable", "constant"):
                continue
            g = grads.pop(i, None)
            if g is None:
                continue
            spec = OPS[self.ops[i]]
            args = [self.values[j] for j in self.inputs[i]]
            for pos, j in enumerate(self.inputs[i]):
                if not self._needs_grad[j]:
                    continue
                contrib = spec.vjps[pos](g, self.values[i], args, self.attrs[i])
                if j in grads:
                    grads[j] = grads[j] + contrib
                else:
                    grads[j] = contrib
        out = {}
        for node in targets:
            g = grads.get(node.index)
            shape = self.values[node.index].shape
            out[node] = np.zeros(shape, dtype=self.values[node.index].dtype) if g is None else np.asarray(g).reshape(shape)
        return out


def backward(loss: Node, wrt: Iterable[Node] | None = None) -> dict[Node, np.ndarray]:
    return loss.graph.backward(loss, wrt)


# ---------------------------------------------------------------------------
# Functional front end


def add(a, b):
    return a.graph.record("add", (a, b))


def sub(a, b):
    return a.graph.record("sub", (a, b))


def mul(a, b):
    return a.graph.record("mul", (a, b))


def div(a, b):
    return a.graph.record("div", (a, b))


def add_scalar(a, s):
    return a.graph.record("add_scalar", (a,), s=float(s))


def mul_scalar(a, s):
    return a.graph.record("mul_scalar", (a,), s=float(s))


def square(a):
    return a.graph.record("square", (a,))


def sqrt(a):
    return a.graph.record("sqrt", (a,))


def log(a):
    return a.graph.record("log", (a,))


def exp(a):
    return a.graph.record("exp", (a,))


def relu(a):
    return a.graph.record("relu", (a,))


def matmul(a, b):
    return a.graph.record("matmul", (a, b))


def conv2d(x, w):
    return x.graph.record("conv2d", (x, w))


def maxpool2d(x, ph: int, pw: int):
    if ph == 1 and pw == 1:
        return x
    return x.graph.record("maxpool2d", (x,), ph=int(ph), pw=int(pw))


def affine(x, scale, shift):
    return x.graph.record("affine", (x, scale, shift))


def _axes(axes):
    if axes is None:
        return None
    if isinstance(axes, int):
        return (axes,)
    return tuple(axes)


def sum(x, axes=None):  # noqa: A001
    return x.graph.record("sum", (x,), axes=_axes(axes))


def mean(x, axes=None):
    return x.graph.record("mean", (x,), axes=_axes(axes))


def concat(xs: Sequence[Node], axis: int = 0):
    g = xs[0].graph
    if axis < 0:
        axis += xs[0].value.ndim
    vjps = tuple(_concat_vjp(i) for i in range(len(xs)))
    name = f"concat{len(xs)}"
    if name not in OPS:
        defop(name, lambda *arrs, axis: np.concatenate(arrs, axis=axis), *vjps, check=_check_concat)
    return g.record(name, tuple(xs), axis=axis)


def gather(x, index):
    return x.graph.record("gather", (x,), index=np.asarray(index, dtype=np.intp))


def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.value.size:
        raise _shape_err("reshape", x.shape, shape)
    return x.graph.record("reshape", (x,), shape=shape)


def transpose(x, axes):
    return x.graph.record("transpose", (x,), axes=tuple(axes))


# ---------------------------------------------------------------------------
# Finite-difference checking


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5,
                       coords: np.ndarray | None = None) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``; only ``coords`` (flat indices) if given."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.zeros_like(flat)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        out[i] = (fp - fm) / (2 * step)
    return out.reshape(x.shape)


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradcheck(build: Callable[..., Node], inputs: Sequence[np.ndarray], step: float = 1e-5,
              max_coords: int | None = None, seed: int = 0) -> float:
    """Largest elementwise relative error between backward and central differences.

    ``build(*nodes)`` receives one variable per input array and returns a scalar node.
    """
    with precision("high"):
        g = Graph()
        nodes = [g.variable(a) for a in inputs]
        loss = build(*nodes)
        analytic = g.backward(loss, nodes)
        rng = np.random.default_rng(seed)
        worst = 0.0
        for k, node in enumerate(nodes):

            def f(x, k=k):
                g.evaluate({nodes[k]: x})
                return float(g.values[loss.index])

            base = np.array(inputs[k], dtype=np.float64)
            coords = None
            if max_coords is not None and base.size > max_coords:
                coords = np.sort(rng.choice(base.size, size=max_coords, replace=False))
            num = numerical_gradient(f, base, step, coords)
            g.evaluate({nodes[k]: base})
            a = analytic[node].reshape(-1)
            n = num.reshape(-1)
            if coords is not None:
                a, n = a[coords], n[coords]
            if a.size:
                worst = max(worst, float(relative_error(a, n).max()))
        return worst
