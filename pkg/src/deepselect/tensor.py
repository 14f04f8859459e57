"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation is a named primitive with a forward rule and a
vector-Jacobian product.  There is no implicit broadcasting: shapes must match
exactly unless the ``broadcast`` primitive is applied first.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LEAKY_SLOPE = 0.01


class TensorError(Exception):
    pass


class ShapeError(TensorError, ValueError):
    pass


class NonFiniteError(TensorError, FloatingPointError):
    pass


class GraphError(TensorError, RuntimeError):
    pass


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@dataclass
class Node:
    kind: str
    parents: tuple
    attrs: dict
    ctx: object


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    # operator sugar; shapes must already agree
    def __add__(self, other):
        return add(self, _as_tensor(other, self.shape))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.shape)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.shape), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.shape))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_over_axis(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_over_axis(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return max_over_axis(self, axis, keepdims)


def _as_tensor(x, shape) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.broadcast_to(np.asarray(x, dtype=np.float64), shape))


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad)


# ---------------------------------------------------------------------------
# primitive registry


class _Scatter:
    """Sparse gradient contribution: ``values`` added at ``index`` of the parent."""

    __slots__ = ("index", "values")

    def __init__(self, index, values):
        self.index = index
        self.values = values


@dataclass(frozen=True)
class Primitive:
    forward: Callable
    vjp: Callable
    arity: int | None = None
    # vjp takes a ``needs`` tuple and may skip gradients nobody wants
    masked: bool = False


PRIMITIVES: dict[str, Primitive] = {}


def _register(name, arity=None, masked=False):
    def deco(cls):
        PRIMITIVES[name] = Primitive(cls.forward, cls.vjp, arity, masked)
        return cls

    return deco


def _shape_error(kind, msg, *shapes):
    dims = ", ".join(str(tuple(s)) for s in shapes)
    return ShapeError(f"{kind}: {msg} (got {dims})")


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for a in axis:
        if not -ndim <= a < ndim:
            raise ShapeError(f"axis {a} out of range for {ndim}-d tensor")
        out.append(a % ndim)
    return tuple(sorted(set(out)))


def _expand_reduced(g, in_shape, axes, keepdims):
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, in_shape)


def _same_shape(kind, a, b):
    if a.shape != b.shape:
        raise _shape_error(kind, "operand shapes differ; use broadcast explicitly", a.shape, b.shape)


@_register("add", 2)
class _Add:
    @staticmethod
    def forward(xs, attrs):
        _same_shape("add", *xs)
        return xs[0] + xs[1], None

    @staticmethod
    def vjp(g, xs, out, ctx, attrs):
        return [g, g]


@_register("mul", 2)
class _Mul:
    @staticmethod
    def forward(xs, attrs):
        _same_shape("mul", *xs)
        return xs[0] * xs[1], None

    @staticmethod
    def vjp(g, xs, out, ctx, attrs):
        return [g * xs[1], g * xs[0]]


@_register("neg", 1)
class _Neg:
    @staticmethod
    def forward(xs, attrs):
        return -xs[0], None

    @staticmethod
    def vjp(g, xs, out, ctx, attrs):
        return [-g]


# outputs narrower than this bypass BLAS (see _Matmul.forward)
NARROW_MATMUL = 4


@_register("matmul", 2)
class _Matmul:
    @staticmethod
    def forward(xs, attrs):
        a, b = xs
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise _shape_error("matmul", "expected [m,k] @ [k,n]", a.shape, b.shape)
        if b.shape[1] < NARROW_MATMUL:
            # BLAS kernels for very narrow outputs accumulate rows in blocks, so a
            # row's result depends on its position; reducing each row on its own
            # keeps row permutations bit-exact
            return np.multiply(a[:, :, None], b[None]).sum(axis=1), None
        return a @ b, None

    @staticmethod
    def vjp(g, xs, out, ctx, attrs):
        a, b = xs
        return [g @ b.T, a.T @ g]


@_register("conv2d", 2, masked=True)
class _Conv2d:
    @staticmethod
    def forward(xs, attrs):
        x, w = xs
        stride = attrs.get("stride", 1)
        pad = attrs.get("padding", 0)
        if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
            raise _shape_error("conv2d", "expected input [B,C,H,W] and kernel [O,C,kh,kw]", x.shape, w.shape)
        if stride < 1 or pad < 0:
            raise ShapeError(f"conv2d: invalid stride={stride} padding={pad}")
        B, C, H, W = x.shape
        O, _, kh, kw = w.shape
        Hp, Wp = H + 2 * pad, W + 2 * pad
        if Hp < kh or Wp < kw:
            raise _shape_error("conv2d", "kernel larger than padded input", x.shape, w.shape)
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        Ho, Wo = win.shape[2], win.shape[3]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
        out = cols @ w.reshape(O, -1).T
        out = out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(out), cols

    @staticmethod
    def vjp(g, xs, out, cols, attrs, needs=(True, True)):
        x, w = xs
        stride = attrs.get("stride", 1)
        pad = attrs.get("padding", 0)
        B, C, H, W = x.shape
        O, _, kh, kw = w.shape
        Ho, Wo = g.shape[2], g.shape[3]
        g2 = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        dw = (g2.T @ cols).reshape(w.shape) if needs[1] else None
        if not needs[0]:
            return [None, dw]
        if stride == 1 and O <= C:
            # correlate the zero-padded output gradient with the flipped kernel
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            win = sliding_window_view(gp, (kh, kw), axis=(2, 3))[:, :, pad:pad + H, pad:pad + W]
            gcols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * H * W, O * kh * kw)
            wflip = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(C, O * kh * kw)
            dx = (gcols @ wflip.T).reshape(B, H, W, C).transpose(0, 3, 1, 2)
            return [np.ascontiguousarray(dx), dw]
        dcols = (g2 @ w.reshape(O, -1)).reshape(B, Ho, Wo, C, kh, kw)
        dxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad))
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += (
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        dx = dxp[:, :, pad:pad + H, pad:pad + W] if pad else dxp
        return [dx, dw]


@_register("max_over_axis", 1)
class _Max:
    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        axis = attrs.get("axis")
        if x.size == 0:
            raise _shape_error("max_over_axis", "empty input", x.shape)
        if axis is None:
            flat = x.reshape(-1)
            idx = int(np.argmax(flat))
            out = flat[idx]
            if attrs.get("keepdims"):
                out = out.reshape((1,) * x.ndim)
            return np.asarray(out), idx
        ax = _norm_axes(axis, x.ndim)[0]
        k = x.shape[ax]
        if k <= 16:
            # running strict-greater scan keeps the first maximal index on ties
            best = np.take(x, 0, axis=ax)
            idx = np.zeros(best.shape, dtype=np.intp)
            for i in range(1, k):
                cand = np.take(x, i, axis=ax)
                better = cand > best
                best = np.where(better, cand, best)
                idx[better] = i
            out = best
        else:
            idx = np.argmax(x, axis=ax)
            out = np.squeeze(np.take_along_axis(x, np.expand_dims(idx, ax), axis=ax), axis=ax)
        if attrs.get("keepdims"):
            out = np.expand_dims(out, ax)
        return out, (ax, idx)

    @staticmethod
    def vjp(g, xs, out, ctx, attrs):
        x = xs[0]
        if attrs.get("axis") is None:
            dx = np.zeros_like(x)
            dx.reshape(-1)[ctx] = np.asarray(g).reshape(-1)[0]
            return [dx]
        ax, idx = ctx
        gk = np.squeeze(g, axis=ax) if attrs.get("keepdims") else g
        k = x.shape[ax]
        parts = [np.where(idx == i, gk, 0.0) for i in range(k)]
        return [np.stack(parts, axis=ax)]


@_register("sum_over_axis", 1)
class _Sum:
    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        axes = _norm_axes(attrs.get("axis"), x.ndim)
        return np.sum(x, axis=axes, keepdims=bool(attrs.get("keepdims"))), axes

    @staticmethod
    def vjp(g, xs, out, axes, attrs):
        return [_expand_reduced(g, xs[0].shape, axes, attrs.get("keepdims"))]


@_register("mean_over_axis", 1)
class _Mean:
    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        axes = _norm_axes(attrs.get("axis"), x.ndim)
        return np.mean(x, axis=axes, keepdims=bool(attrs.get("keepdims"))), axes

    @staticmethod
    def vjp(g, xs, out, axes, attrs):
        x = xs[0]
        count = 1
        for a in axes:
            count *= x.shape[a]
        return [_expand_reduced(g / count, x.shape, axes, attrs.get("keepdims"))]


@_register("concat_along_axis")
class _Concat:
    @staticmethod
    def forward(xs, attrs):
        axis = attrs.get("axis", 0)
        if not xs:
            raise ShapeError("concat_along_axis: no inputs")
        ref = xs[0]
        ax = _norm_axes(axis, ref.ndim)[0]
        for x in xs[1:]:
            if x.ndim != ref.ndim or any(
                x.shape[d] != ref.shape[d] for d in range(ref.ndim) if d != ax
            ):
                raise _shape_error("concat_along_axis", f"extents differ off axis {ax}", ref.shape, x.shape)
        bounds = np.cumsum([0] + [x.shape[ax] for x in xs])
        return np.concatenate(xs, axis=ax), (ax, bounds)

    @staticmethod
    def vjp(g, xs, out, ctx, attrs):
        ax, bounds = ctx
        grads = []
        for i in range(len(xs)):
            key = [slice(None)] * g.ndim
            key[ax] = slice(bounds[i], bounds[i + 1])
            grads.append(g[tuple(key)])
        return grads


@_register("slice", 1)
class _Slice:
    @staticmethod
    def forward(xs, attrs):
        key = attrs["key"]
        try:
            out = xs[0][key]
        except IndexError as exc:
            raise ShapeError(f"slice: {exc} (got {xs[0].shape})") from None
        if out.size == 0:
            raise _shape_error("slice", f"empty result for key {key!r}", xs[0].shape)
        return np.array(out), None

    @staticmethod
    def vjp(g, xs, out, ctx, attrs):
        return [_Scatter(attrs["key"], g)]


@_register("reshape", 1)
class _Reshape:
    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        try:
            return x.reshape(attrs["shape"]), None
        except ValueError:
            raise _shape_error("reshape", f"cannot reshape to {attrs['shape']}", x.shape) from None

    @staticmethod
    def vjp(g, xs, out, ctx, attrs):
        return [g.reshape(xs[0].shape)]


@_register("transpose", 1)
class _Transpose:
    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        axes = attrs.get("axes")
        if axes is not None and sorted(axes) != list(range(x.ndim)):
            raise _shape_error("transpose", f"bad permutation {axes}", x.shape)
        return np.transpose(x, axes), None

    @staticmethod
    def vjp(g, xs, out, ctx, attrs):
        axes = attrs.get("axes")
        inv = None if axes is None else np.argsort(axes)
        return [np.transpose(g, inv)]


@_register("broadcast", 1)
class _Broadcast:
    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        shape = tuple(attrs["shape"])
        if x.ndim != len(shape) or any(a != b and a != 1 for a, b in zip(x.shape, shape)):
            raise _shape_error(
                "broadcast", f"only size-1 axes of equal rank can expand to {shape}", x.shape
            )
        return np.broadcast_to(x, shape), None

    @staticmethod
    def vjp(g, xs, out, ctx, attrs):
        in_shape = xs[0].shape
        axes = tuple(i for i, (a, b) in enumerate(zip(in_shape, g.shape)) if a != b)
        return [g.sum(axis=axes, keepdims=True) if axes else g]


@_register("sigmoid", 1)
class _Sigmoid:
    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        # split by sign so exp never overflows
        e = np.exp(-np.abs(x))
        out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return out, None

    @staticmethod
    def vjp(g, xs, out, ctx, attrs):
        return [g * out * (1.0 - out)]


@_register("tanh", 1)
class _Tanh:
    @staticmethod
    def forward(xs, attrs):
        return np.tanh(xs[0]), None

    @staticmethod
    def vjp(g, xs, out, ctx, attrs):
        return [g * (1.0 - out * out)]


@_register("leaky_relu", 1)
class _LeakyRelu:
    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        pos = x > 0
        return np.where(pos, x, LEAKY_SLOPE * x), pos

    @staticmethod
    def vjp(g, xs, out, pos, attrs):
        return [np.where(pos, g, LEAKY_SLOPE * g)]


@_register("log", 1)
class _Log:
    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        if np.any(x <= 0):
            raise NonFiniteError("log: input has non-positive entries")
        return np.log(x), None

    @staticmethod
    def vjp(g, xs, out, ctx, attrs):
        return [g / xs[0]]


@_register("power", 1)
class _Power:
    @staticmethod
    def forward(xs, attrs):
        p = float(attrs["exponent"])
        x = xs[0]
        if p == 0.0:
            return np.ones_like(x), None
        with np.errstate(divide="raise", invalid="raise"):
            try:
                return x ** p, None
            except FloatingPointError as exc:
                raise NonFiniteError(f"power: {exc}") from None

    @staticmethod
    def vjp(g, xs, out, ctx, attrs):
        p = float(attrs["exponent"])
        if p == 0.0:
            return [np.zeros_like(g)]
        return [g * p * xs[0] ** (p - 1.0)]


@_register("clip", 1)
class _Clip:
    @staticmethod
    def forward(xs, attrs):
        lo, hi = attrs["low"], attrs["high"]
        x = xs[0]
        inside = (x >= lo) & (x <= hi)
        return np.clip(x, lo, hi), inside

    @staticmethod
    def vjp(g, xs, out, inside, attrs):
        return [np.where(inside, g, 0.0)]


# ---------------------------------------------------------------------------
# dispatch


def apply_primitive(kind: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Run primitive ``kind`` forward and record a graph node if needed."""
    try:
        prim = PRIMITIVES[kind]
    except KeyError:
        raise TensorError(f"unknown primitive {kind!r}") from None
    inputs = tuple(inputs)
    if prim.arity is not None and len(inputs) != prim.arity:
        raise TensorError(f"{kind}: expected {prim.arity} inputs, got {len(inputs)}")
    arrays = []
    for i, t in enumerate(inputs):
        if not isinstance(t, Tensor):
            raise TypeError(f"{kind}: input {i} is {type(t).__name__}, not Tensor")
        if not np.isfinite(t.data).all():
            raise NonFiniteError(f"{kind}: input {i} with shape {t.shape} contains NaN/Inf")
        arrays.append(t.data)
    out_data, ctx = prim.forward(arrays, attrs)
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(out_data, dtype=np.float64)
    out.grad = None
    out.node = None
    out.requires_grad = False
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(kind, inputs, attrs, ctx)
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad ancestor of a scalar ``loss``.

    Gradients add onto any existing ``.grad`` buffers.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss.node is None:
        raise GraphError("backward: loss has no recorded graph (detached or no requires_grad inputs)")
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        t.grad = g if t.grad is None else t.grad + g
        node = t.node
        if node is None:
            continue
        parent_data = [p.data for p in node.parents]
        prim = PRIMITIVES[node.kind]
        if prim.masked:
            needs = tuple(p.requires_grad for p in node.parents)
            contribs = prim.vjp(g, parent_data, t.data, node.ctx, node.attrs, needs=needs)
        else:
            contribs = prim.vjp(g, parent_data, t.data, node.ctx, node.attrs)
        for p, c in zip(node.parents, contribs):
            if c is None or not p.requires_grad:
                continue
            key = id(p)
            if isinstance(c, _Scatter):
                buf = grads.get(key)
                if buf is None:
                    buf = grads[key] = np.zeros_like(p.data)
                if _needs_add_at(c.index):
                    np.add.at(buf, c.index, c.values)
                else:
                    buf[c.index] += c.values
            else:
                c = np.asarray(c)
                if c.shape != p.data.shape:
                    c = np.broadcast_to(c, p.data.shape)
                prev = grads.get(key)
                grads[key] = np.array(c, dtype=np.float64) if prev is None else prev + c


def _needs_add_at(index) -> bool:
    # fancy indices may repeat; basic slices never alias
    keys = index if isinstance(index, tuple) else (index,)
    return any(isinstance(k, (list, np.ndarray)) for k in keys)


# ---------------------------------------------------------------------------
# functional surface


def add(a, b):
    return apply_primitive("add", (a, b))


def mul(a, b):
    return apply_primitive("mul", (a, b))


def neg(a):
    return apply_primitive("neg", (a,))


def matmul(a, b):
    return apply_primitive("matmul", (a, b))


def conv2d(x, w, stride: int = 1, padding: int = 0):
    return apply_primitive("conv2d", (x, w), stride=stride, padding=padding)


def max_over_axis(x, axis=None, keepdims: bool = False):
    if isinstance(axis, (tuple, list)):
        if len(axis) != 1:
            raise ShapeError("max_over_axis reduces a single axis at a time")
        axis = axis[0]
    return apply_primitive("max_over_axis", (x,), axis=axis, keepdims=keepdims)


def sum_over_axis(x, axis=None, keepdims: bool = False):
    return apply_primitive("sum_over_axis", (x,), axis=axis, keepdims=keepdims)


def mean_over_axis(x, axis=None, keepdims: bool = False):
    return apply_primitive("mean_over_axis", (x,), axis=axis, keepdims=keepdims)


def concat(xs, axis: int = 0):
    return apply_primitive("concat_along_axis", tuple(xs), axis=axis)


def slice_(x, key):
    if not isinstance(key, tuple):
        key = (key,)
    return apply_primitive("slice", (x,), key=key)


def reshape(x, shape):
    return apply_primitive("reshape", (x,), shape=tuple(shape))


def transpose(x, axes=None):
    return apply_primitive("transpose", (x,), axes=None if axes is None else tuple(axes))


def broadcast(x, shape):
    return apply_primitive("broadcast", (x,), shape=tuple(shape))


def sigmoid(x):
    return apply_primitive("sigmoid", (x,))


def tanh(x):
    return apply_primitive("tanh", (x,))


def leaky_relu(x):
    return apply_primitive("leaky_relu", (x,))


def log(x):
    return apply_primitive("log", (x,))


def power(x, exponent: float):
    return apply_primitive("power", (x,), exponent=float(exponent))


def clip(x, low: float, high: float):
    return apply_primitive("clip", (x,), low=float(low), high=float(high))


# ---------------------------------------------------------------------------
# gradient checking


def numerical_gradient(f: Callable[[Tensor], Tensor], x: np.ndarray, eps: float) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(Tensor(x)).item()
            flat[i] = orig - eps
            fm = f(Tensor(x)).item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"finite difference: non-finite value at coordinate {i}")
            gflat[i] = (fp - fm) / (2 * eps)
    return grad


def finite_difference_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max over coordinates of |analytic - numeric| / max(1, |analytic|)."""
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(x0, requires_grad=True)
    out = f(xt)
    if not np.isfinite(out.data).all():
        raise NonFiniteError("finite difference: f(x) is not finite")
    out.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x0)
    numeric = numerical_gradient(f, x0, eps)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
