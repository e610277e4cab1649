"""Dense tensors with define-by-run reverse-mode differentiation.

Every differentiable primitive is a :class:`Function` subclass with a
``forward`` over numpy arrays and a ``backward`` that maps the output
gradient to one gradient per input.  Calling ``Fn.apply(*tensors)`` runs the
forward pass and, when any input requires a gradient, links the result to
the function instance so :func:`backward` can replay the graph.

Image-like tensors are laid out ``[N, C, H, W]``.  The public wrappers also
accept a single ``[C, H, W]`` sample.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import ArgumentError, ContractError, DataError, DimensionError

_default_dtype = np.dtype(np.float32)
_state = threading.local()


def get_default_dtype() -> np.dtype:
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ArgumentError(f"unsupported scalar type {dtype}")
    _default_dtype = dtype


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the scalar type used for new tensors.

    Gradient checks run under ``precision(np.float64)``; training uses the
    32-bit default.
    """
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


# -- multiply-accumulate accounting -------------------------------------------

@contextlib.contextmanager
def count_macs() -> Iterator[dict]:
    """Collect multiply-accumulate counts from convolution-type ops.

    Yields a dict mapping op name to MACs per sample; counts accumulate over
    every op executed inside the block.
    """
    stack = getattr(_state, "mac_stack", None)
    if stack is None:
        stack = _state.mac_stack = []
    counter: dict = {}
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.pop()


def _record_macs(op: str, macs: int) -> None:
    for counter in getattr(_state, "mac_stack", ()):
        counter[op] = counter.get(op, 0) + int(macs)


# -- tensor ---------------------------------------------------------------------

class Tensor:
    """N-dimensional array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_ctx", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        dtype = _default_dtype if dtype is None else np.dtype(dtype)
        self.data = np.ascontiguousarray(np.asarray(data, dtype=dtype))
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._ctx: Optional[Function] = None
        self.name = name

    # constructors
    @classmethod
    def zeros(cls, shape, requires_grad=False):
        return cls(np.zeros(shape, dtype=_default_dtype), requires_grad=requires_grad)

    @classmethod
    def ones(cls, shape, requires_grad=False):
        return cls(np.ones(shape, dtype=_default_dtype), requires_grad=requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # operators
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return AddScalar.apply(self, value=float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return AddScalar.apply(self, value=-float(other))

    def __rsub__(self, other):
        return AddScalar.apply(Scale.apply(self, factor=-1.0), value=float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return Scale.apply(self, factor=float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise DimensionError("tensor/tensor division is not supported")
        return Scale.apply(self, factor=1.0 / float(other))

    def __neg__(self):
        return Scale.apply(self, factor=-1.0)

    def __getitem__(self, index):
        return Index.apply(self, index=index)

    def sum(self, axis=None, keepdims=False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- function base and tape ---------------------------------------------------

class Function:
    """Base class for differentiable operations with a single output."""

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        fn = cls(*inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        track = is_grad_enabled() and any(t.requires_grad for t in inputs)
        result = Tensor(out, requires_grad=track, dtype=out.dtype)
        if track:
            # flags are captured now so that later toggles (e.g. a frozen
            # parameter block being re-enabled) do not leak gradients
            fn.needs_grad = tuple(t.requires_grad for t in inputs)
            result._ctx = fn
        return result


class Tape:
    """Recorded operations reachable from one output, in topological order."""

    def __init__(self, ops: Optional[list] = None):
        self.ops: list = ops if ops is not None else []

    @classmethod
    def from_output(cls, output: Tensor) -> "Tape":
        order: list = []
        if output._ctx is None:
            return cls(order)
        # post-order DFS; an op is marked when expanded, not when pushed, so an
        # op reachable along several paths is still emitted before its consumers
        expanded_ids, emitted = set(), set()
        stack = [(output._ctx, False)]
        while stack:
            fn, children_done = stack.pop()
            if children_done:
                if id(fn) not in emitted:
                    emitted.add(id(fn))
                    order.append(fn)
                continue
            if id(fn) in expanded_ids:
                continue
            expanded_ids.add(id(fn))
            stack.append((fn, True))
            for inp in fn.inputs:
                child = inp._ctx
                if child is not None and id(child) not in expanded_ids:
                    stack.append((child, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.ops)

    def replay(self, output: Tensor, seed: np.ndarray) -> None:
        grads = {id(output._ctx): seed}
        for fn in reversed(self.ops):
            g = grads.pop(id(fn), None)
            if g is None:
                continue
            input_grads = fn.backward(g)
            for inp, gi, need in zip(fn.inputs, input_grads, fn.needs_grad):
                if gi is None or not need:
                    continue
                if inp._ctx is None:
                    if inp.grad is None:
                        inp.grad = np.array(gi, dtype=inp.data.dtype, copy=True)
                    else:
                        inp.grad += gi
                else:
                    key = id(inp._ctx)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi

    def clear(self) -> None:
        self.ops.clear()


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    seed = np.ones_like(loss.data)
    if loss._ctx is None:
        if loss.requires_grad:
            loss.grad = seed if loss.grad is None else loss.grad + seed
        return
    tape = Tape.from_output(loss)
    tape.replay(loss, seed)
    tape.clear()


# -- elementwise ----------------------------------------------------------------

def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    def forward(self, a, b):
        return a - b

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


class Scale(Function):
    def forward(self, a, factor):
        self.factor = factor
        return a * a.dtype.type(factor)

    def backward(self, grad):
        return (grad * grad.dtype.type(self.factor),)


class AddScalar(Function):
    def forward(self, a, value):
        return a + a.dtype.type(value)

    def backward(self, grad):
        return (grad,)


class Abs(Function):
    def forward(self, a):
        self.sign = np.sign(a)
        return np.abs(a)

    def backward(self, grad):
        return (grad * self.sign,)


class ReLU(Function):
    def forward(self, a):
        self.mask = a > 0
        return np.where(self.mask, a, 0).astype(a.dtype, copy=False)

    def backward(self, grad):
        return (grad * self.mask,)


class LeakyReLU(Function):
    def forward(self, a, slope=0.2):
        self.slope = a.dtype.type(slope)
        self.mask = a > 0
        return np.where(self.mask, a, a * self.slope)

    def backward(self, grad):
        return (np.where(self.mask, grad, grad * self.slope),)


class Sigmoid(Function):
    def forward(self, a):
        # split by sign so large |a| never overflows exp
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        e = np.exp(a[~pos])
        out[~pos] = e / (1.0 + e)
        self.out = out
        return out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Tanh(Function):
    def forward(self, a):
        self.out = np.tanh(a)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out * self.out),)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return Sub.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return Mul.apply(a, b)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    return LeakyReLU.apply(x, slope=slope)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(x)


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return Abs.apply(x)


_UNARY = {"leaky_relu": leaky_relu, "relu": relu, "sigmoid": sigmoid, "tanh": tanh, "abs": abs}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, *operands: Tensor) -> Tensor:
    """Dispatch a pointwise op by name (``add``, ``mul``, ``leaky_relu`` ...)."""
    if op in _BINARY:
        if len(operands) != 2:
            raise ArgumentError(f"{op} takes two operands")
        return _BINARY[op](*operands)
    if op in _UNARY:
        if len(operands) != 1:
            raise ArgumentError(f"{op} takes one operand")
        return _UNARY[op](operands[0])
    raise ArgumentError(f"unknown elementwise op {op!r}")


# -- reductions and shape ops -------------------------------------------------

class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.in_shape = a.shape
        self.axis = axis
        self.keepdims = keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            axes = (self.axis,) if isinstance(self.axis, int) else self.axis
            axes = tuple(ax % len(self.in_shape) for ax in axes)
            grad = np.expand_dims(grad, axes)
        return (np.broadcast_to(grad, self.in_shape).copy(),)


def sum(x: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[ax] for ax in axes]))
    return Scale.apply(Sum.apply(x, axis=axis, keepdims=keepdims), factor=1.0 / count)


class Reshape(Function):
    def forward(self, a, shape):
        self.in_shape = a.shape
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Index(Function):
    def forward(self, a, index):
        self.in_shape = a.shape
        self.index = index
        return np.ascontiguousarray(a[index])

    def backward(self, grad):
        out = np.zeros(self.in_shape, dtype=grad.dtype)
        np.add.at(out, self.index, grad)
        return (out,)


class Concat(Function):
    def forward(self, *arrays, axis=1):
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        splits = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, splits, axis=self.axis))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            s != r for d, (s, r) in enumerate(zip(t.shape, ref)) if d != axis % len(ref)
        ):
            raise DimensionError(f"concat: incompatible shapes {ref} and {t.shape}")
    return Concat.apply(*tensors, axis=axis)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    return concat([t.reshape((1,) + t.shape) for t in tensors], axis=0)


# -- spatial ops ----------------------------------------------------------------

def _batched(fn):
    """Run a 4-D op on a single [C, H, W] sample by adding a batch axis."""

    def wrapper(x: Tensor, *args, **kwargs):
        if x.ndim == 3:
            out = fn(x.reshape((1,) + x.shape), *args, **kwargs)
            return out.reshape(out.shape[1:])
        if x.ndim != 4:
            raise DimensionError(f"expected [C,H,W] or [N,C,H,W], got {x.shape}")
        return fn(x, *args, **kwargs)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


class UpsampleNearest(Function):
    def forward(self, x, factor):
        self.factor = factor
        return x.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(self, grad):
        n, c, h, w = grad.shape
        f = self.factor
        return (grad.reshape(n, c, h // f, f, w // f, f).sum(axis=(3, 5)),)


@_batched
def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Replicate each cell into a ``factor x factor`` block."""
    if factor < 1:
        raise ArgumentError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    return UpsampleNearest.apply(x, factor=int(factor))


class SpatialBroadcast(Function):
    def forward(self, x, height, width):
        return np.ascontiguousarray(np.broadcast_to(x, x.shape[:2] + (height, width)))

    def backward(self, grad):
        return (grad.sum(axis=(2, 3), keepdims=True),)


@_batched
def broadcast_spatial(x: Tensor, height: int, width: int) -> Tensor:
    """Tile a ``1 x 1`` map over ``height x width``."""
    if x.shape[2:] != (1, 1):
        raise DimensionError(f"expected a 1x1 map, got {x.shape[2:]}")
    if height < 1 or width < 1:
        raise ArgumentError(f"target extents must be positive, got {height}x{width}")
    return SpatialBroadcast.apply(x, height=int(height), width=int(width))


class AvgPool(Function):
    def forward(self, x, factor):
        n, c, h, w = x.shape
        self.factor = factor
        return x.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))

    def backward(self, grad):
        f = self.factor
        g = grad.repeat(f, axis=2).repeat(f, axis=3)
        return (g * g.dtype.type(1.0 / (f * f)),)


@_batched
def avg_pool(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ArgumentError(f"pool factor must be >= 1, got {factor}")
    if x.shape[2] % factor or x.shape[3] % factor:
        raise DimensionError(f"extents {x.shape[2:]} not divisible by {factor}")
    if factor == 1:
        return x
    return AvgPool.apply(x, factor=int(factor))


class Conv2d(Function):
    def forward(self, x, w, b, stride, pad):
        n, c, h, wd = x.shape
        d, _, k, _ = w.shape
        self.x_shape = x.shape
        self.stride, self.pad, self.k = stride, pad, k
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        ho = (h + 2 * pad - k) // stride + 1
        wo = (wd + 2 * pad - k) // stride + 1
        if k == 1 and stride == 1:
            cols = xp.reshape(n, c, ho * wo)
        else:
            # channel-major columns [N, C*k*k, Ho*Wo]: each copy is a strided 2-D block
            cols = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
            for m in range(k):
                for q in range(k):
                    cols[:, :, m, q] = xp[:, :, m:m + stride * (ho - 1) + 1:stride, q:q + stride * (wo - 1) + 1:stride]
            cols = cols.reshape(n, c * k * k, ho * wo)
        self.cols = cols
        self.wmat = w.reshape(d, c * k * k)
        self.out_hw = (ho, wo)
        out = np.matmul(self.wmat, cols)
        out += b[None, :, None]
        _record_macs("conv2d", c * k * k * d * ho * wo)
        return out.reshape(n, d, ho, wo)

    def backward(self, grad):
        n, c, h, w = self.x_shape
        k, s, p = self.k, self.stride, self.pad
        ho, wo = self.out_hw
        d = grad.shape[1]
        g = grad.reshape(n, d, ho * wo)
        gw = np.matmul(g, self.cols.transpose(0, 2, 1)).sum(axis=0).reshape(d, c, k, k)
        gb = g.sum(axis=(0, 2))
        gcols = np.matmul(self.wmat.T, g)
        if k == 1 and s == 1:
            gxp = gcols.reshape(n, c, h + 2 * p, w + 2 * p)
        else:
            gcols = gcols.reshape(n, c, k, k, ho, wo)
            gxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=grad.dtype)
            for m in range(k):
                for q in range(k):
                    gxp[:, :, m:m + s * (ho - 1) + 1:s, q:q + s * (wo - 1) + 1:s] += gcols[:, :, m, q]
        gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        return gx, gw, gb


@_batched
def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Dense 2-D convolution with zero padding.

    Args:
        x: input ``[N, C, H, W]`` (or one ``[C, H, W]`` sample).
        w: kernels ``[D, C, k, k]``.
        bias: ``[D]``; zeros when omitted.
        stride: step between output positions, >= 1.
        pad: zero border added on every side, >= 0.
    """
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise DimensionError(f"conv2d weight must be [D,C,k,k], got {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise DimensionError(f"conv2d: weight expects {w.shape[1]} channels, input has {x.shape[1]}")
    if stride < 1 or pad < 0:
        raise ArgumentError(f"invalid stride={stride} / pad={pad}")
    k = w.shape[2]
    if k > x.shape[2] + 2 * pad or k > x.shape[3] + 2 * pad:
        raise DimensionError(f"kernel {k} larger than padded input {x.shape[2:]}")
    if bias is None:
        bias = Tensor.zeros((w.shape[0],))
    if bias.shape != (w.shape[0],):
        raise DimensionError(f"conv2d bias must be [{w.shape[0]}], got {bias.shape}")
    return Conv2d.apply(x, w, bias, stride=int(stride), pad=int(pad))


class PointwiseConv(Function):
    # same arithmetic as Conv2d with k=1, so the two agree bit for bit
    def forward(self, x, w, b):
        n, c, h, wd = x.shape
        d = w.shape[0]
        self.x_shape = x.shape
        self.cols = x.reshape(n, c, h * wd)
        self.w = w
        _record_macs("pointwise", c * d * h * wd)
        out = np.matmul(w, self.cols)
        out += b[None, :, None]
        return out.reshape(n, d, h, wd)

    def backward(self, grad):
        n, c, h, w = self.x_shape
        d = grad.shape[1]
        g = grad.reshape(n, d, h * w)
        gw = np.matmul(g, self.cols.transpose(0, 2, 1)).sum(axis=0)
        gb = g.sum(axis=(0, 2))
        gx = np.matmul(self.w.T, g).reshape(n, c, h, w)
        return gx, gw, gb


@_batched
def pointwise_conv(x: Tensor, w: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """1x1 convolution: ``out[d] = sum_c w[d, c] * x[c] + bias[d]``."""
    if w.ndim != 2 or w.shape[1] != x.shape[1]:
        raise DimensionError(f"pointwise weight {w.shape} does not match {x.shape[1]} channels")
    if bias is None:
        bias = Tensor.zeros((w.shape[0],))
    if bias.shape != (w.shape[0],):
        raise DimensionError(f"pointwise bias must be [{w.shape[0]}], got {bias.shape}")
    return PointwiseConv.apply(x, w, bias)


class Normalize(Function):
    """Standardize over ``axes``; with ``stats`` given, use those instead."""

    def forward(self, x, axes, eps, stats=None):
        self.axes = axes
        if stats is None:
            mu = x.mean(axis=axes, keepdims=True)
            var = x.var(axis=axes, keepdims=True)
            self.batch = True
        else:
            mu, var = stats
            self.batch = False
        self.inv_std = 1.0 / np.sqrt(var + x.dtype.type(eps))
        self.xhat = (x - mu) * self.inv_std
        self.mu, self.var = mu, var
        return self.xhat

    def backward(self, grad):
        if not self.batch:
            return (grad * self.inv_std,)
        g_mean = grad.mean(axis=self.axes, keepdims=True)
        gx_mean = (grad * self.xhat).mean(axis=self.axes, keepdims=True)
        return (self.inv_std * (grad - g_mean - self.xhat * gx_mean),)


class ChannelAffine(Function):
    def forward(self, x, gamma, beta):
        self.x = x
        self.gamma = gamma
        return x * gamma[None, :, None, None] + beta[None, :, None, None]

    def backward(self, grad):
        g_gamma = (grad * self.x).sum(axis=(0, 2, 3))
        g_beta = grad.sum(axis=(0, 2, 3))
        return grad * self.gamma[None, :, None, None], g_gamma, g_beta


def channel_affine(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"affine params {gamma.shape}/{beta.shape} do not fit {x.shape}")
    return ChannelAffine.apply(x, gamma, beta)


class Embedding(Function):
    def forward(self, table, ids):
        self.ids = ids
        self.rows = table.shape[0]
        return np.ascontiguousarray(table[ids].transpose(0, 3, 1, 2))

    def backward(self, grad):
        c = grad.shape[1]
        gt = np.zeros((self.rows, c), dtype=grad.dtype)
        np.add.at(gt, self.ids.ravel(), grad.transpose(0, 2, 3, 1).reshape(-1, c))
        return gt, None


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Look up ``table[ids]`` for an integer ``[N, H, W]`` grid -> ``[N, C, H, W]``."""
    ids = np.asarray(ids)
    if ids.ndim != 3:
        raise DimensionError(f"ids must be [N,H,W], got {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DataError(f"label id outside table range [0, {table.shape[0]})")
    return Embedding.apply(table, Tensor(ids.astype(np.int64), dtype=np.int64))


# -- finite differences ---------------------------------------------------------

def finite_diff_grad(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-6) -> Tensor:
    """Central-difference gradient of a scalar function, one element at a time."""
    base = x.data
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(np.asarray(_value(f(x))).sum())
            flat[i] = orig - h
            fm = float(np.asarray(_value(f(x))).sum())
            flat[i] = orig
            grad.reshape(-1)[i] = (fp - fm) / (2.0 * h)
    return Tensor(grad, dtype=base.dtype)


def _value(out):
    return out.data if isinstance(out, Tensor) else out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / (||a|| + ||n||)``, zero when both vanish."""
    num = float(np.linalg.norm(np.ravel(analytic) - np.ravel(numeric)))
    den = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    return 0.0 if den == 0.0 else num / den
