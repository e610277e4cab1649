"""Trainable layers, parameter registry, initialization and ADAM."""

from __future__ import annotations

import contextlib
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, Optional

import numpy as np

from . import tensor as T
from .errors import ArgumentError, ContractError, DimensionError, StateError
from .tensor import Tensor


@dataclass(frozen=True)
class InitRecord:
    scheme: str  # "fan_in_normal" | "normal" | "zeros" | "ones"
    gain: float = 1.0
    std: float = 0.0


class ParamStore:
    """Insertion-ordered mapping of parameter name to trainable tensor.

    Non-trainable state (batch-norm running statistics) lives in
    ``buffers`` and is checkpointed alongside the parameters.
    """

    def __init__(self, prefix: str = ""):
        self.prefix = prefix
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.inits: Dict[str, InitRecord] = {}
        self.buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()

    def add(self, name: str, shape, init: InitRecord) -> Tensor:
        if name in self.params:
            raise ArgumentError(f"duplicate parameter name {name!r}")
        t = Tensor.zeros(tuple(shape), requires_grad=True)
        t.name = name
        self.params[name] = t
        self.inits[name] = init
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.buffers:
            raise ArgumentError(f"duplicate buffer name {name!r}")
        self.buffers[name] = np.array(value, dtype=T.get_default_dtype())
        return self.buffers[name]

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def tensors(self) -> list:
        return list(self.params.values())

    def total_param_count(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    @contextlib.contextmanager
    def frozen(self) -> Iterator[None]:
        """Treat every parameter as a constant inside the block."""
        flags = [(t, t.requires_grad) for t in self.params.values()]
        for t, _ in flags:
            t.requires_grad = False
        try:
            yield
        finally:
            for t, flag in flags:
                t.requires_grad = flag

    def snapshot(self) -> Dict[str, np.ndarray]:
        out = {n: t.data.copy() for n, t in self.params.items()}
        out.update({f"buffer:{n}": b.copy() for n, b in self.buffers.items()})
        return out


def fan_in(shape) -> int:
    return int(np.prod(shape[1:])) if len(shape) > 1 else int(shape[0])


def init_params(store: ParamStore, seed: int) -> None:
    """(Re)initialize every parameter of ``store`` deterministically from ``seed``.

    Conv and linear weights use a fan-in-scaled normal, N(0, gain^2 * 2/fan_in);
    embeddings N(0, std^2); biases and norm shifts zero; norm scales one.
    """
    rng = np.random.default_rng(seed)
    dtype = T.get_default_dtype()
    for name, t in store.params.items():
        rec = store.inits[name]
        if rec.scheme == "fan_in_normal":
            std = rec.gain * math.sqrt(2.0 / fan_in(t.shape))
            t.data[...] = rng.standard_normal(t.shape) * std
        elif rec.scheme == "normal":
            t.data[...] = rng.standard_normal(t.shape) * rec.std
        elif rec.scheme == "zeros":
            t.data[...] = 0
        elif rec.scheme == "ones":
            t.data[...] = 1
        else:
            raise ArgumentError(f"unknown init scheme {rec.scheme!r}")
        t.data = t.data.astype(dtype, copy=False)
        t.grad = None
    for name, b in store.buffers.items():
        b[...] = 1 if name.endswith("running_var") else 0


FAN_IN = InitRecord("fan_in_normal")
ZEROS = InitRecord("zeros")
ONES = InitRecord("ones")


# -- normalization ------------------------------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, training: bool,
               running_mean: Optional[np.ndarray] = None, running_var: Optional[np.ndarray] = None,
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over (N, H, W).

    In training mode batch statistics are used and the running buffers (if
    given) are updated in place with ``momentum``.  Eval mode requires
    populated running buffers.
    """
    if x.ndim != 4:
        raise DimensionError(f"batch_norm expects [N,C,H,W], got {x.shape}")
    if training:
        out = T.Normalize.apply(x, axes=(0, 2, 3), eps=eps)
        if running_mean is not None and running_var is not None:
            n = x.shape[0] * x.shape[2] * x.shape[3]
            mu = x.data.mean(axis=(0, 2, 3))
            var = x.data.var(axis=(0, 2, 3)) * (n / (n - 1) if n > 1 else 1.0)
            running_mean *= 1 - momentum
            running_mean += momentum * mu
            running_var *= 1 - momentum
            running_var += momentum * var
    else:
        if running_mean is None or running_var is None:
            raise StateError("batch_norm eval mode needs running statistics")
        stats = (running_mean[None, :, None, None], running_var[None, :, None, None])
        out = T.Normalize.apply(x, axes=(0, 2, 3), eps=eps, stats=stats)
    return T.channel_affine(out, gamma, beta)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-(sample, channel) normalization over (H, W).

    A 1x1 plane has zero variance; its normalized value is 0 so the output
    is ``beta``.
    """
    if x.ndim != 4:
        raise DimensionError(f"instance_norm expects [N,C,H,W], got {x.shape}")
    out = T.Normalize.apply(x, axes=(2, 3), eps=eps)
    return T.channel_affine(out, gamma, beta)


# -- layers ---------------------------------------------------------------------------

class Conv:
    def __init__(self, store: ParamStore, name: str, cin: int, cout: int, k: int = 3,
                 stride: int = 1, pad: Optional[int] = None, gain: float = 1.0, bias_init=ZEROS):
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        init = FAN_IN if gain == 1.0 else InitRecord("fan_in_normal", gain=gain)
        self.w = store.add(f"{name}.weight", (cout, cin, k, k), init)
        self.b = store.add(f"{name}.bias", (cout,), bias_init)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class Pointwise:
    def __init__(self, store: ParamStore, name: str, cin: int, cout: int, bias: bool = True, gain: float = 1.0):
        init = FAN_IN if gain == 1.0 else InitRecord("fan_in_normal", gain=gain)
        self.w = store.add(f"{name}.weight", (cout, cin), init)
        self.b = store.add(f"{name}.bias", (cout,), ZEROS) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.pointwise_conv(x, self.w, self.b)


class BatchNorm2d:
    def __init__(self, store: ParamStore, name: str, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = store.add(f"{name}.gamma", (channels,), ONES)
        self.beta = store.add(f"{name}.beta", (channels,), ZEROS)
        self.running_mean = store.add_buffer(f"{name}.running_mean", np.zeros(channels))
        self.running_var = store.add_buffer(f"{name}.running_var", np.ones(channels))
        self.momentum, self.eps = momentum, eps
        self.training = True

    def __call__(self, x: Tensor) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.training,
                          self.running_mean, self.running_var, self.momentum, self.eps)


class InstanceNorm2d:
    def __init__(self, store: ParamStore, name: str, channels: int, eps: float = 1e-5):
        self.gamma = store.add(f"{name}.gamma", (channels,), ONES)
        self.beta = store.add(f"{name}.beta", (channels,), ZEROS)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return instance_norm(x, self.gamma, self.beta, self.eps)


# -- optimizer -------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float
    beta1: float = 0.0
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(stores: Iterable[ParamStore], state: AdamState) -> None:
    """One bias-corrected ADAM update, in place.  Gradients are left as-is."""
    stores = list(stores)
    named = [(f"{s.prefix}{n}", p) for s in stores for n, p in s.items()]
    missing = [n for n, p in named if p.grad is None]
    if missing:
        raise ContractError(f"adam_step: no gradient for {missing[:3]}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in named:
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= (state.lr * step).astype(p.data.dtype, copy=False)
