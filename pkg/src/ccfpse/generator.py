"""Conditional-convolution generator.

A CC block is ``batch_norm -> conditional depthwise conv -> pointwise conv
-> conditional attention -> leaky_relu``.  The depthwise kernels ``V`` and
the attention gates ``A`` are not parameters of the generator: they arrive
per sample from the weight-prediction network as :class:`PredictedWeights`.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import List, NamedTuple, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .errors import ArgumentError, ContractError, DimensionError
from .nn import BatchNorm2d, Conv, ParamStore, Pointwise
from .tensor import Function, Tensor


@dataclass
class GeneratorConfig:
    z_ch: int = 64
    widths: Tuple[int, ...] = (64, 64, 32, 16)
    blocks_per_stage: int = 2
    kernel_size: int = 3
    out_channels: int = 3
    base_h: int = 4
    base_w: int = 4
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    # init gain of the 1x1 noise head; small so the residual stream starts
    # dominated by the layout-conditioned branches rather than raw noise
    noise_head_gain: float = 0.05

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if not self.widths or min(self.widths) <= 0 or self.z_ch <= 0:
            raise ArgumentError("generator widths and z_ch must be positive")
        if self.kernel_size % 2 == 0:
            raise ArgumentError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.blocks_per_stage != 2:
            raise ArgumentError("skip connections wrap block pairs; blocks_per_stage must be 2")

    @property
    def num_upsamples(self) -> int:
        return len(self.widths) - 1

    @property
    def image_hw(self) -> Tuple[int, int]:
        f = 2 ** self.num_upsamples
        return self.base_h * f, self.base_w * f


class BlockSpec(NamedTuple):
    index: int
    layer_id: str
    stage: int
    cin: int
    cout: int
    height: int
    width: int


def block_specs(cfg: GeneratorConfig) -> List[BlockSpec]:
    """Every conditional block in forward order, coarsest stage first."""
    specs = []
    for s, width in enumerate(cfg.widths):
        h, w = cfg.base_h * 2 ** s, cfg.base_w * 2 ** s
        cin = cfg.widths[s - 1] if s > 0 else cfg.widths[0]
        for b in range(cfg.blocks_per_stage):
            specs.append(BlockSpec(len(specs), f"s{s}b{b}", s, cin if b == 0 else width, width, h, w))
    return specs


@dataclass
class PredictedWeights:
    """Layout-predicted kernels ``V [N,C,k,k,H,W]`` and gates ``A [N,D,H,W]``."""

    V: Tensor
    A: Tensor
    layer_id: str


@dataclass
class Modulation:
    """Layout-predicted per-pixel scale/shift ``[N,C,H,W]`` (SPADE-style arm)."""

    gamma: Tensor
    beta: Tensor
    layer_id: str


BlockWeights = Union[PredictedWeights, Modulation]


# -- conditional operations ------------------------------------------------------------

class ConditionalDepthwiseConv(Function):
    def forward(self, x, v):
        n, c, h, w = x.shape
        k = v.shape[2]
        p = k // 2
        self.k, self.p = k, p
        self.xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        self.v = v
        out = np.zeros_like(x)
        for m in range(k):
            for q in range(k):
                out += self.xp[:, :, m:m + h, q:q + w] * v[:, :, m, q]
        T._record_macs("cond_depthwise", c * k * k * h * w)
        return out

    def backward(self, grad):
        n, c, h, w = grad.shape
        k, p = self.k, self.p
        gv = np.empty_like(self.v)
        gxp = np.zeros_like(self.xp)
        for m in range(k):
            for q in range(k):
                gv[:, :, m, q] = grad * self.xp[:, :, m:m + h, q:q + w]
                gxp[:, :, m:m + h, q:q + w] += grad * self.v[:, :, m, q]
        gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        return gx, gv


def conditional_depthwise_conv(x: Tensor, V: Tensor) -> Tensor:
    """Spatially-varying depthwise convolution.

    ``Y[c,i,j] = sum_{m,n} X[c, i+m-p, j+n-p] * V[c,m,n,i,j]`` with
    ``p = k // 2`` and zero padding, so the output keeps the input extents.
    Accepts one sample (``x [C,H,W]``, ``V [C,k,k,H,W]``) or a batch with a
    leading ``N`` on both.
    """
    single = x.ndim == 3
    if single:
        if V.ndim != 5:
            raise DimensionError(f"V must be [C,k,k,H,W] for a single sample, got {V.shape}")
        x = x.reshape((1,) + x.shape)
        V = V.reshape((1,) + V.shape)
    if x.ndim != 4 or V.ndim != 6:
        raise DimensionError(f"bad ranks: x {x.shape}, V {V.shape}")
    n, c, h, w = x.shape
    if V.shape[2] != V.shape[3]:
        raise DimensionError(f"kernel must be square, got {V.shape[2:4]}")
    if V.shape[2] % 2 == 0:
        raise ArgumentError(f"kernel size must be odd, got {V.shape[2]}")
    if V.shape[:2] != (n, c) or V.shape[4:] != (h, w):
        raise DimensionError(f"V {V.shape} does not match input {x.shape}")
    out = ConditionalDepthwiseConv.apply(x, V)
    return out.reshape(out.shape[1:]) if single else out


def conditional_attention(y_prime: Tensor, A: Tensor) -> Tensor:
    """Gate features elementwise: ``Z = Y' * A``."""
    if y_prime.shape != A.shape:
        raise DimensionError(f"attention shape {A.shape} != features {y_prime.shape}")
    return T.mul(y_prime, A)


# -- blocks ------------------------------------------------------------------------------

class CCBlock:
    def __init__(self, store: ParamStore, spec: BlockSpec, cfg: GeneratorConfig):
        self.spec = spec
        name = f"block.{spec.layer_id}"
        self.bn = BatchNorm2d(store, f"{name}.bn", spec.cin, cfg.bn_momentum, cfg.bn_eps)
        self.pw = Pointwise(store, f"{name}.pointwise", spec.cin, spec.cout)

    def __call__(self, x: Tensor, weights: PredictedWeights) -> Tensor:
        return cc_block(x, weights, self)


def cc_block(x: Tensor, weights: PredictedWeights, block: CCBlock) -> Tensor:
    if not isinstance(weights, PredictedWeights) or weights.layer_id != block.spec.layer_id:
        raise ContractError(
            f"block {block.spec.layer_id} got weights for {getattr(weights, 'layer_id', None)}"
        )
    h = block.bn(x)
    h = conditional_depthwise_conv(h, weights.V)
    h = block.pw(h)
    h = conditional_attention(h, weights.A)
    return T.leaky_relu(h, 0.2)


class ModulatedBlock:
    """Ablation arm: normalized features modulated by predicted scale/shift."""

    def __init__(self, store: ParamStore, spec: BlockSpec, cfg: GeneratorConfig):
        self.spec = spec
        name = f"block.{spec.layer_id}"
        self.bn = BatchNorm2d(store, f"{name}.bn", spec.cin, cfg.bn_momentum, cfg.bn_eps)
        self.conv = Conv(store, f"{name}.conv", spec.cin, spec.cout, cfg.kernel_size)

    def __call__(self, x: Tensor, weights: Modulation) -> Tensor:
        if not isinstance(weights, Modulation) or weights.layer_id != self.spec.layer_id:
            raise ContractError(f"block {self.spec.layer_id} needs a matching Modulation")
        h = self.bn(x)
        h = T.mul(h, weights.gamma + 1.0) + weights.beta
        return T.leaky_relu(self.conv(h), 0.2)


class Generator:
    """Noise map in, image in [-1, 1] out.

    Layout: 1x1 head, then for each stage a pair of conditional blocks
    wrapped by a residual skip, with a 2x nearest upsample between stages,
    then a 3x3 conv to RGB and tanh.
    """

    def __init__(self, cfg: GeneratorConfig, kind: str = "cc"):
        if kind not in ("cc", "spade"):
            raise ArgumentError(f"unknown generator kind {kind!r}")
        self.cfg, self.kind = cfg, kind
        self.store = ParamStore("G.")
        self.specs = block_specs(cfg)
        block_cls = CCBlock if kind == "cc" else ModulatedBlock
        self.head = Pointwise(self.store, "head", cfg.z_ch, cfg.widths[0], gain=cfg.noise_head_gain)
        self.blocks = [block_cls(self.store, s, cfg) for s in self.specs]
        self.skips = {}
        for first in self.specs[::2]:
            if first.cin != first.cout:
                self.skips[first.stage] = Pointwise(self.store, f"skip.s{first.stage}", first.cin, first.cout)
        self.to_rgb = Conv(self.store, "to_rgb", cfg.widths[-1], cfg.out_channels, 3)

    def set_training(self, training: bool) -> None:
        for b in self.blocks:
            b.bn.training = training

    def noise_shape(self, batch: int) -> Tuple[int, int, int, int]:
        return (batch, self.cfg.z_ch, self.cfg.base_h, self.cfg.base_w)

    def __call__(self, z: Tensor, all_weights: Sequence[BlockWeights]) -> Tensor:
        return generator_forward(z, all_weights, self)


def generator_forward(z: Tensor, all_weights: Sequence[BlockWeights], gen: Generator) -> Tensor:
    if len(all_weights) != len(gen.blocks):
        raise ContractError(f"expected {len(gen.blocks)} weight bundles, got {len(all_weights)}")
    single = z.ndim == 3
    if single:
        z = z.reshape((1,) + z.shape)
    cfg = gen.cfg
    if z.shape[1:] != (cfg.z_ch, cfg.base_h, cfg.base_w):
        raise DimensionError(f"noise map {z.shape} does not match config")
    x = gen.head(z)
    for s in range(len(cfg.widths)):
        i = 2 * s
        h = gen.blocks[i](x, all_weights[i])
        h = gen.blocks[i + 1](h, all_weights[i + 1])
        skip = gen.skips[s](x) if s in gen.skips else x
        x = h + skip
        if s < len(cfg.widths) - 1:
            x = T.upsample_nearest(x, 2)
    out = T.tanh(gen.to_rgb(T.leaky_relu(x, 0.2)))
    return out.reshape(out.shape[1:]) if single else out


# -- parameter accounting ---------------------------------------------------------------

class ConditionalParamCount(NamedTuple):
    cond_count: int
    naive_count: int
    kernel_ratio: Fraction


def count_conditional_params(C: int, D: int, k: int, H: int, W: int) -> ConditionalParamCount:
    """Predicted-value counts for one layer: factorized vs full spatially-varying kernels.

    ``cond_count`` covers the depthwise kernels plus D-channel attention;
    ``naive_count`` is a full ``D x C x k x k`` kernel per location.
    ``kernel_ratio`` compares kernels only and is exactly ``D``.
    """
    if min(C, D, k, H, W) <= 0:
        raise ArgumentError("all extents must be positive")
    depthwise = C * k * k * H * W
    naive = D * C * k * k * H * W
    return ConditionalParamCount(depthwise + D * H * W, naive, Fraction(naive, depthwise))
