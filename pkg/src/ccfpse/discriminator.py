"""Feature-pyramid semantics-embedding discriminator, and a multi-scale patch baseline.

The FPSE discriminator sees only the image.  A bottom-up strided-conv trunk
reaches 1/32 resolution, a top-down path merges the three coarsest stages
through lateral 1x1 convs, and each merged level ``F_i`` yields

* a patch real/fake score map ``P_i`` (1x1 conv), and
* a semantic matching map ``M_i``: the inner product of ``F_i`` with a
  learned embedding of the label map downsampled to the same grid.

The per-sample score is the mean over scales of the spatial mean of
``P_i + M_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import ArgumentError, DataError, DimensionError
from .layout import as_label_batch, downsample_labels, one_hot
from .nn import Conv, InitRecord, InstanceNorm2d, ParamStore, Pointwise
from .tensor import Tensor


@dataclass
class DiscriminatorConfig:
    widths: Tuple[int, ...] = (32, 64, 64, 64, 64)  # bottom-up stages, each stride 2
    channels: int = 64  # common width of merged pyramid levels
    num_scales: int = 3
    embed_std: float = 0.02
    patch_layers: int = 3  # stride-2 stages per discriminator in the ms-patch arm
    patch_scales: int = 2

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.num_scales > len(self.widths):
            raise ArgumentError("more pyramid scales than bottom-up stages")


@dataclass
class DiscriminatorOutput:
    patch_scores: List[Tensor]  # each [N, 1, h_i, w_i]
    semantic_scores: List[Optional[Tensor]]  # None when embeddings are off
    features: List[Tensor]  # intermediate maps for feature matching
    total: Tensor  # [N]


def _spatial_mean(x: Tensor) -> Tensor:
    return T.mean(x, axis=(1, 2, 3))


def aggregate_scores(patch: List[Tensor], semantic: List[Optional[Tensor]]) -> Tensor:
    per_scale = []
    for p, m in zip(patch, semantic):
        s = p if m is None else p + m
        per_scale.append(_spatial_mean(s))
    total = per_scale[0]
    for s in per_scale[1:]:
        total = total + s
    return total * (1.0 / len(per_scale))


def semantic_score(F: Tensor, y, table: Tensor) -> Tensor:
    """Per-location inner product between features and label embeddings.

    Args:
        F: features ``[N, C, h, w]``.
        y: label ids ``[N, H, W]`` (or ``[H, W]``); downsampled to ``h x w``.
        table: embedding rows ``[num_labels, C]``.

    Returns:
        ``[N, 1, h, w]`` score map.
    """
    y = np.asarray(y)
    if y.ndim == 2:
        y = y[None]
    if y.size and (y.min() < 0 or y.max() >= table.shape[0]):
        raise DataError(f"label id outside embedding table of {table.shape[0]} rows")
    if F.shape[1] != table.shape[1]:
        raise DimensionError(f"feature width {F.shape[1]} != embedding width {table.shape[1]}")
    ids = downsample_labels(y.astype(np.int64), F.shape[2], F.shape[3])
    S = T.embedding(table, ids)
    return T.sum(T.mul(F, S), axis=1, keepdims=True)


class _Stage:
    """Strided 3x3 conv, instance norm (skipped on 1x1 maps), leaky ReLU."""

    def __init__(self, store, name, cin, cout, stride=2):
        self.conv = Conv(store, f"{name}.conv", cin, cout, 3, stride=stride)
        self.norm = InstanceNorm2d(store, f"{name}.norm", cout)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv(x)
        if h.shape[2] * h.shape[3] > 1:
            h = self.norm(h)
        return T.leaky_relu(h, 0.2)


class FPSEDiscriminator:
    def __init__(self, cfg: DiscriminatorConfig, num_labels: int, embeddings: bool = True,
                 in_channels: int = 3):
        self.cfg, self.num_labels, self.embeddings = cfg, num_labels, embeddings
        self.store = ParamStore("D.")
        s, C = self.store, cfg.channels
        cin = in_channels
        self.stages = []
        for i, w in enumerate(cfg.widths):
            self.stages.append(_Stage(s, f"bu.{i}", cin, w))
            cin = w
        n = len(cfg.widths)
        self.pyr_idx = list(range(n - cfg.num_scales, n))  # bottom-up stages feeding F_1..F_k
        self.lat = {i: Pointwise(s, f"lat.{i}", cfg.widths[i], C) for i in self.pyr_idx}
        self.smooth = {i: _Stage(s, f"final.{i}", C, C, stride=1) for i in self.pyr_idx}
        self.patch = {i: Pointwise(s, f"patch.{i}", C, 1) for i in self.pyr_idx}
        self.tables = {}
        if embeddings:
            init = InitRecord("normal", std=cfg.embed_std)
            self.tables = {i: s.add(f"embed.{i}", (num_labels, C), init) for i in self.pyr_idx}

    @property
    def downsample(self) -> int:
        return 2 ** len(self.cfg.widths)

    def __call__(self, img: Tensor, y) -> DiscriminatorOutput:
        return discriminator_forward(img, y, self)


def discriminator_forward(img: Tensor, y, disc: FPSEDiscriminator) -> DiscriminatorOutput:
    if img.ndim == 3:
        img = img.reshape((1,) + img.shape)
    f = disc.downsample
    if img.shape[2] % f or img.shape[3] % f:
        raise ArgumentError(f"image extents {img.shape[2:]} not divisible by {f}")
    bottom_up = []
    h = img
    for stage in disc.stages:
        h = stage(h)
        bottom_up.append(h)
    merged = {}
    top = None
    for i in reversed(disc.pyr_idx):
        lat = disc.lat[i](bottom_up[i])
        top = lat if top is None else T.upsample_nearest(top, 2) + lat
        merged[i] = disc.smooth[i](top)
    patch, semantic = [], []
    if disc.embeddings:
        y = as_label_batch(y, disc.num_labels)
    for i in disc.pyr_idx:
        patch.append(disc.patch[i](merged[i]))
        semantic.append(semantic_score(merged[i], y, disc.tables[i]) if disc.embeddings else None)
    features = bottom_up + [merged[i] for i in disc.pyr_idx]
    return DiscriminatorOutput(patch, semantic, features, aggregate_scores(patch, semantic))


class MultiScalePatchDiscriminator:
    """Baseline arm: independent patch discriminators on the image at 1x and 1/2x.

    Each one sees the image concatenated with the one-hot layout and reuses
    the bottom-up stage structure, without top-down path or embeddings.
    """

    def __init__(self, cfg: DiscriminatorConfig, num_labels: int, in_channels: int = 3):
        self.cfg, self.num_labels = cfg, num_labels
        self.store = ParamStore("D.")
        self.nets = []
        for d in range(cfg.patch_scales):
            cin, stages = in_channels + num_labels, []
            for i, w in enumerate(cfg.widths[:cfg.patch_layers]):
                stages.append(_Stage(self.store, f"ms{d}.bu.{i}", cin, w))
                cin = w
            head = Pointwise(self.store, f"ms{d}.patch", cin, 1)
            self.nets.append((stages, head))

    @property
    def downsample(self) -> int:
        return 2 ** (self.cfg.patch_layers + self.cfg.patch_scales - 1)

    def __call__(self, img: Tensor, y) -> DiscriminatorOutput:
        if img.ndim == 3:
            img = img.reshape((1,) + img.shape)
        f = self.downsample
        if img.shape[2] % f or img.shape[3] % f:
            raise ArgumentError(f"image extents {img.shape[2:]} not divisible by {f}")
        y = as_label_batch(y, self.num_labels)
        patch, features = [], []
        x = img
        for d, (stages, head) in enumerate(self.nets):
            if d > 0:
                x = T.avg_pool(x, 2)
            h, w = x.shape[2:]
            h_ = T.concat([x, one_hot(downsample_labels(y, h, w), self.num_labels)], axis=1)
            for stage in stages:
                h_ = stage(h_)
                features.append(h_)
            patch.append(head(h_))
        semantic = [None] * len(patch)
        return DiscriminatorOutput(patch, semantic, features, aggregate_scores(patch, semantic))


def build_discriminator(kind: str, cfg: DiscriminatorConfig, num_labels: int, embeddings: bool = True):
    if kind == "fpse":
        return FPSEDiscriminator(cfg, num_labels, embeddings)
    if kind == "ms-patch":
        return MultiScalePatchDiscriminator(cfg, num_labels)
    raise ArgumentError(f"unknown discriminator kind {kind!r}")
