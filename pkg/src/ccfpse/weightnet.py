"""Weight-prediction network: semantic layout -> per-block conditional weights.

The default predictor is a feature-pyramid encoder/decoder over the
one-hot layout.  The coarsest level also receives a globally pooled
context vector, which makes every prediction depend on the whole layout
rather than a bounded window.  Each pyramid level is concatenated with the layout
downsampled to that level, and small per-block heads turn it into the
depthwise kernels ``V`` and attention gates ``A`` of the CC block running
at that resolution.  The ``local`` predictor skips the pyramid and applies
the heads (two 3x3 convs) to the downsampled one-hot map directly, which
limits every prediction to a 5x5 neighbourhood.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

from . import tensor as T
from .errors import ArgumentError, ContractError
from .generator import BlockSpec, GeneratorConfig, Modulation, PredictedWeights, block_specs
from .layout import as_label_batch, downsample_labels, one_hot
from .nn import Conv, ParamStore, Pointwise
from .tensor import Tensor

PyramidLayoutFeatures = List[Tensor]


@dataclass
class WeightNetConfig:
    widths: Optional[Tuple[int, ...]] = None  # per pyramid level, coarse first; None -> generator widths
    hidden: int = 32
    head_kernel: int = 1  # second head conv of the pyramid predictor; the local one is always 3
    head_init_scale: float = 0.1

    def __post_init__(self):
        if self.widths is not None:
            self.widths = tuple(int(w) for w in self.widths)


class _Head:
    """conv3x3 -> leaky_relu -> conv(k), last layer init scaled down."""

    def __init__(self, store, name, cin, hidden, cout, init_scale, k=3):
        self.c1 = Conv(store, f"{name}.0", cin, hidden, 3)
        self.c2 = Conv(store, f"{name}.1", hidden, cout, k, gain=init_scale)

    def __call__(self, x: Tensor) -> Tensor:
        return self.c2(T.leaky_relu(self.c1(x), 0.2))


class WeightNet:
    def __init__(self, gen_cfg: GeneratorConfig, num_labels: int, cfg: Optional[WeightNetConfig] = None,
                 predictor: str = "fp", target: str = "cc"):
        if predictor not in ("fp", "local"):
            raise ArgumentError(f"unknown predictor {predictor!r}")
        if target not in ("cc", "spade"):
            raise ArgumentError(f"unknown generator kind {target!r}")
        cfg = cfg or WeightNetConfig()
        self.cfg, self.gen_cfg = cfg, gen_cfg
        self.num_labels = num_labels
        self.predictor, self.target = predictor, target
        self.specs = block_specs(gen_cfg)
        self.levels = gen_cfg.num_upsamples + 1
        widths = cfg.widths or gen_cfg.widths
        if len(widths) != self.levels:
            raise ArgumentError(f"weight-net needs {self.levels} widths, got {len(widths)}")
        self.widths = widths
        self.store = ParamStore("W.")
        s = self.store
        top = self.levels - 1
        if predictor == "fp":
            # enc[top] runs at full resolution; each lower level halves it
            self.enc = {top: Conv(s, f"enc.{top}", num_labels, widths[top], 3)}
            for lvl in range(top - 1, -1, -1):
                self.enc[lvl] = Conv(s, f"enc.{lvl}", widths[lvl + 1], widths[lvl], 3, stride=2)
            # global context at the coarsest level, so every prediction sees the whole layout
            self.ctx = Pointwise(s, "ctx", widths[0], widths[0])
            self.lat = {lvl: Pointwise(s, f"lat.{lvl}", widths[lvl], widths[lvl - 1]) for lvl in range(1, self.levels)}
            self.dec = {lvl: Conv(s, f"dec.{lvl}", widths[lvl - 1], widths[lvl], 3) for lvl in range(1, self.levels)}
        self.heads = {}
        for spec in self.specs:
            fch = num_labels + (widths[spec.stage] if predictor == "fp" else 0)
            self.heads[spec.layer_id] = self._make_heads(spec, fch)

    def _make_heads(self, spec: BlockSpec, fch: int):
        k = self.gen_cfg.kernel_size
        name = f"head.{spec.layer_id}"
        s, hid, scale = self.store, self.cfg.hidden, self.cfg.head_init_scale
        hk = self.cfg.head_kernel if self.predictor == "fp" else 3
        if self.target == "cc":
            return (_Head(s, f"{name}.kernel", fch, hid, spec.cin * k * k, scale, hk),
                    _Head(s, f"{name}.attention", fch, hid, spec.cout, scale, hk))
        return (_Head(s, f"{name}.gamma", fch, hid, spec.cin, scale, hk),
                _Head(s, f"{name}.beta", fch, hid, spec.cin, scale, hk))

    # -- layout encoding -----------------------------------------------------------------

    def level_shape(self, H: int, W: int, level: int) -> Tuple[int, int]:
        f = 2 ** (self.levels - 1 - level)
        return H // f, W // f

    def _check_extents(self, y):
        f = 2 ** (self.levels - 1)
        H, W = y.shape[-2:]
        if H % f or W % f:
            raise ArgumentError(f"layout {H}x{W} not divisible by {f}")

    def encode_layout(self, y) -> PyramidLayoutFeatures:
        """Pyramid features per level (coarse first), each with the layout appended."""
        if self.predictor != "fp":
            raise ContractError("encode_layout needs the feature-pyramid predictor")
        y = as_label_batch(y, self.num_labels)
        self._check_extents(y)
        top = self.levels - 1
        enc = [None] * self.levels
        enc[top] = T.leaky_relu(self.enc[top](one_hot(y, self.num_labels)), 0.2)
        for lvl in range(top - 1, -1, -1):
            enc[lvl] = T.leaky_relu(self.enc[lvl](enc[lvl + 1]), 0.2)
        g = T.mean(enc[0], axis=(2, 3), keepdims=True)
        ctx = T.leaky_relu(self.ctx(g), 0.2)
        dec = [enc[0] + T.broadcast_spatial(ctx, *enc[0].shape[2:])]
        for lvl in range(1, self.levels):
            merged = T.upsample_nearest(dec[-1], 2) + T.leaky_relu(self.lat[lvl](enc[lvl]), 0.2)
            dec.append(T.leaky_relu(self.dec[lvl](merged), 0.2))
        H, W = y.shape[-2:]
        feats = []
        for lvl, d in enumerate(dec):
            h, w = self.level_shape(H, W, lvl)
            feats.append(T.concat([d, one_hot(downsample_labels(y, h, w), self.num_labels)], axis=1))
        return feats

    # -- prediction ------------------------------------------------------------------------

    def _emit(self, spec: BlockSpec, feat: Tensor):
        first, second = self.heads[spec.layer_id]
        if self.target == "spade":
            return Modulation(first(feat), second(feat), spec.layer_id)
        k = self.gen_cfg.kernel_size
        n, _, h, w = feat.shape
        V = first(feat).reshape(n, spec.cin, k, k, h, w)
        A = T.sigmoid(second(feat))
        return PredictedWeights(V, A, spec.layer_id)

    def predict_weights(self, feats: PyramidLayoutFeatures, block_id: int):
        spec = self.specs[block_id]
        feat = feats[spec.stage]
        if feat.shape[2:] != (spec.height, spec.width):
            raise ContractError(
                f"block {spec.layer_id} runs at {spec.height}x{spec.width}, features are {feat.shape[2:]}"
            )
        return self._emit(spec, feat)

    def predict_weights_local(self, y, block_id: int):
        """Heads applied straight to the downsampled one-hot layout."""
        if self.predictor != "local":
            raise ContractError("predict_weights_local needs the local predictor")
        spec = self.specs[block_id]
        y = as_label_batch(y, self.num_labels)
        feat = one_hot(downsample_labels(y, spec.height, spec.width), self.num_labels)
        return self._emit(spec, feat)

    def __call__(self, y) -> list:
        """All weight bundles for one layout batch, in generator block order."""
        if self.predictor == "fp":
            feats = self.encode_layout(y)
            return [self.predict_weights(feats, i) for i in range(len(self.specs))]
        return [self.predict_weights_local(y, i) for i in range(len(self.specs))]
