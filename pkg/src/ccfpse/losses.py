"""Hinge adversarial losses, perceptual loss and discriminator feature matching."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

from . import tensor as T
from .errors import ArgumentError, ContractError, DimensionError
from .nn import Conv, ParamStore, init_params
from .tensor import Tensor, as_tensor


@dataclass
class LossWeights:
    perceptual: float = 10.0
    feature_matching: float = 20.0

    def __post_init__(self):
        if self.perceptual < 0 or self.feature_matching < 0:
            raise ArgumentError("loss weights must be non-negative")


def d_hinge_loss(score_real, score_fake) -> Tensor:
    """``mean(relu(1 - real)) + mean(relu(1 + fake))``."""
    real, fake = as_tensor(score_real), as_tensor(score_fake)
    return T.mean(T.relu(1.0 - real)) + T.mean(T.relu(fake + 1.0))


def g_adv_loss(score_fake) -> Tensor:
    return -T.mean(as_tensor(score_fake))


def _mean_abs_diff(a: Tensor, b: Tensor) -> Tensor:
    return T.mean(T.abs(T.sub(a, b)))


def feature_matching_loss(feats_fake: Sequence[Tensor], feats_real: Sequence[Tensor]) -> Tensor:
    """Mean over layers of the mean absolute feature difference.

    ``feats_real`` is treated as a constant.
    """
    if len(feats_fake) != len(feats_real):
        raise ContractError(f"{len(feats_fake)} fake layers vs {len(feats_real)} real layers")
    if not feats_fake:
        raise ContractError("feature matching needs at least one layer")
    terms = [_mean_abs_diff(as_tensor(f), as_tensor(r).detach()) for f, r in zip(feats_fake, feats_real)]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


class FixedFeatureExtractor:
    """Frozen random conv net standing in for a pretrained perceptual network.

    Four stride-2 3x3 conv stages with leaky ReLU; every stage output is a
    tap.  Parameters are seed-fixed and never receive gradients.
    """

    def __init__(self, widths: Sequence[int] = (16, 32, 64, 64), seed: int = 1234, in_channels: int = 3,
                 strides: Sequence[int] = (2, 2, 2, 2)):
        if len(strides) != len(widths):
            raise ArgumentError("need one stride per extractor stage")
        self.store = ParamStore("P.")
        self.convs = []
        cin = in_channels
        for i, (w, s) in enumerate(zip(widths, strides)):
            self.convs.append(Conv(self.store, f"stage.{i}", cin, w, 3, stride=s))
            cin = w
        init_params(self.store, seed)
        for t in self.store.tensors():
            t.requires_grad = False

    def __call__(self, x: Tensor) -> List[Tensor]:
        taps = []
        for conv in self.convs:
            x = T.leaky_relu(conv(x), 0.2)
            taps.append(x)
        return taps


def perceptual_loss(fake: Tensor, real: Tensor, extractor: FixedFeatureExtractor) -> Tensor:
    if fake.shape != real.shape:
        raise DimensionError(f"perceptual loss on {fake.shape} vs {real.shape}")
    with T.no_grad():
        target = extractor(real)
    return feature_matching_loss(extractor(fake), target)


def g_total_loss(adv: Tensor, perceptual: Tensor, fm: Tensor, weights: LossWeights) -> Tensor:
    return as_tensor(adv) + as_tensor(perceptual) * weights.perceptual + as_tensor(fm) * weights.feature_matching
