"""Label-map helpers: validation, nearest downsampling, one-hot encoding."""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError, DataError, DimensionError
from .tensor import Tensor, get_default_dtype


def as_label_batch(y, num_labels: int) -> np.ndarray:
    """Validate label ids and return an int64 ``[N, H, W]`` array."""
    y = np.asarray(y)
    if y.ndim == 2:
        y = y[None]
    if y.ndim != 3:
        raise DimensionError(f"label map must be [H,W] or [N,H,W], got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise DataError(f"label map must be integer-valued, got {y.dtype}")
    if y.size and (y.min() < 0 or y.max() >= num_labels):
        raise DataError(f"label ids must lie in [0, {num_labels})")
    return y.astype(np.int64, copy=False)


def downsample_labels(y: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resize of an ``[N, H, W]`` id grid by an integer factor."""
    H, W = y.shape[-2:]
    if H % height or W % width:
        raise ArgumentError(f"cannot downsample {H}x{W} to {height}x{width}")
    fh, fw = H // height, W // width
    return np.ascontiguousarray(y[..., ::fh, ::fw])


def one_hot(y: np.ndarray, num_labels: int) -> Tensor:
    """``[N, H, W]`` ids -> ``[N, num_labels, H, W]`` constant tensor."""
    eye = np.eye(num_labels, dtype=get_default_dtype())
    return Tensor(eye[y].transpose(0, 3, 1, 2))
