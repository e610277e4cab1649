"""Synthetic layout task, PGM/PPM file I/O and segmentation metrics.

Images are rendered from label maps through a fixed colour palette plus
i.i.d. texture noise, so a nearest-palette-colour lookup recovers the
layout of any image whose noise stays within half the palette spacing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import ArgumentError, DataError, DimensionError, FormatError
from .layout import as_label_batch

DEFAULT_PALETTE: Tuple[Tuple[float, float, float], ...] = (
    (-0.8, -0.8, -0.8),
    (0.8, -0.6, -0.6),
    (-0.6, 0.8, -0.6),
    (-0.6, -0.6, 0.8),
    (0.8, 0.8, -0.6),
)

MIN_PALETTE_DISTANCE = 0.5


@dataclass
class SyntheticTaskSpec:
    num_labels: int = 5
    palette: Tuple[Tuple[float, float, float], ...] = DEFAULT_PALETTE
    noise_amplitude: float = 0.1
    height: int = 32
    width: int = 32
    min_shapes: int = 2
    max_shapes: int = 5
    min_extent: int = 4  # half-size range of each rectangle/ellipse, in pixels
    max_extent: int = 12

    def __post_init__(self):
        self.palette = tuple(tuple(float(v) for v in c) for c in self.palette)
        if len(self.palette) != self.num_labels:
            raise ArgumentError(f"palette has {len(self.palette)} colours for {self.num_labels} labels")
        pal = np.asarray(self.palette)
        if pal.shape[1] != 3 or np.abs(pal).max() > 1:
            raise ArgumentError("palette colours must be RGB triples in [-1, 1]")
        if min_palette_distance(pal) < MIN_PALETTE_DISTANCE:
            raise ArgumentError(f"palette colours closer than {MIN_PALETTE_DISTANCE}")
        if self.noise_amplitude < 0:
            raise ArgumentError("noise amplitude must be non-negative")
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise ArgumentError("need 1 <= min_shapes <= max_shapes")


def min_palette_distance(palette) -> float:
    pal = np.asarray(palette, dtype=np.float64)
    d = np.sqrt(((pal[:, None] - pal[None]) ** 2).sum(-1))
    return float(d[~np.eye(len(pal), dtype=bool)].min())


@dataclass
class Sample:
    label: np.ndarray  # int64 [H, W]
    image: np.ndarray  # float32 [3, H, W] in [-1, 1]


# -- generation ------------------------------------------------------------------------

def random_layout(rng: np.random.Generator, spec: SyntheticTaskSpec) -> np.ndarray:
    """Background label plus layered random rectangles and ellipses."""
    H, W = spec.height, spec.width
    label = np.full((H, W), rng.integers(spec.num_labels), dtype=np.int64)
    yy, xx = np.mgrid[0:H, 0:W]
    for _ in range(rng.integers(spec.min_shapes, spec.max_shapes + 1)):
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        ry, rx = rng.uniform(spec.min_extent, spec.max_extent, size=2)
        if rng.random() < 0.5:
            mask = (np.abs(yy + 0.5 - cy) <= ry) & (np.abs(xx + 0.5 - cx) <= rx)
        else:
            mask = ((yy + 0.5 - cy) / ry) ** 2 + ((xx + 0.5 - cx) / rx) ** 2 <= 1.0
        label[mask] = rng.integers(spec.num_labels)
    return label


def render(label: np.ndarray, spec: SyntheticTaskSpec, noise=None) -> np.ndarray:
    pal = np.asarray(spec.palette, dtype=np.float32)
    img = pal[label].transpose(2, 0, 1)
    if noise is not None:
        img = np.clip(img + noise, -1.0, 1.0)
    return np.ascontiguousarray(img, dtype=np.float32)


def generate_dataset(spec: SyntheticTaskSpec, count: int, seed: int) -> List[Sample]:
    """``count`` (layout, image) pairs; sample ``i`` depends only on ``(seed, i)``."""
    if count <= 0:
        raise ArgumentError(f"count must be positive, got {count}")
    samples = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        label = random_layout(rng, spec)
        noise = None
        if spec.noise_amplitude > 0:
            noise = rng.uniform(-spec.noise_amplitude, spec.noise_amplitude, (3, spec.height, spec.width))
        samples.append(Sample(label, render(label, spec, noise)))
    return samples


def segment_by_palette(img: np.ndarray, spec: SyntheticTaskSpec) -> np.ndarray:
    """Nearest palette colour per pixel; ties go to the lowest label id."""
    img = np.asarray(img, dtype=np.float64)
    single = img.ndim == 3
    if single:
        img = img[None]
    if img.ndim != 4 or img.shape[1] != 3:
        raise DimensionError(f"expected [3,H,W] or [N,3,H,W], got {img.shape}")
    pal = np.asarray(spec.palette, dtype=np.float64)
    d = ((img[:, None] - pal[None, :, :, None, None]) ** 2).sum(axis=2)
    out = d.argmin(axis=1).astype(np.int64)
    return out[0] if single else out


# -- metrics ---------------------------------------------------------------------------

@dataclass
class SegMetrics:
    per_class_iou: List[float]  # NaN where the class is absent from both maps
    miou: float
    accuracy: float
    confusion: np.ndarray = field(repr=False, default=None)


def confusion_matrix(pred, gt, num_labels: int) -> np.ndarray:
    """``conf[g, p]`` counts pixels with ground truth ``g`` predicted as ``p``."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    for a in (pred, gt):
        if a.size and (a.min() < 0 or a.max() >= num_labels):
            raise DataError(f"label ids must lie in [0, {num_labels})")
    idx = gt.astype(np.int64).ravel() * num_labels + pred.astype(np.int64).ravel()
    return np.bincount(idx, minlength=num_labels * num_labels).reshape(num_labels, num_labels)


def metrics_from_confusion(conf: np.ndarray) -> SegMetrics:
    tp = np.diag(conf).astype(np.float64)
    gt_count = conf.sum(axis=1)
    union = gt_count + conf.sum(axis=0) - tp
    iou = [float(t / u) if u > 0 else math.nan for t, u in zip(tp, union)]
    present = [iou[c] for c in range(len(iou)) if gt_count[c] > 0]
    total = conf.sum()
    miou = float(np.mean(present)) if present else math.nan
    acc = float(tp.sum() / total) if total else math.nan
    return SegMetrics(iou, miou, acc, conf)


def compute_miou(pred, gt, num_labels: int) -> SegMetrics:
    """mIoU over classes present in ``gt``, plus pixel accuracy."""
    return metrics_from_confusion(confusion_matrix(pred, gt, num_labels))


# -- file formats ----------------------------------------------------------------------

def write_label_pgm(path, label: np.ndarray) -> None:
    label = np.asarray(label)
    if label.ndim != 2 or label.min() < 0 or label.max() > 255:
        raise DataError("label map must be 2-D with ids in [0, 255]")
    Image.fromarray(label.astype(np.uint8), mode="L").save(path, format="PPM")


def read_label_pgm(path, num_labels: int = 256) -> np.ndarray:
    arr = _read_netpbm(path, "L")
    label = arr.astype(np.int64)
    as_label_batch(label, num_labels)
    return label


def image_to_bytes(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return np.clip(np.round((img + 1.0) / 2.0 * 255.0), 0, 255).astype(np.uint8)


def write_image_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise DimensionError(f"image must be [3,H,W], got {img.shape}")
    Image.fromarray(image_to_bytes(img).transpose(1, 2, 0), mode="RGB").save(path, format="PPM")


def read_image_ppm(path) -> np.ndarray:
    arr = _read_netpbm(path, "RGB")
    return (arr.astype(np.float32) / 255.0 * 2.0 - 1.0).transpose(2, 0, 1).copy()


def _read_netpbm(path, mode: str) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    magic = path.read_bytes()[:2]
    expected = b"P5" if mode == "L" else b"P6"
    if magic != expected:
        raise FormatError(f"{path}: expected {expected.decode()} header, found {magic!r}")
    with Image.open(path) as im:
        if im.mode != mode:
            raise FormatError(f"{path}: unexpected pixel mode {im.mode}")
        return np.asarray(im)


def image_grid(images: Sequence[np.ndarray], cols: int = 4, pad: int = 1) -> np.ndarray:
    """Tile ``[3,H,W]`` images into one contact sheet (padding is black)."""
    images = [np.asarray(i) for i in images]
    if not images:
        raise ArgumentError("no images to tile")
    c, h, w = images[0].shape
    rows = -(-len(images) // cols)
    sheet = np.full((c, rows * (h + pad) + pad, cols * (w + pad) + pad), -1.0, dtype=np.float32)
    for k, img in enumerate(images):
        r, q = divmod(k, cols)
        y0, x0 = pad + r * (h + pad), pad + q * (w + pad)
        sheet[:, y0:y0 + h, x0:x0 + w] = img
    return sheet


def write_dataset(samples: Sequence[Sample], out_dir) -> Path:
    """Write PGM/PPM pairs and a JSON manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        label_name, image_name = f"label_{i:05d}.pgm", f"image_{i:05d}.ppm"
        write_label_pgm(out_dir / label_name, s.label)
        write_image_ppm(out_dir / image_name, s.image)
        entries.append([label_name, image_name])
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps(entries, indent=1) + "\n")
    return manifest


def read_manifest(path) -> List[Tuple[Path, Path]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such manifest: {path}")
    try:
        entries = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not isinstance(entries, list) or any(not isinstance(e, list) or len(e) != 2 for e in entries):
        raise FormatError(f"{path}: manifest must be a list of [label, image] pairs")
    base = path.parent
    return [(base / a, base / b) for a, b in entries]


def load_dataset(manifest, num_labels: int = 256) -> List[Sample]:
    return [Sample(read_label_pgm(a, num_labels), read_image_ppm(b)) for a, b in read_manifest(manifest)]
