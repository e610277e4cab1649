"""Cost accounting for conditional convolution layers and the full models.

Closed-form MAC/parameter formulas live next to the measured counts they
must agree with: ``ParamStore.total_param_count`` for parameters and the
``count_macs`` trace for multiply-accumulates.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass
from typing import Dict, List

import numpy as np

from . import tensor as T
from .errors import ArgumentError
from .generator import GeneratorConfig, block_specs, conditional_depthwise_conv, count_conditional_params
from .tensor import Tensor
from .weightnet import WeightNetConfig


@dataclass
class BenchReport:
    C: int
    D: int
    k: int
    H: int
    W: int
    depthwise_macs: int
    pointwise_macs: int
    naive_macs: int
    factorized_head_macs: int
    naive_head_macs: int
    factorized_values: int  # predicted numbers per layer (kernels + attention)
    naive_values: int
    factorized_seconds: float = float("nan")
    naive_seconds: float = float("nan")

    @property
    def factorized_macs(self) -> int:
        return self.depthwise_macs + self.pointwise_macs

    def as_row(self) -> Dict[str, object]:
        row = asdict(self)
        row["factorized_macs"] = self.factorized_macs
        return row


def layer_macs(C: int, D: int, k: int, H: int, W: int, hidden: int = 32) -> Dict[str, int]:
    """Per-sample MACs of one layer, factorized vs naive, plus 1x1 prediction heads."""
    hw = H * W
    return {
        "depthwise_macs": C * k * k * hw,
        "pointwise_macs": C * D * hw,
        "naive_macs": D * C * k * k * hw,
        "factorized_head_macs": hidden * (C * k * k + D) * hw,
        "naive_head_macs": hidden * D * C * k * k * hw,
    }


def naive_conditional_conv(x: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Full spatially-varying conv: ``K`` is ``[N, D, C, k, k, H, W]``."""
    n, c, h, w = x.shape
    k = K.shape[3]
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((n, c, k, k, h, w), dtype=x.dtype)
    for m in range(k):
        for q in range(k):
            cols[:, :, m, q] = xp[:, :, m:m + h, q:q + w]
    cols = cols.reshape(n, 1, c * k * k, h * w)
    kmat = K.reshape(n, K.shape[1], c * k * k, h * w)
    return (kmat * cols).sum(axis=2).reshape(n, K.shape[1], h, w)


def _best_time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_ops(C: int, D: int, k: int, H: int, W: int, hidden: int = 32, repeats: int = 3,
              timed: bool = True, seed: int = 0) -> BenchReport:
    if min(C, D, k, H, W, hidden) <= 0:
        raise ArgumentError("all extents must be positive")
    if k % 2 == 0:
        raise ArgumentError(f"kernel size must be odd, got {k}")
    counts = count_conditional_params(C, D, k, H, W)
    report = BenchReport(C, D, k, H, W, **layer_macs(C, D, k, H, W, hidden),
                         factorized_values=counts.cond_count, naive_values=counts.naive_count)
    if timed:
        rng = np.random.default_rng(seed)
        dt = T.get_default_dtype()
        x = rng.standard_normal((1, C, H, W)).astype(dt)
        V = rng.standard_normal((1, C, k, k, H, W)).astype(dt)
        pw = rng.standard_normal((1, D, C)).astype(dt)
        K = rng.standard_normal((1, D, C, k, k, H, W)).astype(dt)
        xt, Vt = Tensor(x), Tensor(V)
        pwt = Tensor(pw[0])

        def factorized():
            with T.no_grad():
                T.pointwise_conv(conditional_depthwise_conv(xt, Vt), pwt)

        report.factorized_seconds = _best_time(factorized, repeats)
        report.naive_seconds = _best_time(lambda: naive_conditional_conv(x, K), repeats)
    return report


def reports_to_csv(reports: List[BenchReport]) -> str:
    buf = io.StringIO()
    rows = [r.as_row() for r in reports]
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


# -- whole-model closed forms -------------------------------------------------------------

def _conv_params(cin: int, cout: int, k: int) -> int:
    return cout * cin * k * k + cout


def generator_param_count(cfg: GeneratorConfig, kind: str = "cc") -> int:
    k = cfg.kernel_size
    total = _conv_params(cfg.z_ch, cfg.widths[0], 1) + _conv_params(cfg.widths[-1], cfg.out_channels, 3)
    for spec in block_specs(cfg):
        total += 2 * spec.cin  # batch-norm affine
        total += _conv_params(spec.cin, spec.cout, 1 if kind == "cc" else k)
        if spec.layer_id.endswith("b0") and spec.cin != spec.cout:
            total += _conv_params(spec.cin, spec.cout, 1)
    return total


def weightnet_param_count(gen_cfg: GeneratorConfig, num_labels: int, cfg: WeightNetConfig,
                          predictor: str = "fp", target: str = "cc") -> int:
    widths = cfg.widths or gen_cfg.widths
    levels = len(widths)
    k = gen_cfg.kernel_size
    total = 0
    if predictor == "fp":
        total += _conv_params(num_labels, widths[-1], 3)
        total += _conv_params(widths[0], widths[0], 1)
        total += sum(_conv_params(widths[l + 1], widths[l], 3) for l in range(levels - 1))
        total += sum(_conv_params(widths[l], widths[l - 1], 1) + _conv_params(widths[l - 1], widths[l], 3)
                     for l in range(1, levels))
    hk = cfg.head_kernel if predictor == "fp" else 3
    for spec in block_specs(gen_cfg):
        fch = num_labels + (widths[spec.stage] if predictor == "fp" else 0)
        outs = (spec.cin * k * k, spec.cout) if target == "cc" else (spec.cin, spec.cin)
        for cout in outs:
            total += _conv_params(fch, cfg.hidden, 3) + _conv_params(cfg.hidden, cout, hk)
    return total


def generator_macs(cfg: GeneratorConfig, kind: str = "cc") -> int:
    """Per-sample MACs of the generator's convolution-type ops."""
    k = cfg.kernel_size
    H, W = cfg.image_hw
    total = cfg.z_ch * cfg.widths[0] * cfg.base_h * cfg.base_w
    for spec in block_specs(cfg):
        hw = spec.height * spec.width
        if kind == "cc":
            total += spec.cin * k * k * hw + spec.cin * spec.cout * hw
        else:
            total += spec.cin * spec.cout * k * k * hw
        if spec.layer_id.endswith("b0") and spec.cin != spec.cout:
            total += spec.cin * spec.cout * hw
    total += cfg.widths[-1] * cfg.out_channels * 9 * H * W
    return total
