"""Finite-difference gradient suites run in 64-bit mode.

Each case builds seeded inputs, contracts the op output against a fixed
random cotangent to get a scalar, and compares reverse-mode gradients for
every input with central differences.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from . import nn
from . import tensor as T
from .errors import ArgumentError
from .generator import (CCBlock, Generator, GeneratorConfig, PredictedWeights, block_specs, conditional_attention,
                        conditional_depthwise_conv)
from .tensor import Tensor
from .weightnet import WeightNet, WeightNetConfig

PRIMITIVE_TOL = 1e-4
ENDTOEND_TOL = 1e-3
ENDTOEND_SAMPLES = 24  # probed entries per tensor in the end-to-end suite
SCOPES = ("primitives", "ccops", "endtoend")


@dataclass
class CheckResult:
    name: str
    rel_error: float
    tol: float
    elements: int

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.rel_error) and self.rel_error <= self.tol)


Case = Tuple[str, Callable[[], Tuple[Callable[..., Tensor], List[Tensor]]]]


def _sampled_fd(loss: Callable[[], Tensor], x: Tensor, idx: np.ndarray, h: float) -> np.ndarray:
    flat = x.data.reshape(-1)
    out = np.empty(len(idx))
    with T.no_grad():
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss().item()
            flat[i] = orig - h
            fm = loss().item()
            flat[i] = orig
            out[j] = (fp - fm) / (2.0 * h)
    return out


def check_gradients(name: str, fn: Callable[..., Tensor], inputs: Sequence[Tensor], tol: float = PRIMITIVE_TOL,
                    seed: int = 0, h: float = 1e-6, max_per_input: int = 0) -> CheckResult:
    """Compare autodiff with central differences for every input of ``fn``.

    With ``max_per_input`` > 0, larger inputs are probed at that many
    seeded random entries instead of exhaustively.
    """
    with T.no_grad():
        out_shape = fn(*inputs).shape
    cot = np.random.default_rng(seed + 7919).standard_normal(out_shape)

    def loss() -> Tensor:
        return T.sum(T.mul(fn(*inputs), Tensor(cot)))

    for t in inputs:
        t.requires_grad = True
        t.grad = None
    T.backward(loss())
    pick = np.random.default_rng(seed + 104729)
    analytic, numeric = [], []
    for t in inputs:
        g = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        if max_per_input and t.size > max_per_input:
            idx = pick.choice(t.size, max_per_input, replace=False)
            analytic.append(g.reshape(-1)[idx])
            numeric.append(_sampled_fd(loss, t, idx, h))
        else:
            analytic.append(g)
            numeric.append(T.finite_diff_grad(lambda _x: loss(), t, h).data)
    a = np.concatenate([g.ravel() for g in analytic])
    n = np.concatenate([g.ravel() for g in numeric])
    return CheckResult(name, T.relative_error(a, n), tol, a.size)


# -- case builders -------------------------------------------------------------------------

def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def _t(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def _away_from_zero(rng, *shape) -> Tensor:
    """Values with |v| in [0.1, 1] so kinked ops stay differentiable under the probe."""
    mag = rng.uniform(0.1, 1.0, shape)
    return Tensor(mag * rng.choice([-1.0, 1.0], shape))


def primitive_cases(seed: int = 0) -> List[Case]:
    r = _rng(seed)
    s = (1, 4, 4, 4)
    cases: List[Case] = [
        ("add", lambda: (T.add, [_t(r, *s), _t(r, *s)])),
        ("sub", lambda: (T.sub, [_t(r, *s), _t(r, *s)])),
        ("mul", lambda: (T.mul, [_t(r, *s), _t(r, *s)])),
        ("scale", lambda: (lambda x: x * 2.5, [_t(r, *s)])),
        ("add_scalar", lambda: (lambda x: x + 0.3, [_t(r, *s)])),
        ("abs", lambda: (T.abs, [_away_from_zero(r, *s)])),
        ("relu", lambda: (T.relu, [_away_from_zero(r, *s)])),
        ("leaky_relu", lambda: (lambda x: T.leaky_relu(x, 0.2), [_away_from_zero(r, *s)])),
        ("sigmoid", lambda: (T.sigmoid, [_t(r, *s)])),
        ("tanh", lambda: (T.tanh, [_t(r, *s)])),
        ("sum_axis", lambda: (lambda x: T.sum(x, axis=(2, 3)), [_t(r, *s)])),
        ("mean", lambda: (lambda x: T.mean(x, axis=1, keepdims=True), [_t(r, *s)])),
        ("reshape", lambda: (lambda x: x.reshape((4, 16)), [_t(r, *s)])),
        ("index", lambda: (lambda x: x[:, 1:3, ::2], [_t(r, *s)])),
        ("concat", lambda: (lambda a, b: T.concat([a, b], axis=1), [_t(r, 1, 2, 4, 4), _t(r, 1, 3, 4, 4)])),
        ("upsample_nearest", lambda: (lambda x: T.upsample_nearest(x, 2), [_t(r, 1, 4, 2, 2)])),
        ("broadcast_spatial", lambda: (lambda x: T.broadcast_spatial(x, 3, 4), [_t(r, 2, 4, 1, 1)])),
        ("avg_pool", lambda: (lambda x: T.avg_pool(x, 2), [_t(r, *s)])),
        ("conv2d_s1_p1", lambda: (lambda x, w, b: T.conv2d(x, w, b, 1, 1),
                                  [_t(r, 1, 3, 4, 4), _t(r, 4, 3, 3, 3), _t(r, 4)])),
        ("conv2d_s2_p1", lambda: (lambda x, w, b: T.conv2d(x, w, b, 2, 1),
                                  [_t(r, 2, 2, 4, 4), _t(r, 3, 2, 3, 3), _t(r, 3)])),
        ("pointwise_conv", lambda: (T.pointwise_conv, [_t(r, *s), _t(r, 3, 4), _t(r, 3)])),
        ("batch_norm_train", lambda: (lambda x, g, b: nn.batch_norm(x, g, b, True),
                                      [_t(r, 2, 3, 4, 4), _t(r, 3), _t(r, 3)])),
        ("batch_norm_eval", lambda: (
            lambda x, g, b: nn.batch_norm(x, g, b, False, np.full(3, 0.1), np.full(3, 2.0)),
            [_t(r, 2, 3, 4, 4), _t(r, 3), _t(r, 3)])),
        ("instance_norm", lambda: (nn.instance_norm, [_t(r, 2, 3, 4, 4), _t(r, 3), _t(r, 3)])),
        ("channel_affine", lambda: (T.channel_affine, [_t(r, *s), _t(r, 4), _t(r, 4)])),
        ("embedding", lambda: (lambda tab: T.embedding(tab, r_ids), [_t(r, 5, 4)])),
    ]
    r_ids = _rng(seed + 1).integers(0, 5, (2, 4, 4))
    return cases


def ccop_cases(seed: int = 0) -> List[Case]:
    r = _rng(seed + 100)
    C, D, k, H, W = 3, 4, 3, 4, 4

    def cc_block_case():
        cfg = GeneratorConfig(z_ch=C, widths=(D,), base_h=H, base_w=W)
        store = nn.ParamStore("G.")
        block = CCBlock(store, block_specs(cfg)[0]._replace(cin=C, cout=D), cfg)
        nn.init_params(store, seed)
        bn_g, bn_b, pw_w, pw_b = (store[n] for n in ("block.s0b0.bn.gamma", "block.s0b0.bn.beta",
                                                    "block.s0b0.pointwise.weight", "block.s0b0.pointwise.bias"))
        bn_b.data[...] = r.standard_normal(bn_b.shape)
        pw_b.data[...] = r.standard_normal(pw_b.shape)

        def fn(x, V, A, *_params):
            return block(x, PredictedWeights(V, A, "s0b0"))

        A = Tensor(r.uniform(0.1, 0.9, (2, D, H, W)))
        return fn, [_t(r, 2, C, H, W), _t(r, 2, C, k, k, H, W), A, bn_g, bn_b, pw_w, pw_b]

    return [
        ("conditional_depthwise_conv", lambda: (conditional_depthwise_conv, [_t(r, C, H, W), _t(r, C, k, k, H, W)])),
        ("conditional_depthwise_conv_k5", lambda: (conditional_depthwise_conv,
                                                   [_t(r, 2, 2, H, W), _t(r, 2, 2, 5, 5, H, W)])),
        ("conditional_attention", lambda: (conditional_attention, [_t(r, D, H, W), _t(r, D, H, W)])),
        ("cc_block", cc_block_case),
    ]


def endtoend_cases(seed: int = 0) -> List[Case]:
    """Scalar loss through weight-net and generator on an 8x8 layout."""

    def build(predictor):
        def case():
            r = _rng(seed + 200)
            cfg = GeneratorConfig(z_ch=4, widths=(4, 3), base_h=4, base_w=4)
            gen = Generator(cfg)
            wnet = WeightNet(cfg, 3, WeightNetConfig(widths=(4, 4), hidden=3, head_init_scale=1.0), predictor)
            nn.init_params(gen.store, seed)
            nn.init_params(wnet.store, seed + 1)
            for t in list(gen.store.tensors()) + list(wnet.store.tensors()):
                if t.data.ndim == 1:  # move biases and affine params off their trivial init
                    t.data[...] += 0.1 * r.standard_normal(t.shape)
            y = r.integers(0, 3, (2, 8, 8))
            z = _t(r, 2, 4, 4, 4)

            def fn(z, *_params):
                return gen(z, wnet(y))

            return fn, [z] + list(gen.store.tensors()) + list(wnet.store.tensors())
        return case

    return [("generator+weightnet_fp", build("fp")), ("generator+weightnet_local", build("local"))]


def run_suite(scope: str, seed: int = 0) -> List[CheckResult]:
    if scope not in SCOPES:
        raise ArgumentError(f"unknown gradcheck scope {scope!r}; choose from {SCOPES}")
    builders = {"primitives": primitive_cases, "ccops": ccop_cases, "endtoend": endtoend_cases}[scope]
    tol = ENDTOEND_TOL if scope == "endtoend" else PRIMITIVE_TOL
    results = []
    with T.precision(np.float64):
        for i, (name, make) in enumerate(builders(seed)):
            fn, inputs = make()
            cap = ENDTOEND_SAMPLES if scope == "endtoend" else 0
            results.append(check_gradients(name, fn, inputs, tol, seed=seed + i, max_per_input=cap))
    return results


def format_report(results: Sequence[CheckResult]) -> str:
    lines = ["name,rel_error,tol,elements,status"]
    for r in results:
        lines.append(f"{r.name},{r.rel_error:.3e},{r.tol:g},{r.elements},{'pass' if r.passed else 'FAIL'}")
    return "\n".join(lines)


def run_all(scopes: Sequence[str] = SCOPES, seed: int = 0) -> Dict[str, List[CheckResult]]:
    return {s: run_suite(s, seed) for s in scopes}


if __name__ == "__main__":  # pragma: no cover - manual timing aid
    t0 = time.perf_counter()
    for scope, res in run_all().items():
        print(scope)
        print(format_report(res))
    print(f"{time.perf_counter() - t0:.1f}s")
