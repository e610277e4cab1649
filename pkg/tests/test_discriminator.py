import numpy as np
import pytest

from ccfpse import tensor as T
from ccfpse.discriminator import (DiscriminatorConfig, FPSEDiscriminator, MultiScalePatchDiscriminator,
                                  build_discriminator, semantic_score)
from ccfpse.errors import ArgumentError, DataError
from ccfpse.nn import init_params
from ccfpse.tensor import Tensor

CFG = DiscriminatorConfig(widths=(8, 8, 8, 8, 8), channels=8)


def make(embeddings=True, seed=0):
    d = FPSEDiscriminator(CFG, 5, embeddings)
    init_params(d.store, seed)
    for t in d.tables.values():  # larger than the training init so semantic terms are visible
        t.data *= 50
    return d


def inputs(rng, n=2):
    return Tensor(rng.uniform(-1, 1, (n, 3, 32, 32))), rng.integers(0, 5, (n, 32, 32))


class TestFPSE:
    def test_score_map_shapes(self, rng):
        out = make()(*inputs(rng))
        assert [p.shape for p in out.patch_scores] == [(2, 1, 4, 4), (2, 1, 2, 2), (2, 1, 1, 1)]
        assert [m.shape for m in out.semantic_scores] == [(2, 1, 4, 4), (2, 1, 2, 2), (2, 1, 1, 1)]
        assert out.total.shape == (2,)

    def test_zero_tables_total_is_mean_patch(self, f64, rng):
        d = make()
        for t in d.tables.values():
            t.data[...] = 0
        out = d(*inputs(rng))
        mean_patch = np.mean([p.data.mean(axis=(1, 2, 3)) for p in out.patch_scores], axis=0)
        np.testing.assert_allclose(out.total.data, mean_patch, atol=1e-6)
        assert all(not m.data.any() for m in out.semantic_scores)

    def test_label_swap_changes_only_semantics(self, rng):
        d = make()
        img, y = inputs(rng)
        a, b = d(img, y), d(img, y[::-1].copy())
        assert all(np.array_equal(p.data, q.data) for p, q in zip(a.patch_scores, b.patch_scores))
        assert any(not np.array_equal(m.data, n.data) for m, n in zip(a.semantic_scores, b.semantic_scores))

    def test_table_scaling_is_bilinear(self, f64, rng):
        d = make()
        img, y = inputs(rng)
        base = [m.data.copy() for m in d(img, y).semantic_scores]
        for t in d.tables.values():
            t.data *= 2.5
        scaled = [m.data for m in d(img, y).semantic_scores]
        for b, s in zip(base, scaled):
            np.testing.assert_allclose(s, 2.5 * b, atol=1e-6)

    def test_deterministic(self, rng):
        img, y = inputs(rng)
        assert np.array_equal(make()(img, y).total.data, make()(img, y).total.data)

    def test_embeddings_off(self, rng):
        d = make(embeddings=False)
        out = d(*inputs(rng))
        assert out.semantic_scores == [None] * 3 and not d.tables

    def test_indivisible_extent(self, rng):
        with pytest.raises(ArgumentError):
            make()(Tensor(np.zeros((1, 3, 24, 24))), np.zeros((24, 24), dtype=np.int64))


class TestSemanticScore:
    def test_inner_product(self):
        F = Tensor(np.array([1.0, 2.0]).reshape(1, 2, 1, 1))
        table = Tensor(np.array([[0.5, 0.5]]))
        assert semantic_score(F, np.zeros((1, 1), dtype=np.int64), table).data.item() == 1.5

    def test_orthogonal(self):
        F = Tensor(np.array([1.0, 0.0]).reshape(1, 2, 1, 1))
        table = Tensor(np.array([[0.0, 3.0]]))
        assert semantic_score(F, np.zeros((1, 1), dtype=np.int64), table).data.item() == 0

    def test_id_out_of_range(self):
        with pytest.raises(DataError):
            semantic_score(Tensor.zeros((1, 2, 1, 1)), np.full((1, 1), 3), Tensor.zeros((2, 2)))


class TestMultiScalePatch:
    def test_runs_and_shapes(self, rng):
        d = build_discriminator("ms-patch", CFG, 5)
        assert isinstance(d, MultiScalePatchDiscriminator)
        init_params(d.store, 0)
        out = d(*inputs(rng))
        assert [p.shape for p in out.patch_scores] == [(2, 1, 4, 4), (2, 1, 2, 2)]
        assert out.total.shape == (2,) and np.all(np.isfinite(out.total.data))

    def test_unknown_kind(self):
        with pytest.raises(ArgumentError):
            build_discriminator("global", CFG, 5)
