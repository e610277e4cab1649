import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ccfpse import tensor as T
from ccfpse.errors import ArgumentError, ContractError, DimensionError
from ccfpse.losses import (FixedFeatureExtractor, LossWeights, d_hinge_loss, feature_matching_loss, g_adv_loss,
                           g_total_loss, perceptual_loss)
from ccfpse.tensor import Tensor


class TestHinge:
    @pytest.mark.parametrize("real,fake,expected", [(2, -2, 0.0), (0.5, -2, 0.5), (2, 0, 1.0)])
    def test_hand_cases(self, real, fake, expected):
        assert d_hinge_loss(real, fake).item() == expected

    @pytest.mark.parametrize("fake,expected", [(0, 0.0), (3, -3.0), (-1, 1.0)])
    def test_generator_cases(self, fake, expected):
        assert g_adv_loss(fake).item() == expected

    @given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
    def test_non_negative(self, real, fake):
        assert d_hinge_loss(real, fake).item() >= 0

    def test_batch_mean(self):
        assert d_hinge_loss(Tensor([0.0, 2.0]), Tensor([-2.0, 0.0])).item() == 1.0


class TestFeatureMatching:
    def test_identical_is_zero(self, rng):
        feats = [Tensor(rng.standard_normal((2, 3, 4, 4))) for _ in range(3)]
        assert feature_matching_loss(feats, feats).item() == 0

    def test_single_layer(self):
        assert feature_matching_loss([Tensor([1.0, 2.0])], [Tensor([2.0, 2.0])]).item() == 0.5

    @given(st.integers(0, 1000))
    def test_non_negative(self, seed):
        r = np.random.default_rng(seed)
        a, b = [Tensor(r.standard_normal((2, 3)))], [Tensor(r.standard_normal((2, 3)))]
        assert feature_matching_loss(a, b).item() >= 0

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            feature_matching_loss([Tensor([1.0])], [])

    def test_real_side_gets_no_gradient(self):
        a, b = Tensor([1.0], requires_grad=True), Tensor([2.0], requires_grad=True)
        T.backward(feature_matching_loss([a], [b]))
        assert a.grad is not None and b.grad is None


class TestPerceptual:
    extractor = FixedFeatureExtractor(widths=(4, 8), strides=(2, 2))

    def test_identical_is_zero(self, rng):
        x = Tensor(rng.uniform(-1, 1, (1, 3, 16, 16)))
        assert perceptual_loss(x, x, self.extractor).item() == 0

    def test_symmetric_and_positive(self, rng):
        x = rng.uniform(-1, 1, (1, 3, 16, 16))
        y = x + 1e-2 * rng.standard_normal(x.shape)
        ab = perceptual_loss(Tensor(x), Tensor(y), self.extractor).item()
        ba = perceptual_loss(Tensor(y), Tensor(x), self.extractor).item()
        assert ab > 0 and ab == pytest.approx(ba, rel=1e-6)

    def test_extent_mismatch(self):
        with pytest.raises(DimensionError):
            perceptual_loss(Tensor.zeros((1, 3, 16, 16)), Tensor.zeros((1, 3, 8, 8)), self.extractor)

    def test_extractor_is_frozen(self, rng):
        x = Tensor(rng.uniform(-1, 1, (1, 3, 16, 16)), requires_grad=True)
        T.backward(perceptual_loss(x, Tensor(np.zeros((1, 3, 16, 16))), self.extractor))
        assert x.grad is not None
        assert all(t.grad is None for t in self.extractor.store.tensors())

    def test_seed_fixes_weights(self):
        a, b = FixedFeatureExtractor(seed=5), FixedFeatureExtractor(seed=5)
        assert all(np.array_equal(a.store[n].data, b.store[n].data) for n in a.store)


class TestTotal:
    def test_adv_only(self):
        assert g_total_loss(-1.5, 7.0, 3.0, LossWeights(0, 0)).item() == -1.5

    def test_weighted_sum(self):
        assert g_total_loss(-1.0, 0.2, 0.1, LossWeights(10, 20)).item() == pytest.approx(3.0)

    def test_all_zero(self):
        assert g_total_loss(0.0, 0.0, 0.0, LossWeights()).item() == 0

    def test_negative_weight(self):
        with pytest.raises(ArgumentError):
            LossWeights(-1, 0)
