import numpy as np
import pytest

from ccfpse import tensor as T
from ccfpse.errors import ContractError, StateError
from ccfpse.nn import ZEROS, AdamState, Conv, ParamStore, adam_step, batch_norm, init_params, instance_norm
from ccfpse.tensor import Tensor


def ones(c):
    return Tensor(np.ones(c))


def zeros(c):
    return Tensor(np.zeros(c))


class TestBatchNorm:
    def test_constant_channel_gives_zeros(self, f64):
        out = batch_norm(Tensor(np.full((2, 1, 3, 3), 4.0)), ones(1), zeros(1), training=True)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_two_values(self, f64):
        x = Tensor(np.array([1.0, 3.0]).reshape(1, 1, 1, 2))
        out = batch_norm(x, ones(1), zeros(1), training=True)
        np.testing.assert_allclose(out.data.ravel(), [-1, 1], atol=1e-5)

    def test_zero_gamma_returns_beta(self, f64, rng):
        out = batch_norm(Tensor(rng.standard_normal((2, 2, 3, 3))), zeros(2), Tensor([0.5, -2.0]), training=True)
        np.testing.assert_array_equal(out.data[:, 0], 0.5)
        np.testing.assert_array_equal(out.data[:, 1], -2.0)

    def test_eval_without_stats(self):
        with pytest.raises(StateError):
            batch_norm(Tensor.zeros((1, 1, 2, 2)), ones(1), zeros(1), training=False)

    def test_running_stats_update(self, f64):
        mean, var = np.zeros(1), np.ones(1)
        x = Tensor(np.array([1.0, 3.0]).reshape(1, 1, 1, 2))
        batch_norm(x, ones(1), zeros(1), True, mean, var, momentum=0.5)
        assert mean[0] == pytest.approx(1.0)
        assert var[0] == pytest.approx(0.5 + 0.5 * 2.0)  # unbiased batch variance is 2

    def test_eval_uses_running_stats(self, f64):
        out = batch_norm(Tensor(np.full((1, 1, 1, 1), 3.0)), ones(1), zeros(1), False,
                         np.array([1.0]), np.array([4.0]), eps=0.0)
        assert out.data.item() == pytest.approx(1.0)


class TestInstanceNorm:
    def test_constant_plane(self, f64):
        out = instance_norm(Tensor(np.full((1, 2, 3, 3), 7.0)), ones(2), zeros(2))
        np.testing.assert_allclose(out.data, 0, atol=1e-6)

    def test_independent_instances(self, f64):
        x = Tensor(np.array([[0.0, 2.0], [0.0, 20.0]]).reshape(2, 1, 1, 2))
        out = instance_norm(x, ones(1), zeros(1))
        np.testing.assert_allclose(out.data.reshape(2, 2), [[-1, 1], [-1, 1]], atol=1e-4)

    def test_one_by_one_plane_returns_beta(self, f64):
        out = instance_norm(Tensor(np.array([[[[5.0]]]])), ones(1), Tensor([0.3]))
        assert out.data.item() == pytest.approx(0.3)


def scalar_store(value=1.0):
    store = ParamStore()
    p = store.add("w", (1,), ZEROS)
    p.data[...] = value
    return store, p


class TestAdam:
    def test_zero_grad_leaves_params(self):
        store, p = scalar_store(1.5)
        p.grad = np.zeros(1, dtype=p.dtype)
        adam_step([store], AdamState(lr=0.1))
        assert p.data[0] == np.float32(1.5)

    def test_first_update_is_lr(self, f64):
        store, p = scalar_store(0.0)
        p.grad = np.ones(1)
        adam_step([store], AdamState(lr=0.01, eps=1e-12))
        assert p.data[0] == pytest.approx(-0.01, rel=1e-6)

    def test_bias_correction_keeps_step_size(self, f64):
        store, p = scalar_store(0.0)
        state = AdamState(lr=0.01, eps=1e-12)
        p.grad = np.full(1, 3.0)
        adam_step([store], state)
        first = -p.data[0]
        adam_step([store], state)
        assert -p.data[0] - first == pytest.approx(first, rel=1e-6)

    def test_missing_grad(self):
        store, p = scalar_store()
        with pytest.raises(ContractError):
            adam_step([store], AdamState(lr=0.1))


class TestInit:
    def _store(self, shape=(100, 25, 2, 2)):
        store = ParamStore()
        Conv(store, "c", shape[1], shape[0], shape[2])
        return store

    def test_same_seed_identical(self):
        a, b = self._store(), self._store()
        init_params(a, 3)
        init_params(b, 3)
        assert all(np.array_equal(a[n].data, b[n].data) for n in a)

    def test_different_seeds_differ(self):
        a, b = self._store(), self._store()
        init_params(a, 3)
        init_params(b, 4)
        assert not np.array_equal(a["c.weight"].data, b["c.weight"].data)

    def test_fan_in_variance(self):
        store = self._store()
        init_params(store, 0)
        w = store["c.weight"].data
        assert w.size == 10_000
        assert abs(w.var() / (2.0 / 100) - 1) < 0.2

    def test_frozen_restores_flags(self):
        store = self._store()
        with store.frozen():
            assert not any(t.requires_grad for t in store.tensors())
        assert all(t.requires_grad for t in store.tensors())
