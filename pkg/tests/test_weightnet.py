import numpy as np
import pytest

from ccfpse import tensor as T
from ccfpse.errors import ArgumentError, ContractError, DataError
from ccfpse.generator import GeneratorConfig
from ccfpse.nn import init_params
from ccfpse.weightnet import WeightNet, WeightNetConfig
from oracles import receptive_field_trials

GEN = GeneratorConfig(z_ch=4, widths=(8, 8, 8, 8))
WCFG = WeightNetConfig(widths=(8, 8, 8, 8), hidden=8, head_init_scale=1.0)


def make(predictor="fp", seed=0, target="cc"):
    net = WeightNet(GEN, 5, WCFG, predictor=predictor, target=target)
    init_params(net.store, seed)
    return net


class TestEncodeLayout:
    def test_level_count_and_shapes(self):
        feats = make().encode_layout(np.zeros((32, 32), dtype=np.int64))
        assert len(feats) == 4
        assert [f.shape[2:] for f in feats] == [(4, 4), (8, 8), (16, 16), (32, 32)]

    def test_uniform_layout_is_constant_inside(self):
        # zero padding perturbs a margin at every level; a large layout leaves a clean interior
        feats = make().encode_layout(np.full((128, 128), 2, dtype=np.int64))
        for f in feats:
            n = f.shape[2]
            core = f.data[0, :, n // 4:3 * n // 4, n // 4:3 * n // 4]
            np.testing.assert_allclose(core, np.broadcast_to(core[:, :1, :1], core.shape), atol=1e-6)

    def test_deterministic(self, rng):
        y = rng.integers(0, 5, (32, 32))
        a, b = make().encode_layout(y), make().encode_layout(y)
        assert all(np.array_equal(x.data, z.data) for x, z in zip(a, b))

    def test_indivisible_extent(self):
        with pytest.raises(ArgumentError):
            make().encode_layout(np.zeros((30, 32), dtype=np.int64))

    def test_bad_label(self):
        with pytest.raises(DataError):
            make().encode_layout(np.full((32, 32), 7))


class TestPredictWeights:
    def test_shapes_and_gate_range(self, rng):
        net = make()
        y = rng.integers(0, 5, (2, 32, 32))
        for spec, w in zip(net.specs, net(y)):
            assert w.V.shape == (2, spec.cin, 3, 3, spec.height, spec.width)
            assert w.A.shape == (2, spec.cout, spec.height, spec.width)
            assert np.all((w.A.data > 0) & (w.A.data < 1))

    def test_zero_heads(self, rng):
        net = make()
        for name, t in net.store.items():
            if name.startswith("head.") and ".1." in name:
                t.data[...] = 0
        w = net(rng.integers(0, 5, (32, 32)))[3]
        assert not w.V.data.any()
        assert np.all(w.A.data == 0.5)

    def test_resolution_mismatch(self, rng):
        net = make()
        feats = net.encode_layout(rng.integers(0, 5, (32, 32)))
        with pytest.raises(ContractError):
            net.predict_weights(feats[::-1], 0)

    def test_local_shapes(self, rng):
        net = make("local")
        for spec, w in zip(net.specs, net(rng.integers(0, 5, (32, 32)))):
            assert w.V.shape == (1, spec.cin, 3, 3, spec.height, spec.width)

    def test_spade_target(self, rng):
        mods = make(target="spade")(rng.integers(0, 5, (32, 32)))
        assert mods[0].gamma.shape == (1, 8, 4, 4)

    def test_unknown_predictor(self):
        with pytest.raises(ArgumentError):
            WeightNet(GEN, 5, predictor="global")


class TestReceptiveField:
    def test_local_ignores_far_flips(self):
        assert not any(receptive_field_trials(make("local"), block_id=7, trials=20, seed=1, far=True))

    def test_local_sees_near_flips(self):
        assert sum(receptive_field_trials(make("local"), block_id=7, trials=20, seed=2, far=False)) >= 18

    def test_pyramid_sees_far_flips(self):
        assert sum(receptive_field_trials(make("fp"), block_id=7, trials=20, seed=3, far=True)) >= 19
