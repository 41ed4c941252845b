import numpy as np
import pytest

from cvtn import tensor as T
from cvtn.cte import CrossTemporalEncoder, CrossTimeBlock, FeatureDownSample, channels_at
from cvtn.errors import ConfigError, ShapeError
from cvtn.model import CvtnModel, ModelConfig
from cvtn.tensor import Tensor


def randomise(params, rng, scale=0.2):
    for p in params.values():
        p.data[...] = rng.normal(size=p.shape) * scale


class TestChannelArithmetic:
    @pytest.mark.parametrize("c, r, n, want", [(7, 8, 1, 11), (7, 8, 2, 15), (7, 8, 3, 19), (21, 4, 2, 25)])
    def test_channels_at(self, c, r, n, want):
        assert channels_at(c, r, n) == want


class TestCrossTimeBlock:
    def test_growth(self, rng):
        out = CrossTimeBlock(7, 4, 3, rng)(Tensor(rng.normal(size=(7, 20))))
        assert out.shape == (11, 20)

    def test_concat_prefix_bit_equal(self, rng):
        blk = CrossTimeBlock(5, 4, 3, rng)
        for p in blk.parameters().values():
            p.data[...] = 0.0
        t = rng.normal(size=(2, 5, 12))
        out = blk(Tensor(t)).data
        np.testing.assert_array_equal(out[:, :5], t)
        np.testing.assert_array_equal(out[:, 5:], 0.0)  # gelu(0) == 0

    def test_even_kernel(self, rng):
        with pytest.raises(ConfigError):
            CrossTimeBlock(5, 4, 4, rng)


class TestFds:
    def test_first_layer_counts(self, rng):
        fds = FeatureDownSample(7, 8, rng)
        assert fds(Tensor(rng.normal(size=(15, 10)))).shape == (11, 10)

    def test_odd_growth(self, rng):
        with pytest.raises(ConfigError):
            FeatureDownSample(7, 3, rng)


class TestCrossTemporalEncoder:
    def test_target_projection_identity(self, rng):
        cte = CrossTemporalEncoder(12, 12, 3, rng)
        cte.parameters()["cte.zproj.w"].data[...] = np.eye(12)
        cte.parameters()["cte.zproj.b"].data[...] = 0.0
        x = rng.normal(size=(12, 3))
        np.testing.assert_array_equal(T.transpose(cte.target_projection(Tensor(x))).data, x)

    def test_target_projection_zero_weights(self, rng):
        cte = CrossTemporalEncoder(12, 5, 3, rng)
        cte.parameters()["cte.zproj.w"].data[...] = 0.0
        b = cte.parameters()["cte.zproj.b"].data
        np.testing.assert_array_equal(cte.target_projection(Tensor(rng.normal(size=(12, 3)))).data,
                                      np.tile(b, (3, 1)))

    def test_target_projection_shape(self, rng):
        cte = CrossTemporalEncoder(96, 336, 21, rng, layers=1)
        assert T.transpose(cte.target_projection(Tensor(np.zeros((96, 21))))).shape == (336, 21)

    def test_long_horizon_shape_and_ledger(self, rng):
        cte = CrossTemporalEncoder(96, 720, 7, rng, layers=2, growth_r=8)
        ledger = []
        y = cte(Tensor(rng.normal(size=(96, 7))), Tensor(rng.normal(size=(720, 7))), ledger)
        assert y.shape == (720, 7)
        assert ledger == [7, 11, 15]

    def test_zero_init_is_residual_identity(self, rng):
        cte = CrossTemporalEncoder(16, 8, 3, rng)
        z = rng.normal(size=(2, 8, 3))
        y = cte(Tensor(rng.normal(size=(2, 16, 3))), Tensor(z))
        np.testing.assert_array_equal(y.data, z)

    def test_zero_weights_leave_final_bias(self, rng):
        cte = CrossTemporalEncoder(16, 8, 3, rng)
        for p in cte.parameters().values():
            p.data[...] = 0.0
        cte.parameters()["cte.out.b"].data[...] = [1.0, -2.0, 0.5]
        z = rng.normal(size=(8, 3))
        y = cte(Tensor(rng.normal(size=(16, 3))), Tensor(z))
        np.testing.assert_allclose(y.data, z + np.array([1.0, -2.0, 0.5]), atol=1e-15)

    def test_shape_mismatch(self, rng):
        cte = CrossTemporalEncoder(16, 8, 3, rng)
        with pytest.raises(ShapeError):
            cte(Tensor(np.zeros((16, 3))), Tensor(np.zeros((9, 3))))

    def test_gradients(self, rng, gradcheck):
        cte = CrossTemporalEncoder(12, 8, 3, rng, layers=2, growth_r=4)
        randomise(cte.parameters(), rng)
        x = Tensor(rng.normal(size=(2, 12, 3)))
        z = Tensor(rng.normal(size=(2, 8, 3)), requires_grad=True)
        y = Tensor(rng.normal(size=(2, 8, 3)))
        gradcheck(lambda: T.mse_loss(cte(x, z), y), dict(cte.parameters(), z=z), 60, rng)


class TestModelFrames:
    @pytest.mark.parametrize("frame", ["normalized", "raw"])
    def test_fresh_model_output_equals_cve(self, frame, rng):
        cfg = ModelConfig(lookback=16, horizon=8, n_vars=3, heads=4, cte_frame=frame)
        model = CvtnModel(cfg)
        x = rng.normal(size=(4, 16, 3)) * 3 + 1
        np.testing.assert_array_equal(model.predict(x), model.predict(x, cve_only=True))

    def test_groups_disjoint_and_complete(self):
        model = CvtnModel(ModelConfig(lookback=16, horizon=8, n_vars=3, heads=4))
        cve, cte = set(model.group("cve")), set(model.group("cte"))
        assert not cve & cte
        assert cve | cte == set(model.parameters())
        assert all(k.startswith("cve.") for k in cve) and all(k.startswith("cte.") for k in cte)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            ModelConfig(lookback=10, heads=4)
        with pytest.raises(ConfigError):
            ModelConfig(growth_r=3)
