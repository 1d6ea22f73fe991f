import numpy as np
import pytest

from tcd import tensor as T
from tcd.backbone import BackboneConfig
from tcd.correlation import WindowSpec
from tcd.model import (Decoder, LossBreakdown, ModelConfig, SegPair, TCDModel,
                       bce_loss, dice_loss, dice_loss_global, fuse_two_way,
                       total_loss)
from tcd.tensor import Parameter, Tensor, double_precision, grad_check


def toy_config(**kw):
    return ModelConfig(
        backbone=BackboneConfig(channels=(8, 8, 16), blocks_per_stage=(1, 1, 1)),
        win2=WindowSpec(1, 2), win3=WindowSpec(1, 1), decoder_channels=8, **kw)


def tiny_config(**kw):
    return ModelConfig(
        backbone=BackboneConfig(channels=(4, 4, 8), blocks_per_stage=(1, 1, 1)),
        win2=WindowSpec(1, 1), win3=WindowSpec(0, 1), decoder_channels=4, **kw)


class TestDecoder:
    def test_output_shape(self):
        rng = np.random.default_rng(0)
        dec = Decoder(6, 4, rng)
        c2 = Tensor(rng.uniform(size=(2, 4, 16, 32)))
        c3 = Tensor(rng.uniform(size=(2, 2, 16, 32)))
        out = dec(c2, c3)
        assert out.shape == (2, 1, 32, 64)
        assert np.all((out.data > 0) & (out.data < 1))

    def test_resolution_mismatch(self):
        dec = Decoder(4, 4, np.random.default_rng(1))
        with pytest.raises(ValueError, match="resolution"):
            dec(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 2, 4, 8))))

    def test_gradient(self):
        with double_precision():
            dec = Decoder(3, 2, np.random.default_rng(2))
            rng = np.random.default_rng(3)
            c2 = Tensor(rng.uniform(size=(1, 2, 2, 3)))
            c3 = Tensor(rng.uniform(size=(1, 1, 2, 3)))
            err = grad_check(lambda a, b: (dec(a, b) * dec(a, b)).sum(), [c2, c3])
        assert err < 1e-3


class TestDiceLoss:
    def test_perfect_match_zero(self):
        y = Tensor(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert float(dice_loss(y, y).data) == pytest.approx(0.0, abs=1e-9)

    def test_miss_is_half(self):
        assert float(dice_loss(Tensor(np.array([0.0])), Tensor(np.array([1.0]))).data) == \
            pytest.approx(0.5)

    def test_false_positive_is_half(self):
        assert float(dice_loss(Tensor(np.array([1.0])), Tensor(np.array([0.0]))).data) == \
            pytest.approx(0.5)

    def test_nonbinary_gt_rejected(self):
        with pytest.raises(ValueError, match="0,1"):
            dice_loss(Tensor(np.array([0.5])), Tensor(np.array([0.5])))

    def test_global_variant_perfect(self):
        y = Tensor(np.array([1.0, 0.0, 1.0]))
        assert float(dice_loss_global(y, y).data) == pytest.approx(0.0, abs=1e-7)


class TestBceLoss:
    def test_half_confidence(self):
        out = bce_loss(Tensor(np.array([0.5])), Tensor(np.array([1.0])))
        assert float(out.data) == pytest.approx(0.693147, abs=1e-5)

    def test_perfect_prediction_clamp_floor(self):
        y = Tensor(np.array([1.0, 0.0]))
        assert float(bce_loss(y, y).data) <= 1.7e-6

    def test_confident_wrong_clamped(self):
        out = bce_loss(Tensor(np.array([0.0])), Tensor(np.array([1.0])))
        assert float(out.data) == pytest.approx(-np.log(1e-7), abs=1e-3)


class TestTotalLoss:
    def _pred_gt(self, seed=0):
        rng = np.random.default_rng(seed)
        pred = SegPair(Tensor(rng.uniform(0.01, 0.99, size=(1, 1, 4, 4))),
                       Tensor(rng.uniform(0.01, 0.99, size=(1, 1, 4, 4))))
        gt_st = Tensor((rng.uniform(size=(1, 1, 4, 4)) > 0.5).astype(float))
        gt_ts = Tensor((rng.uniform(size=(1, 1, 4, 4)) > 0.5).astype(float))
        return pred, gt_st, gt_ts

    def test_default_w_d(self):
        pred, gt_st, gt_ts = self._pred_gt()
        lb = total_loss(pred, gt_st, gt_ts)
        assert lb.w_d == 10.0
        assert lb.l_st == pytest.approx(10.0 * lb.dice_st + lb.bce_st, rel=1e-6)
        assert lb.l_seg == pytest.approx(0.5 * lb.l_st + 0.5 * lb.l_ts, rel=1e-6)

    def test_perfect_prediction(self):
        gt = Tensor((np.arange(16).reshape(1, 1, 4, 4) % 2).astype(float))
        pred = SegPair(Tensor(gt.data.copy()), Tensor(gt.data.copy()))
        lb = total_loss(pred, gt, Tensor(gt.data.copy()))
        assert lb.l_seg <= 2e-6

    def test_direction_swap_symmetry(self):
        pred, gt_st, gt_ts = self._pred_gt(1)
        a = total_loss(pred, gt_st, gt_ts)
        swapped = SegPair(pred.s_ts, pred.s_st)
        b = total_loss(swapped, gt_ts, gt_st)
        assert abs(a.l_seg - b.l_seg) < 1e-12

    def test_nonnegative(self):
        pred, gt_st, gt_ts = self._pred_gt(2)
        assert total_loss(pred, gt_st, gt_ts).l_seg >= 0.0

    def test_one_way_uses_fused(self):
        pred, gt_st, gt_ts = self._pred_gt(3)
        lb = total_loss(pred, gt_st, gt_ts, one_way=True)
        assert lb.l_st == lb.l_ts == lb.l_seg


class TestFuseTwoWay:
    def test_zero_ts(self):
        s_st = Tensor(np.random.default_rng(0).uniform(size=(1, 1, 2, 2)))
        pred = SegPair(s_st, Tensor(np.zeros((1, 1, 2, 2))))
        np.testing.assert_array_equal(fuse_two_way(pred).data, s_st.data)

    def test_commutative(self):
        rng = np.random.default_rng(1)
        a, b = Tensor(rng.uniform(size=(1, 1, 3, 3))), Tensor(rng.uniform(size=(1, 1, 3, 3)))
        np.testing.assert_array_equal(fuse_two_way(SegPair(a, b)).data,
                                      fuse_two_way(SegPair(b, a)).data)

    def test_hand_case(self):
        a = Tensor(np.array([0.2, 0.9]).reshape(1, 1, 1, 2))
        b = Tensor(np.array([0.8, 0.1]).reshape(1, 1, 1, 2))
        np.testing.assert_allclose(fuse_two_way(SegPair(a, b)).data.ravel(), [0.8, 0.9])

    def test_dominates_both(self):
        rng = np.random.default_rng(2)
        pred = SegPair(Tensor(rng.uniform(size=(1, 1, 4, 4))),
                       Tensor(rng.uniform(size=(1, 1, 4, 4))))
        fused = fuse_two_way(pred).data
        assert np.all(fused >= pred.s_st.data) and np.all(fused >= pred.s_ts.data)


class TestForwardFull:
    def test_untrained_shapes_and_finite(self):
        model = TCDModel(toy_config(), np.random.default_rng(0))
        rng = np.random.default_rng(1)
        i_s = Tensor(rng.uniform(size=(2, 3, 32, 48)))
        i_t = Tensor(rng.uniform(size=(2, 3, 32, 48)))
        with T.no_grad():
            pred = model(i_s, i_t)
        assert pred.s_st.shape == (2, 1, 32, 48)
        assert pred.s_ts.shape == (2, 1, 32, 48)
        assert np.all(np.isfinite(pred.s_st.data))

    @pytest.mark.parametrize("kw", [{}, {"no_cm": True}, {"no_fa": True}, {"no_ca": True}])
    def test_swap_symmetry(self, kw):
        model = TCDModel(tiny_config(**kw), np.random.default_rng(3))
        # perturb away from the zero-init residual branches
        prng = np.random.default_rng(4)
        for p in model.parameters():
            p.data = p.data + prng.normal(scale=0.02, size=p.shape).astype(p.data.dtype)
        rng = np.random.default_rng(5)
        i_s = Tensor(rng.uniform(size=(1, 3, 16, 24)))
        i_t = Tensor(rng.uniform(size=(1, 3, 16, 24)))
        with T.no_grad():
            a = model(i_s, i_t)
            b = model(i_t, i_s)
        np.testing.assert_allclose(a.s_st.data, b.s_ts.data, atol=1e-5)
        np.testing.assert_allclose(a.s_ts.data, b.s_st.data, atol=1e-5)

    def test_shape_mismatch(self):
        model = TCDModel(tiny_config(), np.random.default_rng(6))
        with pytest.raises(ValueError, match="differ"):
            model(Tensor(np.ones((1, 3, 16, 16))), Tensor(np.ones((1, 3, 16, 24))))

    def test_full_loss_gradient_on_parameter_slice(self):
        # finite differences through the whole network on a 16-element slice
        with double_precision():
            model = TCDModel(tiny_config(), np.random.default_rng(7))
            prng = np.random.default_rng(8)
            for p in model.parameters():
                p.data = p.data + prng.normal(scale=0.02, size=p.shape)
            rng = np.random.default_rng(9)
            i_s = Tensor(rng.uniform(size=(1, 3, 16, 16)))
            i_t = Tensor(rng.uniform(size=(1, 3, 16, 16)))
            gt_st = Tensor((rng.uniform(size=(1, 1, 16, 16)) > 0.7).astype(float))
            gt_ts = Tensor((rng.uniform(size=(1, 1, 16, 16)) > 0.7).astype(float))
            # pick a 16-element weight slice as the differentiation target
            target = next(p for p in model.parameters()
                          if p.name.endswith("decoder.conv.weight"))

            def loss_value():
                pred = model(i_s, i_t)
                return total_loss(pred, gt_st, gt_ts).loss

            model.zero_grad()
            loss_value().backward()
            analytic = target.grad.reshape(-1)[:16].copy()
            h = 1e-5
            max_err = 0.0
            flat = target.tensor.data.reshape(-1)
            with T.no_grad():
                for i in range(16):
                    orig = flat[i]
                    flat[i] = orig + h
                    fp = float(loss_value().data)
                    flat[i] = orig - h
                    fm = float(loss_value().data)
                    flat[i] = orig
                    numeric = (fp - fm) / (2 * h)
                    err = abs(analytic[i] - numeric) / max(1e-8, abs(analytic[i]) + abs(numeric))
                    max_err = max(max_err, err)
        assert max_err < 1e-3
