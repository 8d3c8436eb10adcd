import numpy as np
import pytest
import torch

from conftest import check_param_gradients
from trifuse.backbone import StagedBackbone, make_stage_config
from trifuse.blocks import SqueezeExcite
from trifuse.config import GAP, GMP, schedule_from_label
from trifuse.decoder import Decoder, DecoderBlock, fuse_skip
from trifuse.errors import ConfigError, ShapeError
from trifuse.model import init_params


def _desk_bundle(size=32, batch=1, seed=0):
    torch.manual_seed(seed)
    net = init_params(StagedBackbone(make_stage_config("desk")), seed=seed)
    return net(torch.rand(batch, 3, size, size) * 255)


class TestSqueezeExcite:
    def test_positive_input_ratio_between_1_and_2(self):
        m = init_params(SqueezeExcite(8, pool=GAP), seed=0)
        x = torch.rand(1, 8, 6, 6) + 0.1
        ratio = m(x) / x
        assert (ratio > 1).all() and (ratio < 2).all()

    def test_zeroed_params_give_1p5x(self):
        m = SqueezeExcite(8, pool=GMP)
        with torch.no_grad():
            for p in m.parameters():
                p.zero_()
        x = torch.rand(1, 8, 6, 6, dtype=torch.float64)
        assert torch.allclose(m.double()(x), 1.5 * x, atol=1e-12)

    def test_residual_form(self):
        m = init_params(SqueezeExcite(8, pool=GAP), seed=1).double()
        x = torch.rand(1, 8, 6, 6, dtype=torch.float64)
        w = m.weights(x)
        assert (w > 0).all() and (w < 1).all()
        assert torch.allclose(m(x), (1 + w) * x, rtol=1e-12, atol=1e-12)

    def test_gap_weights_invariant_under_permutation(self):
        m = init_params(SqueezeExcite(4, pool=GAP), seed=2).double()
        rng = np.random.default_rng(0)
        x = torch.from_numpy(rng.standard_normal((1, 4, 5, 5)))
        w = m.weights(x)
        perm = rng.permutation(25)
        xp = x.reshape(1, 4, 25)[:, :, perm].reshape(1, 4, 5, 5)
        assert torch.allclose(m.weights(xp), w, atol=1e-12)

    def test_gmp_weights_ignore_non_max_decreases(self):
        m = init_params(SqueezeExcite(4, pool=GMP), seed=3).double()
        rng = np.random.default_rng(1)
        x = torch.from_numpy(rng.standard_normal((1, 4, 5, 5)))
        w = m.weights(x)
        # permutation invariance
        perm = rng.permutation(25)
        xp = x.reshape(1, 4, 25)[:, :, perm].reshape(1, 4, 5, 5)
        assert torch.allclose(m.weights(xp), w, atol=1e-12)
        # lowering a non-max entry leaves the weights unchanged
        y = x.clone()
        for c in range(4):
            flat = y[0, c].reshape(-1)
            non_max = int(torch.argmin(flat))
            flat[non_max] -= 1.0
        assert torch.allclose(m.weights(y), w, atol=1e-12)

    def test_hidden_width_floor(self):
        m = SqueezeExcite(8, pool=GAP)
        assert m.fc1.out_channels == 4

    def test_bad_pool_mode(self):
        with pytest.raises(ConfigError):
            SqueezeExcite(8, pool="SUM")


class TestFuseSkip:
    def test_top_stage_identity(self):
        x = torch.rand(1, 4, 8, 8)
        assert torch.equal(fuse_skip(x, None), x)

    def test_zero_decoder_above(self):
        x = torch.rand(1, 4, 8, 8)
        assert torch.equal(fuse_skip(x, torch.zeros_like(x)), x)

    def test_scalar_sum(self):
        a = torch.full((1, 1, 2, 2), 1.0)
        b = torch.full((1, 1, 2, 2), 2.0)
        assert fuse_skip(a, b).flatten()[0].item() == pytest.approx(3.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            fuse_skip(torch.rand(1, 4, 8, 8), torch.rand(1, 4, 4, 4))


class TestDecoderBlock:
    def test_upsampling_shape(self):
        blk = DecoderBlock(64, 32, upsample=True)
        out = blk(torch.rand(1, 64, 8, 8))
        assert out.shape == (1, 32, 16, 16)

    def test_no_upsample_keeps_resolution(self):
        blk = DecoderBlock(8, 8, upsample=False)
        out = blk(torch.rand(1, 8, 32, 32))
        assert out.shape == (1, 8, 32, 32)

    def test_zero_input_zero_shift_gives_zero(self):
        blk = init_params(DecoderBlock(8, 4, upsample=True), seed=0)
        blk.eval()
        out = blk(torch.zeros(1, 8, 8, 8))
        assert out.abs().max() == 0


class TestDecoder:
    def test_all_six_outputs_at_input_resolution(self):
        dec = init_params(Decoder(make_stage_config("desk")), seed=0)
        preds = dec(_desk_bundle(64))
        assert preds.final_logit.shape == (1, 1, 64, 64)
        assert len(preds.side_logits) == 5
        for s in preds.side_logits:
            assert s.shape == (1, 1, 64, 64)
        assert len(preds.all_logits()) == 6

    def test_default_schedule_is_3gap_2gmp(self):
        dec = Decoder(make_stage_config("desk"))
        assert dec.schedule == (GMP, GMP, GAP, GAP, GAP)
        assert dec.schedule == schedule_from_label("3GAP+2GMP")

    def test_5gap_schedule(self):
        sched = schedule_from_label("5GAP")
        dec = Decoder(make_stage_config("desk"), sched)
        assert all(m.pool == GAP for m in dec.attn)

    def test_schedule_changes_weights_not_shapes(self):
        feats = _desk_bundle(32)
        shapes = None
        for label in ("5GAP", "5GMP", "3GAP+2GMP", "2GMP+3GAP"):
            dec = init_params(Decoder(make_stage_config("desk"), schedule_from_label(label)), seed=1)
            preds = dec(feats)
            cur = [tuple(t.shape) for t in preds.all_logits()]
            if shapes is None:
                shapes = cur
            assert cur == shapes

    def test_bad_schedule_rejected(self):
        with pytest.raises(ConfigError):
            Decoder(make_stage_config("desk"), ("GAP", "GAP"))

    def test_wrong_bundle_size_rejected(self):
        dec = Decoder(make_stage_config("desk"))
        with pytest.raises(ShapeError):
            dec(_desk_bundle(32)[:4])


def test_decoder_gradients_match_finite_differences():
    # synthetic unit-scale stage bundle: keeps the probe loss well conditioned
    # so central differences can resolve every parameter's gradient
    torch.manual_seed(0)
    dec = init_params(Decoder(make_stage_config("desk")), seed=5).double()
    dec.eval()
    rng = np.random.default_rng(7)
    chans = (8, 16, 32, 64, 64)
    feats = [
        torch.from_numpy(rng.standard_normal((1, chans[i], 16 >> i, 16 >> i)))
        for i in range(5)
    ]
    probes = [torch.from_numpy(rng.standard_normal((1, 1, 16, 16)) / 16.0) for _ in range(6)]

    def loss_fn():
        preds = dec(feats)
        return sum((p * q).sum() for p, q in zip(preds.all_logits(), probes))

    worst = check_param_gradients(loss_fn, list(dec.named_parameters()), rtol=1e-4,
                                  h=1e-6, n_elements=2, atol=1e-7)
    assert worst < 1.0
