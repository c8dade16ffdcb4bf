import numpy as np
import pytest
import torch

from changekit.decoder import (
    ChangeDecoder,
    DualAttention,
    FuseReduce,
    MultiScaleDiff,
    RefineBlock,
    RefineBlockConfig,
    ScanConvBlock,
    default_decoder_configs,
    diff_anchor,
)
from changekit.encoder import EncoderConfig, SiameseEncoder
from changekit.network import count_parameters

from conftest import central_diff_max_rel_err


class TestDiffAnchor:
    def test_identical_inputs_zero_difference(self):
        x = torch.rand(1, 4, 8, 8)
        out = diff_anchor(x, x)
        assert (out[:, :4] == 0).all()
        assert torch.equal(out[:, 4:], x)

    def test_scalar_values(self):
        a = torch.full((1, 1, 2, 2), 2.0)
        b = torch.full((1, 1, 2, 2), 5.0)
        out = diff_anchor(a, b)
        assert (out[:, 0] == 3.0).all()
        assert (out[:, 1] == 5.0).all()

    def test_symmetric(self):
        a, b = torch.randn(2, 3, 5, 5), torch.randn(2, 3, 5, 5)
        assert torch.equal(diff_anchor(a, b), diff_anchor(b, a))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            diff_anchor(torch.zeros(1, 2, 4, 4), torch.zeros(1, 2, 4, 5))


class TestMultiScaleDiff:
    def test_zero_input_zero_output_with_zero_bias(self):
        m = MultiScaleDiff(8, 6, groups=4, dilation=2)
        for mod in m.modules():
            if isinstance(mod, torch.nn.Conv2d):
                torch.nn.init.zeros_(mod.bias)
        assert (m(torch.zeros(1, 8, 9, 9)) == 0).all()

    @pytest.mark.parametrize("hw", [(7, 7), (1, 5), (16, 3)])
    def test_spatial_size_preserved(self, hw):
        m = MultiScaleDiff(8, 6, groups=4, dilation=2)
        out = m(torch.randn(1, 8, *hw))
        assert out.shape == (1, 6, *hw)

    def test_divisibility_checked_at_construction(self):
        with pytest.raises(ValueError):
            MultiScaleDiff(6, 4, groups=4, dilation=2)

    def test_dilated_branch_footprint_is_5x5(self):
        # identity-like kernels: all-ones dilated kernel, zero local branch
        m = MultiScaleDiff(4, 4, groups=4, dilation=2)
        with torch.no_grad():
            m.local.weight.zero_()
            m.local.bias.zero_()
            m.dilated.weight.fill_(1.0)
            m.dilated.bias.zero_()
            m.fuse.weight.fill_(1.0)
            m.fuse.bias.zero_()
        x = torch.zeros(1, 4, 11, 11)
        x[0, 0, 5, 5] = 1.0
        response = m(x)[0, 0]
        nz_rows, nz_cols = torch.nonzero(response, as_tuple=True)
        taps = {-2, 0, 2}
        assert set((nz_rows - 5).tolist()) <= taps and set((nz_cols - 5).tolist()) <= taps
        # bounding box spans exactly 5x5
        assert nz_rows.min() == 3 and nz_rows.max() == 7
        assert nz_cols.min() == 3 and nz_cols.max() == 7


class TestDualAttention:
    def test_saturated_gates_reduce_to_projection(self):
        att = DualAttention(8)
        with torch.no_grad():
            # push every sigmoid far into saturation
            att.se.fc[2].weight.zero_()
            att.se.fc[2].bias.fill_(30.0)
            att.cbam.mlp[2].weight.zero_()
            att.cbam.mlp[2].bias.fill_(30.0)
            att.cbam.spatial.weight.zero_()
            att.cbam.spatial.bias.fill_(30.0)
        x = torch.randn(2, 8, 6, 6)
        assert torch.allclose(att(x), att.proj(x), atol=1e-5)

    def test_zero_input_zero_output(self):
        att = DualAttention(8)
        with torch.no_grad():
            att.proj.bias.zero_()
        assert (att(torch.zeros(1, 8, 5, 5)) == 0).all()

    def test_gate_values_in_open_interval(self):
        att = DualAttention(8)
        x = torch.randn(2, 8, 6, 6)
        for gate in (att.se(x), att.cbam(x)):
            assert gate.min().item() > 0.0
            assert gate.max().item() < 1.0


class TestFuseReduce:
    def test_output_channels(self):
        fuse = FuseReduce(diff_channels=6, temporal_channels=4, out_channels=10)
        out = fuse(torch.randn(1, 6, 8, 8), torch.randn(1, 4, 8, 8), torch.randn(1, 4, 8, 8))
        assert out.shape == (1, 10, 8, 8)

    def test_zero_inputs_zero_output_with_zero_bias(self):
        fuse = FuseReduce(6, 4, 10)
        with torch.no_grad():
            fuse.compress_diff.bias.zero_()
            fuse.refine.bias.zero_()
        z = torch.zeros(1, 6, 4, 4)
        out = fuse(z, torch.zeros(1, 4, 4, 4), torch.zeros(1, 4, 4, 4))
        assert (out == 0).all()

    def test_temporal_order_free(self):
        fuse = FuseReduce(6, 4, 10)
        r = torch.randn(1, 6, 8, 8)
        ia, ib = torch.randn(1, 4, 8, 8), torch.randn(1, 4, 8, 8)
        assert torch.equal(fuse(r, ia, ib), fuse(r, ib, ia))

    def test_spatial_mismatch_rejected(self):
        fuse = FuseReduce(6, 4, 10)
        with pytest.raises(ValueError):
            fuse(torch.zeros(1, 6, 8, 8), torch.zeros(1, 4, 8, 8), torch.zeros(1, 4, 4, 4))


class TestScanConvBlock:
    @pytest.mark.parametrize("shape", [(1, 4, 8, 8), (2, 6, 3, 11)])
    def test_shape_preserved(self, shape):
        block = ScanConvBlock(shape[1])
        x = torch.randn(*shape)
        assert block(x).shape == x.shape

    def test_zero_input_zero_output(self):
        block = ScanConvBlock(4)
        assert (block(torch.zeros(1, 4, 6, 6)) == 0).all()

    def test_gradient_matches_finite_differences(self):
        block = ScanConvBlock(4).double()
        x = torch.randn(1, 4, 8, 8, dtype=torch.float64)
        weights = torch.randn_like(x)
        err = central_diff_max_rel_err(lambda t: (block(t) * weights).sum(), x, n_coords=48)
        assert err < 1e-4, f"max relative error {err}"


def _micro_pyramid(seed=0, swap=False):
    torch.manual_seed(seed)
    enc = SiameseEncoder(EncoderConfig(stage_channels=(4, 8, 12, 16), blocks_per_stage=1))
    t1, t2 = torch.rand(1, 3, 64, 64), torch.rand(1, 3, 64, 64)
    return enc, (enc(t2, t1) if swap else enc(t1, t2))


class TestChangeDecoder:
    def test_logits_shape(self):
        _, pyramid = _micro_pyramid()
        cfgs = default_decoder_configs((4, 8, 12, 16))
        dec = ChangeDecoder(cfgs, num_classes=6)
        out = dec(pyramid)
        assert out.logits.shape == (1, 6, 64, 64)
        assert out.z.data.shape[1] == 4
        assert out.z.scale == 4

    def test_equal_streams_zero_anchor_difference(self):
        enc = SiameseEncoder(EncoderConfig(stage_channels=(4, 8, 12, 16), blocks_per_stage=1))
        x = torch.rand(1, 3, 64, 64)
        pyramid = enc(x, x.clone())
        for a, b in zip(pyramid.t1, pyramid.t2):
            anchored = diff_anchor(a.data, b.data)
            c = a.data.shape[1]
            assert (anchored[:, :c] == 0).all()

    def test_swap_invariance_full_decode(self):
        torch.manual_seed(3)
        cfgs = default_decoder_configs((4, 8, 12, 16))
        dec = ChangeDecoder(cfgs, num_classes=6)
        _, fwd = _micro_pyramid(seed=5)
        _, rev = _micro_pyramid(seed=5, swap=True)
        assert torch.equal(dec(fwd).logits, dec(rev).logits)

    def test_head_is_bias_free(self):
        dec = ChangeDecoder(default_decoder_configs((4, 8, 12, 16)), num_classes=6)
        assert dec.head.bias is None

    def test_head_is_positively_homogeneous(self):
        dec = ChangeDecoder(default_decoder_configs((4, 8, 12, 16)), num_classes=6)
        z = torch.randn(1, 4, 16, 16)
        assert torch.allclose(dec.classify(1.5 * z), 1.5 * dec.classify(z), atol=1e-6)

    def test_wrong_stage_count_rejected(self):
        with pytest.raises(ValueError):
            ChangeDecoder(default_decoder_configs((4, 8, 12))[:3], num_classes=6)


class TestAblationSwitches:
    def _params(self, **switches):
        cfgs = default_decoder_configs((4, 8, 12, 16), **switches)
        return count_parameters(ChangeDecoder(cfgs, num_classes=6))

    def test_disabling_never_increases_params(self):
        full = self._params()
        assert self._params(use_multiscale=False) < full
        assert self._params(use_attention=False) < full
        assert self._params(use_fusion=False) < full
        none = self._params(use_multiscale=False, use_attention=False, use_fusion=False)
        assert none < self._params(use_multiscale=False)
        assert none < self._params(use_attention=False)
        assert none < self._params(use_fusion=False)

    def test_disabled_fusion_is_pointwise_projection(self):
        cfg = RefineBlockConfig(in_channels=4, out_channels=8, use_fusion=False)
        block = RefineBlock(cfg)
        assert isinstance(block.fusion, torch.nn.Conv2d)
        assert block.fusion.kernel_size == (1, 1)

    def test_all_switch_combinations_run(self):
        x1, x2 = torch.randn(1, 4, 8, 8), torch.randn(1, 4, 8, 8)
        for ms in (False, True):
            for att in (False, True):
                for fu in (False, True):
                    cfg = RefineBlockConfig(4, 8, use_multiscale=ms, use_attention=att,
                                            use_fusion=fu)
                    assert RefineBlock(cfg)(x1, x2).shape == (1, 8, 8, 8)
