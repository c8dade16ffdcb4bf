import torch

from changekit.encoder import EncoderConfig
from changekit.network import ChangeDetector, DecoderConfig, count_parameters
from changekit.textgate import TextEncoderHandle
from changekit.types import default_taxonomy

from conftest import central_diff_max_rel_err

MICRO_ENC = EncoderConfig(stage_channels=(4, 8, 12, 16), blocks_per_stage=1)


def micro_model(mode="SCD", dim=16, **decoder_kwargs) -> ChangeDetector:
    return ChangeDetector(
        default_taxonomy(mode),
        MICRO_ENC,
        DecoderConfig(**decoder_kwargs),
        TextEncoderHandle(dim=dim),
    )


class TestForward:
    def test_output_shapes(self):
        model = micro_model()
        out = model(torch.rand(2, 3, 64, 64), torch.rand(2, 3, 64, 64))
        assert out.logits.shape == (2, 6, 64, 64)
        assert out.logits_ungated.shape == (2, 6, 64, 64)
        assert out.scores.shape == (2, 6, 16, 16)
        assert out.gate.shape == (2, 1, 16, 16)
        assert out.z.data.shape == (2, 4, 16, 16)

    def test_bcd_mode(self):
        model = micro_model(mode="BCD")
        out = model(torch.rand(1, 3, 32, 32), torch.rand(1, 3, 32, 32))
        assert out.logits.shape == (1, 2, 32, 32)

    def test_default_prompt_used_when_absent(self):
        model = micro_model()
        x = torch.rand(1, 3, 32, 32)
        a = model(x, x).logits
        b = model(x, x, ["Satellite image of unknown area. Clear conditions."]).logits
        assert torch.equal(a, b)

    def test_swap_invariance(self):
        model = micro_model()
        t1, t2 = torch.rand(1, 3, 64, 64), torch.rand(1, 3, 64, 64)
        assert torch.equal(model(t1, t2).logits, model(t2, t1).logits)


class TestGateNeutrality:
    def test_argmax_identical_at_init(self):
        # zero-initialized gate projection + bias-free head: the gated path
        # scales logits by exactly 1.5, which argmax ignores
        for seed in range(20):
            torch.manual_seed(seed)
            model = micro_model()
            t1, t2 = torch.rand(1, 3, 32, 32), torch.rand(1, 3, 32, 32)
            out = model(t1, t2)
            assert torch.equal(out.logits.argmax(1), out.logits_ungated.argmax(1))

    def test_gated_logits_are_scaled_ungated(self):
        model = micro_model()
        out = model(torch.rand(1, 3, 32, 32), torch.rand(1, 3, 32, 32))
        assert torch.allclose(out.logits, 1.5 * out.logits_ungated, atol=1e-5)

    def test_neutrality_broken_after_gate_training(self):
        model = micro_model()
        with torch.no_grad():
            model.gate.gate_proj.weight.normal_(std=2.0)
        out = model(torch.rand(1, 3, 32, 32), torch.rand(1, 3, 32, 32))
        assert not torch.allclose(out.logits, 1.5 * out.logits_ungated, atol=1e-5)

    def test_per_channel_gate_variant(self):
        model = micro_model(per_channel_gate=True)
        out = model(torch.rand(1, 3, 32, 32), torch.rand(1, 3, 32, 32))
        assert out.gate.shape == (1, 4, 8, 8)  # one gate per feature channel
        # still neutral at zero initialization
        assert torch.equal(out.logits.argmax(1), out.logits_ungated.argmax(1))


class TestParameterCounts:
    def test_text_dim_grows_gate_only(self):
        small = count_parameters(micro_model(dim=16))
        large = count_parameters(micro_model(dim=64))
        assert large > small

    def test_ablation_monotonicity(self):
        full = count_parameters(micro_model())
        assert count_parameters(micro_model(use_multiscale=False)) < full
        assert count_parameters(micro_model(use_attention=False)) < full
        assert count_parameters(micro_model(use_fusion=False)) < full


def test_end_to_end_gradient_fidelity():
    """Analytic input gradients through encoder, refinement chain, gate and
    head agree with central finite differences in double precision."""
    torch.manual_seed(2)
    model = micro_model().double()
    t1 = torch.rand(1, 3, 32, 32, dtype=torch.float64)
    t2 = torch.rand(1, 3, 32, 32, dtype=torch.float64)
    prompts = ["Satellite image of farmland area. Ignore illumination."]
    weights = torch.randn(1, 6, 32, 32, dtype=torch.float64)

    def fn(x):
        return (model(t1, x, prompts).logits * weights).sum()

    err = central_diff_max_rel_err(fn, t2, n_coords=50, h=1e-5)
    assert err < 1e-4, f"max relative error {err}"
