"""End-to-end model: siamese encoder, refinement decoder, semantic gate.

The classification head is shared between the gated and ungated paths;
because it is bias-free and the gate starts neutral (0.5 everywhere), a
freshly initialized model predicts identically with or without gating.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import torch
from torch import nn

from .decoder import ChangeDecoder, DecoderOutput, default_decoder_configs
from .encoder import EncoderConfig, SiameseEncoder
from .textgate import SemanticGate, TextEncoderHandle, context_prompt
from .types import ClassTaxonomy, FeatureMap, PromptRecord, default_taxonomy


@dataclass
class DecoderConfig:
    widths: Optional[Tuple[int, int, int, int]] = None  # defaults to encoder channels
    groups: int = 4
    se_reduction: int = 4
    use_multiscale: bool = True
    use_attention: bool = True
    use_fusion: bool = True
    block: str = "reference_ssm"
    per_channel_gate: bool = False


@dataclass
class ModelOutput:
    logits: torch.Tensor  # gated prediction, (B, K, H, W)
    logits_ungated: torch.Tensor
    z: FeatureMap
    scores: torch.Tensor  # (B, N, h, w) at the feature stride
    gate: torch.Tensor  # (B, 1, h, w)


class ChangeDetector(nn.Module):
    def __init__(
        self,
        taxonomy: ClassTaxonomy | None = None,
        encoder_cfg: EncoderConfig | None = None,
        decoder_cfg: DecoderConfig | None = None,
        text_encoder: TextEncoderHandle | None = None,
    ):
        super().__init__()
        self.taxonomy = taxonomy or default_taxonomy("SCD")
        self.encoder_cfg = encoder_cfg or EncoderConfig()
        self.decoder_cfg = decoder_cfg or DecoderConfig()
        text_encoder = text_encoder or TextEncoderHandle()

        block_cfgs = default_decoder_configs(
            self.encoder_cfg.stage_channels,
            self.decoder_cfg.widths,
            groups=self.decoder_cfg.groups,
            se_reduction=self.decoder_cfg.se_reduction,
            use_multiscale=self.decoder_cfg.use_multiscale,
            use_attention=self.decoder_cfg.use_attention,
            use_fusion=self.decoder_cfg.use_fusion,
            block=self.decoder_cfg.block,
            state_dim=self.encoder_cfg.state_dim,
        )
        self.encoder = SiameseEncoder(self.encoder_cfg)
        self.decoder = ChangeDecoder(block_cfgs, self.taxonomy.num_classes)
        self.gate = SemanticGate(block_cfgs[0].out_channels, self.taxonomy, text_encoder,
                                 per_channel_gate=self.decoder_cfg.per_channel_gate)

    def forward(
        self, t1: torch.Tensor, t2: torch.Tensor, prompts: Optional[Sequence[str]] = None
    ) -> ModelOutput:
        if prompts is None:
            prompts = [context_prompt(PromptRecord())] * t1.shape[0]
        pyramid = self.encoder(t1, t2)
        decoded: DecoderOutput = self.decoder(pyramid)
        z = decoded.z.data
        gated, scores, gate = self.gate(z, prompts)
        return ModelOutput(
            logits=self.decoder.classify(gated),
            logits_ungated=decoded.logits,
            z=decoded.z,
            scores=scores,
            gate=gate,
        )

    def predict(self, t1, t2, prompts=None) -> torch.Tensor:
        """Per-pixel class ids from the gated path."""
        with torch.no_grad():
            out = self.forward(t1, t2, prompts)
        return out.logits.argmax(dim=1)


def count_parameters(model: nn.Module) -> int:
    """Trainable scalars; the frozen text encoder holds none by design."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
