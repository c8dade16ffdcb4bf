"""Weight-shared hierarchical encoder for the two temporal inputs.

Four stages at strides 4/8/16/32. Each stage stacks long-range mixing
blocks (the scan block by default, a conv-only substitute for ablation)
with a normalized pointwise feed-forward. Both acquisitions run through
the same parameters, so identical inputs produce identical features.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import torch
from torch import nn

from .blocks import ConvBlock, ScanBlock
from .types import ENCODER_STRIDES, FeatureMap, FeaturePyramidPair


@dataclass
class EncoderConfig:
    stage_channels: Tuple[int, int, int, int] = (32, 64, 128, 256)
    block: str = "reference_ssm"  # or "conv_only"
    blocks_per_stage: int = 2
    state_dim: int = 1

    def __post_init__(self):
        if len(self.stage_channels) != 4:
            raise ValueError("encoder needs exactly 4 stages")
        if list(self.stage_channels) != sorted(set(self.stage_channels)):
            raise ValueError("stage channels must be strictly increasing")
        if any(c % 4 for c in self.stage_channels):
            raise ValueError("stage channels must be divisible by 4")
        if self.block not in ("reference_ssm", "conv_only"):
            raise ValueError(f"unknown block kind {self.block!r}")


def _mix_block(channels: int) -> nn.Module:
    return nn.Sequential(
        nn.GroupNorm(4, channels),
        nn.Conv2d(channels, channels * 2, 1),
        nn.SiLU(),
        nn.Conv2d(channels * 2, channels, 1),
    )


class _StageBlock(nn.Module):
    def __init__(self, channels: int, cfg: EncoderConfig):
        super().__init__()
        if cfg.block == "reference_ssm":
            self.core = ScanBlock(channels, state_dim=cfg.state_dim)
        else:
            self.core = ConvBlock(channels)
        self.mix = _mix_block(channels)

    def forward(self, x):
        x = self.core(x)
        return x + self.mix(x)


class SiameseEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig | None = None):
        super().__init__()
        self.cfg = cfg or EncoderConfig()
        chans = self.cfg.stage_channels

        self.stem = nn.Conv2d(3, chans[0], kernel_size=4, stride=4)
        downs = []
        stages = []
        for i, c in enumerate(chans):
            if i > 0:
                downs.append(
                    nn.Sequential(
                        nn.GroupNorm(4, chans[i - 1]),
                        nn.Conv2d(chans[i - 1], c, kernel_size=2, stride=2),
                    )
                )
            stages.append(
                nn.Sequential(*[_StageBlock(c, self.cfg) for _ in range(self.cfg.blocks_per_stage)])
            )
        self.downs = nn.ModuleList(downs)
        self.stages = nn.ModuleList(stages)

    def forward_single(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B,3,H,W) input, got {tuple(x.shape)}")
        if x.shape[2] % 32 or x.shape[3] % 32:
            raise ValueError(
                f"input spatial size must be divisible by 32, got {tuple(x.shape[2:])}"
            )
        feats = []
        h = self.stem(x)
        for i, stage in enumerate(self.stages):
            if i > 0:
                h = self.downs[i - 1](h)
            h = stage(h)
            feats.append(h)
        return feats

    def forward(self, t1: torch.Tensor, t2: torch.Tensor) -> FeaturePyramidPair:
        f1 = self.forward_single(t1)
        f2 = self.forward_single(t2)
        return FeaturePyramidPair(
            t1=[FeatureMap(f, s) for f, s in zip(f1, ENCODER_STRIDES)],
            t2=[FeatureMap(f, s) for f, s in zip(f2, ENCODER_STRIDES)],
        )
