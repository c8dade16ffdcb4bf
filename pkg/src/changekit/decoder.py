"""Per-scale change refinement and top-down decoding.

Each scale runs the same chain on the bitemporal features: a difference
anchor (absolute difference + elementwise maximum), multi-scale grouped
convolutions, joint channel/spatial attention purification, a fusion stage
that folds the original temporal context back in, and a scan+conv
reconstruction. Stages are decoded coarsest-first; each finer stage adds
the upsampled previous output after a pointwise channel match. A bias-free
pointwise head maps the finest feature to class logits at full resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import CBAM, ConvBlock, ScanBlock, SqueezeExcite
from .types import FeatureMap, FeaturePyramidPair


@dataclass
class RefineBlockConfig:
    in_channels: int  # per-temporal-stream channels entering the block
    out_channels: int
    groups: int = 4
    dilation: int = 2
    se_reduction: int = 4
    use_multiscale: bool = True
    use_attention: bool = True
    use_fusion: bool = True
    block: str = "reference_ssm"  # scan+conv reconstruction core
    state_dim: int = 1

    def __post_init__(self):
        if self.in_channels % self.groups:
            raise ValueError(
                f"in_channels ({self.in_channels}) must divide by groups ({self.groups})"
            )
        if self.se_reduction < 1:
            raise ValueError("se_reduction must be >= 1")


def diff_anchor(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Concatenate |a-b| with max(a, b) along channels.

    The magnitude half exposes candidate changes without sign ambiguity;
    the maximum half keeps stable structural responses. Symmetric in its
    arguments.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return torch.cat([(a - b).abs(), torch.maximum(a, b)], dim=1)


class MultiScaleDiff(nn.Module):
    """Parallel plain and dilated grouped 3x3 branches, fused pointwise."""

    def __init__(self, in_channels: int, out_channels: int, groups: int, dilation: int):
        super().__init__()
        if in_channels % groups:
            raise ValueError(
                f"grouped conv needs channels divisible by groups ({in_channels} % {groups})"
            )
        self.local = nn.Conv2d(in_channels, in_channels, 3, padding=1, groups=groups)
        self.dilated = nn.Conv2d(
            in_channels, in_channels, 3, padding=dilation, dilation=dilation, groups=groups
        )
        self.fuse = nn.Conv2d(in_channels * 2, out_channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fuse(torch.cat([self.local(x), self.dilated(x)], dim=1))


class DualAttention(nn.Module):
    """Multiply the input by its channel (SE) and channel-spatial (CBAM)
    gates, computed independently from the same feature, then project."""

    def __init__(self, channels: int, se_reduction: int = 4):
        super().__init__()
        self.se = SqueezeExcite(channels, reduction=se_reduction)
        self.cbam = CBAM(channels, reduction=se_reduction)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(x * self.se(x) * self.cbam(x))


class FuseReduce(nn.Module):
    """Fold the purified difference back together with both temporal streams.

    Compression is a pointwise map applied to the concatenation, with the
    two temporal slots sharing weights so the block is indifferent to
    acquisition order. A 3x3 refinement and an SE recalibration follow.
    """

    def __init__(self, diff_channels: int, temporal_channels: int, out_channels: int,
                 se_reduction: int = 4):
        super().__init__()
        self.compress_diff = nn.Conv2d(diff_channels, out_channels, 1)
        self.compress_temporal = nn.Conv2d(temporal_channels, out_channels, 1, bias=False)
        self.refine = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.se = SqueezeExcite(out_channels, reduction=se_reduction)

    def forward(self, r: torch.Tensor, ia: torch.Tensor, ib: torch.Tensor) -> torch.Tensor:
        if r.shape[2:] != ia.shape[2:] or ia.shape[2:] != ib.shape[2:]:
            raise ValueError("fusion inputs must be spatially aligned")
        # temporal terms are summed first: float addition commutes, so the
        # block is bitwise indifferent to acquisition order
        fused = self.compress_diff(r) + (self.compress_temporal(ia) + self.compress_temporal(ib))
        refined = self.refine(fused)
        return self.se.apply_to(refined)


class ScanConvBlock(nn.Module):
    """Global scan branch plus local 3x3 branch, summed with a residual."""

    def __init__(self, channels: int, block: str = "reference_ssm", state_dim: int = 1):
        super().__init__()
        if block == "reference_ssm":
            self.scan_branch = ScanBlock(channels, state_dim=state_dim)
        else:
            self.scan_branch = ConvBlock(channels)
        self.conv_branch = nn.Conv2d(channels, channels, 3, padding=1, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # scan_branch already carries the residual path
        return self.scan_branch(x) + self.conv_branch(x)


class RefineBlock(nn.Module):
    """One scale of the refinement chain, with ablation switches."""

    def __init__(self, cfg: RefineBlockConfig):
        super().__init__()
        self.cfg = cfg
        anchor_channels = 2 * cfg.in_channels

        if cfg.use_multiscale:
            self.multiscale = MultiScaleDiff(anchor_channels, cfg.out_channels,
                                             cfg.groups, cfg.dilation)
        else:
            self.multiscale = nn.Conv2d(anchor_channels, cfg.out_channels, 1)

        self.attention = DualAttention(cfg.out_channels, cfg.se_reduction) if cfg.use_attention else None

        if cfg.use_fusion:
            self.fusion = FuseReduce(cfg.out_channels, cfg.in_channels, cfg.out_channels,
                                     cfg.se_reduction)
        else:
            self.fusion = nn.Conv2d(cfg.out_channels, cfg.out_channels, 1)

        self.reconstruct = ScanConvBlock(cfg.out_channels, cfg.block, cfg.state_dim)

    def forward(self, ia: torch.Tensor, ib: torch.Tensor) -> torch.Tensor:
        p = diff_anchor(ia, ib)
        m = self.multiscale(p)
        r = self.attention(m) if self.attention is not None else m
        if isinstance(self.fusion, FuseReduce):
            fused = self.fusion(r, ia, ib)
        else:
            fused = self.fusion(r)
        return self.reconstruct(fused)


@dataclass
class DecoderOutput:
    z: FeatureMap  # finest decoder feature, stride 4
    logits: torch.Tensor  # (B, K, H, W) at input resolution


class ChangeDecoder(nn.Module):
    def __init__(self, cfgs: Sequence[RefineBlockConfig], num_classes: int):
        super().__init__()
        if len(cfgs) != 4:
            raise ValueError(f"decoder expects 4 stage configs, got {len(cfgs)}")
        self.cfgs = list(cfgs)
        self.blocks = nn.ModuleList(RefineBlock(c) for c in cfgs)
        # pointwise channel match for the 2x-upsampled coarser output
        self.laterals = nn.ModuleList(
            nn.Conv2d(cfgs[i + 1].out_channels, cfgs[i].out_channels, 1) for i in range(3)
        )
        self.head = nn.Conv2d(cfgs[0].out_channels, num_classes, 1, bias=False)

    def classify(self, z: torch.Tensor) -> torch.Tensor:
        """Bias-free pointwise head, upsampled x4 to input resolution."""
        return F.interpolate(self.head(z), scale_factor=4, mode="bilinear", align_corners=False)

    def forward(self, pyramid: FeaturePyramidPair) -> DecoderOutput:
        if len(pyramid.t1) != 4:
            raise ValueError(f"decoder expects a 4-stage pyramid, got {len(pyramid.t1)}")
        prev = None
        for i in range(3, -1, -1):
            z = self.blocks[i](pyramid.t1[i].data, pyramid.t2[i].data)
            if prev is not None:
                up = F.interpolate(prev, scale_factor=2, mode="bilinear", align_corners=False)
                z = z + self.laterals[i](up)
            prev = z
        out = FeatureMap(prev, scale=4)
        return DecoderOutput(z=out, logits=self.classify(prev))


def default_decoder_configs(
    stage_channels: Sequence[int], widths: Sequence[int] | None = None, **kwargs
) -> List[RefineBlockConfig]:
    widths = list(widths) if widths is not None else list(stage_channels)
    return [
        RefineBlockConfig(in_channels=c, out_channels=w, **kwargs)
        for c, w in zip(stage_channels, widths)
    ]
