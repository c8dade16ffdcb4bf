"""Reusable network blocks: scan mixing, attention gates, conv residuals."""

from __future__ import annotations

import torch
from torch import nn

from .scan import bidirectional_scan


class ScanBlock(nn.Module):
    """Long-range mixing block with linear cost in sequence length.

    Flattens the map row-major, runs a bidirectional per-channel decayed
    scan (optionally several decay states per channel, averaged), applies a
    bias-free depthwise 3x3 convolution and adds the input back. Zero input
    maps to zero output; the receptive field spans the full sequence.
    """

    def __init__(self, channels: int, state_dim: int = 1, backend: str | None = None):
        super().__init__()
        if state_dim < 1:
            raise ValueError(f"state_dim must be >= 1, got {state_dim}")
        self.channels = channels
        self.state_dim = state_dim
        self.backend = backend
        # spread initial retention factors over sigmoid(1.0)=0.73 .. sigmoid(3.0)=0.95
        init = torch.linspace(1.0, 3.0, state_dim).repeat_interleave(channels)
        self.decay_logit = nn.Parameter(init)
        self.dw = nn.Conv2d(channels, channels, 3, padding=1, groups=channels, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, c, h, w = x.shape
        seq = x.reshape(n, c, h * w)
        if self.state_dim > 1:
            seq = seq.repeat(1, self.state_dim, 1)
        decay = torch.sigmoid(self.decay_logit)
        mixed = bidirectional_scan(seq.contiguous(), decay, backend=self.backend)
        if self.state_dim > 1:
            mixed = mixed.reshape(n, self.state_dim, c, h * w).mean(dim=1)
        mixed = mixed.reshape(n, c, h, w)
        return x + self.dw(mixed)


class ConvBlock(nn.Module):
    """Local-only substitute for ScanBlock with the same shape contract."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.conv(x)


class SqueezeExcite(nn.Module):
    """Channel gate: global average pool, bottleneck MLP, sigmoid."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        if reduction < 1:
            raise ValueError(f"reduction must be >= 1, got {reduction}")
        hidden = max(1, channels // reduction)
        self.fc = nn.Sequential(
            nn.Linear(channels, hidden, bias=True),
            nn.SiLU(),
            nn.Linear(hidden, channels, bias=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, c, _, _ = x.shape
        pooled = x.mean(dim=(2, 3))
        gate = torch.sigmoid(self.fc(pooled)).view(n, c, 1, 1)
        return gate

    def apply_to(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.forward(x)


class CBAM(nn.Module):
    """Channel attention followed by spatial attention (7x7 conv on pooled maps).

    Returns the combined multiplicative gate, broadcastable to the input.
    """

    def __init__(self, channels: int, reduction: int = 4, spatial_kernel: int = 7):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.mlp = nn.Sequential(
            nn.Linear(channels, hidden, bias=True),
            nn.SiLU(),
            nn.Linear(hidden, channels, bias=True),
        )
        self.spatial = nn.Conv2d(2, 1, spatial_kernel, padding=spatial_kernel // 2, bias=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, c, _, _ = x.shape
        avg = self.mlp(x.mean(dim=(2, 3)))
        mx = self.mlp(x.amax(dim=(2, 3)))
        channel_gate = torch.sigmoid(avg + mx).view(n, c, 1, 1)

        refined = x * channel_gate
        pooled = torch.cat(
            [refined.mean(dim=1, keepdim=True), refined.amax(dim=1, keepdim=True)], dim=1
        )
        spatial_gate = torch.sigmoid(self.spatial(pooled))
        return channel_gate * spatial_gate

    def apply_to(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.forward(x)
