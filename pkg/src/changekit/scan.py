"""Bidirectional decayed scan with compiled and pure-torch backends.

The compiled Cython kernel is preferred when the extension was built; a
pure-torch loop gives identical results (and gradients, through autograd)
otherwise. The active backend is chosen at import time and can be forced
per call or via the CHANGEKIT_SCAN_BACKEND environment variable.
"""

from __future__ import annotations

import os

import torch

try:
    from . import _scan_cy
except ImportError:  # extension not built; the torch loop takes over
    _scan_cy = None

COMPILED_AVAILABLE = _scan_cy is not None


def default_backend() -> str:
    forced = os.environ.get("CHANGEKIT_SCAN_BACKEND")
    if forced in ("compiled", "torch"):
        return forced
    return "compiled" if COMPILED_AVAILABLE else "torch"


def scan_torch(x: torch.Tensor, decay: torch.Tensor) -> torch.Tensor:
    """Reference implementation: explicit loop over the sequence axis.

    x: (B, C, L); decay: (C,) retention factors in (0, 1). Returns the
    average of the forward and backward exponential-moving-average passes.
    Differentiable through autograd.
    """
    n_batch, n_chan, length = x.shape
    a = decay.view(1, n_chan)
    keep = 1.0 - a

    state = x.new_zeros(n_batch, n_chan)
    fwd = []
    for t in range(length):
        state = a * state + keep * x[:, :, t]
        fwd.append(state)

    state = x.new_zeros(n_batch, n_chan)
    bwd = [None] * length
    for t in range(length - 1, -1, -1):
        state = a * state + keep * x[:, :, t]
        bwd[t] = state

    f = torch.stack(fwd, dim=-1)
    b = torch.stack(bwd, dim=-1)
    return 0.5 * (f + b)


class _CompiledScan(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, decay):
        x_np = x.detach().contiguous().numpy()
        d_np = decay.detach().contiguous().numpy()
        y, f, b = _scan_cy.ema_scan_forward(x_np, d_np)
        ctx.save_for_backward(x, decay, torch.from_numpy(f), torch.from_numpy(b))
        return torch.from_numpy(y)

    @staticmethod
    def backward(ctx, grad_y):
        x, decay, f, b = ctx.saved_tensors
        gx, ga = _scan_cy.ema_scan_backward(
            grad_y.contiguous().numpy(),
            x.detach().contiguous().numpy(),
            f.numpy(),
            b.numpy(),
            decay.detach().contiguous().numpy(),
        )
        return torch.from_numpy(gx), torch.from_numpy(ga)


def bidirectional_scan(x: torch.Tensor, decay: torch.Tensor, backend: str | None = None) -> torch.Tensor:
    """Dispatch the scan to the compiled kernel or the torch loop."""
    if x.ndim != 3:
        raise ValueError(f"scan expects (B, C, L) input, got {tuple(x.shape)}")
    if decay.ndim != 1 or decay.shape[0] != x.shape[1]:
        raise ValueError(
            f"decay must have shape ({x.shape[1]},), got {tuple(decay.shape)}"
        )
    if backend is None:
        backend = default_backend()
    if backend == "compiled":
        if not COMPILED_AVAILABLE:
            raise RuntimeError(
                "compiled scan backend requested but the extension is not built; "
                "run `pip install -e . --no-build-isolation`"
            )
        if x.device.type != "cpu":
            raise RuntimeError("compiled scan backend only supports CPU tensors")
        return _CompiledScan.apply(x, decay)
    if backend == "torch":
        return scan_torch(x, decay)
    raise ValueError(f"unknown scan backend {backend!r}")
