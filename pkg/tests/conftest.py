import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)


def central_diff_max_rel_err(fn, x: torch.Tensor, n_coords: int = 200,
                             h: float = 1e-5, seed: int = 0) -> float:
    """Compare autograd against central finite differences at sampled input
    coordinates; returns the worst relative error."""
    x = x.detach().clone().requires_grad_(True)
    (analytic,) = torch.autograd.grad(fn(x), x)
    analytic = analytic.detach().reshape(-1)
    grad_scale = max(float(analytic.abs().max()), 1e-12)

    flat = x.detach().reshape(-1)
    rng = np.random.default_rng(seed)
    idx = rng.choice(flat.numel(), size=min(n_coords, flat.numel()), replace=False)

    worst = 0.0
    for i in idx:
        xp = flat.clone()
        xm = flat.clone()
        xp[i] += h
        xm[i] -= h
        with torch.no_grad():
            fd = (fn(xp.reshape(x.shape)) - fn(xm.reshape(x.shape))).item() / (2 * h)
        an = float(analytic[i])
        denom = max(abs(fd), abs(an), 1e-6 * grad_scale)
        worst = max(worst, abs(fd - an) / denom)
    return worst
