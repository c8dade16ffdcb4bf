"""Synthetic bitemporal dataset with phenology-style pseudo-changes.

Backgrounds are striped value-noise fields resembling crop rows. The second
acquisition starts as a copy of the first, receives geometric insertions
labeled with their conversion class (rectangles for buildings, wide
polylines for roads, elliptical blobs for bareland / vegetation / water),
and, on a configurable fraction of samples, a global illumination jitter
that changes no label (a pseudo-change). Everything is deterministic given
the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Sequence, Tuple

import numpy as np

from .data import DatasetManifest, filter_small_regions, load_manifest, save_sample_images
from .types import BitemporalSample, Nuisance, PromptRecord, Scene, default_taxonomy

# class id -> fill color of the inserted region, chosen to be separable yet
# plausible under +-25% channel gain jitter
_CLASS_COLORS = {
    1: (0.62, 0.47, 0.33),  # bareland: dry soil
    2: (0.82, 0.80, 0.78),  # building: bright roof
    3: (0.42, 0.42, 0.44),  # road: asphalt
    4: (0.08, 0.34, 0.12),  # vegetation: dense canopy
    5: (0.13, 0.25, 0.55),  # water: pond
}


@dataclass
class SynthConfig:
    n_samples: int = 16
    patch_size: int = 256
    seed: int = 0
    pseudo_change_rate: float = 0.3
    shape_classes: Tuple[int, ...] = (1, 2, 3, 4, 5)
    min_region_px: int = 100

    def __post_init__(self):
        if self.patch_size < 32:
            raise ValueError(f"patch_size must be >= 32, got {self.patch_size}")
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")
        if not 0.0 <= self.pseudo_change_rate <= 1.0:
            raise ValueError("pseudo_change_rate must lie in [0, 1]")
        bad = [c for c in self.shape_classes if c not in _CLASS_COLORS]
        if bad:
            raise ValueError(f"shape_classes must be change classes 1..5, got {bad}")


def _value_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    """Smooth noise in [0,1]: a coarse random grid upsampled bilinearly."""
    grid = rng.random((cells + 1, cells + 1))
    coords = np.linspace(0, cells, size)
    i = np.minimum(coords.astype(int), cells - 1)
    f = coords - i
    top = grid[np.ix_(i, i)] * (1 - f)[None, :] + grid[np.ix_(i, i + 1)] * f[None, :]
    bot = grid[np.ix_(i + 1, i)] * (1 - f)[None, :] + grid[np.ix_(i + 1, i + 1)] * f[None, :]
    return top * (1 - f)[:, None] + bot * f[:, None]


def _field_background(rng: np.random.Generator, size: int) -> np.ndarray:
    """Striped farmland texture: crop-row bands modulated by value noise."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    theta = rng.uniform(0, np.pi)
    period = rng.uniform(8.0, 24.0)
    phase = rng.uniform(0, 2 * np.pi)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
    noise = _value_noise(rng, size, cells=8)

    base = np.array([0.30, 0.40, 0.22]) + rng.uniform(-0.05, 0.05, size=3)
    shade = 0.82 + 0.12 * stripes + 0.10 * noise
    img = base[None, None, :] * shade[:, :, None]
    return np.clip(img, 0.0, 1.0)


def _draw_rectangle(rng, mask: np.ndarray) -> None:
    size = mask.shape[0]
    w = int(rng.integers(16, 44))
    h = int(rng.integers(14, 40))
    x0 = int(rng.integers(4, max(5, size - w - 4)))
    y0 = int(rng.integers(4, max(5, size - h - 4)))
    mask[y0 : y0 + h, x0 : x0 + w] = True


def _draw_blob(rng, mask: np.ndarray) -> None:
    size = mask.shape[0]
    rx = rng.uniform(12, 30)
    ry = rng.uniform(12, 30)
    cx = rng.uniform(rx + 2, size - rx - 2)
    cy = rng.uniform(ry + 2, size - ry - 2)
    ang = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    u = (xx - cx) * np.cos(ang) + (yy - cy) * np.sin(ang)
    v = -(xx - cx) * np.sin(ang) + (yy - cy) * np.cos(ang)
    mask |= (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _draw_polyline(rng, mask: np.ndarray) -> None:
    """A road crossing the whole patch: two segments with one bend."""
    size = mask.shape[0]
    width = rng.uniform(8.0, 13.0)
    vertical = rng.random() < 0.5
    a = np.array([rng.uniform(0, size - 1), 0.0])
    b = np.array([rng.uniform(0, size - 1), float(size - 1)])
    if not vertical:
        a, b = a[::-1], b[::-1]
    mid = (a + b) / 2 + rng.uniform(-size / 6, size / 6, size=2)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    pts = np.stack([xx, yy], axis=-1)
    for p, q in ((a, mid), (mid, b)):
        d = q - p
        t = np.clip(((pts - p) @ d) / max(float(d @ d), 1e-9), 0.0, 1.0)
        closest = p + t[..., None] * d
        dist = np.linalg.norm(pts - closest, axis=-1)
        mask |= dist <= width / 2


_DRAWERS = {1: _draw_blob, 2: _draw_rectangle, 3: _draw_polyline, 4: _draw_blob, 5: _draw_blob}


def _make_sample(
    rng: np.random.Generator, cfg: SynthConfig, sample_id: str, classes: Sequence[int], jitter: bool
) -> Tuple[BitemporalSample, PromptRecord]:
    size = cfg.patch_size
    t1 = _field_background(rng, size)
    t2 = t1.copy()
    label = np.zeros((size, size), dtype=np.int64)

    for cls in classes:
        mask = np.zeros((size, size), dtype=bool)
        _DRAWERS[cls](rng, mask)
        label[mask] = cls

    # clipping at the border can shave a shape below the area threshold;
    # filtering the label first keeps image changes and labels congruent
    label = filter_small_regions(label, cfg.min_region_px)
    for cls in dict.fromkeys(classes):
        region = label == cls
        if not region.any():
            continue
        color = np.array(_CLASS_COLORS[cls])
        texture = 1.0 + 0.06 * (_value_noise(rng, size, cells=16) - 0.5)
        t2[region] = np.clip(color[None, :] * texture[region, None], 0.0, 1.0)

    nuisances: Tuple[Tuple[Nuisance, float], ...] = ()
    if jitter:
        gains = rng.uniform(0.75, 1.25, size=3)
        shift = rng.uniform(-0.08, 0.08)
        t2 = np.clip(t2 * gains[None, None, :] + shift, 0.0, 1.0)
        nuisances = ((Nuisance.ILLUMINATION, 0.9),)
    prompt = PromptRecord(scene=Scene.FARMLAND, nuisances=nuisances)
    sample = BitemporalSample(
        id=sample_id,
        image_t1=t1.astype(np.float32),
        image_t2=t2.astype(np.float32),
        label=label,
        prompt=prompt,
    )
    return sample, prompt


def _write_split(root: Path, split: str, n: int, cfg: SynthConfig, split_seed: int) -> None:
    rng = np.random.default_rng([cfg.seed, split_seed])
    base = root / split
    prompts: Dict[str, dict] = {}
    classes = list(cfg.shape_classes)
    for i in range(n):
        sample_id = f"{split}_{i:04d}"
        n_shapes = int(rng.integers(1, 4))
        # rotate through the class list so every class shows up early
        chosen = [classes[(i + k) % len(classes)] for k in range(n_shapes)]
        jitter = rng.random() < cfg.pseudo_change_rate
        sample, prompt = _make_sample(rng, cfg, sample_id, chosen, jitter)
        save_sample_images(base / "A", base / "B", base / "label", sample)
        prompts[sample_id] = prompt.to_json()
    (base / "prompts.json").write_text(json.dumps(prompts, indent=1, sort_keys=True))


def generate_synthetic(cfg: SynthConfig, root) -> DatasetManifest:
    """Write a complete train/val/test dataset under `root`.

    The train split holds `cfg.n_samples` pairs; val and test each hold a
    quarter of that (at least 2). Returns the train manifest.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    aux = max(2, cfg.n_samples // 4)
    for split_seed, (split, n) in enumerate(
        (("train", cfg.n_samples), ("val", aux), ("test", aux))
    ):
        _write_split(root, split, n, cfg, split_seed)
    return load_manifest(root, "train", default_taxonomy("SCD"))
