"""Disk ingestion and the label preparation protocol.

Dataset layout on disk:

    root/{train,val,test}/A/<id>.png       t1 image, 24-bit RGB
    root/{train,val,test}/B/<id>.png       t2 image, 24-bit RGB
    root/{train,val,test}/label/<id>.png   single-channel 8-bit class ids
    root/<split>/prompts.json              optional id -> prompt record map

Preparation follows the benchmark protocol: non-overlapping patch cropping
(padding with ignore labels when sizes do not divide) and removal of
isolated change regions below a pixel-area threshold.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from .types import (
    IGNORE_LABEL,
    BitemporalSample,
    ClassTaxonomy,
    PromptRecord,
    default_taxonomy,
)

SPLITS = ("train", "val", "test")

# 8-connectivity: diagonal neighbours join a component (keeps thin roads whole)
_STRUCTURE_8 = np.ones((3, 3), dtype=bool)


def crop_to_patches(array: np.ndarray, patch: int, fill=None) -> List[np.ndarray]:
    """Cut an image or label into non-overlapping row-major patches.

    Inputs whose height/width do not divide by `patch` are padded at the
    bottom/right edge; integer 2D inputs (labels) pad with the ignore value
    255, float inputs (images) pad with 0. `fill` overrides the inferred
    pad value.
    """
    if patch <= 0:
        raise ValueError(f"patch size must be positive, got {patch}")
    h, w = array.shape[:2]
    if fill is None:
        is_label = array.ndim == 2 and np.issubdtype(array.dtype, np.integer)
        fill = IGNORE_LABEL if is_label else 0
    pad_h = (-h) % patch
    pad_w = (-w) % patch
    if pad_h or pad_w:
        pad = [(0, pad_h), (0, pad_w)] + [(0, 0)] * (array.ndim - 2)
        array = np.pad(array, pad, mode="constant", constant_values=fill)
    rows = array.shape[0] // patch
    cols = array.shape[1] // patch
    patches = []
    for r in range(rows):
        for c in range(cols):
            patches.append(array[r * patch : (r + 1) * patch, c * patch : (c + 1) * patch].copy())
    return patches


def assemble_patches(patches: List[np.ndarray], rows: int, cols: int) -> np.ndarray:
    """Inverse of `crop_to_patches` for a row-major patch list."""
    if rows * cols != len(patches):
        raise ValueError(f"expected {rows * cols} patches, got {len(patches)}")
    bands = [np.concatenate(patches[r * cols : (r + 1) * cols], axis=1) for r in range(rows)]
    return np.concatenate(bands, axis=0)


def filter_small_regions(label: np.ndarray, min_px: int) -> np.ndarray:
    """Relabel isolated change regions smaller than `min_px` to no-change.

    Components are 8-connected and formed per class; a component is removed
    only when its area is strictly below the threshold. Ignore pixels (255)
    are never touched.
    """
    out = label.copy()
    for cls in np.unique(label):
        if cls == 0 or cls == IGNORE_LABEL:
            continue
        mask = label == cls
        components, n = ndimage.label(mask, structure=_STRUCTURE_8)
        if n == 0:
            continue
        areas = np.bincount(components.ravel())[1:]
        small = np.flatnonzero(areas < min_px) + 1
        if small.size:
            out[np.isin(components, small)] = 0
    return out


@dataclass
class DatasetManifest:
    root: Path
    split: str
    entries: List[str]
    taxonomy: ClassTaxonomy
    prompts: Dict[str, PromptRecord] = field(default_factory=dict)
    rejects: List[Tuple[str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def sample_paths(self, sample_id: str) -> Tuple[Path, Path, Path]:
        base = self.root / self.split
        return (
            base / "A" / f"{sample_id}.png",
            base / "B" / f"{sample_id}.png",
            base / "label" / f"{sample_id}.png",
        )


def load_manifest(
    root, split: str, taxonomy: Optional[ClassTaxonomy] = None
) -> DatasetManifest:
    """Index a dataset split, rejecting ids with missing counterpart files."""
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    root = Path(root)
    taxonomy = taxonomy or default_taxonomy("SCD")
    base = root / split
    folders = {name: base / name for name in ("A", "B", "label")}

    ids_by_folder = {}
    for name, folder in folders.items():
        ids_by_folder[name] = (
            {p.stem for p in folder.glob("*.png")} if folder.is_dir() else set()
        )

    all_ids = set().union(*ids_by_folder.values())
    entries, rejects = [], []
    for sample_id in sorted(all_ids):
        missing = [name for name in ("A", "B", "label") if sample_id not in ids_by_folder[name]]
        if missing:
            rejects.append((sample_id, f"missing {'/'.join(missing)} file"))
        else:
            entries.append(sample_id)

    if not entries:
        warnings.warn(f"no complete samples found under {base}", stacklevel=2)

    prompts: Dict[str, PromptRecord] = {}
    sidecar = base / "prompts.json"
    if sidecar.is_file():
        raw = json.loads(sidecar.read_text())
        prompts = {k: PromptRecord.from_json(v) for k, v in raw.items()}

    return DatasetManifest(
        root=root,
        split=split,
        entries=entries,
        taxonomy=taxonomy,
        prompts=prompts,
        rejects=rejects,
    )


def load_sample(manifest: DatasetManifest, sample_id: str) -> BitemporalSample:
    """Read one sample from disk; 8-bit sources are scaled to [0, 1]."""
    path_a, path_b, path_label = manifest.sample_paths(sample_id)
    t1 = np.asarray(Image.open(path_a).convert("RGB"), dtype=np.float32) / 255.0
    t2 = np.asarray(Image.open(path_b).convert("RGB"), dtype=np.float32) / 255.0
    label = np.asarray(Image.open(path_label), dtype=np.int64)
    if label.ndim == 3:
        label = label[..., 0].astype(np.int64)
    # absent sidecar record means an unconstrained prompt context
    prompt = manifest.prompts.get(sample_id, PromptRecord())
    return BitemporalSample(id=sample_id, image_t1=t1, image_t2=t2, label=label, prompt=prompt)


def save_sample_images(
    directory_a: Path, directory_b: Path, directory_label: Path, sample: BitemporalSample
) -> None:
    """Write a sample as three PNGs following the dataset layout."""
    for d in (directory_a, directory_b, directory_label):
        d.mkdir(parents=True, exist_ok=True)
    img_a = Image.fromarray(np.round(sample.image_t1 * 255.0).astype(np.uint8))
    img_b = Image.fromarray(np.round(sample.image_t2 * 255.0).astype(np.uint8))
    img_l = Image.fromarray(sample.label.astype(np.uint8))
    img_a.save(directory_a / f"{sample.id}.png")
    img_b.save(directory_b / f"{sample.id}.png")
    img_l.save(directory_label / f"{sample.id}.png")
