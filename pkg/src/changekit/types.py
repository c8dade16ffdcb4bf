"""Shared value types: samples, class taxonomy, prompt records, feature maps."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

IGNORE_LABEL = 255

ENCODER_STRIDES = (4, 8, 16, 32)


class Scene(str, Enum):
    URBAN = "urban"
    SUBURBAN = "suburban"
    RURAL = "rural"
    FOREST = "forest"
    FARMLAND = "farmland"
    WATER = "water"
    MIXED = "mixed"
    UNKNOWN = "unknown"


class Nuisance(str, Enum):
    SHADOW = "shadow"
    ILLUMINATION = "illumination"
    SEASON = "season"
    MISALIGNMENT = "misalignment"
    CLOUD = "cloud"
    SENSOR_NOISE = "sensor_noise"

    @property
    def display_name(self) -> str:
        """Human-readable form used inside prompt strings."""
        return self.value.replace("_", " ")


@dataclass(frozen=True)
class PromptRecord:
    """Per-sample scene context and nuisance factors with confidences."""

    scene: Scene = Scene.UNKNOWN
    nuisances: Tuple[Tuple[Nuisance, float], ...] = ()

    def __post_init__(self):
        seen = set()
        for name, conf in self.nuisances:
            if not isinstance(name, Nuisance):
                raise ValueError(f"unknown nuisance factor: {name!r}")
            if name in seen:
                raise ValueError(f"duplicate nuisance factor: {name.value}")
            seen.add(name)
            if not 0.0 <= conf <= 1.0:
                raise ValueError(f"nuisance confidence out of [0,1]: {conf}")
        if not isinstance(self.scene, Scene):
            raise ValueError(f"unknown scene: {self.scene!r}")

    def to_json(self) -> dict:
        return {
            "scene": self.scene.value,
            "nuisances": [
                {"name": n.value, "confidence": float(c)} for n, c in self.nuisances
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PromptRecord":
        nuis = tuple(
            (Nuisance(item["name"]), float(item["confidence"]))
            for item in obj.get("nuisances", [])
        )
        return cls(scene=Scene(obj.get("scene", "unknown")), nuisances=nuis)


@dataclass(frozen=True)
class ClassEntry:
    id: int
    name: str
    brief_prompt: str
    render_color: Tuple[int, int, int]


@dataclass(frozen=True)
class ClassTaxonomy:
    """Ordered class list for either binary or semantic change detection."""

    mode: str  # "BCD" | "SCD"
    classes: Tuple[ClassEntry, ...]

    def __post_init__(self):
        if self.mode not in ("BCD", "SCD"):
            raise ValueError(f"mode must be BCD or SCD, got {self.mode!r}")
        if not self.classes or self.classes[0].id != 0:
            raise ValueError("class id 0 (no change) must come first")
        for i, entry in enumerate(self.classes):
            if entry.id != i:
                raise ValueError("class ids must be contiguous from 0")
            if not entry.brief_prompt:
                raise ValueError(f"class {i} has an empty brief prompt")
        prompts = [c.brief_prompt for c in self.classes]
        if len(set(prompts)) != len(prompts):
            raise ValueError("brief prompts must be unique")

    def __len__(self) -> int:
        return len(self.classes)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def color_lut(self) -> np.ndarray:
        """(K, 3) uint8 lookup table of render colors."""
        return np.array([c.render_color for c in self.classes], dtype=np.uint8)

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "classes": [
                {
                    "id": c.id,
                    "name": c.name,
                    "brief_prompt": c.brief_prompt,
                    "render_color": list(c.render_color),
                }
                for c in self.classes
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ClassTaxonomy":
        return cls(
            mode=obj["mode"],
            classes=tuple(
                ClassEntry(
                    id=c["id"],
                    name=c["name"],
                    brief_prompt=c["brief_prompt"],
                    render_color=tuple(c["render_color"]),
                )
                for c in obj["classes"]
            ),
        )


_SCD_CLASSES = (
    ClassEntry(0, "No Change", "no change", (0, 0, 0)),
    ClassEntry(1, "Farmland to Bareland", "farmland change to bareland", (255, 0, 0)),
    ClassEntry(2, "Farmland to Building", "farmland change to building", (0, 255, 0)),
    ClassEntry(3, "Farmland to Road", "farmland change to road", (0, 0, 255)),
    ClassEntry(4, "Farmland to Vegetation", "farmland change to vegetation", (255, 255, 0)),
    ClassEntry(5, "Farmland to Water", "farmland change to water", (255, 0, 255)),
)

_BCD_CLASSES = (
    ClassEntry(0, "No Change", "no change", (0, 0, 0)),
    ClassEntry(1, "Change", "significant land cover change", (255, 255, 255)),
)


def default_taxonomy(mode: str) -> ClassTaxonomy:
    """Fixed taxonomy for a detection mode.

    SCD: six farmland conversion classes with distinct saturated render
    colors. BCD: no-change (black) vs change (white).
    """
    if mode == "SCD":
        return ClassTaxonomy(mode="SCD", classes=_SCD_CLASSES)
    if mode == "BCD":
        return ClassTaxonomy(mode="BCD", classes=_BCD_CLASSES)
    raise ValueError(f"unknown mode {mode!r}; expected 'SCD' or 'BCD'")


@dataclass
class BitemporalSample:
    """A co-registered image pair with its pixel label map.

    Images are float arrays of shape (H, W, 3) in [0, 1]; the label is an
    integer (H, W) map of class ids with 255 marking ignored pixels.
    """

    id: str
    image_t1: np.ndarray
    image_t2: np.ndarray
    label: np.ndarray
    prompt: Optional[PromptRecord] = None


def validate_sample(sample: BitemporalSample, taxonomy: ClassTaxonomy) -> List[str]:
    """Check a sample against the shared invariants.

    Returns a list of violation descriptions; an empty list means every
    downstream module accepts the sample.
    """
    violations: List[str] = []
    t1, t2, label = sample.image_t1, sample.image_t2, sample.label

    if t1.ndim != 3 or t1.shape[2] != 3:
        violations.append(f"image_t1 must be HxWx3, got shape {t1.shape}")
    if t2.ndim != 3 or t2.shape[2] != 3:
        violations.append(f"image_t2 must be HxWx3, got shape {t2.shape}")
    if t1.shape[:2] != t2.shape[:2]:
        violations.append(
            f"image shape mismatch: t1 {t1.shape[:2]} vs t2 {t2.shape[:2]}"
        )
    if label.ndim != 2:
        violations.append(f"label must be HxW, got shape {label.shape}")
    elif t1.ndim == 3 and label.shape != t1.shape[:2]:
        violations.append(
            f"label shape {label.shape} does not match image shape {t1.shape[:2]}"
        )

    for name, img in (("image_t1", t1), ("image_t2", t2)):
        if img.size and (img.min() < 0.0 or img.max() > 1.0):
            violations.append(f"{name} values outside [0, 1]")

    if label.size:
        values = np.unique(label)
        bad = values[(values != IGNORE_LABEL) & (values >= taxonomy.num_classes)]
        if bad.size:
            violations.append(
                f"pixel class overflow: label values {bad.tolist()} exceed "
                f"{taxonomy.num_classes - 1} (mode {taxonomy.mode})"
            )
        neg = values[values < 0]
        if neg.size:
            violations.append(f"negative label values: {neg.tolist()}")

    return violations


@dataclass
class FeatureMap:
    """A batched (B, C, h, w) feature tensor with its downsampling factor."""

    data: "object"  # torch.Tensor; kept loose to avoid importing torch here
    scale: int

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ValueError(f"feature map must be 4D (B,C,h,w), got {self.data.ndim}D")
        b, c, h, w = self.data.shape
        if min(c, h, w) <= 0:
            raise ValueError(f"feature map dims must be positive, got {self.data.shape}")

    @property
    def channels(self) -> int:
        return self.data.shape[1]


@dataclass
class FeaturePyramidPair:
    """Per-scale features for the two temporal inputs."""

    t1: Sequence[FeatureMap]
    t2: Sequence[FeatureMap]

    def __post_init__(self):
        if len(self.t1) != len(self.t2):
            raise ValueError("pyramids must have the same number of stages")
        for a, b in zip(self.t1, self.t2):
            if a.data.shape != b.data.shape:
                raise ValueError(
                    f"stage shape mismatch: {tuple(a.data.shape)} vs {tuple(b.data.shape)}"
                )
            if a.scale != b.scale:
                raise ValueError("stage scales differ between temporal streams")

    def swapped(self) -> "FeaturePyramidPair":
        return FeaturePyramidPair(t1=self.t2, t2=self.t1)
