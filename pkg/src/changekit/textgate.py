"""Text-prototype scoring and residual semantic gating.

Category descriptions are embedded once by a frozen text encoder into unit
prototypes. Per batch, scene/nuisance context prompts produce a shared
offset that nudges the prototypes; pixel embeddings of the decoder feature
are scored against the adapted prototypes, and the score map drives a
sigmoid gate applied residually to the feature. The text encoder never
contributes trainable parameters.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .types import ClassTaxonomy, PromptRecord

ENCODER_PATH_ENV = "CHANGEKIT_TEXT_ENCODER"


def category_prompts(taxonomy: ClassTaxonomy) -> List[str]:
    """One category description per class, in class-id order."""
    return [entry.brief_prompt for entry in taxonomy.classes]


def context_prompt(record: PromptRecord) -> str:
    """Render a prompt of the form "Satellite image of {scene} area. ...".

    Nuisance factors with confidence strictly above 0.5 are listed in
    record order; with none, the sentence falls back to "Clear conditions."
    """
    names = [n.display_name for n, conf in record.nuisances if conf > 0.5]
    if names:
        return f"Satellite image of {record.scene.value} area. Ignore {', '.join(names)}."
    return f"Satellite image of {record.scene.value} area. Clear conditions."


def assert_no_category_leakage(prompt: str, taxonomy: ClassTaxonomy) -> None:
    """Context prompts must not name any change category."""
    lowered = prompt.lower()
    for entry in taxonomy.classes:
        for phrase in (entry.brief_prompt, entry.name):
            if phrase.lower() in lowered:
                raise ValueError(
                    f"context prompt leaks category text {phrase!r}: {prompt!r}"
                )


@dataclass
class TextPrototypes:
    matrix: torch.Tensor  # (N, d), rows unit-norm
    adapted: bool = False

    def __post_init__(self):
        # non-finite values mean an upstream numerical blow-up; let them
        # propagate to the loss, whose finiteness check owns divergence
        if not torch.isfinite(self.matrix).all():
            return
        norms = self.matrix.norm(dim=1)
        if not torch.allclose(norms, torch.ones_like(norms), atol=1e-5):
            raise ValueError("prototype rows must be unit-norm")


@dataclass
class TextEncoderHandle:
    """Frozen string-to-vector encoder.

    kind "deterministic_stub" expands a seeded hash of each string into a
    unit vector: reproducible everywhere, no weights needed. kind
    "pretrained_frozen" loads a CLIP-style text tower from a local
    weights path (or the CHANGEKIT_TEXT_ENCODER environment variable).
    """

    name: str = "stub"
    dim: int = 512
    kind: str = "deterministic_stub"
    weights_path: str | None = None
    _cache: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    _model: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.dim < 8:
            raise ValueError(f"embedding dim must be >= 8, got {self.dim}")
        if self.kind not in ("deterministic_stub", "pretrained_frozen"):
            raise ValueError(f"unknown text encoder kind {self.kind!r}")

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        """Embed strings to a (len(texts), dim) float32 array."""
        out = np.empty((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            if text not in self._cache:
                self._cache[text] = self._encode_one(text)
            out[i] = self._cache[text]
        return out

    def _encode_one(self, text: str) -> np.ndarray:
        if self.kind == "deterministic_stub":
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            seed = int.from_bytes(digest[:8], "little")
            vec = np.random.default_rng(seed).standard_normal(self.dim).astype(np.float32)
            return vec / np.linalg.norm(vec)
        return self._encode_pretrained(text)

    def _encode_pretrained(self, text: str) -> np.ndarray:
        if self._model is None:
            path = self.weights_path or os.environ.get(ENCODER_PATH_ENV)
            if not path or not os.path.isdir(path):
                raise FileNotFoundError(
                    "pretrained text encoder requested but no local weights found; "
                    f"set weights_path or ${ENCODER_PATH_ENV} (prompt: {text!r})"
                )
            from transformers import AutoTokenizer, CLIPTextModelWithProjection

            tokenizer = AutoTokenizer.from_pretrained(path)
            model = CLIPTextModelWithProjection.from_pretrained(path)
            model.eval()
            for p in model.parameters():
                p.requires_grad_(False)
            self._model = (tokenizer, model)
        tokenizer, model = self._model
        with torch.no_grad():
            tokens = tokenizer([text], padding=True, return_tensors="pt")
            embed = model(**tokens).text_embeds[0]
        return embed.numpy().astype(np.float32)


def category_prototypes(
    prompts: Sequence[str], encoder: TextEncoderHandle,
    _memo: Dict[tuple, TextPrototypes] = {},
) -> TextPrototypes:
    """Unit-normalized prototype matrix, memoized per (encoder, prompts).

    The key uses the encoder's configuration rather than its object id:
    equally configured encoders embed identically, and object ids can be
    recycled across instances.
    """
    if not prompts:
        raise ValueError("prompt list must be nonempty")
    key = (encoder.kind, encoder.name, encoder.dim, encoder.weights_path, tuple(prompts))
    if key not in _memo:
        raw = torch.from_numpy(encoder.encode(list(prompts)))
        matrix = raw / raw.norm(dim=1, keepdim=True).clamp_min(1e-12)
        _memo[key] = TextPrototypes(matrix=matrix, adapted=False)
    return _memo[key]


class SemanticGate(nn.Module):
    """Vision-language arbitration head over the decoder feature.

    Holds the learnable pieces: the pixel projection into the text
    embedding space, the context-offset MLP, the prototype adaptation
    scale, the similarity temperature, and the (zero-initialized) gate
    projection. The frozen text encoder is attached as a plain attribute
    so it never appears among trainable parameters.
    """

    def __init__(self, feature_channels: int, taxonomy: ClassTaxonomy,
                 encoder: TextEncoderHandle, per_channel_gate: bool = False):
        super().__init__()
        self.taxonomy = taxonomy
        self.encoder = encoder
        dim = encoder.dim
        num_classes = taxonomy.num_classes

        self.proj = nn.Conv2d(feature_channels, dim, 1)
        self.alpha = nn.Parameter(torch.tensor(0.1))
        self.gamma = nn.Parameter(torch.tensor(10.0))
        hidden = max(1, dim // 4)
        self.mlp = nn.Sequential(
            nn.Linear(dim, hidden), nn.SiLU(), nn.Linear(hidden, dim)
        )
        # single spatial gate broadcast over channels by default; the
        # per-channel variant gates each feature channel separately.
        # zero-initialized either way: sigmoid(0) = 0.5 keeps the gated and
        # ungated argmax identical at the start of training
        gate_out = feature_channels if per_channel_gate else 1
        self.gate_proj = nn.Conv2d(num_classes, gate_out, 1)
        nn.init.zeros_(self.gate_proj.weight)
        nn.init.zeros_(self.gate_proj.bias)

        self._base_prompts = category_prompts(taxonomy)

    @property
    def dtype(self) -> torch.dtype:
        return self.alpha.dtype

    def base_prototypes(self) -> TextPrototypes:
        return category_prototypes(self._base_prompts, self.encoder)

    def context_offset(self, input_prompts: Sequence[str]) -> torch.Tensor:
        """Shared offset vector from the batch of context prompts."""
        if not input_prompts:
            raise ValueError("context offset needs at least one prompt")
        for prompt in input_prompts:
            assert_no_category_leakage(prompt, self.taxonomy)
        raw = torch.from_numpy(self.encoder.encode(list(input_prompts))).to(self.dtype)
        raw = raw / raw.norm(dim=1, keepdim=True).clamp_min(1e-12)
        return self.mlp(raw.mean(dim=0))

    def adapt_prototypes(self, protos: TextPrototypes, delta: torch.Tensor) -> TextPrototypes:
        """Residually shift prototypes by alpha*delta and re-normalize rows."""
        matrix = protos.matrix.to(self.dtype)
        offset = self.alpha * delta
        # outside autograd a zero offset short-circuits to the exact input;
        # under grad the full expression keeps alpha/delta differentiable
        if not offset.requires_grad and not bool(offset.any()):
            return TextPrototypes(matrix=matrix, adapted=True)
        shifted = matrix + offset.unsqueeze(0)
        norms = shifted.norm(dim=1, keepdim=True)
        shifted = shifted / norms.clamp_min(1e-12)
        if not torch.isfinite(norms).all():
            # an overflowed norm silently divides to zero rows; surface the
            # blow-up as NaN so the loss finiteness check reports divergence
            shifted = torch.where(torch.isfinite(norms), shifted, float("nan"))
        return TextPrototypes(matrix=shifted, adapted=True)

    def score_map(self, z: torch.Tensor, protos: TextPrototypes) -> torch.Tensor:
        """Temperature-scaled cosine scores, shape (B, N, h, w)."""
        v = self.proj(z)
        v = v / v.norm(dim=1, keepdim=True).clamp_min(1e-12)
        return self.gamma * torch.einsum("bdhw,nd->bnhw", v, protos.matrix.to(v.dtype))

    def apply_gate(self, z: torch.Tensor, scores: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Residual gating: z + z * sigmoid(pointwise(scores)).

        Returns (gated feature, gate map). The residual form keeps every
        channel between 1x and 2x its original magnitude, so an imperfect
        text branch can never erase a detected change.
        """
        gate = torch.sigmoid(self.gate_proj(scores))
        return z + z * gate, gate

    def forward(self, z: torch.Tensor, input_prompts: Sequence[str]):
        delta = self.context_offset(input_prompts)
        protos = self.adapt_prototypes(self.base_prototypes(), delta)
        scores = self.score_map(z, protos)
        gated, gate = self.apply_gate(z, scores)
        return gated, scores, gate
