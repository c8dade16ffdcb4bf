"""Training and evaluation harness.

Optimization follows AdamW with cosine-annealed learning rate decayed to
zero across the configured epochs. Each step supervises the gated
prediction with the CE+Dice main loss and, on hard pixels selected from
the detached prediction confidence, the upsampled semantic score map with
the auxiliary CE. Runs are deterministic for a fixed seed on one worker.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch.optim import AdamW
from torch.optim.lr_scheduler import CosineAnnealingLR

from .data import DatasetManifest, load_sample
from .encoder import EncoderConfig
from .losses import LossConfig, aux_loss, hard_mask, main_loss, total_loss
from .metrics import ConfusionMatrix, MetricsReport, accumulate, build_report
from .network import ChangeDetector, DecoderConfig, ModelOutput, count_parameters
from .textgate import TextEncoderHandle, context_prompt
from .types import ClassTaxonomy, PromptRecord, default_taxonomy

CHECKPOINT_VERSION = "changekit-ckpt-1"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TextConfig:
    kind: str = "stub"  # "stub" | "pretrained"
    dim: int = 512
    weights: Optional[str] = None

    def build(self) -> TextEncoderHandle:
        if self.kind == "stub":
            return TextEncoderHandle(name="stub", dim=self.dim, kind="deterministic_stub")
        if self.kind == "pretrained":
            return TextEncoderHandle(
                name="clip", dim=self.dim, kind="pretrained_frozen", weights_path=self.weights
            )
        raise ValueError(f"unknown text encoder kind {self.kind!r}")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 300
    max_steps: Optional[int] = None
    batch_size: int = 8
    seed: int = 0
    mode: str = "SCD"
    augment_flips: bool = False
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    text: TextConfig = field(default_factory=TextConfig)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")

    def build_model(self, taxonomy: Optional[ClassTaxonomy] = None) -> ChangeDetector:
        taxonomy = taxonomy or default_taxonomy(self.mode)
        return ChangeDetector(taxonomy, self.encoder, self.decoder, self.text.build())


def synthetic_preset(seed: int = 7) -> TrainConfig:
    """Desk-scale settings: a small model that overfits a synthetic set in
    a couple of minutes of CPU time."""
    return TrainConfig(
        lr=3e-3,
        epochs=20,
        batch_size=8,
        seed=seed,
        encoder=EncoderConfig(stage_channels=(8, 16, 32, 48)),
        decoder=DecoderConfig(widths=(16, 24, 32, 48)),
        text=TextConfig(kind="stub", dim=64),
    )


def full_preset() -> TrainConfig:
    """Full-scale settings: the reference training protocol (AdamW at 1e-4,
    cosine annealing, 300 epochs) with the large channel configuration."""
    return TrainConfig(lr=1e-4, epochs=300, batch_size=8)


@dataclass
class Checkpoint:
    version: str
    state_dict: Dict[str, torch.Tensor]
    config: dict
    taxonomy: dict
    epoch: int
    best: dict

    def payload(self) -> dict:
        return {
            "version": self.version,
            "state_dict": self.state_dict,
            "config": self.config,
            "taxonomy": self.taxonomy,
            "epoch": self.epoch,
            "best": self.best,
        }


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    # Byte-determinism of save -> load -> save: weights go in as numpy
    # arrays (torch storages would embed their memory address as a key)
    # and all metadata is folded into one JSON string (separate strings
    # would pickle as identity-based memo references on the first save
    # but not after a load).
    meta = ckpt.payload()
    state = meta.pop("state_dict")
    payload = {
        "meta_json": json.dumps(meta, sort_keys=True),
        "state": {k: v.detach().cpu().contiguous().numpy() for k, v in state.items()},
    }
    with open(path, "wb") as f:
        torch.save(payload, f, _use_new_zipfile_serialization=False)


def load_checkpoint(path) -> Checkpoint:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    meta = json.loads(payload["meta_json"])
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
    state = {k: torch.from_numpy(v.copy()) for k, v in payload["state"].items()}
    return Checkpoint(state_dict=state, **meta)


def config_from_dict(obj: dict) -> TrainConfig:
    obj = copy.deepcopy(obj)
    obj["encoder"] = EncoderConfig(**{**obj.get("encoder", {}),
                                      "stage_channels": tuple(obj["encoder"]["stage_channels"])})
    dec = obj.get("decoder", {})
    if dec.get("widths") is not None:
        dec["widths"] = tuple(dec["widths"])
    obj["decoder"] = DecoderConfig(**dec)
    obj["loss"] = LossConfig(**obj.get("loss", {}))
    obj["text"] = TextConfig(**obj.get("text", {}))
    return TrainConfig(**obj)


def model_from_checkpoint(ckpt: Checkpoint) -> ChangeDetector:
    cfg = config_from_dict(ckpt.config)
    taxonomy = ClassTaxonomy.from_json(ckpt.taxonomy)
    model = cfg.build_model(taxonomy)
    model.load_state_dict(ckpt.state_dict)
    model.eval()
    return model


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: ChangeDetector
    loss_history: List[float]
    lr_history: List[float]
    val_history: List[float]


def _to_tensors(sample) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor, str]:
    t1 = torch.from_numpy(np.ascontiguousarray(sample.image_t1.transpose(2, 0, 1)))
    t2 = torch.from_numpy(np.ascontiguousarray(sample.image_t2.transpose(2, 0, 1)))
    label = torch.from_numpy(sample.label.astype(np.int64))
    prompt = context_prompt(sample.prompt or PromptRecord())
    return t1, t2, label, prompt


def _load_split(manifest: DatasetManifest):
    return [_to_tensors(load_sample(manifest, sid)) for sid in manifest.entries]


def _flip(t: torch.Tensor, horizontal: bool) -> torch.Tensor:
    axis = -1 if horizontal else -2
    return torch.flip(t, dims=(axis,))


def compute_losses(out: ModelOutput, label: torch.Tensor, cfg: LossConfig):
    """Main, auxiliary, and total loss for one batch."""
    main = main_loss(out.logits, label, cfg)
    if cfg.lambda_aux > 0:
        mask = hard_mask(out.logits, label, cfg)
        scores_up = F.interpolate(
            out.scores, size=label.shape[-2:], mode="bilinear", align_corners=False
        )
        aux = aux_loss(scores_up, label, mask, cfg)
    else:
        aux = torch.zeros((), dtype=main.dtype)
    return main, aux, total_loss(main, aux, cfg)


def train(
    cfg: TrainConfig,
    manifest: DatasetManifest,
    val_manifest: Optional[DatasetManifest] = None,
    out_dir=None,
    quiet: bool = False,
) -> TrainResult:
    if not manifest.entries:
        raise ValueError("training manifest is empty")
    torch.manual_seed(cfg.seed)
    model = cfg.build_model(manifest.taxonomy)
    model.train()

    opt = AdamW(
        model.parameters(),
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        betas=(cfg.beta1, cfg.beta2),
    )
    sched = CosineAnnealingLR(opt, T_max=cfg.epochs, eta_min=0.0)

    data = _load_split(manifest)
    loss_history: List[float] = []
    lr_history: List[float] = []
    val_history: List[float] = []
    best = {"metric": "binary_f1", "value": -1.0, "epoch": -1}
    best_state = None
    step = 0
    done = False

    for epoch in range(cfg.epochs):
        lr_history.append(opt.param_groups[0]["lr"])
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(data))
        flip_rng = np.random.default_rng([cfg.seed, epoch, 1])
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            t1s, t2s, labels, prompts = [], [], [], []
            for i in idx:
                t1, t2, label, prompt = data[i]
                if cfg.augment_flips:
                    if flip_rng.random() < 0.5:
                        t1, t2, label = _flip(t1, True), _flip(t2, True), _flip(label, True)
                    if flip_rng.random() < 0.5:
                        t1, t2, label = _flip(t1, False), _flip(t2, False), _flip(label, False)
                t1s.append(t1)
                t2s.append(t2)
                labels.append(label)
                prompts.append(prompt)
            batch_t1 = torch.stack(t1s)
            batch_t2 = torch.stack(t2s)
            batch_label = torch.stack(labels)

            out = model(batch_t1, batch_t2, prompts)
            main, aux, loss = compute_losses(out, batch_label, cfg.loss)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at step {step} (epoch {epoch}): "
                    f"main={float(main.detach())}, aux={float(aux.detach())}, "
                    f"lr={opt.param_groups[0]['lr']}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_history.append(float(loss.detach()))
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
        sched.step()

        if val_manifest is not None and val_manifest.entries:
            report = evaluate_model(model, val_manifest)
            val_history.append(report.f1)
            if report.f1 > best["value"]:
                best = {"metric": "binary_f1", "value": report.f1, "epoch": epoch}
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            model.train()
        if not quiet:
            msg = f"epoch {epoch + 1}/{cfg.epochs} loss {loss_history[-1]:.4f}"
            if val_history:
                msg += f" val_f1 {val_history[-1]:.4f}"
            print(msg)
        if done:
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()

    ckpt = Checkpoint(
        version=CHECKPOINT_VERSION,
        state_dict={k: v.detach().clone() for k, v in model.state_dict().items()},
        config=asdict(cfg),
        taxonomy=manifest.taxonomy.to_json(),
        epoch=epoch,
        best=best,
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ckpt, out_dir / "checkpoint.pt")
    return TrainResult(ckpt, model, loss_history, lr_history, val_history)


def evaluate_model(
    model: ChangeDetector,
    manifest: DatasetManifest,
    batch_size: int = 4,
    render_dir=None,
    oracle: bool = False,
) -> MetricsReport:
    """Stream a split through the model and report confusion-derived metrics.

    `oracle` substitutes the ground truth for the prediction (a debugging
    path that must score 1.0 everywhere).
    """
    from .render import render_prediction  # local import to avoid a cycle

    taxonomy = manifest.taxonomy
    cm = ConfusionMatrix.empty(taxonomy.num_classes)
    model.eval()
    data = [(sid, *_to_tensors(load_sample(manifest, sid))) for sid in manifest.entries]
    if render_dir is not None:
        render_dir = Path(render_dir)
        render_dir.mkdir(parents=True, exist_ok=True)

    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            chunk = data[start : start + batch_size]
            ids = [c[0] for c in chunk]
            t1 = torch.stack([c[1] for c in chunk])
            t2 = torch.stack([c[2] for c in chunk])
            labels = torch.stack([c[3] for c in chunk])
            prompts = [c[4] for c in chunk]
            if oracle:
                preds = labels.clone()
                preds[preds == 255] = 0
            else:
                preds = model(t1, t2, prompts).logits.argmax(dim=1)
            for i, sid in enumerate(ids):
                accumulate(cm, preds[i].numpy(), labels[i].numpy())
                if render_dir is not None:
                    from PIL import Image

                    rgb = render_prediction(preds[i].numpy(), taxonomy)
                    Image.fromarray(rgb).save(render_dir / f"{sid}.png")

    return build_report(cm, semantic=taxonomy.mode == "SCD")


def evaluate(ckpt: Checkpoint, manifest: DatasetManifest, **kwargs) -> MetricsReport:
    model = model_from_checkpoint(ckpt)
    stored = ClassTaxonomy.from_json(ckpt.taxonomy)
    if stored.to_json() != manifest.taxonomy.to_json():
        raise ValueError("checkpoint taxonomy does not match the dataset taxonomy")
    return evaluate_model(model, manifest, **kwargs)


DEFAULT_SWEEP_GRID: Tuple[Tuple[float, float], ...] = (
    (0.80, 0.30),
    (0.80, 0.40),
    (0.80, 0.50),
    (0.80, 0.60),
    (0.85, 0.40),
    (0.75, 0.40),
)

ABLATION_ROWS: Tuple[Tuple[bool, bool, bool], ...] = (
    (False, False, False),
    (False, True, True),
    (True, False, True),
    (True, True, False),
    (True, True, True),
)


def sweep_tau_lambda(
    base_cfg: TrainConfig,
    train_manifest: DatasetManifest,
    eval_manifest: DatasetManifest,
    grid: Sequence[Tuple[float, float]] = DEFAULT_SWEEP_GRID,
    quiet: bool = True,
) -> List[dict]:
    """Train/evaluate one model per (tau, lambda) cell of the grid."""
    if not grid:
        raise ValueError("sweep grid must be nonempty")
    rows = []
    for tau, lam in grid:
        cfg = copy.deepcopy(base_cfg)
        cfg.loss.tau = tau
        cfg.loss.lambda_aux = lam
        result = train(cfg, train_manifest, quiet=quiet)
        report = evaluate_model(result.model, eval_manifest)
        rows.append(
            {"tau": tau, "lambda": lam, "f1": report.f1, "iou": report.iou, "oa": report.oa}
        )
    return rows


def ablate_decoder(
    base_cfg: TrainConfig,
    train_manifest: DatasetManifest,
    eval_manifest: DatasetManifest,
    quiet: bool = True,
) -> List[dict]:
    """Train/evaluate the five decoder switch combinations."""
    rows = []
    for multiscale, attention, fusion in ABLATION_ROWS:
        cfg = copy.deepcopy(base_cfg)
        cfg.decoder = copy.deepcopy(base_cfg.decoder)
        cfg.decoder.use_multiscale = multiscale
        cfg.decoder.use_attention = attention
        cfg.decoder.use_fusion = fusion
        result = train(cfg, train_manifest, quiet=quiet)
        report = evaluate_model(result.model, eval_manifest)
        rows.append(
            {
                "multiscale": multiscale,
                "attention": attention,
                "fusion": fusion,
                "f1": report.f1,
                "iou": report.iou,
                "fscd": report.fscd,
                "params": count_parameters(result.model),
            }
        )
    return rows
