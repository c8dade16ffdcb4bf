"""Command-line harness.

Subcommands:
    make-synth   write a synthetic train/val/test dataset
    train        fit a model on a dataset directory
    eval         score a checkpoint on a split and emit a JSON report
    predict      run one image pair through a checkpoint
    sweep        hard-mask threshold/weight grid (six default cells)
    ablate       decoder submodule switch combinations (five rows)
    params       report the trainable parameter count of a checkpoint
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import train as harness
from .config import dump_config, load_config
from .data import load_manifest
from .render import render_prediction
from .synth import SynthConfig, generate_synthetic
from .types import PromptRecord, default_taxonomy


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, default=None, help="flat key=value config file")
    p.add_argument(
        "--preset",
        choices=["synthetic", "full"],
        default="synthetic",
        help="base configuration the config file overrides",
    )


def _resolve_config(args) -> harness.TrainConfig:
    base = harness.synthetic_preset() if args.preset == "synthetic" else harness.full_preset()
    if args.config is not None:
        return load_config(args.config, base=base)
    return base


def _cmd_make_synth(args) -> int:
    cfg = SynthConfig(
        n_samples=args.n,
        patch_size=args.patch,
        seed=args.seed,
        pseudo_change_rate=args.pseudo_rate,
    )
    manifest = generate_synthetic(cfg, args.out)
    print(f"wrote {len(manifest)} train samples (plus val/test) under {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _resolve_config(args)
    if args.steps is not None:
        cfg.max_steps = args.steps
    if args.print_config:
        sys.stdout.write(dump_config(cfg))
        return 0
    taxonomy = default_taxonomy(cfg.mode)
    manifest = load_manifest(args.data, "train", taxonomy)
    val = load_manifest(args.data, "val", taxonomy)
    result = harness.train(cfg, manifest, val_manifest=val if val.entries else None,
                           out_dir=args.out)
    print(f"trained {len(result.loss_history)} steps; "
          f"final loss {result.loss_history[-1]:.4f}; "
          f"checkpoint at {Path(args.out) / 'checkpoint.pt'}")
    return 0


def _cmd_eval(args) -> int:
    ckpt = harness.load_checkpoint(args.ckpt)
    taxonomy = default_taxonomy(ckpt.config["mode"])
    manifest = load_manifest(args.data, args.split, taxonomy)
    report = harness.evaluate(ckpt, manifest, render_dir=args.render, oracle=args.oracle)
    text = report.to_json()
    Path(args.report).write_text(text)
    print(text)
    return 0


def _cmd_predict(args) -> int:
    from PIL import Image

    ckpt = harness.load_checkpoint(args.ckpt)
    model = harness.model_from_checkpoint(ckpt)
    taxonomy = model.taxonomy

    import torch

    def read(path):
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
        return torch.from_numpy(arr.transpose(2, 0, 1)).unsqueeze(0)

    t1, t2 = read(args.t1), read(args.t2)
    if t1.shape != t2.shape:
        raise SystemExit(f"image sizes differ: {tuple(t1.shape)} vs {tuple(t2.shape)}")
    h, w = t1.shape[-2:]
    pad_h, pad_w = (-h) % 32, (-w) % 32
    if pad_h or pad_w:
        import torch.nn.functional as F

        t1 = F.pad(t1, (0, pad_w, 0, pad_h))
        t2 = F.pad(t2, (0, pad_w, 0, pad_h))

    prompts = None
    if args.prompt is not None:
        record = PromptRecord.from_json(json.loads(Path(args.prompt).read_text()))
        from .textgate import context_prompt

        prompts = [context_prompt(record)]
    pred = model.predict(t1, t2, prompts)[0, :h, :w].numpy()
    Image.fromarray(render_prediction(pred, taxonomy)).save(args.out)
    print(f"wrote prediction rendering to {args.out}")
    return 0


def _load_pair(args):
    cfg = _resolve_config(args)
    if args.steps is not None:
        cfg.max_steps = args.steps
    taxonomy = default_taxonomy(cfg.mode)
    return cfg, load_manifest(args.data, "train", taxonomy), load_manifest(args.data, "test", taxonomy)


def _cmd_sweep(args) -> int:
    cfg, train_m, test_m = _load_pair(args)
    grid = harness.DEFAULT_SWEEP_GRID
    if args.grid:
        grid = tuple(
            tuple(float(x) for x in cell.split(",")) for cell in args.grid.split(";") if cell
        )
    rows = harness.sweep_tau_lambda(cfg, train_m, test_m, grid=grid)
    _emit_table(rows, args.out, "sweep")
    return 0


def _cmd_ablate(args) -> int:
    cfg, train_m, test_m = _load_pair(args)
    rows = harness.ablate_decoder(cfg, train_m, test_m)
    _emit_table(rows, args.out, "ablation")
    return 0


def _emit_table(rows, out_dir, name: str) -> None:
    keys = list(rows[0].keys())
    widths = {k: max(len(k), *(len(_fmt(r[k])) for r in rows)) for k in keys}
    header = "  ".join(k.ljust(widths[k]) for k in keys)
    print(header)
    print("-" * len(header))
    for r in rows:
        print("  ".join(_fmt(r[k]).ljust(widths[k]) for k in keys))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.json").write_text(json.dumps(rows, indent=1))
        print(f"wrote {out / f'{name}.json'}")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _cmd_params(args) -> int:
    ckpt = harness.load_checkpoint(args.ckpt)
    model = harness.model_from_checkpoint(ckpt)
    from .network import count_parameters

    print(count_parameters(model))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="changekit", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synth", help="generate a synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=int, default=16, help="number of training samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pseudo-rate", type=float, default=0.3, dest="pseudo_rate")
    p.add_argument("--patch", type=int, default=256)
    p.set_defaults(func=_cmd_make_synth)

    p = sub.add_parser("train", help="train a model")
    _add_config_args(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--steps", type=int, default=None, help="cap the optimizer step count")
    p.add_argument("--print-config", action="store_true", help="dump the effective config and exit")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--render", type=Path, default=None)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--oracle", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="predict one image pair")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--t1", type=Path, required=True)
    p.add_argument("--t2", type=Path, required=True)
    p.add_argument("--prompt", type=Path, default=None, help="JSON prompt record")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("sweep", help="hard-mask threshold/weight grid")
    _add_config_args(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--grid", default=None, help='cells "tau,lambda;tau,lambda;..."')
    p.add_argument("--steps", type=int, default=40)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("ablate", help="decoder switch ablation")
    _add_config_args(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--steps", type=int, default=40)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("params", help="trainable parameter count")
    p.add_argument("--ckpt", type=Path, required=True)
    p.set_defaults(func=_cmd_params)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
