"""Flat key=value config files mirroring the training config field paths.

Example:

    # desk-scale run
    lr = 2e-3
    epochs = 20
    encoder.stage_channels = 8,16,32,48
    decoder.use_attention = true
    loss.tau = 0.8
    text.kind = stub

Unset keys keep their defaults; `changekit train --print-config` dumps the
effective configuration in the same format.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path
from typing import Any, get_args, get_origin

from .train import TrainConfig


def _parse_value(kind, raw: str):
    raw = raw.strip()
    origin = get_origin(kind)
    if origin is typing.Union:  # Optional[...]
        args = [a for a in get_args(kind) if a is not type(None)]
        if raw == "" or raw.lower() == "none":
            return None
        return _parse_value(args[0], raw)
    if origin in (tuple, list):
        inner = get_args(kind)[0]
        values = tuple(_parse_value(inner, part) for part in raw.split(",") if part.strip())
        return values if origin is tuple else list(values)
    if kind is bool:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean from {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is str:
        return raw
    raise ValueError(f"unsupported config field type {kind!r}")


def _field_types(cls) -> dict:
    return typing.get_type_hints(cls)


def _set_path(cfg, path: str, raw: str) -> None:
    parts = path.split(".")
    target = cfg
    for part in parts[:-1]:
        if not hasattr(target, part):
            raise KeyError(f"unknown config section {part!r} in {path!r}")
        target = getattr(target, part)
    name = parts[-1]
    hints = _field_types(type(target))
    if name not in hints:
        raise KeyError(f"unknown config key {path!r}")
    setattr(target, name, _parse_value(hints[name], raw))


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    cfg = base if base is not None else TrainConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        _set_path(cfg, key.strip(), raw)
    # re-run the dataclass validators on the mutated values
    for section in (cfg, cfg.encoder, cfg.decoder, cfg.loss, cfg.text):
        post = getattr(section, "__post_init__", None)
        if post is not None:
            post()
    return cfg


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config(Path(path).read_text(), base=base)


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def dump_config(cfg: TrainConfig) -> str:
    """Render the configuration back to the flat file format."""
    lines = []

    def walk(obj, prefix: str):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            key = f"{prefix}{f.name}"
            if dataclasses.is_dataclass(value):
                walk(value, f"{key}.")
            else:
                lines.append(f"{key} = {_format_value(value)}")

    walk(cfg, "")
    return "\n".join(lines) + "\n"
