"""Single-file checkpoints with a format tag, plus a parameter-count summary next to them."""

from __future__ import annotations

import contextlib
import dataclasses
import io
import os
import pickle
import sys
from pathlib import Path

import torch

from .config import TrainConfig
from .model import ModelConfig, TVNet, format_summary

FORMAT = "tvnet-checkpoint"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _canonical(obj):
    """Intern every string so pickle memoisation, and hence the file bytes, do not
    depend on whether the state was built in-process or loaded from disk."""
    if isinstance(obj, str):
        return sys.intern(obj)
    if isinstance(obj, dict):
        out = type(obj)((_canonical(k), _canonical(v)) for k, v in obj.items())
        if hasattr(obj, "_metadata"):  # module versions recorded by state_dict()
            out._metadata = _canonical(obj._metadata)
        return out
    if isinstance(obj, (list, tuple)):
        return type(obj)(_canonical(v) for v in obj)
    return obj


def save_checkpoint(path, model: TVNet, optimizer=None, epoch: int = 0, iteration: int = 0, config=None) -> Path:
    path = Path(path)
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "model_config": model.config.to_dict(),
        "train_config": dataclasses.asdict(config) if config is not None else None,
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "iteration": iteration,
        "torch_rng": torch.get_rng_state(),
    }
    buf = io.BytesIO()
    torch.save(_canonical(payload), buf)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(buf.getvalue())
        os.replace(tmp, path)
        (path.parent / "summary.txt").write_text(format_summary(model))
    except OSError as e:
        with contextlib.suppress(OSError):
            tmp.unlink(missing_ok=True)
        raise CheckpointError(f"could not write checkpoint {path}: {e}") from e
    return path


def read_checkpoint(path) -> dict:
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    except (OSError, RuntimeError, pickle.UnpicklingError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a TVNet checkpoint")
    if payload.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    return payload


def load_model(path) -> tuple[TVNet, dict]:
    payload = read_checkpoint(path)
    cfg = ModelConfig.from_dict(payload["model_config"])
    # weights come from the checkpoint, not from the backbone file it was initialised with
    cfg.backbone.weights = None
    model = TVNet(cfg)
    model.load_state_dict(payload["model"])
    model.config.backbone.weights = payload["model_config"]["backbone"].get("weights")
    return model, payload


def train_config_of(payload: dict) -> TrainConfig | None:
    d = payload.get("train_config")
    if d is None:
        return None
    d = dict(d)
    d["level_weights"] = tuple(d["level_weights"])
    return TrainConfig(**d)
