"""Checkpoint directories: ``config.yaml`` plus a flat ``weights.npz`` of named tensors."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from ..system import JointModel
from .config import ExperimentConfig


def build_model(cfg: ExperimentConfig) -> JointModel:
    return JointModel(cfg.experiment.variant, cfg.conditioning, cfg.extractor, cfg.localization)


def save_checkpoint(directory: str | Path, model: JointModel, cfg: ExperimentConfig, meta: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cfg.save(directory / "config.yaml")
    arrays = {name: t.detach().cpu().numpy() for name, t in model.state_dict().items()}
    np.savez(directory / "weights.npz", **arrays)
    with open(directory / "meta.json", "w") as fh:
        json.dump(meta or {}, fh, indent=2, sort_keys=True)
    return directory


def load_checkpoint(directory: str | Path) -> tuple[JointModel, ExperimentConfig]:
    directory = Path(directory)
    cfg = ExperimentConfig.load(directory / "config.yaml", env=False)
    model = build_model(cfg)
    with np.load(directory / "weights.npz") as data:
        state = {k: torch.from_numpy(data[k]) for k in data.files}
    model.load_state_dict(state)
    model.eval()
    return model, cfg


def parameter_names(directory: str | Path) -> list[str]:
    with np.load(Path(directory) / "weights.npz") as data:
        return list(data.files)
