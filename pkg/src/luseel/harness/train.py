"""Training loop: dynamic mixing, warm-up, plateau halving, early stopping."""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..conditioning import make_provider
from ..errors import NumericError
from ..objectives import doa_loss, signal_loss, total_loss
from ..scene_sim import Corpus, SceneSpec
from ..system import JointModel
from .checkpoint import build_model, save_checkpoint
from .config import ExperimentConfig
from .data import Batch, DynamicMixer, FixedScenes, load_corpus, make_renderer, sample_specs
from .schedule import PlateauController, TrainState, lr_at

log = logging.getLogger(__name__)


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def provider_for(cfg: ExperimentConfig):
    c = cfg.conditioning
    return make_provider(c.provider, c.d_text, c.sidecar)


def compute_losses(model: JointModel, batch: Batch, cfg: ExperimentConfig) -> dict[str, torch.Tensor]:
    """Variant-aware objective; extraction-only drops the DoA term, localization-only the signal term."""
    out = model(batch.mixture, batch.tokens, batch.padding_mask)
    v = model.variant
    zero = batch.mixture.new_zeros(())
    l_sig = signal_loss(out["est"], model.model_target(batch.target), cfg.loss.freq_resolutions) if v.extraction else zero
    l_mse = doa_loss(out["doa"], batch.label) if v.localization else zero
    return {"total": total_loss(l_sig, l_mse, cfg.loss.gamma), "signal": l_sig, "mse": l_mse, "out": out}


@torch.no_grad()
def validation_loss(model: JointModel, scenes: FixedScenes, cfg: ExperimentConfig) -> float:
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    for _, batch in scenes.batches(cfg.optim.batch_size):
        n = batch.mixture.shape[0]
        total += float(compute_losses(model, batch, cfg)["total"]) * n
        count += n
    model.train(was_training)
    return total / max(count, 1)


@dataclass
class TrainResult:
    model: JointModel
    state: TrainState
    history: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None


def train(cfg: ExperimentConfig, corpus: Corpus | None = None, out_dir: str | Path | None = None,
          train_specs: list[SceneSpec] | None = None, val_specs: list[SceneSpec] | None = None,
          val_corpus: Corpus | None = None, save: bool = True) -> TrainResult:
    """Train one variant and keep the best-validation checkpoint.

    With ``train_specs`` (or ``data.fixed_train_scenes > 0``) the same frozen
    scenes are replayed every epoch instead of simulating fresh mixtures.
    """
    seed = cfg.experiment.seed
    seed_everything(seed)
    corpus = load_corpus(cfg, "train") if corpus is None else corpus
    val_corpus = corpus if val_corpus is None else val_corpus
    provider = provider_for(cfg)
    renderer = make_renderer(cfg)
    model = build_model(cfg)
    model.train()

    o = cfg.optim
    if train_specs is None and cfg.data.fixed_train_scenes > 0:
        train_specs = sample_specs(cfg, corpus, cfg.data.fixed_train_scenes, seed, "train")
    if train_specs is not None:
        source = FixedScenes(train_specs, corpus, renderer, provider, cfg.loss.sigma_sq, cfg.data.workers)
    else:
        source = DynamicMixer(cfg, corpus, provider, seed)
    if val_specs is None:
        val_specs = sample_specs(cfg, val_corpus, cfg.data.val_scenes, seed + cfg.data.val_seed_offset, "val")
    val = FixedScenes(val_specs, val_corpus, renderer, provider, cfg.loss.sigma_sq, cfg.data.workers)

    opt = torch.optim.AdamW(model.parameters(), lr=0.0, weight_decay=o.weight_decay)
    ctl = PlateauController(o.plateau_patience_epochs, o.early_stop_epochs)
    state = TrainState()
    max_steps = o.max_steps if o.max_steps is not None else o.max_epochs * o.steps_per_epoch
    out_dir = Path(out_dir or cfg.experiment.out_dir)
    if save:
        out_dir.mkdir(parents=True, exist_ok=True)
    result = TrainResult(model, state)
    provider_sum = provider.checksum()

    while state.step < max_steps:
        lr = lr_at(state.step, ctl.halvings, o.lr, o.warmup_steps, o.lr_factor)
        for group in opt.param_groups:
            group["lr"] = lr
        state.lr_current = lr
        opt.zero_grad(set_to_none=True)
        parts = {}
        for micro in range(o.grad_accum):
            batch = source.batch(state.step * o.grad_accum + micro, o.batch_size)
            parts = compute_losses(model, batch, cfg)
            loss = parts["total"] / o.grad_accum
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite loss at step {state.step}: signal={parts['signal'].item()} "
                                   f"mse={parts['mse'].item()}")
            loss.backward()
        if o.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), o.grad_clip)
        opt.step()
        result.history.append({"step": state.step, "lr": lr, "loss": parts["total"].item(),
                               "signal": parts["signal"].item(), "mse": parts["mse"].item()})
        state.step += 1

        if state.step % o.steps_per_epoch == 0 or state.step == max_steps:
            state.epoch += 1
            v = validation_loss(model, val, cfg)
            event = ctl.update(v)
            state.best_val_loss = ctl.best
            state.epochs_since_improve = ctl.epochs_since_improve
            rec = {"epoch": state.epoch, "step": state.step, "val_loss": v, "event": event, "lr": lr,
                   "halvings": ctl.halvings}
            result.epochs.append(rec)
            log.info("epoch %d step %d val %.4f %s", state.epoch, state.step, v, event)
            if event == "improved" and save:
                result.checkpoint = save_checkpoint(out_dir / "best", model, cfg,
                                                    {"step": state.step, "epoch": state.epoch, "val_loss": v})
                state.checkpoint = str(result.checkpoint)
            if event == "stop":
                log.info("early stop after %d stagnant epochs", ctl.epochs_since_improve)
                break

    if provider.checksum() != provider_sum:
        raise RuntimeError("text provider changed during training")
    if save:
        with open(out_dir / "train_log.jsonl", "w") as fh:
            for rec in result.history:
                fh.write(json.dumps(rec) + "\n")
        with open(out_dir / "epochs.jsonl", "w") as fh:
            for rec in result.epochs:
                fh.write(json.dumps(rec) + "\n")
        with open(out_dir / "state.json", "w") as fh:
            json.dump({k: (None if isinstance(v, float) and math.isinf(v) else v)
                       for k, v in asdict(state).items()}, fh, indent=2)
    return result
