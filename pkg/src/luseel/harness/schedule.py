"""Learning-rate warm-up, plateau halving and early stopping."""

from __future__ import annotations

import math
from dataclasses import dataclass


def lr_at(step: int, halvings: int, base_lr: float, warmup_steps: int, factor: float = 0.5) -> float:
    """Linear ramp from 0 to ``base_lr`` over ``warmup_steps``, times ``factor**halvings``."""
    ramp = 1.0 if warmup_steps <= 0 else min(1.0, step / warmup_steps)
    return base_lr * ramp * factor**halvings


@dataclass
class PlateauController:
    """Epoch-level bookkeeping of validation improvement.

    ``epochs_since_improve`` counts stagnant epochs since the last improvement
    and drives early stopping. ``plateau_count`` drives halving and restarts
    after every halving, so a long plateau halves at 6, 12, ... stagnant epochs
    unless early stopping fires first.
    """

    patience: int = 6
    stop_after: int = 10
    best: float = math.inf
    epochs_since_improve: int = 0
    plateau_count: int = 0
    halvings: int = 0

    def update(self, val_loss: float) -> str:
        """Record one epoch's validation loss; returns ``improved``, ``halved``, ``stop`` or ``stalled``."""
        if val_loss < self.best:
            self.best = val_loss
            self.epochs_since_improve = 0
            self.plateau_count = 0
            return "improved"
        self.epochs_since_improve += 1
        self.plateau_count += 1
        if self.epochs_since_improve >= self.stop_after:
            return "stop"
        if self.plateau_count >= self.patience:
            self.plateau_count = 0
            self.halvings += 1
            return "halved"
        return "stalled"


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    lr_current: float = 0.0
    best_val_loss: float = math.inf
    epochs_since_improve: int = 0
    checkpoint: str | None = None
