"""Experiment configuration: nested dataclasses serialized as YAML.

Every modelling assumption that is not fixed by the method itself lives here
so that a saved config fully describes a run. ``LUSEEL_SEED`` in the
environment overrides ``experiment.seed``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..errors import ConfigurationError
from ..extractor import ExtractorConfig
from ..localization import LocalizationConfig
from ..objectives import LossConfig
from ..system import TextConfig, get_variant


@dataclass
class ExperimentSection:
    variant: str = "luseel"
    n_sources: int = 2
    seed: int = 0
    toy_scale: bool = True
    out_dir: str = "runs/toy"


@dataclass
class AudioSection:
    sample_rate: int = 16000
    duration_s: float = 1.0
    resample: str = "polyphase"


@dataclass
class SceneSection:
    snr_range: tuple[float, float] = (-5.0, 5.0)
    min_separation_deg: float = 5.0
    renderer: str = "parametric"  # or hrir_set
    hrir_dir: str | None = None
    head_radius_m: float = 0.0875
    speed_of_sound: float = 343.0
    max_ild_db: float = 6.0
    rear_shadow: float = 0.3
    interferer_gain: str = "before_spatialization"


@dataclass
class DataSection:
    train_manifest: str = "corpus/manifest.jsonl"
    val_manifest: str | None = None  # defaults to train_manifest
    val_scenes: int = 16
    val_seed_offset: int = 1_000_003
    eval_seed_offset: int = 2_000_003
    fixed_train_scenes: int = 0  # >0 replays this many frozen scenes instead of dynamic mixing
    eval_scenes: int = 32
    workers: int = 0


@dataclass
class OptimSection:
    optimizer: str = "adamw"
    lr: float = 1e-3
    weight_decay: float = 0.01
    warmup_steps: int = 20
    batch_size: int = 4
    grad_accum: int = 1
    steps_per_epoch: int = 50
    max_epochs: int = 20
    max_steps: int | None = None
    plateau_patience_epochs: int = 6
    early_stop_epochs: int = 10
    lr_factor: float = 0.5
    grad_clip: float | None = 5.0


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    audio: AudioSection = field(default_factory=AudioSection)
    scene: SceneSection = field(default_factory=SceneSection)
    data: DataSection = field(default_factory=DataSection)
    conditioning: TextConfig = field(default_factory=TextConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    localization: LocalizationConfig = field(default_factory=LocalizationConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimSection = field(default_factory=OptimSection)

    def __post_init__(self):
        get_variant(self.experiment.variant)
        if self.experiment.n_sources not in (2, 3):
            raise ConfigurationError("experiment.n_sources must be 2 or 3")

    @property
    def variant(self):
        return get_variant(self.experiment.variant)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        return _build(cls, d or {})

    @classmethod
    def load(cls, path: str | Path, env: bool = True) -> "ExperimentConfig":
        with open(path) as fh:
            cfg = cls.from_dict(yaml.safe_load(fh) or {})
        base = Path(path).parent
        for attr in ("train_manifest", "val_manifest"):
            value = getattr(cfg.data, attr)
            if value and not Path(value).is_absolute() and (base / value).exists():
                setattr(cfg.data, attr, str(base / value))
        if cfg.scene.hrir_dir and not Path(cfg.scene.hrir_dir).is_absolute() and (base / cfg.scene.hrir_dir).exists():
            cfg.scene.hrir_dir = str(base / cfg.scene.hrir_dir)
        return apply_env(cfg) if env else cfg


def apply_env(cfg: ExperimentConfig) -> ExperimentConfig:
    seed = os.environ.get("LUSEEL_SEED")
    if seed is not None and seed.strip():
        cfg.experiment.seed = int(seed)
    return cfg


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, d: dict):
    if not isinstance(d, dict):
        raise ConfigurationError(f"expected a mapping for {cls.__name__}, got {type(d).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(names)
    if unknown:
        raise ConfigurationError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        f = names[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value)
        elif isinstance(default, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def toy_config(variant: str = "luseel", **overrides) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.experiment.variant = variant
    for key, value in overrides.items():
        section, attr = key.split(".")
        setattr(getattr(cfg, section), attr, value)
    return cfg


def paper_config(variant: str = "luseel") -> ExperimentConfig:
    """Full-size dimensions; decoder input 855 + 33 = 888 with the default GCC lag range."""
    cfg = ExperimentConfig()
    cfg.experiment.variant = variant
    cfg.experiment.toy_scale = False
    cfg.audio.duration_s = 10.0
    cfg.conditioning = TextConfig(d_text=512, n_layers=5, n_heads=2, d_ff=1024, dropout=0.1)
    cfg.extractor = ExtractorConfig(base_width=48, d_model=384, n_heads=8, ff_mult=4, cond_dim=512)
    cfg.localization = LocalizationConfig(tap_out=100, fdoa_channels=(512, 256), pooled_len=855,
                                          decoder_hidden=1024, decoder_layers=6)
    cfg.optim = OptimSection(lr=1e-4, warmup_steps=5000, batch_size=128, steps_per_epoch=1000,
                             max_epochs=200, grad_clip=5.0)
    cfg.data.val_scenes = 1000
    cfg.data.eval_scenes = 1000
    return cfg
