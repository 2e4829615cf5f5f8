"""Scene generation and batching for training and evaluation."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import torch

from ..conditioning import embed_batch
from ..errors import DegenerateInputError
from ..localization import gaussian_label
from ..scene_sim import (BinauralScene, Corpus, HrirSet, ParametricHead, SceneSpec, render_scene, sample_scene,
                         scene_rng)
from .config import ExperimentConfig

log = logging.getLogger(__name__)

MAX_RESAMPLES = 100


def make_renderer(cfg: ExperimentConfig):
    s = cfg.scene
    if s.renderer == "hrir_set":
        return HrirSet.from_directory(s.hrir_dir, cfg.audio.sample_rate)
    return ParametricHead(s.head_radius_m, s.speed_of_sound, s.max_ild_db, s.rear_shadow)


def load_corpus(cfg: ExperimentConfig, split: str = "train") -> Corpus:
    path = cfg.data.train_manifest if split == "train" else (cfg.data.val_manifest or cfg.data.train_manifest)
    return Corpus.from_manifest(path, cfg.audio.sample_rate)


def draw_scene(cfg: ExperimentConfig, corpus: Corpus, global_seed: int, index: int, prefix: str = "scene",
               renderer=None) -> tuple[SceneSpec, BinauralScene]:
    """Sample and render scene ``index``; scenes with a silent clip are redrawn from the same stream."""
    rng = scene_rng(global_seed, index)
    renderer = make_renderer(cfg) if renderer is None else renderer
    for _ in range(MAX_RESAMPLES):
        spec = sample_scene(rng, corpus, cfg.experiment.n_sources, duration_s=cfg.audio.duration_s,
                            sample_rate=cfg.audio.sample_rate, snr_range=tuple(cfg.scene.snr_range),
                            min_separation_deg=cfg.scene.min_separation_deg, seed=int(global_seed),
                            scene_id=f"{prefix}-{index:06d}")
        try:
            return spec, render_scene(spec, corpus, renderer)
        except DegenerateInputError as exc:
            log.debug("resampling %s: %s", spec.scene_id, exc)
    raise DegenerateInputError(f"could not draw a non-silent scene after {MAX_RESAMPLES} attempts")


def sample_specs(cfg: ExperimentConfig, corpus: Corpus, n: int, global_seed: int, prefix: str) -> list[SceneSpec]:
    renderer = make_renderer(cfg)
    return [draw_scene(cfg, corpus, global_seed, i, prefix, renderer)[0] for i in range(n)]


def _render_job(args):
    spec, corpus, renderer = args
    return render_scene(spec, corpus, renderer)


def render_all(specs: list[SceneSpec], corpus: Corpus, renderer, workers: int = 0) -> list[BinauralScene]:
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_render_job, [(s, corpus, renderer) for s in specs]))
    return [render_scene(s, corpus, renderer) for s in specs]


@dataclass
class Batch:
    mixture: torch.Tensor  # [B, 2, N]
    target: torch.Tensor  # [B, 2, N]
    label: torch.Tensor  # [B, 360]
    tokens: torch.Tensor
    padding_mask: torch.Tensor
    azimuths: list[float]
    prompts: list[str]
    scene_ids: list[str]


def collate(scenes: list[BinauralScene], provider, sigma_sq: float, n_bins: int = 360,
            dtype=torch.float32) -> Batch:
    mixture = torch.from_numpy(np.stack([s.mixture.samples for s in scenes])).to(dtype)
    target = torch.from_numpy(np.stack([s.target.samples for s in scenes])).to(dtype)
    label = torch.from_numpy(np.stack([gaussian_label(s.target_azimuth_deg, sigma_sq, n_bins)
                                       for s in scenes])).to(dtype)
    tokens, pad = embed_batch([s.prompt for s in scenes], provider)
    return Batch(mixture, target, label, tokens.to(dtype), pad, [s.target_azimuth_deg for s in scenes],
                 [s.prompt.text for s in scenes], [s.scene_id for s in scenes])


class DynamicMixer:
    """Fresh random scenes for every training step, reproducible from the run seed."""

    def __init__(self, cfg: ExperimentConfig, corpus: Corpus, provider, seed: int):
        self.cfg = cfg
        self.corpus = corpus
        self.provider = provider
        self.seed = seed
        self.renderer = make_renderer(cfg)

    def batch(self, step: int, batch_size: int) -> Batch:
        scenes = [draw_scene(self.cfg, self.corpus, self.seed, step * batch_size + j, "train", self.renderer)[1]
                  for j in range(batch_size)]
        return collate(scenes, self.provider, self.cfg.loss.sigma_sq)


class FixedScenes:
    """A frozen list of scenes replayed in order (validation, evaluation, overfit runs)."""

    def __init__(self, specs: list[SceneSpec], corpus: Corpus, renderer, provider, sigma_sq: float, workers: int = 0):
        self.specs = specs
        self.scenes = render_all(specs, corpus, renderer, workers)
        self.provider = provider
        self.sigma_sq = sigma_sq

    def __len__(self):
        return len(self.scenes)

    def batches(self, batch_size: int):
        for i in range(0, len(self.scenes), batch_size):
            yield self.specs[i:i + batch_size], collate(self.scenes[i:i + batch_size], self.provider, self.sigma_sq)

    def batch(self, step: int, batch_size: int) -> Batch:
        n = len(self.scenes)
        idx = [(step * batch_size + j) % n for j in range(batch_size)]
        return collate([self.scenes[i] for i in idx], self.provider, self.sigma_sq)
