"""Per-scene evaluation over frozen scene sets."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from ..localization import decode_azimuth
from ..objectives import doa_metrics, sdri, si_snri
from ..scene_sim import BinauralScene, Corpus, SceneSpec, read_scenes
from ..system import JointModel, Variant
from .checkpoint import load_checkpoint
from .data import FixedScenes, load_corpus, make_renderer
from .train import provider_for

ROW_FIELDS = ["scene_id", "n_sources", "sep_angle_deg", "si_snri", "sdri", "doa_hit", "mae", "variant"]
DOA_FIELDS = ["scene_id", "true_deg", "pred_deg", "probs_argmax", "mae_deg"]


def _fmt(x) -> str:
    return "" if x is None else f"{float(x):.6f}"


def score_scene(spec: SceneSpec, scene: BinauralScene, variant: Variant, est: np.ndarray | None,
                probs: np.ndarray | None, collar: float = 5.0) -> tuple[dict, dict | None]:
    """One metrics row (and DoA export record) for a scene.

    ``est`` must have the variant's channel count; single-channel variants are
    scored against the downmixed target and mixture.
    """
    row = {"scene_id": spec.scene_id, "n_sources": len(spec.sources), "sep_angle_deg": spec.separation_deg(),
           "si_snri": None, "sdri": None, "doa_hit": None, "mae": None, "variant": variant.name}
    ref, mix = scene.target.samples, scene.mixture.samples
    if variant.channels == 1:
        ref, mix = ref.mean(axis=0, keepdims=True), mix.mean(axis=0, keepdims=True)
    if est is not None:
        est = np.asarray(est, dtype=np.float64)
        row["si_snri"] = float(si_snri(est, mix, ref))
        row["sdri"] = float(sdri(est, mix, ref))
    doa = None
    if probs is not None:
        pred = decode_azimuth(probs)
        hit, err = doa_metrics(pred, spec.target.azimuth_deg, collar)
        row["doa_hit"], row["mae"] = int(hit), err
        doa = {"scene_id": spec.scene_id, "true_deg": spec.target.azimuth_deg, "pred_deg": pred,
               "probs_argmax": int(np.argmax(probs)), "mae_deg": err}
    return row, doa


def model_predictor(model: JointModel) -> Callable:
    @torch.no_grad()
    def predict(batch):
        model.eval()
        out = model(batch.mixture, batch.tokens, batch.padding_mask)
        est = None if out["est"] is None else out["est"].double().numpy()
        doa = None if out["doa"] is None else out["doa"].double().numpy()
        return est, doa
    return predict


def oracle_predictor(variant: Variant) -> Callable:
    """Returns the reference target and a one-hot at the true azimuth (metric sanity check)."""
    def predict(batch):
        est = batch.target.double().numpy()
        if variant.channels == 1:
            est = est.mean(axis=1, keepdims=True)
        probs = np.zeros((len(batch.azimuths), 360))
        for i, az in enumerate(batch.azimuths):
            probs[i, int(round(az)) % 360] = 1.0
        return (est if variant.extraction else None), (probs if variant.localization else None)
    return predict


def evaluate(scenes: FixedScenes, variant: Variant, predict: Callable, batch_size: int = 4,
             collar: float = 5.0) -> tuple[list[dict], list[dict]]:
    rows, doas = [], []
    k = 0
    for specs, batch in scenes.batches(batch_size):
        est, probs = predict(batch)
        for i, spec in enumerate(specs):
            row, doa = score_scene(spec, scenes.scenes[k], variant,
                                   None if est is None else est[i], None if probs is None else probs[i], collar)
            rows.append(row)
            if doa is not None:
                doas.append(doa)
            k += 1
    return rows, doas


def write_rows(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, ROW_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (r[k] if k in ("scene_id", "variant", "n_sources") else
                            ("" if r[k] is None else (str(r[k]) if k == "doa_hit" else _fmt(r[k]))))
                        for k in ROW_FIELDS})


def read_rows(path: str | Path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out = {"scene_id": r["scene_id"], "n_sources": int(r["n_sources"]), "variant": r.get("variant", "")}
            for k in ("sep_angle_deg", "si_snri", "sdri", "mae"):
                out[k] = float(r[k]) if r[k] != "" else None
            out["doa_hit"] = int(r["doa_hit"]) if r["doa_hit"] != "" else None
            rows.append(out)
    return rows


def write_doa(path: str | Path, records: list[dict]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=False) + "\n")


def evaluate_checkpoint(ckpt: str | Path, scenes_path: str | Path, out_csv: str | Path,
                        doa_path: str | Path | None = None, corpus: Corpus | None = None) -> list[dict]:
    torch.manual_seed(0)
    model, cfg = load_checkpoint(ckpt)
    corpus = load_corpus(cfg, "val") if corpus is None else corpus
    specs = read_scenes(scenes_path)
    scenes = FixedScenes(specs, corpus, make_renderer(cfg), provider_for(cfg), cfg.loss.sigma_sq)
    rows, doas = evaluate(scenes, model.variant, model_predictor(model), cfg.optim.batch_size)
    write_rows(out_csv, rows)
    if doa_path is not None:
        write_doa(doa_path, doas)
    return rows
