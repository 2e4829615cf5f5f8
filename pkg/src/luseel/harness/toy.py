"""Synthetic captioned clips (band-limited noise and tones) for desk-scale runs."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt

from ..audio_core import Waveform, save_wav
from ..scene_sim import ClipRecord, Corpus

# (caption, kind, low_hz, high_hz); tones use low_hz as their frequency
TOY_CLIPS = [
    ("low rumble", "noise", 80, 300),
    ("soft hum", "tone", 220, 0),
    ("bright whistle", "tone", 2500, 0),
    ("airy hiss", "noise", 4000, 7000),
    ("buzzing insect", "noise", 1200, 2000),
    ("church bell", "tone", 880, 0),
    ("muffled engine", "noise", 300, 700),
    ("sharp chirp", "tone", 5200, 0),
    ("distant thunder", "noise", 40, 150),
    ("kettle squeal", "tone", 3600, 0),
    ("rustling leaves", "noise", 2500, 4000),
    ("deep drone", "tone", 110, 0),
    ("fan noise", "noise", 700, 1200),
    ("flute note", "tone", 1500, 0),
    ("static crackle", "noise", 6000, 7800),
    ("organ pipe", "tone", 440, 0),
]


def synth_clip(kind: str, low: float, high: float, frames: int, sample_rate: int,
               rng: np.random.Generator) -> np.ndarray:
    t = np.arange(frames) / sample_rate
    if kind == "tone":
        x = np.sin(2 * np.pi * low * t + rng.uniform(0, 2 * np.pi))
        x += 0.3 * np.sin(2 * np.pi * 2 * low * t) if 2 * low < sample_rate / 2 else 0.0
        # slow amplitude modulation so the clip is not stationary
        x *= 0.75 + 0.25 * np.sin(2 * np.pi * rng.uniform(1.0, 4.0) * t)
    else:
        sos = butter(4, [low, high], btype="bandpass", fs=sample_rate, output="sos")
        x = sosfilt(sos, rng.standard_normal(frames + 2048))[2048:]
    x = x / (np.sqrt(np.mean(x**2)) + 1e-12) * 0.1
    return x


def toy_corpus(n_clips: int = 16, duration_s: float = 1.0, sample_rate: int = 16000, seed: int = 0) -> Corpus:
    """In-memory corpus of ``n_clips`` synthetic clips with distinct captions."""
    if n_clips > len(TOY_CLIPS):
        raise ValueError(f"at most {len(TOY_CLIPS)} toy clips available")
    rng = np.random.default_rng(seed)
    frames = int(round(duration_s * sample_rate))
    records, audio = [], {}
    for i, (caption, kind, lo, hi) in enumerate(TOY_CLIPS[:n_clips]):
        cid = f"toy{i:02d}"
        records.append(ClipRecord(cid, f"{cid}.wav", caption))
        audio[cid] = synth_clip(kind, lo, hi, frames, sample_rate, rng)
    return Corpus(records, audio=audio, sample_rate=sample_rate)


def write_toy_corpus(out_dir: str | Path, n_clips: int = 16, duration_s: float = 1.0,
                     sample_rate: int = 16000, seed: int = 0) -> Path:
    """Write the toy clips as 16-bit wave files plus ``manifest.jsonl``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = toy_corpus(n_clips, duration_s, sample_rate, seed)
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for rec in corpus.records:
            save_wav(out_dir / rec.path, Waveform(corpus.load(rec.id, int(round(duration_s * sample_rate))),
                                                  sample_rate))
            fh.write(json.dumps({"id": rec.id, "path": rec.path, "caption": rec.caption}) + "\n")
    return manifest
