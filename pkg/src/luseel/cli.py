"""Command-line entry point.

Subcommands::

    luseel toy-corpus --out corpus/
    luseel simulate --config configs/toy.yaml --out scenes.jsonl
    luseel train --config configs/toy.yaml
    luseel evaluate --ckpt runs/toy/best --scenes scenes.jsonl --out rows.csv
    luseel infer --ckpt runs/toy/best --wav in.wav --prompt "car horns" --out est.wav --doa doa.json
    luseel report --rows rows.csv --out-dir reports/
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np
import torch

from .audio_core import Waveform, load_wav, save_wav
from .conditioning import embed_batch
from .errors import InputError
from .localization import decode_azimuth

log = logging.getLogger("luseel")


def cmd_toy_corpus(args) -> int:
    from .harness.toy import write_toy_corpus
    manifest = write_toy_corpus(args.out, args.clips, args.duration, seed=args.seed)
    print(manifest)
    return 0


def cmd_simulate(args) -> int:
    from .harness.config import ExperimentConfig
    from .harness.data import load_corpus, sample_specs
    from .scene_sim import write_scenes

    cfg = ExperimentConfig.load(args.config)
    if args.n_sources is not None:
        cfg.experiment.n_sources = args.n_sources
    corpus = load_corpus(cfg, args.split)
    n = args.n if args.n is not None else cfg.data.eval_scenes
    specs = sample_specs(cfg, corpus, n, cfg.experiment.seed + cfg.data.eval_seed_offset, args.prefix)
    write_scenes(args.out, specs)
    log.info("wrote %d scenes to %s", len(specs), args.out)
    return 0


def cmd_train(args) -> int:
    from .harness.config import ExperimentConfig
    from .harness.train import train

    cfg = ExperimentConfig.load(args.config)
    if args.out_dir:
        cfg.experiment.out_dir = args.out_dir
    if args.max_steps is not None:
        cfg.optim.max_steps = args.max_steps
    result = train(cfg)
    print(result.checkpoint if result.checkpoint else "no checkpoint saved")
    return 0


def cmd_evaluate(args) -> int:
    from .harness.evaluate import evaluate_checkpoint
    from .scene_sim import Corpus

    corpus = Corpus.from_manifest(args.corpus) if args.corpus else None
    rows = evaluate_checkpoint(args.ckpt, args.scenes, args.out, args.doa, corpus)
    log.info("scored %d scenes", len(rows))
    return 0


def cmd_infer(args) -> int:
    from .harness.checkpoint import load_checkpoint
    from .harness.train import provider_for

    model, cfg = load_checkpoint(args.ckpt)
    w = load_wav(args.wav, cfg.audio.sample_rate)
    x = w.samples
    if x.shape[0] == 1:
        if model.variant.channels == 2:
            raise InputError(f"variant {model.variant.name} needs a binaural (2-channel) recording")
        x = np.repeat(x, 2, axis=0)
    tokens, pad = embed_batch([args.prompt], provider_for(cfg))
    with torch.no_grad():
        out = model(torch.from_numpy(x).float()[None], tokens, pad)
    if out["est"] is not None:
        if not args.out:
            raise InputError("--out is required for variants that extract")
        save_wav(args.out, Waveform(out["est"][0].double().numpy(), cfg.audio.sample_rate))
    if out["doa"] is not None:
        probs = out["doa"][0].double().numpy()
        rec = {"prompt": args.prompt, "pred_deg": decode_azimuth(probs), "probs_argmax": int(np.argmax(probs)),
               "max_prob": float(probs.max())}
        if args.doa:
            with open(args.doa, "w") as fh:
                json.dump(rec, fh, indent=2)
        print(json.dumps(rec))
    return 0


def cmd_report(args) -> int:
    from .harness.evaluate import read_rows
    from .harness.report import report

    rows = []
    for path in args.rows:
        rows.extend(read_rows(path))
    for name, path in report(rows, args.out_dir, args.plots).items():
        print(f"{name}: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="luseel", description="Text-queried binaural extraction and localization")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toy-corpus", help="write the synthetic toy clips and a manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=16)
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_toy_corpus)

    p = sub.add_parser("simulate", help="freeze an evaluation scene set")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None, help="number of scenes (default data.eval_scenes)")
    p.add_argument("--n-sources", type=int, choices=(2, 3), default=None)
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--prefix", default="eval")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train one variant")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a frozen scene set")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--doa", default=None, help="optional JSON-lines DoA export")
    p.add_argument("--corpus", default=None, help="manifest overriding the checkpoint's val corpus")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("infer", help="extract and locate one prompt in one recording")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--doa", default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("report", help="summary tables and figure data from metric rows")
    p.add_argument("--rows", required=True, nargs="+")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--plots", action="store_true", help="also render PNGs (needs matplotlib)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
