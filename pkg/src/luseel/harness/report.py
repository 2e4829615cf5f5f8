"""Summary tables and figure data from per-scene metric rows.

Outputs, all CSV:

* ``summary.csv`` -- one line per (variant, n_sources) with mean SI-SNRi,
  SDRi, collar accuracy (percent) and MAE, plus the variant's task, GCC and
  channel columns.
* ``separation_hist.csv`` -- SI-SNRi and MAE averaged in nine 20-degree bins of
  target-to-nearest-interferer separation.
* ``scatter.csv`` -- per-scene (SI-SNRi, MAE) pairs for scenes that have both.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from ..system import VARIANTS

log = logging.getLogger(__name__)

SUMMARY_FIELDS = ["variant", "n_sources", "tasks", "gcc_phat", "channels", "n_scenes",
                  "si_snri", "sdri", "accuracy", "mae"]
HIST_FIELDS = ["variant", "n_sources", "bin_lo", "bin_hi", "count", "si_snri", "mae"]
SCATTER_FIELDS = ["variant", "n_sources", "scene_id", "sep_angle_deg", "si_snri", "mae"]
BIN_WIDTH = 20.0
N_SEP_BINS = 9


def separation_bin(sep_deg: float) -> int:
    """Index of the 20-degree bin; the last bin is closed at 180."""
    return min(int(sep_deg // BIN_WIDTH), N_SEP_BINS - 1)


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def _fmt(v) -> str:
    return "" if v is None else f"{v:.4f}"


def summarize(rows: list[dict]) -> list[dict]:
    groups: dict[tuple[str, int], list[dict]] = {}
    for r in rows:
        groups.setdefault((r["variant"], r["n_sources"]), []).append(r)
    out = []
    for (variant, n_src), rs in sorted(groups.items()):
        v = VARIANTS.get(variant)
        hits = _mean([r["doa_hit"] for r in rs])
        out.append({
            "variant": variant, "n_sources": n_src,
            "tasks": v.tasks if v else "", "gcc_phat": int(v.use_gcc) if v else "",
            "channels": v.channels if v else "", "n_scenes": len(rs),
            "si_snri": _mean([r["si_snri"] for r in rs]), "sdri": _mean([r["sdri"] for r in rs]),
            "accuracy": None if hits is None else 100.0 * hits, "mae": _mean([r["mae"] for r in rs]),
        })
    return out


def separation_histogram(rows: list[dict]) -> list[dict]:
    groups: dict[tuple[str, int, int], list[dict]] = {}
    keys = sorted({(r["variant"], r["n_sources"]) for r in rows})
    for r in rows:
        groups.setdefault((r["variant"], r["n_sources"], separation_bin(r["sep_angle_deg"])), []).append(r)
    out = []
    for variant, n_src in keys:
        for b in range(N_SEP_BINS):
            rs = groups.get((variant, n_src, b), [])
            out.append({"variant": variant, "n_sources": n_src, "bin_lo": b * BIN_WIDTH,
                        "bin_hi": (b + 1) * BIN_WIDTH, "count": len(rs),
                        "si_snri": _mean([r["si_snri"] for r in rs]), "mae": _mean([r["mae"] for r in rs])})
    return out


def scatter(rows: list[dict]) -> list[dict]:
    return [{k: r[k] for k in SCATTER_FIELDS} for r in rows if r["si_snri"] is not None and r["mae"] is not None]


def _write(path: Path, fields: list[str], records: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fields, lineterminator="\n")
        w.writeheader()
        for rec in records:
            w.writerow({k: (_fmt(v) if isinstance(v, float) or v is None else v) for k, v in rec.items()})


def report(rows: list[dict], out_dir: str | Path, plots: bool = False) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"summary": out_dir / "summary.csv", "separation_hist": out_dir / "separation_hist.csv",
             "scatter": out_dir / "scatter.csv"}
    _write(paths["summary"], SUMMARY_FIELDS, summarize(rows))
    hist = separation_histogram(rows)
    _write(paths["separation_hist"], HIST_FIELDS, hist)
    pts = scatter(rows)
    _write(paths["scatter"], SCATTER_FIELDS, pts)
    if plots and rows:
        paths.update(_plot(hist, pts, out_dir))
    return paths


def _plot(hist: list[dict], pts: list[dict], out_dir: Path) -> dict[str, Path]:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping plots")
        return {}
    made = {}
    for metric, fname in (("si_snri", "hist_si_snri.png"), ("mae", "hist_mae.png")):
        series = {}
        for h in hist:
            series.setdefault((h["variant"], h["n_sources"]), []).append(h[metric])
        if not any(v is not None for vals in series.values() for v in vals):
            continue
        fig, ax = plt.subplots(figsize=(6, 3.5))
        width = BIN_WIDTH / (len(series) + 1)
        for j, ((variant, n_src), vals) in enumerate(sorted(series.items())):
            centers = np.arange(N_SEP_BINS) * BIN_WIDTH + width * (j + 0.5)
            ax.bar(centers, [np.nan if v is None else v for v in vals], width, label=f"{variant} ({n_src} src)")
        ax.set_xlabel("separation angle (deg)")
        ax.set_ylabel("SI-SNRi (dB)" if metric == "si_snri" else "MAE (deg)")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out_dir / fname, dpi=120)
        plt.close(fig)
        made[metric + "_plot"] = out_dir / fname
    if pts:
        fig, ax = plt.subplots(figsize=(4, 4))
        for variant in sorted({p["variant"] for p in pts}):
            sel = [p for p in pts if p["variant"] == variant]
            ax.scatter([p["si_snri"] for p in sel], [p["mae"] for p in sel], s=6, label=variant)
        ax.set_xlabel("SI-SNRi (dB)")
        ax.set_ylabel("MAE (deg)")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out_dir / "scatter.png", dpi=120)
        plt.close(fig)
        made["scatter_plot"] = out_dir / "scatter.png"
    return made
