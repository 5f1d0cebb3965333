"""Figure rendering for the report path.

Everything here draws from the harness's data artifacts (run JSON, sweep.csv,
diagnostics CSV) and writes PNG files next to them. The library proper never
imports this module; it exists for the CLI's report output.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .diagnostics import SunspikeRecord, records_from_csv  # noqa: E402
from .harness import RunReport, SweepReport  # noqa: E402


def plot_run(report: RunReport, out_png: str | Path) -> Path:
    """Loss trajectory for a single run; log scale when losses allow it."""
    steps = [row["step"] for row in report.series if row["loss"] is not None]
    losses = [row["loss"] for row in report.series if row["loss"] is not None]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(steps, losses, lw=1.2)
    if losses and min(losses) > 0:
        ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(f"{report.testbed} / {report.optimizer} / seed {report.seed}")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out = Path(out_png)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def plot_sweep(sweep: SweepReport, out_png: str | Path) -> Path:
    """Final loss per seed for every optimizer in a sweep."""
    fig, ax = plt.subplots(figsize=(6.4, 3.8))
    markers = ["o", "s", "^", "d", "v"]
    for i, label in enumerate(sweep.optimizers):
        ys = sweep.finals[label]
        xs = sweep.seeds
        pts = [(x, y) for x, y in zip(xs, ys) if y is not None]
        if pts:
            ax.plot(
                [p[0] for p in pts], [p[1] for p in pts],
                markers[i % len(markers)], label=label, alpha=0.8, ms=6, ls="",
            )
    vals = [y for ys in sweep.finals.values() for y in ys if y is not None]
    if vals and min(vals) > 0:
        ax.set_yscale("log")
    ax.set_xlabel("seed")
    ax.set_ylabel("final loss")
    ax.set_title(f"{sweep.testbed} sweep")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    out = Path(out_png)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def plot_sunspike(records: Sequence[SunspikeRecord], out_png: str | Path) -> Path:
    """Sunspike score and resulting beta2 over training, per bucket."""
    by_bucket: dict[str, list[SunspikeRecord]] = defaultdict(list)
    for rec in records:
        by_bucket[rec.bucket].append(rec)
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.4, 4.8), sharex=True)
    many = len(by_bucket) > 10
    for bucket, recs in sorted(by_bucket.items()):
        recs = sorted(recs, key=lambda r: r.step)
        xs = [r.step for r in recs]
        kwargs = {"lw": 0.6, "alpha": 0.35} if many else {"lw": 0.9, "label": bucket}
        ax1.plot(xs, [r.sun for r in recs], **kwargs)
        ax2.plot(xs, [r.beta2 for r in recs], **kwargs)
    ax1.set_ylabel("sunspike")
    ax1.set_ylim(-0.02, 1.02)
    ax2.set_ylabel("beta2")
    ax2.set_xlabel("step")
    for ax in (ax1, ax2):
        ax.grid(True, alpha=0.3)
    if not many and len(by_bucket) > 1:
        ax1.legend(fontsize=7)
    fig.tight_layout()
    out = Path(out_png)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def _plot_sweep_csv(csv_path: Path, out_png: Path) -> Path:
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    by_opt: dict[str, list[tuple[int, float]]] = defaultdict(list)
    testbed = rows[0]["testbed"] if rows else "sweep"
    for row in rows:
        if row["final_loss"]:
            by_opt[row["optimizer"]].append((int(row["seed"]), float(row["final_loss"])))
    fig, ax = plt.subplots(figsize=(6.4, 3.8))
    markers = ["o", "s", "^", "d", "v"]
    for i, (label, pts) in enumerate(sorted(by_opt.items())):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts],
                markers[i % len(markers)], ls="", label=label, alpha=0.8, ms=6)
    vals = [p[1] for pts in by_opt.values() for p in pts]
    if vals and min(vals) > 0:
        ax.set_yscale("log")
    ax.set_xlabel("seed")
    ax.set_ylabel("final loss")
    ax.set_title(f"{testbed} sweep")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def render_report_dir(out_dir: str | Path) -> list[Path]:
    """Render figures for every data artifact under a harness output directory."""
    out_dir = Path(out_dir)
    written: list[Path] = []
    for run_json in sorted(out_dir.glob("runs/*/*/seed*.json")):
        report = RunReport.from_json(run_json.read_text())
        written.append(plot_run(report, run_json.with_suffix(".png")))
    for diag_csv in sorted(out_dir.glob("runs/*/*/seed*_diag.csv")):
        records = records_from_csv(diag_csv)
        if records:
            written.append(plot_sunspike(records, diag_csv.with_suffix(".png")))
    sweep_csv = out_dir / "sweep.csv"
    if sweep_csv.exists():
        written.append(_plot_sweep_csv(sweep_csv, out_dir / "sweep.png"))
    return written
