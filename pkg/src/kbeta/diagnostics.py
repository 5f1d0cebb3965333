"""Per-step sunspike telemetry: records, snapshots, CSV round-trip, histograms.

Recording is observational only; enabling it must not perturb a trajectory, and the
optimizer guarantees that by never reading the record buffer. Buffers are drained
with :func:`snapshot_sunspike_history`, so long runs can flush periodically instead
of holding every record in memory.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

CSV_COLUMNS = ("step", "bucket", "sun", "beta2", "pooled_norm", "r")


@dataclass(frozen=True)
class SunspikeRecord:
    step: int
    bucket: str
    sun: float
    beta2: float
    pooled_norm: float
    r: float


def snapshot_sunspike_history(opt) -> list[SunspikeRecord]:
    """Drain and return the optimizer's accumulated records, ordered by (step, bucket)."""
    return opt.take_records()


def records_to_csv(records: Sequence[SunspikeRecord], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            # repr keeps the exact float64 value through the text round trip
            writer.writerow(
                [rec.step, rec.bucket, repr(rec.sun), repr(rec.beta2),
                 repr(rec.pooled_norm), repr(rec.r)]
            )


def records_from_csv(path: str) -> list[SunspikeRecord]:
    out: list[SunspikeRecord] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected diagnostics CSV header: {header}")
        for row in reader:
            out.append(
                SunspikeRecord(
                    step=int(row[0]), bucket=row[1], sun=float(row[2]),
                    beta2=float(row[3]), pooled_norm=float(row[4]), r=float(row[5]),
                )
            )
    return out


@dataclass(frozen=True)
class HistogramSummary:
    n: int
    sun_edges: tuple[float, ...]
    sun_counts: tuple[int, ...]
    sun_median: float
    sun_q25: float
    sun_q75: float
    beta2_edges: tuple[float, ...]
    beta2_counts: tuple[int, ...]
    beta2_median: float
    beta2_q25: float
    beta2_q75: float


def summarize_epoch(records: Sequence[SunspikeRecord], bins: int) -> HistogramSummary:
    """Histogram + quartiles of sun and beta2 over a window of records.

    Sun is binned over its full range [0, 1); beta2 over the observed span (widened
    by a hair when every value coincides, so the histogram stays well-formed).
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if not records:
        raise ValueError("no records to summarize")
    sun = np.array([rec.sun for rec in records], dtype=np.float64)
    beta2 = np.array([rec.beta2 for rec in records], dtype=np.float64)
    sun_counts, sun_edges = np.histogram(sun, bins=bins, range=(0.0, 1.0))
    lo, hi = float(beta2.min()), float(beta2.max())
    if lo == hi:
        lo, hi = lo - 1e-12, hi + 1e-12
    beta2_counts, beta2_edges = np.histogram(beta2, bins=bins, range=(lo, hi))
    q25, q50, q75 = (float(x) for x in np.percentile(sun, [25, 50, 75]))
    b25, b50, b75 = (float(x) for x in np.percentile(beta2, [25, 50, 75]))
    return HistogramSummary(
        n=len(records),
        sun_edges=tuple(float(e) for e in sun_edges),
        sun_counts=tuple(int(c) for c in sun_counts),
        sun_median=q50, sun_q25=q25, sun_q75=q75,
        beta2_edges=tuple(float(e) for e in beta2_edges),
        beta2_counts=tuple(int(c) for c in beta2_counts),
        beta2_median=b50, beta2_q25=b25, beta2_q75=b75,
    )
