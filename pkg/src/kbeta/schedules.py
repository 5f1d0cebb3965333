"""Learning-rate schedules: piecewise-constant maps and a cosine ramp-down.

Piecewise schedules are written "threshold:lr,threshold:lr,..." with strictly
increasing integer thresholds; the rate changes at the listed step, inclusive.
Asking for a step before the first threshold is an error rather than a silent
extrapolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class PiecewiseSchedule:
    """Sorted (threshold, lr) pairs; lr_at picks the last threshold <= step."""

    breakpoints: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        if not self.breakpoints:
            raise ValueError("schedule needs at least one breakpoint")
        prev = None
        for step, lr in self.breakpoints:
            if prev is not None and step <= prev:
                raise ValueError(f"thresholds must be strictly increasing, got {step} after {prev}")
            if not lr > 0:
                raise ValueError(f"lr must be positive at threshold {step}")
            prev = step


def parse_schedule(spec: str) -> PiecewiseSchedule:
    """Parse "t1:lr1,t2:lr2,..." (spaces tolerated). Errors name the offending pair."""
    pairs: list[tuple[int, float]] = []
    chunks = spec.split(",")
    for idx, chunk in enumerate(chunks, start=1):
        text = chunk.strip()
        if not text:
            raise ValueError(f"schedule pair {idx} is empty in {spec!r}")
        if ":" not in text:
            raise ValueError(f"schedule pair {idx} ({text!r}) is missing ':'")
        left, right = text.split(":", 1)
        try:
            step = int(left.strip())
        except ValueError:
            raise ValueError(f"schedule pair {idx}: bad threshold {left.strip()!r}") from None
        try:
            lr = float(right.strip())
        except ValueError:
            raise ValueError(f"schedule pair {idx}: bad lr {right.strip()!r}") from None
        if not lr > 0:
            raise ValueError(f"schedule pair {idx}: lr must be positive, got {lr}")
        if pairs and step <= pairs[-1][0]:
            raise ValueError(
                f"schedule pair {idx}: threshold {step} does not increase past {pairs[-1][0]}"
            )
        pairs.append((step, lr))
    return PiecewiseSchedule(breakpoints=tuple(pairs))


def lr_at(schedule: PiecewiseSchedule, step: int) -> float:
    first = schedule.breakpoints[0][0]
    if step < first:
        raise ValueError(f"step {step} precedes first schedule threshold {first}")
    current = schedule.breakpoints[0][1]
    for threshold, lr in schedule.breakpoints:
        if step >= threshold:
            current = lr
        else:
            break
    return current


@dataclass(frozen=True)
class CosineSchedule:
    """Half-cosine decay from init_lr to end_lr over ramp_steps, flat afterwards."""

    init_lr: float
    end_lr: float
    ramp_steps: int

    def __post_init__(self) -> None:
        if not self.init_lr > 0 or not self.end_lr > 0:
            raise ValueError("rates must be positive")
        if self.end_lr > self.init_lr:
            raise ValueError("end_lr must not exceed init_lr")
        if self.ramp_steps < 1:
            raise ValueError("ramp_steps must be >= 1")


def cosine_lr_at(schedule: CosineSchedule, step: int) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    if step > schedule.ramp_steps:
        return schedule.end_lr
    frac = step / schedule.ramp_steps
    return float(
        schedule.end_lr
        + 0.5 * (schedule.init_lr - schedule.end_lr) * (1.0 + math.cos(math.pi * frac))
    )
