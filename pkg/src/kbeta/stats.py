"""Paired statistics for seed sweeps: exact small-sample tests plus the paired t.

Exact tests (Wilcoxon signed-rank, sign, McNemar) are computed with integer
arithmetic over the full null distribution, so their p-values carry no
approximation error. Two-sided p is min(1, 2 * min(lower tail, upper tail)) with
tails inclusive of the observed statistic, for every exact test here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special
from scipy import stats as _sps

WILCOXON_MAX_N = 200


@dataclass(frozen=True)
class TestResult:
    test: str
    statistic: float
    p: float
    n: int
    df: int | None = None
    ci: tuple[float, float] | None = None
    level: float | None = None
    effect_dz: float | None = None
    effect_r: float | None = None
    note: str | None = None

    def to_row(self) -> dict:
        row = {
            "test": self.test,
            "statistic": self.statistic,
            "p": self.p,
            "n": self.n,
        }
        if self.df is not None:
            row["df"] = self.df
        if self.ci is not None:
            row["ci_lo"], row["ci_hi"] = self.ci
            row["level"] = self.level
        if self.effect_dz is not None:
            row["effect_dz"] = self.effect_dz
        if self.effect_r is not None:
            row["effect_r"] = self.effect_r
        if self.note is not None:
            row["note"] = self.note
        return row


def paired_t(diffs: Sequence[float], level: float = 0.95) -> TestResult:
    """Two-sided one-sample t on paired differences, with CI and effect sizes.

    d_z = t / sqrt(n); r = sqrt(t^2 / (t^2 + df)).
    """
    d = np.asarray(diffs, dtype=np.float64)
    n = d.size
    if n < 2:
        raise ValueError("paired t needs at least 2 differences")
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        raise ValueError("degenerate sample: zero variance")
    mean = float(d.mean())
    se = sd / math.sqrt(n)
    t = mean / se
    df = n - 1
    p = float(2.0 * _sps.t.sf(abs(t), df))
    tcrit = float(_sps.t.ppf(0.5 + level / 2.0, df))
    ci = (mean - tcrit * se, mean + tcrit * se)
    dz = t / math.sqrt(n)
    r = math.sqrt(t * t / (t * t + df))
    return TestResult(
        test="paired_t", statistic=float(t), p=min(1.0, p), n=n, df=df,
        ci=ci, level=level, effect_dz=dz, effect_r=r,
    )


def _signed_ranks(diffs: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Drop zeros, midrank the absolute values; returns (ranks, signs)."""
    d = np.asarray(diffs, dtype=np.float64)
    if not np.isfinite(d).all():
        raise ValueError("non-finite difference")
    d = d[d != 0.0]
    if d.size == 0:
        raise ValueError("all differences are zero")
    order = np.abs(d)
    ranks = _sps.rankdata(order)  # midranks for ties
    return ranks, np.sign(d)


def wilcoxon_exact(diffs: Sequence[float]) -> TestResult:
    """Exact two-sided Wilcoxon signed-rank test.

    The null distribution of W+ is built by the subset-sum recursion over the
    (doubled, so tie midranks become integers) ranks; exact for any n, capped at
    n=200 to bound the quadratic table. Zero differences are dropped first.
    """
    ranks, signs = _signed_ranks(diffs)
    n = ranks.size
    if n > WILCOXON_MAX_N:
        raise ValueError(
            f"n={n} exceeds the exact-enumeration cap {WILCOXON_MAX_N}; "
            "use a large-sample approximation"
        )
    w_plus = float(ranks[signs > 0].sum())
    doubled = [int(round(2.0 * r)) for r in ranks]
    total = sum(doubled)
    # counts[s] = number of sign assignments with doubled rank sum s
    counts = [0] * (total + 1)
    counts[0] = 1
    for w in doubled:
        for s in range(total, w - 1, -1):
            if counts[s - w]:
                counts[s] += counts[s - w]
    w2 = int(round(2.0 * w_plus))
    denom = 1 << n
    le = sum(counts[: w2 + 1])
    ge = sum(counts[w2:])
    p = min(1.0, 2.0 * min(le, ge) / denom)
    return TestResult(test="wilcoxon_exact", statistic=w_plus, p=p, n=n)


def sign_test(wins: int, n: int) -> TestResult:
    """Exact two-sided sign test at null probability 1/2."""
    if n < 1 or not 0 <= wins <= n:
        raise ValueError("need 0 <= wins <= n with n >= 1")
    le = sum(math.comb(n, k) for k in range(0, wins + 1))
    ge = sum(math.comb(n, k) for k in range(wins, n + 1))
    p = min(1.0, 2.0 * min(le, ge) / (1 << n))
    return TestResult(test="sign", statistic=float(wins), p=p, n=n)


def mcnemar_exact(b: int, c: int) -> TestResult:
    """Exact McNemar test on discordant-pair counts (b, c)."""
    if b < 0 or c < 0:
        raise ValueError("counts must be non-negative")
    if b + c == 0:
        raise ValueError("no discordant pairs")
    inner = sign_test(b, b + c)
    return TestResult(test="mcnemar_exact", statistic=float(b), p=inner.p, n=b + c)


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Exact binomial proportion interval via Beta quantiles."""
    if n < 1 or not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n with n >= 1")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    alpha = 1.0 - level
    lo = 0.0 if k == 0 else float(special.betaincinv(k, n - k + 1, alpha / 2.0))
    hi = 1.0 if k == n else float(special.betaincinv(k + 1, n - k, 1.0 - alpha / 2.0))
    return lo, hi


@dataclass(frozen=True)
class RatioResult:
    ratio: float
    ci: tuple[float, float]
    n: int
    level: float
    degenerate: bool = False

    def to_row(self) -> dict:
        return {
            "test": "geo_mean_ratio",
            "ratio": self.ratio,
            "ci_lo": self.ci[0],
            "ci_hi": self.ci[1],
            "n": self.n,
            "level": self.level,
            "degenerate": self.degenerate,
        }


def geo_mean_ratio(
    baseline: Sequence[float], candidate: Sequence[float], level: float = 0.95
) -> RatioResult:
    """Geometric-mean ratio baseline/candidate with a back-transformed t CI.

    Works in log10: ratio = 10 ** mean(log10 b - log10 c); the CI is the t interval
    on that mean, exponentiated. Identical inputs give ratio 1.0 with a collapsed CI
    flagged as degenerate.
    """
    b = np.asarray(baseline, dtype=np.float64)
    c = np.asarray(candidate, dtype=np.float64)
    if b.shape != c.shape or b.ndim != 1:
        raise ValueError("inputs must be 1-d arrays of equal length")
    n = b.size
    if n < 2:
        raise ValueError("need at least 2 pairs")
    if not (b > 0).all() or not (c > 0).all():
        raise ValueError("ratios need strictly positive inputs")
    logs = np.log10(b) - np.log10(c)
    mean = float(logs.mean())
    sd = float(logs.std(ddof=1))
    ratio = float(10.0**mean)
    if sd == 0.0:
        return RatioResult(ratio=ratio, ci=(ratio, ratio), n=n, level=level, degenerate=True)
    se = sd / math.sqrt(n)
    tcrit = float(_sps.t.ppf(0.5 + level / 2.0, n - 1))
    ci = (float(10.0 ** (mean - tcrit * se)), float(10.0 ** (mean + tcrit * se)))
    return RatioResult(ratio=ratio, ci=ci, n=n, level=level)


def holm_adjust(pvalues: Sequence[float]) -> list[float]:
    """Holm step-down adjustment, returned in the input order."""
    ps = list(pvalues)
    if not ps:
        return []
    for p in ps:
        if not 0.0 <= p <= 1.0:
            raise ValueError("p-values must lie in [0, 1]")
    m = len(ps)
    order = sorted(range(m), key=lambda i: ps[i])
    adjusted = [0.0] * m
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, (m - rank) * ps[idx])
        adjusted[idx] = min(1.0, running)
    return adjusted
