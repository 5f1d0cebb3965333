"""Desk-scale training problems.

Three deterministic convex sanity problems (least squares, separable logistic
classification, and a concave-utility ascent phrased as descent on its negation)
plus a stochastic rare-trigger detection task whose gradient signal for one
embedding row arrives in rare bursts.

Every problem draws its data and init through the seeded Philox streams from
:mod:`kbeta.core`: stream 0 is parameter init, stream 1 is the fixed dataset for
the sanity problems, and stream s >= 1 is the step-s batch for the rare-trigger
task. Problem sizes live in the config dataclasses below, not in code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import expit

from .core import ParamTree, Rng


def bce_with_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy, computed in the overflow-safe form
    max(z, 0) - z*y + log(1 + exp(-|z|)). Always accumulates in float64."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(per.mean())


@dataclass(frozen=True)
class ToyProblem:
    """A fixed-data problem: full-batch loss/grad plus a gradient-check sampler."""

    name: str
    params0: ParamTree
    batch: object
    loss: Callable[[ParamTree, object], float]
    grad: Callable[[ParamTree, object], ParamTree]
    default_steps: int
    default_lr: float
    config: dict = field(default_factory=dict)
    accuracy: Callable[[ParamTree, object], float] | None = None
    sample_case: Callable[[int], tuple[ParamTree, object]] | None = None


# -- least squares -----------------------------------------------------------


@dataclass(frozen=True)
class Sanity1Config:
    n: int = 256
    d: int = 16
    noise: float = 0.007


class _LinearBatch(NamedTuple):
    x: np.ndarray
    y: np.ndarray


def _ls_loss(params: ParamTree, batch: _LinearBatch) -> float:
    r = batch.x @ params["w"] + params["b"] - batch.y
    return float(np.asarray(r, dtype=np.float64) @ np.asarray(r, dtype=np.float64)) / r.size


def _ls_grad(params: ParamTree, batch: _LinearBatch) -> ParamTree:
    r = batch.x @ params["w"] + params["b"] - batch.y
    scale = 2.0 / r.size
    return {
        "b": np.asarray(scale * r.sum(), dtype=params["b"].dtype),
        "w": (scale * (batch.x.T @ r)).astype(params["w"].dtype, copy=False),
    }


def make_sanity1(
    seed: int, dtype=np.float64, cfg: Sanity1Config = Sanity1Config()
) -> ToyProblem:
    """Noisy linear regression; the attainable MSE floor is the noise variance."""
    rng = Rng(seed, 1)
    x = rng.normal((cfg.n, cfg.d))
    w_true = rng.normal(cfg.d)
    b_true = float(rng.normal(1)[0])
    y = x @ w_true + b_true + cfg.noise * rng.normal(cfg.n)
    batch = _LinearBatch(x=x.astype(dtype), y=y.astype(dtype))
    params0: ParamTree = {"b": np.zeros((), dtype=dtype), "w": np.zeros(cfg.d, dtype=dtype)}

    def sample_case(case_seed: int) -> tuple[ParamTree, _LinearBatch]:
        r = Rng(case_seed, 7)
        idx = r.uniform_int(0, cfg.n - 1, 8)
        params = {"b": np.asarray(float(r.normal(1)[0])), "w": r.normal(cfg.d)}
        return params, _LinearBatch(x=batch.x[idx].astype(np.float64), y=batch.y[idx].astype(np.float64))

    return ToyProblem(
        name="sanity1", params0=params0, batch=batch,
        loss=_ls_loss, grad=_ls_grad,
        default_steps=10_000, default_lr=1e-3,
        config={"n": cfg.n, "d": cfg.d, "noise": cfg.noise},
        sample_case=sample_case,
    )


# -- separable logistic ------------------------------------------------------


@dataclass(frozen=True)
class Sanity2Config:
    n: int = 200
    d: int = 8
    margin: float = 0.1
    oversample: int = 6


@dataclass(frozen=True)
class Sanity3Config:
    n: int = 160
    d: int = 6
    margin: float = 0.1
    oversample: int = 6


def _logit_loss(params: ParamTree, batch: _LinearBatch) -> float:
    z = batch.x @ params["w"] + params["b"]
    return bce_with_logits(z, batch.y)


def _logit_grad(params: ParamTree, batch: _LinearBatch) -> ParamTree:
    z = batch.x @ params["w"] + params["b"]
    resid = (expit(z) - batch.y) / z.size
    return {
        "b": np.asarray(resid.sum(), dtype=params["b"].dtype),
        "w": (batch.x.T @ resid).astype(params["w"].dtype, copy=False),
    }


def _logit_accuracy(params: ParamTree, batch: _LinearBatch) -> float:
    z = batch.x @ params["w"] + params["b"]
    return float(((z > 0) == (batch.y > 0.5)).mean())


def _separable_batch(rng: Rng, n: int, d: int, margin: float, oversample: int) -> _LinearBatch:
    w_true = rng.normal(d)
    w_true = w_true / float(np.linalg.norm(w_true))
    x_pool = rng.normal((oversample * n, d))
    m = x_pool @ w_true
    keep = np.abs(m) >= margin
    if keep.sum() < n:
        raise RuntimeError("margin filter rejected too many samples; raise oversample")
    x = x_pool[keep][:n]
    y = (x @ w_true > 0).astype(np.float64)
    return _LinearBatch(x=x, y=y)


def _make_logistic(
    name: str, seed: int, dtype, n: int, d: int, margin: float, oversample: int,
    default_steps: int, default_lr: float,
) -> ToyProblem:
    raw = _separable_batch(Rng(seed, 1), n, d, margin, oversample)
    batch = _LinearBatch(x=raw.x.astype(dtype), y=raw.y.astype(dtype))
    params0: ParamTree = {"b": np.zeros((), dtype=dtype), "w": np.zeros(d, dtype=dtype)}

    def sample_case(case_seed: int) -> tuple[ParamTree, _LinearBatch]:
        r = Rng(case_seed, 7)
        idx = r.uniform_int(0, n - 1, 8)
        params = {"b": np.asarray(float(r.normal(1)[0])), "w": r.normal(d)}
        return params, _LinearBatch(x=raw.x[idx], y=raw.y[idx])

    return ToyProblem(
        name=name, params0=params0, batch=batch,
        loss=_logit_loss, grad=_logit_grad,
        default_steps=default_steps, default_lr=default_lr,
        config={"n": n, "d": d, "margin": margin},
        accuracy=_logit_accuracy, sample_case=sample_case,
    )


def make_sanity2(
    seed: int, dtype=np.float64, cfg: Sanity2Config = Sanity2Config()
) -> ToyProblem:
    """Linearly separable logistic regression; loss can fall without bound toward 0."""
    return _make_logistic(
        "sanity2", seed, dtype, cfg.n, cfg.d, cfg.margin, cfg.oversample,
        default_steps=20_000, default_lr=1e-2,
    )


def make_sanity3(
    seed: int, dtype=np.float64, cfg: Sanity3Config = Sanity3Config()
) -> ToyProblem:
    """Concave-utility ascent: maximize u = -BCE by descending its negation, so the
    reported loss is -u and the optimum is 0 from above."""
    return _make_logistic(
        "sanity3", seed, dtype, cfg.n, cfg.d, cfg.margin, cfg.oversample,
        default_steps=50_000, default_lr=5e-2,
    )


# -- rare trigger detection --------------------------------------------------


@dataclass(frozen=True)
class RareTriggerConfig:
    """Padded token sequences where one reserved id fires the positive label.

    Background tokens are uniform over [1, trigger_id - 1]; id 0 is padding and the
    trigger id is written only by the trigger branch, so the positive rate equals
    p_trigger. The label is still derived from token content, not the branch flag.
    """

    batch_size: int = 64
    embed_dim: int = 64
    len_min: int = 80
    len_max: int = 256
    p_trigger: float = 0.01
    vocab: int = 256
    pad_id: int = 0
    trigger_id: int = 255
    steps: int = 30_000
    lr: float = 1e-2
    warmup_untimed: int = 10

    def __post_init__(self) -> None:
        if self.pad_id != 0:
            raise ValueError("pad_id must be 0")
        if self.trigger_id != self.vocab - 1:
            raise ValueError("trigger_id must be the top vocabulary id")
        if self.trigger_id < 2:
            raise ValueError("vocabulary too small for pad + background + trigger")
        if not 1 <= self.len_min <= self.len_max:
            raise ValueError("need 1 <= len_min <= len_max")
        if not 0.0 <= self.p_trigger <= 1.0:
            raise ValueError("p_trigger must lie in [0, 1]")
        if self.batch_size < 1 or self.embed_dim < 1:
            raise ValueError("batch_size and embed_dim must be positive")


class RareBatch(NamedTuple):
    tokens: np.ndarray   # (B, len_max) int64, 0-padded
    lengths: np.ndarray  # (B,) int64
    labels: np.ndarray   # (B,) float64 in {0, 1}


def gen_rare_trigger_batch(rng: Rng, cfg: RareTriggerConfig) -> RareBatch:
    """Draw one batch. Order of draws is fixed (lengths, tokens, trigger coin,
    trigger position) so streams are reproducible."""
    b, lmax = cfg.batch_size, cfg.len_max
    lengths = rng.uniform_int(cfg.len_min, cfg.len_max, b)
    tokens = rng.uniform_int(1, cfg.trigger_id - 1, (b, lmax))
    valid = np.arange(lmax)[None, :] < lengths[:, None]
    tokens = np.where(valid, tokens, cfg.pad_id)
    coin = rng.uniform(b)
    pos = np.minimum((rng.uniform(b) * lengths).astype(np.int64), lengths - 1)
    fire = coin < cfg.p_trigger
    rows = np.nonzero(fire)[0]
    tokens[rows, pos[rows]] = cfg.trigger_id
    labels = ((tokens == cfg.trigger_id) & valid).any(axis=1).astype(np.float64)
    return RareBatch(tokens=tokens, lengths=lengths, labels=labels)


def init_rare_trigger_params(rng: Rng, cfg: RareTriggerConfig, dtype=np.float64) -> ParamTree:
    embed = rng.normal((cfg.vocab, cfg.embed_dim)).astype(dtype)
    head_w = rng.normal(cfg.embed_dim).astype(dtype)
    return {
        "embed": embed,
        "head_b": np.zeros((), dtype=dtype),
        "head_w": head_w,
    }


def _token_counts(batch: RareBatch, vocab: int, pad_id: int) -> np.ndarray:
    """Per-row token occurrence counts, (B, vocab) int64, padding excluded."""
    b = batch.tokens.shape[0]
    offsets = batch.tokens + (np.arange(b, dtype=np.int64)[:, None] * vocab)
    counts = np.bincount(offsets.ravel(), minlength=b * vocab).reshape(b, vocab)
    counts[:, pad_id] = 0
    return counts


def rare_trigger_forward(params: ParamTree, batch: RareBatch, cfg: RareTriggerConfig) -> np.ndarray:
    """Logits of the mean-pooled embedding model.

    Mean pooling over valid positions is computed as counts @ E / length, which is
    the same sum regrouped by vocabulary id; rows never seen in the batch therefore
    contribute (and later receive) exactly nothing.
    """
    dtype = params["embed"].dtype
    counts = _token_counts(batch, cfg.vocab, cfg.pad_id).astype(dtype)
    pooled = (counts @ params["embed"]) / batch.lengths[:, None].astype(dtype)
    return pooled @ params["head_w"] + params["head_b"]


def rare_trigger_loss(params: ParamTree, batch: RareBatch, cfg: RareTriggerConfig) -> float:
    return bce_with_logits(rare_trigger_forward(params, batch, cfg), batch.labels)


def rare_trigger_accuracy(params: ParamTree, batch: RareBatch, cfg: RareTriggerConfig) -> float:
    z = rare_trigger_forward(params, batch, cfg)
    return float(((z > 0) == (batch.labels > 0.5)).mean())


def rare_trigger_grad(params: ParamTree, batch: RareBatch, cfg: RareTriggerConfig) -> ParamTree:
    dtype = params["embed"].dtype
    counts = _token_counts(batch, cfg.vocab, cfg.pad_id).astype(dtype)
    inv_len = 1.0 / batch.lengths.astype(dtype)
    pooled = (counts @ params["embed"]) * inv_len[:, None]
    z = pooled @ params["head_w"] + params["head_b"]
    resid = (expit(z) - batch.labels.astype(dtype)) / z.size
    d_embed = (counts * inv_len[:, None]).T @ np.outer(resid, params["head_w"])
    return {
        "embed": d_embed.astype(dtype, copy=False),
        "head_b": np.asarray(resid.sum(), dtype=dtype),
        "head_w": (pooled.T @ resid).astype(dtype, copy=False),
    }
