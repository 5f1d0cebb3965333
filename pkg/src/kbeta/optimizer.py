"""Adam-family optimizers over parameter trees.

``Kbeta`` is Adam with a dynamically discounted second moment: gradients are pooled
into buckets, each bucket tracks an EMA of its pooled L2 norm, and the ratio of the
current norm to that EMA is squashed into a bounded "sunspike" score that slides
beta2 between ``beta2_max`` (calm) and ``beta2_min`` (spiky). ``Adam`` is the plain
baseline with optional bias correction. Setting ``beta2_min == beta2_max`` with bias
correction "none"/"beta2max" and no v_max buffer makes Kbeta reproduce Adam exactly;
that equivalence is load-bearing and enforced by tests.

All scalar bookkeeping is kept in python floats so float32 parameter trees stay
float32 under numpy's promotion rules.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from .core import ParamTree, pooled_l2_norm, tree_items, validate_same_structure
from .diagnostics import SunspikeRecord

BUCKET_MODES = ("global", "per_path", "shape")
BIAS_CORRECTION_MODES = ("none", "beta2max", "exact")

CHECKPOINT_VERSION = 1

BucketKey = int | str | tuple[int, ...]


def bucket_key(path: str, shape: tuple[int, ...], mode: str) -> BucketKey:
    """Map a parameter to its bucket.

    global: every parameter shares bucket 0. per_path: one bucket per path string.
    shape: parameters bucket by exact shape, scalars together.
    """
    if mode == "global":
        return 0
    if mode == "per_path":
        return path
    if mode == "shape":
        return tuple(int(d) for d in shape)
    raise ValueError(f"unknown bucket mode '{mode}'")


def bucket_label(key: BucketKey) -> str:
    """Stable string form of a bucket key, used in records and CSV output."""
    if isinstance(key, tuple):
        return "x".join(str(d) for d in key) if key else "()"
    return str(key)


def ema_update(r_prev: float, norm: float, alpha: float) -> float:
    """One step of the pooled-norm EMA: alpha * r_prev + (1 - alpha) * norm."""
    if r_prev < 0 or norm < 0:
        raise ValueError("EMA operands must be non-negative")
    return float(alpha * r_prev + (1.0 - alpha) * norm)


def sunspike(norm: float, r: float, tiny_spike: float, t: int, warmup_steps: int) -> float:
    """Bounded spike score in [0, 1): raw = norm / (r + tiny_spike), sun = raw / (1 + raw).

    ``r`` must already include this step's EMA update. During warmup (1-indexed steps
    t <= warmup_steps) the score is pinned to 0 while the EMA keeps accumulating.
    """
    if t <= warmup_steps:
        return 0.0
    raw = norm / (r + tiny_spike)
    return float(raw / (1.0 + raw))


def dynamic_beta2(sun: float, cfg: "KbetaConfig", t: int) -> float:
    """beta2 for this step: the [beta2_min, beta2_max] midpoint during warmup, else
    beta2_max - (beta2_max - beta2_min) * sun."""
    if t <= cfg.warmup_steps:
        return float(0.5 * (cfg.beta2_min + cfg.beta2_max))
    return float(cfg.beta2_max - (cfg.beta2_max - cfg.beta2_min) * sun)


def moment_update(
    m: np.ndarray, v: np.ndarray, g: np.ndarray, beta1: float, beta2: float
) -> tuple[np.ndarray, np.ndarray]:
    m_new = beta1 * m + (1.0 - beta1) * g
    v_new = beta2 * v + (1.0 - beta2) * (g * g)
    return m_new, v_new


def vhat_select(
    v: np.ndarray,
    v_max: np.ndarray | None,
    decay: float | None,
    max_ratio: float | None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Pick the second moment used in the denominator and advance the max buffer.

    No buffer configured: vhat = v. Otherwise the buffer follows
    v_max' = max(decay_eff * v_max, v) and vhat = v_max', where decay_eff is 1.0 for
    hard max tracking (decay=1.0, or decay unset with clipping on) and 0.0 degenerates
    the buffer to v itself.
    """
    needs_buffer = decay is not None or max_ratio is not None
    if not needs_buffer:
        if v_max is not None:
            raise ValueError("v_max buffer supplied but config does not use one")
        return v, None
    if v_max is None:
        raise ValueError("config requires a v_max buffer but none was supplied")
    decay_eff = 1.0 if decay is None else float(decay)
    v_max_new = np.maximum(decay_eff * v_max, v)
    return v_max_new, v_max_new


def bias_factors(
    mode: str, beta1: float, beta2_max: float, log_cumprod: float, t: int
) -> tuple[float, float]:
    """(a1, b2) divisors for the first and second moment.

    "none" applies no correction. "beta2max" corrects as if beta2 were pinned at
    beta2_max. "exact" uses the realized per-step product of beta2 values, carried by
    the caller as a running sum of logs so long products stay accurate:
    b2 = 1 - exp(sum log beta2_i) = -expm1(log_cumprod).
    """
    if mode == "none":
        return 1.0, 1.0
    if t < 1:
        raise ValueError("bias correction needs t >= 1")
    a1 = 1.0 - beta1**t
    if mode == "beta2max":
        return float(a1), float(1.0 - beta2_max**t)
    if mode == "exact":
        return float(a1), float(-math.expm1(log_cumprod))
    raise ValueError(f"unknown bias correction mode '{mode}'")


@dataclass
class KbetaConfig:
    """Hyperparameters; construction validates every range."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2_min: float = 0.88
    beta2_max: float = 0.999
    alpha: float = 0.93
    eps: float = 1e-8
    tiny_spike: float = 1e-9
    tiny_denom: float = 1e-8
    decay: float | None = None
    max_ratio: float | None = None
    adaptive_tiny: bool = False
    bias_correction: str = "none"
    warmup_steps: int = 0
    bucket_mode: str = "global"
    diagnostics: bool = False

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.beta1 < 1.0:
            raise ValueError("beta1 must lie in [0, 1)")
        if not 0.0 < self.beta2_min <= self.beta2_max < 1.0:
            raise ValueError("need 0 < beta2_min <= beta2_max < 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        for name in ("eps", "tiny_spike", "tiny_denom"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.decay is not None and not 0.0 <= self.decay <= 1.0:
            raise ValueError("decay must be None or in [0, 1]")
        if self.max_ratio is not None and not self.max_ratio > 0:
            raise ValueError("max_ratio must be None or positive")
        if self.bias_correction not in BIAS_CORRECTION_MODES:
            raise ValueError(f"bias_correction must be one of {BIAS_CORRECTION_MODES}")
        if self.warmup_steps < 0 or int(self.warmup_steps) != self.warmup_steps:
            raise ValueError("warmup_steps must be a non-negative integer")
        if self.bucket_mode not in BUCKET_MODES:
            raise ValueError(f"bucket_mode must be one of {BUCKET_MODES}")

    @property
    def uses_vmax(self) -> bool:
        return self.decay is not None or self.max_ratio is not None


@dataclass
class _Slot:
    m: np.ndarray
    v: np.ndarray
    v_max: np.ndarray | None = None


@dataclass
class _Bucket:
    key: BucketKey
    paths: list[str]
    r: float = 0.0
    log_beta2_cumprod: float = 0.0
    last_sun: float = 0.0
    last_beta2: float = 0.0


def _validate_grads(params: ParamTree, grads: ParamTree) -> None:
    validate_same_structure(params, grads)
    for path, g in tree_items(grads):
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient at '{path}'")


class Kbeta:
    """Sunspike-driven Adam variant. One instance per trajectory; steps must not
    be issued concurrently."""

    def __init__(self, params: ParamTree, config: KbetaConfig):
        if not params:
            raise ValueError("empty parameter tree")
        self.config = config
        self.t = 0
        self.slots: dict[str, _Slot] = {}
        for path, p in tree_items(params):
            self.slots[path] = _Slot(
                m=np.zeros_like(p),
                v=np.zeros_like(p),
                v_max=np.zeros_like(p) if config.uses_vmax else None,
            )
        grouped: dict[str, _Bucket] = {}
        for path, p in tree_items(params):
            key = bucket_key(path, p.shape, config.bucket_mode)
            lbl = bucket_label(key)
            if lbl not in grouped:
                grouped[lbl] = _Bucket(key=key, paths=[])
            grouped[lbl].paths.append(path)
        # canonical bucket order: by label
        self.buckets: dict[str, _Bucket] = {lbl: grouped[lbl] for lbl in sorted(grouped)}
        self._records: list[SunspikeRecord] = []

    def step(self, params: ParamTree, grads: ParamTree, lr: float | None = None) -> ParamTree:
        """Apply one update; returns the new parameter tree, state advances in place."""
        cfg = self.config
        lr = cfg.lr if lr is None else float(lr)
        if not lr > 0:
            raise ValueError("lr must be positive")
        _validate_grads(params, grads)
        if sorted(params) != sorted(self.slots):
            raise ValueError("parameter tree does not match optimizer state")
        self.t += 1
        t = self.t

        beta2_of: dict[str, float] = {}
        b2_exact_of: dict[str, float] = {}
        for lbl, bucket in self.buckets.items():
            norm = pooled_l2_norm(grads[p] for p in bucket.paths)
            bucket.r = ema_update(bucket.r, norm, cfg.alpha)
            sun = sunspike(norm, bucket.r, cfg.tiny_spike, t, cfg.warmup_steps)
            beta2 = dynamic_beta2(sun, cfg, t)
            bucket.last_sun = sun
            bucket.last_beta2 = beta2
            if cfg.bias_correction == "exact":
                bucket.log_beta2_cumprod += math.log(beta2)
                b2_exact_of[lbl] = bucket.log_beta2_cumprod
            beta2_of[lbl] = beta2
            if cfg.diagnostics:
                self._records.append(
                    SunspikeRecord(
                        step=t, bucket=lbl, sun=sun, beta2=beta2,
                        pooled_norm=norm, r=bucket.r,
                    )
                )

        new_params: ParamTree = {}
        for lbl, bucket in self.buckets.items():
            beta2 = beta2_of[lbl]
            a1, b2 = bias_factors(
                cfg.bias_correction, cfg.beta1, cfg.beta2_max,
                b2_exact_of.get(lbl, 0.0), t,
            )
            for path in bucket.paths:
                slot = self.slots[path]
                p, g = params[path], grads[path]
                slot.m, slot.v = moment_update(slot.m, slot.v, g, cfg.beta1, beta2)
                vhat, slot.v_max = vhat_select(slot.v, slot.v_max, cfg.decay, cfg.max_ratio)
                denom = np.sqrt(vhat / b2) + cfg.eps
                if cfg.adaptive_tiny:
                    # scale floor uses the pre-update parameter magnitude
                    denom = denom + cfg.tiny_denom * max(float(np.abs(p).mean()), 1.0)
                delta = (lr / a1) * slot.m / denom
                if cfg.max_ratio is not None:
                    bound = lr * cfg.max_ratio  # base lr, not lr/a1
                    delta = np.clip(delta, -bound, bound)
                new_params[path] = p - delta
        return {path: new_params[path] for path in sorted(new_params)}

    def max_v(self) -> float:
        """Largest second-moment coordinate across all slots."""
        return max(float(s.v.max()) for s in self.slots.values())

    def take_records(self) -> list[SunspikeRecord]:
        out = sorted(self._records, key=lambda rec: (rec.step, rec.bucket))
        self._records = []
        return out

    # -- checkpointing ---------------------------------------------------

    def state_dict(self) -> dict:
        slots = {}
        for path, s in self.slots.items():
            slots[path] = {
                "dtype": str(s.m.dtype),
                "shape": list(s.m.shape),
                "m": s.m.astype(np.float64).ravel().tolist(),
                "v": s.v.astype(np.float64).ravel().tolist(),
                "v_max": None if s.v_max is None
                else s.v_max.astype(np.float64).ravel().tolist(),
            }
        buckets = []
        for lbl, b in self.buckets.items():
            buckets.append({
                "label": lbl,
                "key_kind": ("shape" if isinstance(b.key, tuple)
                             else "path" if isinstance(b.key, str) else "global"),
                "key": list(b.key) if isinstance(b.key, tuple) else b.key,
                "paths": list(b.paths),
                "r": b.r,
                "log_beta2_cumprod": b.log_beta2_cumprod,
                "last_sun": b.last_sun,
                "last_beta2": b.last_beta2,
            })
        return {
            "version": CHECKPOINT_VERSION,
            "kind": "kbeta",
            "t": self.t,
            "config": asdict(self.config),
            "slots": slots,
            "buckets": buckets,
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "Kbeta":
        if state.get("version") != CHECKPOINT_VERSION or state.get("kind") != "kbeta":
            raise ValueError("unrecognized checkpoint format")
        cfg = KbetaConfig(**state["config"])
        opt = cls.__new__(cls)
        opt.config = cfg
        opt.t = int(state["t"])
        opt.slots = {}
        for path, rec in state["slots"].items():
            dtype = np.dtype(rec["dtype"])
            shape = tuple(rec["shape"])
            unflat = lambda xs: np.asarray(xs, dtype=np.float64).astype(dtype).reshape(shape)
            opt.slots[path] = _Slot(
                m=unflat(rec["m"]),
                v=unflat(rec["v"]),
                v_max=None if rec["v_max"] is None else unflat(rec["v_max"]),
            )
        opt.buckets = {}
        for brec in state["buckets"]:
            key: BucketKey
            if brec["key_kind"] == "shape":
                key = tuple(int(d) for d in brec["key"])
            else:
                key = brec["key"]
            opt.buckets[brec["label"]] = _Bucket(
                key=key,
                paths=list(brec["paths"]),
                r=float(brec["r"]),
                log_beta2_cumprod=float(brec["log_beta2_cumprod"]),
                last_sun=float(brec["last_sun"]),
                last_beta2=float(brec["last_beta2"]),
            )
        opt._records = []
        return opt


def save_checkpoint(opt: "Kbeta | Adam", path: str) -> None:
    with open(path, "w") as fh:
        json.dump(opt.state_dict(), fh)


def load_checkpoint(path: str) -> "Kbeta | Adam":
    with open(path) as fh:
        state = json.load(fh)
    if state.get("kind") == "kbeta":
        return Kbeta.from_state_dict(state)
    if state.get("kind") == "adam":
        return Adam.from_state_dict(state)
    raise ValueError("unrecognized checkpoint format")


class Adam:
    """Plain Adam over a parameter tree, bias correction optional."""

    def __init__(
        self,
        params: ParamTree,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        bias_correction: bool = True,
    ):
        if not params:
            raise ValueError("empty parameter tree")
        if not lr > 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= beta1 < 1.0 or not 0.0 < beta2 < 1.0:
            raise ValueError("betas out of range")
        if not eps > 0:
            raise ValueError("eps must be positive")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.bias_correction = bool(bias_correction)
        self.t = 0
        self.slots: dict[str, _Slot] = {
            path: _Slot(m=np.zeros_like(p), v=np.zeros_like(p))
            for path, p in tree_items(params)
        }

    def step(self, params: ParamTree, grads: ParamTree, lr: float | None = None) -> ParamTree:
        lr = self.lr if lr is None else float(lr)
        if not lr > 0:
            raise ValueError("lr must be positive")
        _validate_grads(params, grads)
        if sorted(params) != sorted(self.slots):
            raise ValueError("parameter tree does not match optimizer state")
        self.t += 1
        t = self.t
        new_params: ParamTree = {}
        for path, p in tree_items(params):
            slot = self.slots[path]
            g = grads[path]
            slot.m, slot.v = moment_update(slot.m, slot.v, g, self.beta1, self.beta2)
            if self.bias_correction:
                m_hat = slot.m / (1.0 - self.beta1**t)
                v_hat = slot.v / (1.0 - self.beta2**t)
                delta = lr * m_hat / (np.sqrt(v_hat) + self.eps)
            else:
                delta = lr * slot.m / (np.sqrt(slot.v) + self.eps)
            new_params[path] = p - delta
        return new_params

    def max_v(self) -> float:
        return max(float(s.v.max()) for s in self.slots.values())

    def state_dict(self) -> dict:
        slots = {}
        for path, s in self.slots.items():
            slots[path] = {
                "dtype": str(s.m.dtype),
                "shape": list(s.m.shape),
                "m": s.m.astype(np.float64).ravel().tolist(),
                "v": s.v.astype(np.float64).ravel().tolist(),
            }
        return {
            "version": CHECKPOINT_VERSION,
            "kind": "adam",
            "t": self.t,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "bias_correction": self.bias_correction,
            "slots": slots,
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "Adam":
        if state.get("version") != CHECKPOINT_VERSION or state.get("kind") != "adam":
            raise ValueError("unrecognized checkpoint format")
        opt = cls.__new__(cls)
        opt.lr = float(state["lr"])
        opt.beta1 = float(state["beta1"])
        opt.beta2 = float(state["beta2"])
        opt.eps = float(state["eps"])
        opt.bias_correction = bool(state["bias_correction"])
        opt.t = int(state["t"])
        opt.slots = {}
        for path, rec in state["slots"].items():
            dtype = np.dtype(rec["dtype"])
            shape = tuple(rec["shape"])
            unflat = lambda xs: np.asarray(xs, dtype=np.float64).astype(dtype).reshape(shape)
            opt.slots[path] = _Slot(m=unflat(rec["m"]), v=unflat(rec["v"]))
        return opt
