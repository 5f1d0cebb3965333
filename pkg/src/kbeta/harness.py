"""Benchmark harness: single runs, paired seed sweeps, and equivalence checks.

A run is fully determined by (testbed, optimizer label, seed, precision, overrides):
batches and init come from Philox streams keyed by the seed, so every optimizer in a
sweep cell sees byte-identical data and the per-seed comparisons are paired. Reports
are plain dataclasses that serialize to JSON losslessly (floats survive the text
round trip exactly); wall-clock time is the only field allowed to differ between
identical runs.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import ParamTree, Rng, pooled_l2_norm, tree_copy
from .optimizer import Adam, Kbeta, KbetaConfig
from .schedules import PiecewiseSchedule, lr_at, parse_schedule
from .stats import geo_mean_ratio, holm_adjust, paired_t, sign_test, wilcoxon_exact
from .testbeds import (
    RareTriggerConfig,
    ToyProblem,
    gen_rare_trigger_batch,
    init_rare_trigger_params,
    make_sanity1,
    make_sanity2,
    make_sanity3,
    rare_trigger_accuracy,
    rare_trigger_grad,
    rare_trigger_loss,
)

TESTBEDS = ("sanity1", "sanity2", "sanity3", "rare_trigger")
SWEEP_OPTIMIZERS = ("kbeta", "adam95", "adam999")

_DTYPES = {"64": np.float64, "32": np.float32}


@dataclass
class RunReport:
    testbed: str
    optimizer: str
    seed: int
    steps: int
    precision: str
    rng_algorithm: str
    config: dict
    series: list[dict]
    final: dict
    v1_max: float | None
    wall_seconds: float
    diagnostics: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "testbed": self.testbed,
            "optimizer": self.optimizer,
            "seed": self.seed,
            "steps": self.steps,
            "precision": self.precision,
            "rng_algorithm": self.rng_algorithm,
            "config": self.config,
            "series": self.series,
            "final": self.final,
            "v1_max": self.v1_max,
            "wall_seconds": self.wall_seconds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=None, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        data = json.loads(text)
        return cls(diagnostics=[], **data)


def _toy_problem(testbed: str, seed: int, dtype) -> ToyProblem:
    if testbed == "sanity1":
        return make_sanity1(seed, dtype)
    if testbed == "sanity2":
        return make_sanity2(seed, dtype)
    if testbed == "sanity3":
        return make_sanity3(seed, dtype)
    raise ValueError(f"unknown testbed '{testbed}'")


def _sanity_kbeta_config(lr: float, fixed_beta2: float | None, **overrides) -> KbetaConfig:
    base = dict(
        lr=lr, beta1=0.9, beta2_min=0.88, beta2_max=0.999, alpha=0.93,
        eps=1e-8, bias_correction="none", warmup_steps=0, bucket_mode="global",
    )
    if fixed_beta2 is not None:
        base["beta2_min"] = base["beta2_max"] = fixed_beta2
    base.update(overrides)
    return KbetaConfig(**base)


def _rare_kbeta_config(lr: float, **overrides) -> KbetaConfig:
    base = dict(
        lr=lr, beta1=0.9, beta2_min=0.88, beta2_max=0.999, alpha=0.93,
        eps=1e-8, bias_correction="beta2max", warmup_steps=50,
        bucket_mode="global", decay=0.0, max_ratio=None, adaptive_tiny=False,
    )
    base.update(overrides)
    return KbetaConfig(**base)


def _optimizer_snapshot(opt: Kbeta | Adam) -> dict:
    """Config snapshot with explicit beta2 bounds, for the second-moment bound check."""
    if isinstance(opt, Kbeta):
        cfg = opt.config
        snap = {
            "kind": "kbeta",
            "lr": cfg.lr, "beta1": cfg.beta1,
            "beta2_min": cfg.beta2_min, "beta2_max": cfg.beta2_max,
            "alpha": cfg.alpha, "eps": cfg.eps,
            "tiny_spike": cfg.tiny_spike, "tiny_denom": cfg.tiny_denom,
            "decay": cfg.decay, "max_ratio": cfg.max_ratio,
            "adaptive_tiny": cfg.adaptive_tiny,
            "bias_correction": cfg.bias_correction,
            "warmup_steps": cfg.warmup_steps, "bucket_mode": cfg.bucket_mode,
        }
        return snap
    return {
        "kind": "adam",
        "lr": opt.lr, "beta1": opt.beta1,
        "beta2_min": opt.beta2, "beta2_max": opt.beta2,
        "eps": opt.eps, "bias_correction": opt.bias_correction,
    }


def resolve_optimizer(
    label: str,
    testbed: str,
    params: ParamTree,
    lr: float,
    *,
    adam_beta2: float | None = None,
    bucket_mode: str | None = None,
    warmup_steps: int | None = None,
    diagnostics: bool = False,
) -> Kbeta | Adam:
    """Build the optimizer a label denotes on a given testbed.

    Sanity problems follow the convention that nobody bias-corrects; the
    rare-trigger baselines bias-correct and the dynamic config corrects as if
    beta2 were pinned at beta2_max.
    """
    sanity = testbed != "rare_trigger"
    overrides: dict = {"diagnostics": diagnostics}
    if bucket_mode is not None:
        overrides["bucket_mode"] = bucket_mode
    if warmup_steps is not None:
        overrides["warmup_steps"] = warmup_steps
    if label == "kbeta":
        cfg = (_sanity_kbeta_config(lr, None, **overrides) if sanity
               else _rare_kbeta_config(lr, **overrides))
        return Kbeta(params, cfg)
    if label == "kbeta_fixed":
        if not sanity:
            raise ValueError("kbeta_fixed is a sanity-problem configuration")
        return Kbeta(params, _sanity_kbeta_config(lr, 0.999, **overrides))
    if label in ("adam", "adam95", "adam999"):
        beta2 = adam_beta2
        if beta2 is None:
            beta2 = {"adam": 0.999, "adam95": 0.95, "adam999": 0.999}[label]
        return Adam(params, lr=lr, beta2=beta2, bias_correction=not sanity)
    raise ValueError(f"unknown optimizer label '{label}'")


def run_experiment(
    testbed: str,
    optimizer: str,
    seed: int,
    *,
    steps: int | None = None,
    lr: float | None = None,
    lr_schedule: str | None = None,
    eval_every: int = 1000,
    precision: str = "64",
    bucket_mode: str | None = None,
    warmup_steps: int | None = None,
    adam_beta2: float | None = None,
    diagnostics: bool = False,
    deterministic: bool = True,
    tau: float | None = None,
) -> RunReport:
    """Train one (testbed, optimizer, seed) cell and report the trajectory.

    The series records, at step s: the loss of the parameters entering the step on
    that step's batch, and after the update the largest second-moment coordinate
    plus the running max of the pooled gradient norm. Divergence (non-finite loss
    or gradient) stops the run and is flagged in ``final`` instead of raising.
    ``steps=0`` evaluates the initial parameters and returns that single row.
    """
    if testbed not in TESTBEDS:
        raise ValueError(f"unknown testbed '{testbed}' (expected one of {TESTBEDS})")
    if precision not in _DTYPES:
        raise ValueError("precision must be '64' or '32'")
    if eval_every < 1:
        raise ValueError("eval_every must be >= 1")
    dtype = _DTYPES[precision]

    rare = testbed == "rare_trigger"
    if rare:
        tb_cfg = RareTriggerConfig()
        steps = tb_cfg.steps if steps is None else int(steps)
        lr = tb_cfg.lr if lr is None else float(lr)
        params = init_rare_trigger_params(Rng(seed, 0), tb_cfg, dtype)
        loss_fn: Callable = lambda p, b: rare_trigger_loss(p, b, tb_cfg)
        grad_fn: Callable = lambda p, b: rare_trigger_grad(p, b, tb_cfg)
        acc_fn: Callable | None = lambda p, b: rare_trigger_accuracy(p, b, tb_cfg)
        batch_fn = lambda s: gen_rare_trigger_batch(Rng.for_stream(seed, s), tb_cfg)
        untimed = tb_cfg.warmup_untimed
        tb_snapshot = {
            "batch_size": tb_cfg.batch_size, "embed_dim": tb_cfg.embed_dim,
            "len_min": tb_cfg.len_min, "len_max": tb_cfg.len_max,
            "p_trigger": tb_cfg.p_trigger, "vocab": tb_cfg.vocab,
            "pad_id": tb_cfg.pad_id, "trigger_id": tb_cfg.trigger_id,
            "warmup_untimed": tb_cfg.warmup_untimed,
        }
    else:
        problem = _toy_problem(testbed, seed, dtype)
        steps = problem.default_steps if steps is None else int(steps)
        lr = problem.default_lr if lr is None else float(lr)
        params = tree_copy(problem.params0)
        fixed_batch = problem.batch
        loss_fn = problem.loss
        grad_fn = problem.grad
        acc_fn = problem.accuracy
        batch_fn = lambda s: fixed_batch
        untimed = 0
        tb_snapshot = dict(problem.config)
    if steps < 0:
        raise ValueError("steps must be >= 0")

    schedule: PiecewiseSchedule | None = None
    if lr_schedule is not None:
        schedule = parse_schedule(lr_schedule)

    opt = resolve_optimizer(
        optimizer, testbed, params, lr,
        adam_beta2=adam_beta2, bucket_mode=bucket_mode,
        warmup_steps=warmup_steps, diagnostics=diagnostics,
    )
    config = {
        "testbed": tb_snapshot,
        "optimizer": _optimizer_snapshot(opt),
        "lr": lr,
        "lr_schedule": lr_schedule,
        "eval_every": eval_every,
        "deterministic": bool(deterministic),
        "tau": tau,
        "untimed_warmup_steps": untimed,
    }

    series: list[dict] = []
    v1_max: float | None = None
    g_running_max = 0.0
    diverged = False
    last_finite_step = 0

    if steps == 0:
        batch = batch_fn(1)
        row = {
            "step": 0,
            "loss": loss_fn(params, batch),
            "lr": lr,
            "max_v": opt.max_v(),
            "grad_norm_max": 0.0,
        }
        if acc_fn is not None:
            row["accuracy"] = acc_fn(params, batch)
        series.append(row)

    timer_start = time.perf_counter()
    for s in range(1, steps + 1):
        batch = batch_fn(s)
        eval_step = s == 1 or s % eval_every == 0 or s == steps
        try:
            loss = acc = None
            if eval_step:
                loss = loss_fn(params, batch)
                if not np.isfinite(loss):
                    raise FloatingPointError(f"non-finite loss at step {s}")
                if acc_fn is not None:
                    acc = acc_fn(params, batch)
            grads = grad_fn(params, batch)
            lr_s = lr_at(schedule, s) if schedule is not None else lr
            params = opt.step(params, grads, lr=lr_s)
        except FloatingPointError:
            diverged = True
            break
        g_running_max = max(g_running_max, pooled_l2_norm(grads.values()))
        if s == 1:
            v1_max = opt.max_v()
        last_finite_step = s
        if eval_step:
            row = {
                "step": s,
                "loss": loss,
                "lr": lr_s,
                "max_v": opt.max_v(),
                "grad_norm_max": g_running_max,
            }
            if acc_fn is not None:
                row["accuracy"] = acc
            series.append(row)
        if s == untimed:
            timer_start = time.perf_counter()
    wall_seconds = time.perf_counter() - timer_start

    # Final metrics restate the last series row (the training loss logged at the
    # last step) rather than re-evaluating after the update, so report consumers
    # see exactly what the trajectory shows.
    final: dict = {"diverged": diverged, "last_finite_step": last_finite_step}
    if diverged:
        final["loss"] = None
    else:
        final["loss"] = series[-1]["loss"]
        if acc_fn is not None:
            final["accuracy"] = series[-1]["accuracy"]
        if tau is not None:
            final["success"] = bool(final["loss"] < tau)

    records = opt.take_records() if isinstance(opt, Kbeta) and diagnostics else []
    return RunReport(
        testbed=testbed,
        optimizer=optimizer,
        seed=seed,
        steps=steps,
        precision=precision,
        rng_algorithm=Rng.algorithm,
        config=config,
        series=series,
        final=final,
        v1_max=v1_max,
        wall_seconds=wall_seconds,
        diagnostics=records,
    )


def second_moment_bound_gap(report: RunReport) -> float:
    """Largest violation of the decay bound on recorded second moments.

    At a row logged after step s, with G the running max pooled gradient norm and
    v1 the largest coordinate after step 1, every coordinate must satisfy
    v <= v1 * beta2_max**(s-1) + (1 - beta2_min) * G**2
         * (1 - beta2_max**(s-1)) / (1 - beta2_max).
    Returns max(max_v - bound) over rows; values <= ~1e-9 mean the bound holds.
    """
    opt_cfg = report.config["optimizer"]
    b_min, b_max = opt_cfg["beta2_min"], opt_cfg["beta2_max"]
    v1 = report.v1_max
    if v1 is None:
        raise ValueError("report lacks the post-step-1 second moment")
    worst = -np.inf
    for row in report.series:
        s = row["step"]
        g = row["grad_norm_max"]
        decay_pow = b_max ** (s - 1)
        bound = v1 * decay_pow + (1.0 - b_min) * g * g * (1.0 - decay_pow) / (1.0 - b_max)
        worst = max(worst, row["max_v"] - bound * (1.0 + 1e-9))
    return float(worst)


@dataclass
class SweepReport:
    testbed: str
    seeds: list[int]
    optimizers: list[str]
    tau: float | None
    runs: dict  # label -> {seed: RunReport}
    finals: dict  # label -> [final loss per seed]
    comparisons: dict  # baseline label -> stats rows
    success: dict  # label -> count of finals < tau (when tau given)
    clean_seeds: list[int]

    def to_dict(self) -> dict:
        return {
            "testbed": self.testbed,
            "seeds": self.seeds,
            "optimizers": self.optimizers,
            "tau": self.tau,
            "finals": self.finals,
            "comparisons": self.comparisons,
            "success": self.success,
            "clean_seeds": self.clean_seeds,
            "runs": {
                label: {str(seed): rep.to_dict() for seed, rep in by_seed.items()}
                for label, by_seed in self.runs.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _run_cell(args: tuple) -> tuple[str, int, RunReport]:
    label, seed, testbed, kwargs = args
    report = run_experiment(testbed, label, seed, **kwargs)
    return label, seed, report


def seed_sweep(
    testbed: str,
    seeds: Sequence[int],
    optimizers: Sequence[str] = SWEEP_OPTIMIZERS,
    *,
    tau: float | None = None,
    jobs: int = 1,
    **run_kwargs,
) -> SweepReport:
    """Run every (optimizer, seed) cell and attach paired statistics.

    Comparisons are baseline-vs-anchor on log10 final loss, where the anchor is
    "kbeta" when present and the first optimizer otherwise (positive differences
    favor the anchor): paired t with Holm adjustment across baselines, exact
    Wilcoxon, sign test on win counts with ties dropped, and geometric-mean loss
    ratios. Degenerate samples (too few seeds, all-zero diffs) downgrade to a
    notice instead of raising. When ``tau`` is given, clean seeds are those where
    every optimizer's final loss beats tau, and the ratio/win summaries are
    recomputed on that subset as well.
    """
    seeds = list(seeds)
    optimizers = list(optimizers)
    if not seeds or not optimizers:
        raise ValueError("need at least one seed and one optimizer")
    cells = [(label, seed, testbed, dict(run_kwargs)) for label in optimizers for seed in seeds]
    results: dict[str, dict[int, RunReport]] = {label: {} for label in optimizers}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for label, seed, report in pool.map(_run_cell, cells):
                results[label][seed] = report
    else:
        for cell in cells:
            label, seed, report = _run_cell(cell)
            results[label][seed] = report

    finals = {
        label: [results[label][seed].final["loss"] for seed in seeds]
        for label in optimizers
    }
    success = {}
    if tau is not None:
        success = {
            label: sum(1 for x in finals[label] if x is not None and x < tau)
            for label in optimizers
        }
    clean_seeds: list[int] = []
    if tau is not None:
        for i, seed in enumerate(seeds):
            vals = [finals[label][i] for label in optimizers]
            if all(v is not None and v < tau for v in vals):
                clean_seeds.append(seed)

    comparisons: dict[str, dict] = {}
    anchor = "kbeta" if "kbeta" in optimizers else optimizers[0]
    kb = finals[anchor]
    baselines = [label for label in optimizers if label != anchor]
    t_ps: dict[str, float] = {}
    for label in baselines:
        base = finals[label]
        usable = [
            (b, k) for b, k in zip(base, kb)
            if b is not None and k is not None and b > 0 and k > 0
        ]
        row: dict = {"anchor": anchor, "n": len(usable)}
        if len(usable) < 2:
            row["notice"] = "paired statistics need at least 2 usable seeds"
        else:
            b_arr = np.array([u[0] for u in usable])
            k_arr = np.array([u[1] for u in usable])
            diffs = np.log10(b_arr) - np.log10(k_arr)
            wins = int((diffs > 0).sum())
            losses = int((diffs < 0).sum())
            row["wins"] = wins
            row["ties"] = len(usable) - wins - losses
            try:
                row["paired_t"] = paired_t(diffs).to_row()
                t_ps[label] = row["paired_t"]["p"]
            except ValueError as err:
                row["paired_t"] = {"notice": f"degenerate sample: {err}"}
            try:
                row["wilcoxon"] = wilcoxon_exact(diffs).to_row()
            except ValueError as err:
                row["wilcoxon"] = {"notice": f"degenerate sample: {err}"}
            if wins + losses:
                row["sign"] = sign_test(wins, wins + losses).to_row()
            else:
                row["sign"] = {"notice": "degenerate sample: all paired diffs are zero"}
            row["geo_mean_ratio"] = geo_mean_ratio(b_arr, k_arr).to_row()
        if clean_seeds:
            idx = [seeds.index(s) for s in clean_seeds]
            b_arr = np.array([finals[label][i] for i in idx])
            k_arr = np.array([kb[i] for i in idx])
            row["wins_clean"] = int((k_arr < b_arr).sum())
            row["all_clean_seeds_win"] = bool((k_arr < b_arr).all())
            if len(idx) >= 2:
                row["geo_mean_ratio_clean"] = geo_mean_ratio(b_arr, k_arr).to_row()
        comparisons[label] = row
    if baselines and len(t_ps) == len(baselines):
        adjusted = holm_adjust([t_ps[label] for label in baselines])
        for label, adj in zip(baselines, adjusted):
            comparisons[label]["paired_t_holm"] = adj

    return SweepReport(
        testbed=testbed,
        seeds=seeds,
        optimizers=optimizers,
        tau=tau,
        runs=results,
        finals=finals,
        comparisons=comparisons,
        success=success,
        clean_seeds=clean_seeds,
    )


def save_run(report: RunReport, out_dir: str | Path) -> Path:
    path = Path(out_dir) / "runs" / report.testbed / report.optimizer
    path.mkdir(parents=True, exist_ok=True)
    target = path / f"seed{report.seed}.json"
    target.write_text(report.to_json())
    return target


def write_sweep_csv(sweep: SweepReport, path: str | Path) -> Path:
    """Aggregate per-run rows, one line per (optimizer, seed)."""
    path = Path(path)
    lines = ["testbed,optimizer,seed,final_loss,final_accuracy,diverged,steps,wall_seconds"]
    for label in sweep.optimizers:
        for seed in sweep.seeds:
            rep = sweep.runs[label][seed]
            loss = rep.final.get("loss")
            acc = rep.final.get("accuracy")
            lines.append(
                f"{rep.testbed},{label},{seed},"
                f"{'' if loss is None else repr(loss)},"
                f"{'' if acc is None else repr(acc)},"
                f"{int(rep.final['diverged'])},{rep.steps},{rep.wall_seconds:.3f}"
            )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def equivalence_check(
    steps: int = 1000,
    precision: str = "32",
    *,
    bias_correction: bool = False,
    seed: int = 0,
    lr: float = 1e-3,
) -> float:
    """Max |param difference| between Adam and the Adam-reduction of Kbeta.

    Both optimizers run their own trajectory from the same init on the least-squares
    problem; with beta2 pinned (beta2_min == beta2_max), no v_max buffer, no adaptive
    floor, and matching bias correction, they must agree to float rounding.
    """
    dtype = _DTYPES[precision]
    problem = _toy_problem("sanity1", seed, dtype)
    params_a = tree_copy(problem.params0)
    params_k = tree_copy(problem.params0)
    adam = Adam(params_a, lr=lr, beta2=0.999, bias_correction=bias_correction)
    kcfg = KbetaConfig(
        lr=lr, beta1=0.9, beta2_min=0.999, beta2_max=0.999, alpha=0.93,
        eps=1e-8, bias_correction="beta2max" if bias_correction else "none",
        warmup_steps=0, bucket_mode="global",
    )
    kbeta = Kbeta(params_k, kcfg)
    worst = 0.0
    for _ in range(steps):
        params_a = adam.step(params_a, problem.grad(params_a, problem.batch))
        params_k = kbeta.step(params_k, problem.grad(params_k, problem.batch))
        for path in params_a:
            gap = float(np.max(np.abs(params_a[path] - params_k[path])))
            worst = max(worst, gap)
    return worst


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)
