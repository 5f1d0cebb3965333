"""Sunspike-driven Adam variant with bucket-wise dynamic beta2, plus benchmarks."""

from .core import ParamTree, Rng, finite_diff_grad, pooled_l2_norm, tree_items
from .diagnostics import (
    HistogramSummary,
    SunspikeRecord,
    records_from_csv,
    records_to_csv,
    snapshot_sunspike_history,
    summarize_epoch,
)
from .harness import (
    RunReport,
    SweepReport,
    equivalence_check,
    run_experiment,
    second_moment_bound_gap,
    seed_sweep,
)
from .optimizer import (
    Adam,
    Kbeta,
    KbetaConfig,
    bias_factors,
    bucket_key,
    dynamic_beta2,
    ema_update,
    load_checkpoint,
    moment_update,
    save_checkpoint,
    sunspike,
    vhat_select,
)
from .schedules import (
    CosineSchedule,
    PiecewiseSchedule,
    cosine_lr_at,
    lr_at,
    parse_schedule,
)
from .stats import (
    RatioResult,
    TestResult,
    clopper_pearson,
    geo_mean_ratio,
    holm_adjust,
    mcnemar_exact,
    paired_t,
    sign_test,
    wilcoxon_exact,
)
from .testbeds import (
    RareBatch,
    RareTriggerConfig,
    Sanity1Config,
    Sanity2Config,
    Sanity3Config,
    ToyProblem,
    bce_with_logits,
    gen_rare_trigger_batch,
    init_rare_trigger_params,
    make_sanity1,
    make_sanity2,
    make_sanity3,
    rare_trigger_forward,
    rare_trigger_grad,
    rare_trigger_loss,
)

__version__ = "0.1.0"
