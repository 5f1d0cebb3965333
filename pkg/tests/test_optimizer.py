"""The dynamic-discount optimizer: primitives, stepping, buffers, checkpoints, Adam.

One-step expectations are hand-derived; the arithmetic chains appear inline so the
expected numbers are reproducible with plain floats and no optimizer code.
"""

import math

import numpy as np
import pytest

from kbeta.diagnostics import SunspikeRecord
from kbeta.optimizer import (
    Adam,
    BIAS_CORRECTION_MODES,
    BUCKET_MODES,
    CHECKPOINT_VERSION,
    Kbeta,
    KbetaConfig,
    bias_factors,
    bucket_key,
    bucket_label,
    dynamic_beta2,
    ema_update,
    load_checkpoint,
    moment_update,
    save_checkpoint,
    sunspike,
    vhat_select,
)

# Shipped defaults used throughout: beta1=0.9, beta2 range [0.88, 0.999], alpha=0.93,
# eps=1e-8, tiny_spike=1e-9.


def _scalar_tree(value=0.0):
    return {"x": np.asarray(float(value))}


def _rng(seed, stream=0):
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


def _random_tree(seed, scale=1.0):
    rng = _rng(seed)
    return {
        "a": scale * rng.standard_normal((3, 2)),
        "b": scale * rng.standard_normal(4),
        "c": np.asarray(scale * rng.standard_normal()),
    }


# -- scalar primitives ---------------------------------------------------------


def test_ema_update_oracle():
    # 0.93 * 0 + 0.07 * 10 = 0.7
    assert ema_update(0.0, 10.0, 0.93) == pytest.approx(0.7, rel=1e-15)
    assert ema_update(2.0, 2.0, 0.5) == 2.0


def test_ema_update_rejects_negative_operands():
    with pytest.raises(ValueError):
        ema_update(-1.0, 0.0, 0.9)
    with pytest.raises(ValueError):
        ema_update(0.0, -1.0, 0.9)


def test_sunspike_first_step_value():
    # r already contains this step: r = (1-alpha)*n, raw = n/(r+tiny) ~ 1/(1-alpha),
    # sun = raw/(1+raw) ~ 1/(2-alpha) = 0.93457943...
    r = ema_update(0.0, 1.0, 0.93)
    sun = sunspike(1.0, r, 1e-9, t=1, warmup_steps=0)
    assert sun == pytest.approx(0.9345794383788978, rel=1e-12)
    assert sun < 1.0 / (2.0 - 0.93)


def test_sunspike_pinned_to_zero_through_warmup():
    assert sunspike(5.0, 0.35, 1e-9, t=3, warmup_steps=3) == 0.0
    assert sunspike(5.0, 0.35, 1e-9, t=4, warmup_steps=3) > 0.0


def test_sunspike_is_bounded_below_one():
    for seed in range(30):
        rng = _rng(seed, 1)
        norm = float(10.0 ** rng.uniform(-8, 8))
        r = float(10.0 ** rng.uniform(-8, 8))
        s = sunspike(norm, r, 1e-9, t=10, warmup_steps=0)
        assert 0.0 <= s < 1.0


def test_sunspike_zero_gradient_is_calm():
    assert sunspike(0.0, 0.5, 1e-9, t=2, warmup_steps=0) == 0.0


def test_dynamic_beta2_interpolates_and_pins_midpoint():
    cfg = KbetaConfig(warmup_steps=2)
    # warmup: the midpoint 0.5 * (0.88 + 0.999)
    assert dynamic_beta2(0.77, cfg, t=2) == pytest.approx(0.9395, rel=1e-15)
    # after warmup: beta2_max - (beta2_max - beta2_min) * sun
    assert dynamic_beta2(0.0, cfg, t=3) == 0.999
    assert dynamic_beta2(1.0, cfg, t=3) == pytest.approx(0.88, rel=1e-15)
    assert dynamic_beta2(0.5, cfg, t=3) == pytest.approx(0.999 - 0.119 * 0.5, rel=1e-15)


def test_dynamic_beta2_stays_inside_the_band():
    cfg = KbetaConfig()
    for seed in range(30):
        sun = float(_rng(seed, 2).uniform(0.0, 1.0))
        b2 = dynamic_beta2(sun, cfg, t=5)
        assert 0.88 <= b2 <= 0.999


def test_moment_update_oracle():
    m, v = moment_update(np.asarray(0.0), np.asarray(0.0), np.asarray(2.0), 0.9, 0.5)
    assert m == pytest.approx(0.2, rel=1e-15)
    assert v == pytest.approx(2.0, rel=1e-15)


# -- bucketing -----------------------------------------------------------------


def test_bucket_key_modes():
    assert bucket_key("layer.w", (4, 4), "global") == 0
    assert bucket_key("layer.w", (4, 4), "per_path") == "layer.w"
    assert bucket_key("layer.w", (4, 4), "shape") == (4, 4)
    with pytest.raises(ValueError):
        bucket_key("layer.w", (4, 4), "per-tensor")


def test_bucket_labels_are_printable():
    assert bucket_label(0) == "0"
    assert bucket_label("layer.w") == "layer.w"
    assert bucket_label((4, 4)) == "4x4"
    assert bucket_label((7,)) == "7"
    assert bucket_label(()) == "()"


def test_bucket_partition_by_shape():
    params = {"a": np.zeros(4), "b": np.zeros(4), "c": np.zeros(())}
    opt = Kbeta(params, KbetaConfig(bucket_mode="shape"))
    state = opt.state_dict()
    partition = {b["label"]: b["paths"] for b in state["buckets"]}
    assert partition == {"()": ["c"], "4": ["a", "b"]}


def test_buckets_have_independent_histories():
    params = {"hot": np.ones(4), "cold": np.ones(4)}
    opt = Kbeta(params, KbetaConfig(bucket_mode="per_path", diagnostics=True))
    # same norms at step 1, then the hot bucket spikes 10x
    params = opt.step(params, {"hot": np.full(4, 0.5), "cold": np.full(4, 0.5)})
    params = opt.step(params, {"hot": np.full(4, 5.0), "cold": np.full(4, 0.5)})
    recs = {(r.step, r.bucket): r for r in opt.take_records()}
    assert recs[(1, "hot")].sun == recs[(1, "cold")].sun  # ratio is scale-free
    assert recs[(2, "hot")].sun > recs[(2, "cold")].sun
    assert recs[(2, "hot")].beta2 < recs[(2, "cold")].beta2


# -- vhat selection ------------------------------------------------------------


def test_vhat_passthrough_without_buffer():
    v = np.array([1.0, 2.0])
    vhat, buf = vhat_select(v, None, None, None)
    assert vhat is v
    assert buf is None


def test_vhat_leaky_max_oracle():
    # max(0.98 * 5, 3) = 4.9
    vhat, buf = vhat_select(np.asarray(3.0), np.asarray(5.0), 0.98, None)
    assert vhat == pytest.approx(4.9, rel=1e-15)
    assert buf == vhat


def test_vhat_decay_zero_degenerates_to_v():
    v = np.array([0.25, 4.0])
    vhat, buf = vhat_select(v, np.array([9.0, 1.0]), 0.0, None)
    np.testing.assert_array_equal(vhat, v)


def test_vhat_hard_max_when_only_clipping_requests_the_buffer():
    # decay unset with max_ratio set: decay_eff = 1.0, a true running max
    vhat, buf = vhat_select(np.asarray(3.0), np.asarray(5.0), None, 2.0)
    assert vhat == 5.0


def test_vhat_buffer_mismatch_errors():
    v = np.zeros(2)
    with pytest.raises(ValueError, match="does not use"):
        vhat_select(v, np.zeros(2), None, None)
    with pytest.raises(ValueError, match="none was supplied"):
        vhat_select(v, None, 0.99, None)


# -- bias correction -----------------------------------------------------------


def test_bias_factors_modes():
    assert bias_factors("none", 0.9, 0.999, 0.0, t=0) == (1.0, 1.0)
    a1, b2 = bias_factors("beta2max", 0.9, 0.999, 0.0, t=1)
    assert a1 == pytest.approx(0.1, rel=1e-14)
    assert b2 == pytest.approx(0.001, rel=1e-12)
    # exact mode consumes the running log product of realized beta2 values
    log_cum = 3 * math.log(0.9)
    _, b2x = bias_factors("exact", 0.9, 0.999, log_cum, t=3)
    assert b2x == pytest.approx(1.0 - 0.9**3, rel=1e-14)


def test_bias_factors_validation():
    with pytest.raises(ValueError, match="t >= 1"):
        bias_factors("beta2max", 0.9, 0.999, 0.0, t=0)
    with pytest.raises(ValueError, match="unknown"):
        bias_factors("full", 0.9, 0.999, 0.0, t=1)


# -- config validation ---------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        {"lr": 0.0},
        {"lr": -1e-3},
        {"beta1": 1.0},
        {"beta1": -0.1},
        {"beta2_min": 0.0},
        {"beta2_min": 0.99, "beta2_max": 0.9},
        {"beta2_max": 1.0},
        {"alpha": 0.0},
        {"alpha": 1.0},
        {"eps": 0.0},
        {"tiny_spike": 0.0},
        {"tiny_denom": -1e-9},
        {"decay": -0.1},
        {"decay": 1.5},
        {"max_ratio": 0.0},
        {"bias_correction": "both"},
        {"warmup_steps": -1},
        {"warmup_steps": 1.5},
        {"bucket_mode": "layerwise"},
    ],
)
def test_config_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        KbetaConfig(**kwargs)


def test_config_mode_lists_are_closed():
    assert BUCKET_MODES == ("global", "per_path", "shape")
    assert BIAS_CORRECTION_MODES == ("none", "beta2max", "exact")


def test_config_uses_vmax():
    assert not KbetaConfig().uses_vmax
    assert KbetaConfig(decay=0.99).uses_vmax
    assert KbetaConfig(decay=0.0).uses_vmax
    assert KbetaConfig(max_ratio=2.0).uses_vmax


# -- single-step oracles -------------------------------------------------------


def test_first_step_dynamic_oracle():
    # Defaults, warmup 0, no bias correction, theta0=0, g=1, lr=1e-2:
    #   r    = 0.07
    #   raw  = 1/(0.07 + 1e-9), sun = raw/(1+raw)          = 0.93457943...
    #   b2   = 0.999 - 0.119*sun                           = 0.88778504...
    #   m    = 0.1, v = 1 - b2                             = 0.11221495...
    #   step = lr * m / (sqrt(v) + eps)                    = 2.98520816...e-3
    opt = Kbeta(_scalar_tree(), KbetaConfig(lr=1e-2, diagnostics=True))
    new = opt.step(_scalar_tree(), {"x": np.asarray(1.0)})
    assert float(new["x"]) == pytest.approx(-0.002985208164660366, rel=1e-12)
    rec = opt.take_records()[0]
    assert rec.sun == pytest.approx(0.9345794383788978, rel=1e-12)
    assert rec.beta2 == pytest.approx(0.8877850468329112, rel=1e-12)
    assert rec.pooled_norm == 1.0
    assert rec.r == pytest.approx(0.07, rel=1e-12)


def test_first_step_warmup_midpoint_oracle():
    # Warmup pins sun to 0 and beta2 to 0.9395, so v = 0.0605 and
    # step = 1e-2 * 0.1 / (sqrt(0.0605) + 1e-8) = 4.06557797...e-3
    opt = Kbeta(_scalar_tree(), KbetaConfig(lr=1e-2, warmup_steps=3, diagnostics=True))
    new = opt.step(_scalar_tree(), {"x": np.asarray(1.0)})
    assert float(new["x"]) == pytest.approx(-0.004065577975619458, rel=1e-12)
    rec = opt.take_records()[0]
    assert rec.sun == 0.0
    assert rec.beta2 == pytest.approx(0.9395, rel=1e-15)


def test_warmup_ema_keeps_accumulating():
    # Unit-norm gradients through 3 warmup steps: r_t = 1 - alpha^t even while sun
    # stays pinned, so the first post-warmup sun sees the full history.
    opt = Kbeta(_scalar_tree(), KbetaConfig(lr=1e-2, warmup_steps=3, diagnostics=True))
    params = _scalar_tree()
    for _ in range(4):
        params = opt.step(params, {"x": np.asarray(1.0)})
    recs = opt.take_records()
    assert [r.sun for r in recs[:3]] == [0.0, 0.0, 0.0]
    r4 = 0.0
    for _ in range(4):
        r4 = 0.93 * r4 + (1.0 - 0.93) * 1.0
    raw = 1.0 / (r4 + 1e-9)
    assert recs[3].sun == pytest.approx(raw / (1.0 + raw), rel=1e-12)
    assert recs[3].r == pytest.approx(1.0 - 0.93**4, rel=1e-12)


def test_two_step_fixed_beta2_oracle():
    # beta2 pinned at 0.9, gradients (1, 0.5):
    #   step1: m=0.1,  v=0.1,   d1 = 1e-2*0.1/(sqrt(0.1)+1e-8)
    #   step2: m=0.14, v=0.115, d2 = 1e-2*0.14/(sqrt(0.115)+1e-8)
    #   theta2 = -(d1 + d2) = -7.29065221...e-3
    cfg = KbetaConfig(lr=1e-2, beta2_min=0.9, beta2_max=0.9)
    opt = Kbeta(_scalar_tree(), cfg)
    params = opt.step(_scalar_tree(), {"x": np.asarray(1.0)})
    assert float(params["x"]) == pytest.approx(-0.0031622775601683824, rel=1e-12)
    params = opt.step(params, {"x": np.asarray(0.5)})
    assert float(params["x"]) == pytest.approx(-0.007290652210766375, rel=1e-12)


def test_first_step_bias_corrected_oracle():
    # beta2 pinned at 0.999 with beta2max correction: v/b2 = 1 exactly at t=1, so
    # step = (lr/a1) * m / (1 + eps) ~ lr * (1 - 1e-8)
    cfg = KbetaConfig(
        lr=1e-2, beta2_min=0.999, beta2_max=0.999, bias_correction="beta2max"
    )
    opt = Kbeta(_scalar_tree(), cfg)
    new = opt.step(_scalar_tree(), {"x": np.asarray(1.0)})
    assert float(new["x"]) == pytest.approx(-0.009999999900000002, rel=1e-12)


def test_exact_bias_correction_matches_beta2max_when_pinned():
    # With beta2 pinned at beta2_max the realized product equals beta2_max^t, so the
    # two correction modes must produce the same trajectory up to rounding.
    runs = {}
    for mode in ("beta2max", "exact"):
        cfg = KbetaConfig(
            lr=3e-3, beta2_min=0.97, beta2_max=0.97, bias_correction=mode
        )
        params = _random_tree(5)
        opt = Kbeta(params, cfg)
        for seed in range(40):
            grads = _random_tree(100 + seed)
            params = opt.step(params, grads)
        runs[mode] = params
    for path in runs["exact"]:
        np.testing.assert_allclose(
            runs["exact"][path], runs["beta2max"][path], rtol=1e-12, atol=1e-15
        )


def test_trust_region_clip_binds_exactly():
    # Unclipped first step is ~3.16e-3; max_ratio 0.1 at lr 1e-2 caps |delta| at 1e-3.
    cfg = KbetaConfig(lr=1e-2, beta2_min=0.9, beta2_max=0.9, max_ratio=0.1)
    opt = Kbeta(_scalar_tree(), cfg)
    new = opt.step(_scalar_tree(), {"x": np.asarray(1.0)})
    assert float(new["x"]) == -1e-3


def test_trust_region_clip_inactive_when_loose():
    cfg = KbetaConfig(lr=1e-2, beta2_min=0.9, beta2_max=0.9, max_ratio=10.0)
    opt = Kbeta(_scalar_tree(), cfg)
    new = opt.step(_scalar_tree(), {"x": np.asarray(1.0)})
    # the hard-max buffer holds v itself on the first step, so the update matches
    # the bufferless one
    assert float(new["x"]) == pytest.approx(-0.0031622775601683824, rel=1e-12)


def test_step_scales_linearly_in_lr_on_first_step():
    opt_a = Kbeta(_scalar_tree(), KbetaConfig(lr=1e-2))
    opt_b = Kbeta(_scalar_tree(), KbetaConfig(lr=1e-2))
    a = opt_a.step(_scalar_tree(), {"x": np.asarray(1.0)})
    b = opt_b.step(_scalar_tree(), {"x": np.asarray(1.0)}, lr=2e-2)
    assert float(b["x"]) == pytest.approx(2.0 * float(a["x"]), rel=1e-15)


def test_adaptive_tiny_floors_the_denominator():
    # adaptive floor adds tiny_denom * max(mean|p|, 1): with huge params the extra
    # term dominates eps and shrinks the step
    base = KbetaConfig(lr=1e-2, beta2_min=0.9, beta2_max=0.9)
    floored = KbetaConfig(lr=1e-2, beta2_min=0.9, beta2_max=0.9,
                          adaptive_tiny=True, tiny_denom=10.0)
    p0 = {"x": np.asarray(100.0)}
    a = Kbeta(p0, base).step(p0, {"x": np.asarray(1.0)})
    b = Kbeta(p0, floored).step(p0, {"x": np.asarray(1.0)})
    # denominators: sqrt(0.1)+1e-8 vs sqrt(0.1)+1e-8+10*100
    assert abs(100.0 - float(b["x"])) < abs(100.0 - float(a["x"]))
    expected = 1e-2 * 0.1 / (math.sqrt(0.1) + 1e-8 + 10.0 * 100.0)
    assert 100.0 - float(b["x"]) == pytest.approx(expected, rel=1e-12)


# -- stepping mechanics ---------------------------------------------------------


def test_step_returns_sorted_paths_and_leaves_inputs_alone():
    params = _random_tree(1)
    snapshot = {k: v.copy() for k, v in params.items()}
    opt = Kbeta(params, KbetaConfig())
    new = opt.step(params, _random_tree(2))
    assert list(new) == sorted(new)
    for path in params:
        np.testing.assert_array_equal(params[path], snapshot[path])


def test_empty_tree_rejected():
    with pytest.raises(ValueError, match="empty"):
        Kbeta({}, KbetaConfig())
    with pytest.raises(ValueError, match="empty"):
        Adam({})


def test_mismatched_tree_rejected():
    opt = Kbeta(_random_tree(1), KbetaConfig())
    bad = _random_tree(1)
    bad["extra"] = np.zeros(2)
    with pytest.raises(ValueError):
        opt.step(bad, bad)


def test_non_finite_gradient_names_the_path():
    params = _random_tree(1)
    opt = Kbeta(params, KbetaConfig())
    grads = _random_tree(2)
    grads["b"][1] = np.nan
    with pytest.raises(FloatingPointError, match="'b'"):
        opt.step(params, grads)


def test_non_positive_lr_rejected_at_step_time():
    params = _scalar_tree()
    opt = Kbeta(params, KbetaConfig())
    with pytest.raises(ValueError):
        opt.step(params, {"x": np.asarray(1.0)}, lr=0.0)


def test_float32_trees_stay_float32():
    params = {k: v.astype(np.float32) for k, v in _random_tree(3).items()}
    opt = Kbeta(params, KbetaConfig(lr=1e-3, decay=0.99, bias_correction="beta2max"))
    for seed in range(5):
        grads = {k: v.astype(np.float32) for k, v in _random_tree(50 + seed).items()}
        params = opt.step(params, grads)
    for path, p in params.items():
        assert p.dtype == np.float32
        assert np.isfinite(p).all()
    state = opt.state_dict()
    assert all(rec["dtype"] == "float32" for rec in state["slots"].values())


def test_max_v_tracks_largest_coordinate():
    params = {"a": np.zeros(2), "b": np.zeros(2)}
    opt = Kbeta(params, KbetaConfig(beta2_min=0.5, beta2_max=0.5))
    opt.step(params, {"a": np.array([1.0, 0.0]), "b": np.array([0.0, 3.0])})
    # v = 0.5 * g^2: largest is 4.5 from the 3.0 coordinate
    assert opt.max_v() == pytest.approx(4.5, rel=1e-15)


def test_hard_max_buffer_never_decreases():
    # beta2 pinned at 0.5 so v halves each calm step; the hard max must hold the
    # initial spike's v = 0.5 * 16 = 8 forever
    params = _scalar_tree()
    opt = Kbeta(params, KbetaConfig(lr=1e-3, beta2_min=0.5, beta2_max=0.5, decay=1.0))
    seen = []
    for g in (4.0, 0.1, 0.1, 0.1, 0.1):
        params = opt.step(params, {"x": np.asarray(g)})
        seen.append(float(np.asarray(opt.state_dict()["slots"]["x"]["v_max"])[0]))
    assert seen[0] == pytest.approx(8.0, rel=1e-15)
    assert all(s == seen[0] for s in seen[1:])


def test_leaky_buffer_forgets_old_spikes():
    # same spike, but a 0.5-per-step leak: both v and the buffer erode toward the
    # calm-gradient level instead of pinning the denominator at the spike
    params = _scalar_tree()
    opt = Kbeta(params, KbetaConfig(lr=1e-3, beta2_min=0.5, beta2_max=0.5, decay=0.5))
    for g in (4.0, 0.1, 0.1, 0.1, 0.1, 0.1):
        params = opt.step(params, {"x": np.asarray(g)})
    final = float(np.asarray(opt.state_dict()["slots"]["x"]["v_max"])[0])
    assert final < 1.0


# -- invariance properties -------------------------------------------------------


def test_bucket_modes_agree_bit_for_bit_when_beta2_is_pinned():
    # With beta2_min == beta2_max the pooled statistic cannot influence updates,
    # so all three partitions must yield the same trajectory exactly.
    finals = {}
    for mode in BUCKET_MODES:
        cfg = KbetaConfig(lr=2e-3, beta2_min=0.95, beta2_max=0.95, bucket_mode=mode)
        params = _random_tree(7)
        opt = Kbeta(params, cfg)
        for seed in range(30):
            params = opt.step(params, _random_tree(200 + seed))
        finals[mode] = params
    for mode in ("per_path", "shape"):
        for path in finals["global"]:
            np.testing.assert_array_equal(finals[mode][path], finals["global"][path])


def test_diagnostics_do_not_perturb_the_trajectory():
    finals = {}
    for diag in (False, True):
        cfg = KbetaConfig(lr=1e-3, warmup_steps=5, decay=0.99, diagnostics=diag)
        params = _random_tree(11)
        opt = Kbeta(params, cfg)
        for seed in range(25):
            params = opt.step(params, _random_tree(300 + seed))
        finals[diag] = params
        if diag:
            assert len(opt.take_records()) == 25
    for path in finals[True]:
        np.testing.assert_array_equal(finals[True][path], finals[False][path])


def test_recorded_sun_and_beta2_stay_in_range():
    for seed in range(10):
        cfg = KbetaConfig(lr=1e-3, warmup_steps=2, diagnostics=True)
        params = _random_tree(seed)
        opt = Kbeta(params, cfg)
        scale = float(10.0 ** _rng(seed, 9).uniform(-3, 3))
        for k in range(8):
            params = opt.step(params, _random_tree(1000 + 10 * seed + k, scale=scale))
        for rec in opt.take_records():
            assert 0.0 <= rec.sun < 1.0
            assert 0.88 <= rec.beta2 <= 0.999
            assert rec.sun <= 1.0 / (2.0 - 0.93) + 1e-15


def test_reduces_to_adam_when_pinned_and_stripped():
    # beta2 pinned, no buffer, no floor, no warmup, bias correction off on both
    # sides: the two implementations must walk in lockstep.
    params_k = _random_tree(21)
    params_a = _random_tree(21)
    kb = Kbeta(params_k, KbetaConfig(lr=5e-3, beta2_min=0.999, beta2_max=0.999))
    ad = Adam(params_a, lr=5e-3, beta2=0.999, bias_correction=False)
    for seed in range(50):
        grads = _random_tree(400 + seed)
        params_k = kb.step(params_k, grads)
        params_a = ad.step(params_a, grads)
    for path in params_k:
        np.testing.assert_array_equal(params_k[path], params_a[path])


def test_reduces_to_adam_with_bias_correction():
    params_k = _random_tree(22)
    params_a = _random_tree(22)
    kb = Kbeta(
        params_k,
        KbetaConfig(lr=5e-3, beta2_min=0.999, beta2_max=0.999, bias_correction="beta2max"),
    )
    ad = Adam(params_a, lr=5e-3, beta2=0.999, bias_correction=True)
    worst = 0.0
    for seed in range(50):
        grads = _random_tree(500 + seed)
        params_k = kb.step(params_k, grads)
        params_a = ad.step(params_a, grads)
        for path in params_k:
            worst = max(worst, float(np.max(np.abs(params_k[path] - params_a[path]))))
    # the two factorizations of the corrected update differ only in rounding
    assert worst <= 1e-14


# -- checkpointing ---------------------------------------------------------------


def _advance(opt, params, seeds):
    for seed in seeds:
        params = opt.step(params, _random_tree(seed))
    return params


@pytest.mark.parametrize(
    "cfg",
    [
        KbetaConfig(lr=1e-3),
        KbetaConfig(lr=1e-3, decay=0.98, max_ratio=4.0, bias_correction="exact",
                    warmup_steps=3, bucket_mode="shape"),
    ],
)
def test_checkpoint_resume_is_bit_identical(tmp_path, cfg):
    params = _random_tree(31)
    opt = Kbeta(params, cfg)
    params = _advance(opt, params, range(600, 610))
    save_checkpoint(opt, tmp_path / "ck.json")

    resumed = load_checkpoint(tmp_path / "ck.json")
    assert isinstance(resumed, Kbeta)
    assert resumed.t == opt.t
    p_orig = _advance(opt, {k: v.copy() for k, v in params.items()}, range(610, 620))
    p_res = _advance(resumed, {k: v.copy() for k, v in params.items()}, range(610, 620))
    for path in p_orig:
        np.testing.assert_array_equal(p_orig[path], p_res[path])


def test_checkpoint_preserves_dtype(tmp_path):
    params = {k: v.astype(np.float32) for k, v in _random_tree(33).items()}
    opt = Kbeta(params, KbetaConfig(lr=1e-3))
    opt.step(params, {k: v.astype(np.float32) for k, v in _random_tree(34).items()})
    save_checkpoint(opt, tmp_path / "ck.json")
    resumed = load_checkpoint(tmp_path / "ck.json")
    assert all(s.m.dtype == np.float32 for s in resumed.slots.values())


def test_adam_checkpoint_round_trip(tmp_path):
    params = _random_tree(35)
    opt = Adam(params, lr=2e-3, beta2=0.95, bias_correction=True)
    params = _advance(opt, params, range(700, 705))
    save_checkpoint(opt, tmp_path / "adam.json")
    resumed = load_checkpoint(tmp_path / "adam.json")
    assert isinstance(resumed, Adam)
    p_orig = _advance(opt, {k: v.copy() for k, v in params.items()}, range(705, 710))
    p_res = _advance(resumed, {k: v.copy() for k, v in params.items()}, range(705, 710))
    for path in p_orig:
        np.testing.assert_array_equal(p_orig[path], p_res[path])


def test_checkpoint_rejects_foreign_payload(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"kind": "sgd", "version": 1}')
    with pytest.raises(ValueError, match="unrecognized"):
        load_checkpoint(path)
    state = Kbeta(_scalar_tree(), KbetaConfig()).state_dict()
    state["version"] = CHECKPOINT_VERSION + 1
    with pytest.raises(ValueError, match="unrecognized"):
        Kbeta.from_state_dict(state)


# -- Adam basics -----------------------------------------------------------------


def test_adam_first_step_oracle():
    # BC off, beta2=0.9, g=1: identical arithmetic to the pinned variant
    opt = Adam(_scalar_tree(), lr=1e-2, beta2=0.9, bias_correction=False)
    new = opt.step(_scalar_tree(), {"x": np.asarray(1.0)})
    assert float(new["x"]) == pytest.approx(-0.0031622775601683824, rel=1e-12)


def test_adam_bias_correction_first_step_is_full_sized():
    # at t=1 the corrected update is lr * sign-ish step: m_hat = g, v_hat = g^2
    opt = Adam(_scalar_tree(), lr=1e-2, bias_correction=True)
    new = opt.step(_scalar_tree(), {"x": np.asarray(1.0)})
    assert float(new["x"]) == pytest.approx(-1e-2 / (1.0 + 1e-8), rel=1e-12)


def test_adam_validates_hyperparameters():
    p = _scalar_tree()
    with pytest.raises(ValueError):
        Adam(p, lr=0.0)
    with pytest.raises(ValueError):
        Adam(p, beta1=1.0)
    with pytest.raises(ValueError):
        Adam(p, beta2=0.0)
    with pytest.raises(ValueError):
        Adam(p, eps=0.0)


def test_adam_rejects_non_finite_gradients():
    p = _scalar_tree()
    opt = Adam(p)
    with pytest.raises(FloatingPointError):
        opt.step(p, {"x": np.asarray(np.inf)})
