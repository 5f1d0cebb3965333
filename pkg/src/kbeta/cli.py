"""Command-line benchmark harness.

Subcommands: ``run`` (one training cell), ``sweep`` (paired seed sweep with
statistics), ``equivalence`` (Adam-reduction check), ``report`` (render figures for
an output directory). Exit codes: 0 success, 2 configuration error, 3 diverged run
(1 for an equivalence check that misses its tolerance).

Runs are always deterministic for a fixed seed; ``--deterministic`` is accepted and
recorded for interface compatibility. ``--layer_bucket per-array`` is the stable
per-parameter-path bucketing, spelled ``per_path`` in the library.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .diagnostics import records_to_csv
from .harness import (
    SWEEP_OPTIMIZERS,
    TESTBEDS,
    equivalence_check,
    run_experiment,
    save_run,
    seed_sweep,
    write_sweep_csv,
)

_BUCKET_ALIASES = {"global": "global", "per-array": "per_path", "per_path": "per_path", "shape": "shape"}


def _parse_seeds(text: str) -> list[int]:
    """"0:10" is the half-open range; "0,3,7" and "5" are literal lists."""
    text = text.strip()
    if ":" in text:
        lo, hi = text.split(":", 1)
        lo_i, hi_i = int(lo), int(hi)
        if hi_i <= lo_i:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(lo_i, hi_i))
    return [int(chunk) for chunk in text.split(",") if chunk.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kbeta", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="train one (testbed, optimizer, seed) cell")
    run_p.add_argument("--testbed", required=True, choices=TESTBEDS)
    run_p.add_argument("--opt", default="kbeta",
                       choices=("kbeta", "kbeta_fixed", "adam", "adam95", "adam999"))
    run_p.add_argument("--adam_beta2", type=float, default=None,
                       help="second-moment discount for --opt adam")
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--steps", type=int, default=None)
    run_p.add_argument("--lr", type=float, default=None)
    run_p.add_argument("--lr_schedule", type=str, default=None,
                       help='piecewise map "step:lr,step:lr,..."')
    run_p.add_argument("--layer_bucket", choices=sorted(_BUCKET_ALIASES), default=None)
    run_p.add_argument("--warmup", type=int, default=None,
                       help="sunspike warmup steps (score pinned to 0)")
    run_p.add_argument("--eval_every", type=int, default=1000)
    run_p.add_argument("--precision", choices=("64", "32"), default="64")
    run_p.add_argument("--deterministic", action="store_true",
                       help="recorded in the report; runs are deterministic regardless")
    run_p.add_argument("--diag", action="store_true", help="record sunspike diagnostics CSV")
    run_p.add_argument("--tau", type=float, default=None,
                       help="success threshold for the final loss (no default)")
    run_p.add_argument("--out", type=str, default="out")
    run_p.add_argument("--plots", action="store_true", help="render figures next to the data")

    sweep_p = sub.add_parser("sweep", help="paired seed sweep with statistics")
    sweep_p.add_argument("--testbed", required=True, choices=TESTBEDS)
    sweep_p.add_argument("--seeds", type=str, default="0:10",
                         help='"lo:hi" half-open range or comma list')
    sweep_p.add_argument("--opts", type=str, default=",".join(SWEEP_OPTIMIZERS))
    sweep_p.add_argument("--steps", type=int, default=None)
    sweep_p.add_argument("--lr", type=float, default=None)
    sweep_p.add_argument("--eval_every", type=int, default=1000)
    sweep_p.add_argument("--precision", choices=("64", "32"), default="64")
    sweep_p.add_argument("--tau", type=float, default=None,
                         help="success threshold; also defines the clean-seed subset")
    sweep_p.add_argument("--jobs", type=int, default=1)
    sweep_p.add_argument("--diag", action="store_true")
    sweep_p.add_argument("--out", type=str, default="out")
    sweep_p.add_argument("--plots", action="store_true")

    eq_p = sub.add_parser("equivalence", help="Adam vs pinned-beta2 Kbeta lockstep check")
    eq_p.add_argument("--steps", type=int, default=1000)
    eq_p.add_argument("--precision", choices=("64", "32"), default="32")
    eq_p.add_argument("--seed", type=int, default=0)
    eq_p.add_argument("--tol", type=float, default=None,
                      help="fail (exit 1) if either pairing exceeds this difference")

    rep_p = sub.add_parser("report", help="render figures for a harness output directory")
    rep_p.add_argument("--out", type=str, default="out")

    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    report = run_experiment(
        args.testbed,
        args.opt,
        args.seed,
        steps=args.steps,
        lr=args.lr,
        lr_schedule=args.lr_schedule,
        eval_every=args.eval_every,
        precision=args.precision,
        bucket_mode=None if args.layer_bucket is None else _BUCKET_ALIASES[args.layer_bucket],
        warmup_steps=args.warmup,
        adam_beta2=args.adam_beta2,
        diagnostics=args.diag,
        deterministic=args.deterministic,
        tau=args.tau,
    )
    path = save_run(report, args.out)
    if args.diag and report.diagnostics:
        diag_path = path.with_name(f"seed{report.seed}_diag.csv")
        records_to_csv(report.diagnostics, diag_path)
        print(f"wrote {diag_path}")
    print(f"wrote {path}")
    if args.plots:
        from .plots import plot_run

        png = plot_run(report, path.with_suffix(".png"))
        print(f"wrote {png}")
    if report.final["diverged"]:
        print(f"run diverged at step {report.final['last_finite_step'] + 1}", file=sys.stderr)
        return 3
    loss = report.final["loss"]
    acc = report.final.get("accuracy")
    msg = f"final loss {loss:.6g}"
    if acc is not None:
        msg += f", accuracy {acc:.4f}"
    if "success" in report.final:
        msg += f", success={report.final['success']}"
    print(msg)
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    seeds = _parse_seeds(args.seeds)
    optimizers = [o.strip() for o in args.opts.split(",") if o.strip()]
    sweep = seed_sweep(
        args.testbed,
        seeds,
        optimizers,
        tau=args.tau,
        jobs=args.jobs,
        steps=args.steps,
        lr=args.lr,
        eval_every=args.eval_every,
        precision=args.precision,
        diagnostics=args.diag,
    )
    out = Path(args.out)
    for label in sweep.optimizers:
        for seed in sweep.seeds:
            rep = sweep.runs[label][seed]
            path = save_run(rep, out)
            if args.diag and rep.diagnostics:
                records_to_csv(rep.diagnostics, path.with_name(f"seed{seed}_diag.csv"))
    csv_path = write_sweep_csv(sweep, out / "sweep.csv")
    stats_path = out / "sweep_stats.json"
    stats_path.write_text(sweep.to_json())
    print(f"wrote {csv_path}")
    print(f"wrote {stats_path}")
    if args.plots:
        from .plots import plot_sweep

        png = plot_sweep(sweep, out / "sweep.png")
        print(f"wrote {png}")
    for label, row in sweep.comparisons.items():
        ratio = row.get("geo_mean_ratio", {}).get("ratio")
        wins = row.get("wins")
        if ratio is not None:
            print(f"{label} vs kbeta: geo-mean ratio {ratio:.4g}, kbeta wins {wins}/{len(seeds)}")
    diverged = any(
        sweep.runs[label][seed].final["diverged"]
        for label in sweep.optimizers for seed in sweep.seeds
    )
    return 3 if diverged else 0


def _cmd_equivalence(args: argparse.Namespace) -> int:
    worst = 0.0
    for bc in (False, True):
        gap = equivalence_check(
            steps=args.steps, precision=args.precision,
            bias_correction=bc, seed=args.seed,
        )
        worst = max(worst, gap)
        print(f"bias_correction={'on' if bc else 'off'}: max |param diff| = {gap:.3e}")
    if args.tol is not None and worst > args.tol:
        print(f"exceeds tolerance {args.tol:.3e}", file=sys.stderr)
        return 1
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    from .plots import render_report_dir

    written = render_report_dir(args.out)
    for path in written:
        print(f"wrote {path}")
    if not written:
        print(f"no data artifacts found under {args.out}", file=sys.stderr)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "equivalence": _cmd_equivalence,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
