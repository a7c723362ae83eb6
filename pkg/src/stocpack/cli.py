"""Command-line front end.

Subcommands:
  gen      write a generated instance to JSON
  solve    build + solve the selected pipeline's LP, write a JSON report
  run      solve, round, and Monte Carlo simulate; write a CSV report
           (a PNG figure is rendered next to it unless --no-figure)
  certify  run the certification checks for the pipeline; exit 0 iff all
           executed checks pass (oracle checks are skipped, not failed,
           when the instance exceeds the DP guards)

The default seed is the documented constant 2011; identical inputs and seed
produce byte-identical reports. STOCPACK_THREADS caps trial-loop parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .certify import certify
from .harness import (
    DEFAULT_SEED,
    FullPipeline,
    MabDagPipeline,
    MabExploitPipeline,
    MabTreePipeline,
    NoCancelPipeline,
    PolyNoCancelPipeline,
    PolySmallPipeline,
    SmallPipeline,
    gen_cancel_benefit,
    gen_correlated_gap,
    gen_preemption_gap,
    gen_random_mab,
    gen_random_stock,
    simulate,
    trial_rng,
)
from .instance_io import load_instance, save_instance
from .lp import export_lp_text
from .model import MABInstance, StocKInstance, validate_mab, validate_stock
from .report import write_report

STOCK_PIPELINES = {
    "nocancel": NoCancelPipeline,
    "nocancel-poly": PolyNoCancelPipeline,
    "small": SmallPipeline,
    "small-poly": PolySmallPipeline,
    "stock-full": FullPipeline,
}
MAB_PIPELINES = {
    "mab-tree": MabTreePipeline,
    "mab-dag": MabDagPipeline,
    "mab-exploit": MabExploitPipeline,
}
PIPELINES = sorted(STOCK_PIPELINES | MAB_PIPELINES)

GUARANTEE = {  # pipeline -> (label, bound multiplier applied to its LP value)
    "nocancel": ("mean >= LPOpt/8 (+3se)", 1 / 8),
    "nocancel-poly": ("mean >= PolyLPOpt/8 (+3se)", 1 / 8),
    "small": ("mean >= LP_S/8 (+3se)", 1 / 8),
    "small-poly": ("mean >= PolyLP_S/16 (+3se)", 1 / 16),
    "mab-tree": ("mean >= LPOpt/48 (+3se)", 1 / 48),
    "mab-dag": ("mean >= LPOpt/48 (+3se)", 1 / 48),
    "mab-exploit": ("mean >= (11/576)*LP4Opt (+3se)", 11 / 576),
}


def _fail(msg: str) -> "NoReturn":  # noqa: F821
    print(f"error: {msg}", file=sys.stderr)
    raise SystemExit(2)


def _load_checked(path: str):
    try:
        instance = load_instance(path)
    except (OSError, ValueError, KeyError) as exc:
        _fail(f"cannot read instance {path}: {exc}")
    problems = (validate_stock(instance) if isinstance(instance, StocKInstance)
                else validate_mab(instance))
    if problems:
        _fail("invalid instance:\n  " + "\n  ".join(problems))
    return instance


def _make_pipeline(instance, name: str):
    if name in STOCK_PIPELINES:
        if not isinstance(instance, StocKInstance):
            _fail(f"pipeline {name} needs a stock instance")
        cls = STOCK_PIPELINES[name]
    elif name in MAB_PIPELINES:
        if not isinstance(instance, MABInstance):
            _fail(f"pipeline {name} needs a mab instance")
        cls = MAB_PIPELINES[name]
    else:
        _fail(f"unknown pipeline {name}")
    try:
        return cls(instance)
    except ValueError as exc:
        _fail(str(exc))


def cmd_gen(args) -> int:
    fam = args.family
    try:
        if fam == "cancel-benefit":
            instance = gen_cancel_benefit(args.n)
        elif fam == "correlated-gap":
            instance = gen_correlated_gap(args.n)
        elif fam == "preemption-gap":
            instance = gen_preemption_gap(args.n, args.L, args.m, args.B)
        elif fam == "random-stock":
            instance = gen_random_stock(args.n, args.B or 10, args.support, args.seed)
        elif fam == "random-mab":
            instance = gen_random_mab(args.arms, args.states, args.B or 8, args.seed)
        else:
            _fail(f"unknown family {fam}")
    except ValueError as exc:
        _fail(str(exc))
    save_instance(instance, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_solve(args) -> int:
    instance = _load_checked(args.instance)
    pipe = _make_pipeline(instance, args.pipeline)
    if args.pipeline == "stock-full":
        payload = {
            "pipeline": args.pipeline,
            "early": {"objective": pipe.early.lp_opt, "status": pipe.early.solution.status},
            "late": {"objective": pipe.late.lp_opt, "status": pipe.late.solution.status},
            "objective": pipe.early.lp_opt + pipe.late.lp_opt,
        }
        if args.lp_dump:
            Path(args.lp_dump).write_text(
                export_lp_text(pipe.early.lp) + "\n" + export_lp_text(pipe.late.lp))
    else:
        payload = {
            "pipeline": args.pipeline,
            "objective": pipe.lp_opt,
            "status": pipe.solution.status,
            "values": {k: v for k, v in sorted(pipe.solution.values.items()) if v > 1e-12},
        }
        if args.lp_dump:
            Path(args.lp_dump).write_text(export_lp_text(pipe.lp))
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def _default_trials(pipeline: str) -> int:
    return 200_000 if pipeline.startswith("mab") else 100_000


def cmd_run(args) -> int:
    instance = _load_checked(args.instance)
    pipe = _make_pipeline(instance, args.pipeline)
    trials = args.trials or _default_trials(args.pipeline)
    report = simulate(pipe, trials, args.seed, want_freq=args.freq)
    if args.pipeline == "stock-full":
        combined = pipe.early.lp_opt + pipe.late.lp_opt
        report.add_check("mean >= (LP_early+LP_late)/16 (+3se)", combined, 1 / 16)
    else:
        label, bound = GUARANTEE[args.pipeline]
        report.add_check(label, pipe.lp_opt, bound)
    write_report(report.comparisons, args.out, figure=not args.no_figure)
    if args.freq and report.per_state_frequency is not None:
        freq_path = Path(args.out).with_suffix(".freq.csv")
        lines = ["state,plays_per_trial"]
        lines += [f"{s},{v!r}" for s, v in report.per_state_frequency.items()]
        freq_path.write_text("\n".join(lines) + "\n")
    if args.trace:
        _write_traces(pipe, trials, args.seed, args.trace)
    print(f"wrote {args.out}")
    verdicts = {c.verdict for c in report.comparisons}
    return 0 if "fail" not in verdicts else 1


def _write_traces(pipe, trials: int, seed: int, path: str) -> None:
    lines = []
    for t in range(trials):
        result = pipe.run(trial_rng(seed, t))
        if hasattr(result, "entries"):
            payload = {
                "trial": t,
                "reward": result.credited_reward,
                "plays": [
                    [e.counter, e.arm, e.state, e.action, e.next_state, e.credited]
                    for e in result.entries
                ],
            }
        else:
            payload = {
                "trial": t,
                "reward": result.total_reward,
                "outcomes": [[o.kind, o.at] for o in result.outcomes],
                "consumed": result.budget_consumed,
            }
        lines.append(json.dumps(payload, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_certify(args) -> int:
    instance = _load_checked(args.instance)
    trials = args.trials or _default_trials(args.pipeline)
    try:
        checks = certify(instance, args.pipeline, trials, args.seed)
    except ValueError as exc:
        _fail(str(exc))
    write_report(checks, args.out, figure=not args.no_figure)
    for c in checks:
        print(f"[{c.verdict:>4}] {c.label}")
    failed = [c for c in checks if c.verdict == "fail"]
    print(f"wrote {args.out}: {len(checks) - len(failed)}/{len(checks)} checks ok")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="stocpack",
        description="Correlated stochastic knapsack and non-martingale bandit "
                    "LP pipelines with certification.",
        epilog="STOCPACK_THREADS caps the harness trial-loop parallelism.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate an instance file")
    g.add_argument("--family", required=True,
                   choices=["cancel-benefit", "correlated-gap", "preemption-gap",
                            "random-stock", "random-mab"])
    g.add_argument("--n", type=int, default=4)
    g.add_argument("--L", type=int, default=3)
    g.add_argument("--m", type=int, default=1)
    g.add_argument("--B", type=int, default=None)
    g.add_argument("--support", type=int, default=3)
    g.add_argument("--arms", type=int, default=2)
    g.add_argument("--states", type=int, default=4)
    g.add_argument("--seed", type=int, default=DEFAULT_SEED)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen)

    s = sub.add_parser("solve", help="build and solve the pipeline LP")
    s.add_argument("--instance", required=True)
    s.add_argument("--pipeline", required=True, choices=PIPELINES)
    s.add_argument("--out", default=None)
    s.add_argument("--lp-dump", default=None, help="also write the LP text format")
    s.set_defaults(fn=cmd_solve)

    r = sub.add_parser("run", help="solve, round, and simulate")
    r.add_argument("--instance", required=True)
    r.add_argument("--pipeline", required=True, choices=PIPELINES)
    r.add_argument("--trials", type=int, default=None)
    r.add_argument("--seed", type=int, default=DEFAULT_SEED)
    r.add_argument("--out", required=True)
    r.add_argument("--trace", default=None, help="write per-trial traces (JSON lines)")
    r.add_argument("--freq", action="store_true", help="also write per-state play frequencies")
    r.add_argument("--no-figure", action="store_true")
    r.set_defaults(fn=cmd_run)

    c = sub.add_parser("certify", help="run the certification checks")
    c.add_argument("--instance", required=True)
    c.add_argument("--pipeline", required=True, choices=PIPELINES)
    c.add_argument("--trials", type=int, default=None)
    c.add_argument("--seed", type=int, default=DEFAULT_SEED)
    c.add_argument("--out", required=True)
    c.add_argument("--no-figure", action="store_true")
    c.set_defaults(fn=cmd_certify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
