"""Command line entry point: ``fairppo {train,eval,sweep,plot,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..errors import FairPPOError
from . import experiment as ex
from .plots import export_plots, rows_from_directory


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.split(",") if x.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairppo", description="Fair-PPO experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_flags(p):
        p.add_argument("--config", type=Path, help="JSON experiment config; flags override its fields")
        p.add_argument("--env", dest="environment", choices=ex.ENVIRONMENTS)
        p.add_argument("--algorithm", choices=ex.ALGORITHMS)
        p.add_argument("--metric", choices=("DP", "CF", "CSP"))
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--seeds", type=_ints, help="comma separated, e.g. 0,1,2")
        p.add_argument("--scale", choices=("desk", "paper"))
        p.add_argument("--train-episodes", type=int)
        p.add_argument("--eval-episodes", type=int)
        p.add_argument("--eval-episode-length", type=int)
        p.add_argument("--checkpoint-every", type=int)
        p.add_argument("--deterministic-eval", action="store_true", default=None)
        p.add_argument("--check-invariants", action="store_true", default=None)
        p.add_argument("--out", dest="output_dir", help="output directory")

    p = sub.add_parser("train", help="train (and by default evaluate) every seed")
    experiment_flags(p)
    p.add_argument("--no-eval", action="store_true", help="skip the evaluation pass")

    p = sub.add_parser("eval", help="evaluate saved checkpoints")
    experiment_flags(p)
    p.add_argument("--checkpoint", type=Path, help="checkpoint file (single seed only)")

    p = sub.add_parser("sweep", help="train+evaluate over an alpha/beta (or SOTO alpha) grid")
    experiment_flags(p)
    p.add_argument("--alphas", type=_floats)
    p.add_argument("--betas", type=_floats)
    p.add_argument("--soto-alphas", type=_floats)

    p = sub.add_parser("plot", help="render figures from run directories")
    p.add_argument("--runs", type=Path, required=True, help="directory containing run outputs")
    p.add_argument("--out", type=Path, help="figure directory (default: <runs>/plots)")

    p = sub.add_parser("report", help="print evaluation reports found under a directory")
    p.add_argument("--runs", type=Path, required=True)
    p.add_argument("--csv", type=Path, help="also write the per-configuration summary here")
    return parser


OVERRIDABLE = (
    "environment", "algorithm", "metric", "alpha", "beta", "seeds", "scale", "train_episodes", "eval_episodes",
    "eval_episode_length", "checkpoint_every", "deterministic_eval", "check_invariants", "output_dir",
    "alphas", "betas", "soto_alphas",
)


def config_from_args(args) -> ex.ExperimentConfig:
    base = json.loads(args.config.read_text()) if getattr(args, "config", None) else {}
    for name in OVERRIDABLE:
        value = getattr(args, name, None)
        if value is not None:
            base[name] = value
    return ex.ExperimentConfig.from_dict(base)


def cmd_train(args) -> int:
    cfg = config_from_args(args)
    failed = 0
    for seed in cfg.seeds:
        try:
            tr = ex.train(cfg, seed)
            ev = None if args.no_eval else ex.evaluate(cfg, seed, alg=tr.alg, checkpoint_path=tr.checkpoint_path)
            d = ex.persist(tr, ev, cfg, seed)
            print(f"seed {seed}: {d}")
            if ev is not None and ev.report is not None:
                print(ev.report.to_text())
        except FairPPOError as exc:
            failed += 1
            print(f"seed {seed}: FAILED {type(exc).__name__}: {exc}", file=sys.stderr)
    return 1 if failed else 0


def cmd_eval(args) -> int:
    cfg = config_from_args(args)
    if args.checkpoint is not None and len(cfg.seeds) != 1:
        print("--checkpoint requires exactly one seed", file=sys.stderr)
        return 2
    failed = 0
    for seed in cfg.seeds:
        try:
            ev = ex.evaluate(cfg, seed, checkpoint_path=args.checkpoint)
            d = ex.persist(None, ev, cfg, seed)
            print(f"seed {seed}: {d}")
            if ev.report is None:
                raise FairPPOError("no evaluable episodes")
            print(ev.report.to_text())
        except FairPPOError as exc:
            failed += 1
            print(f"seed {seed}: FAILED {type(exc).__name__}: {exc}", file=sys.stderr)
    return 1 if failed else 0


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    records = ex.sweep(cfg)
    for row in ex.summarize(records):
        print(json.dumps(row, default=str))
    failures = [r for r in records if r.error]
    for r in failures:
        print(f"{r.config.label()} seed {r.seed}: FAILED {r.error}", file=sys.stderr)
    return 1 if failures else 0


def cmd_plot(args) -> int:
    evals, trains = rows_from_directory(args.runs)
    try:
        paths = export_plots(evals, trains, args.out or args.runs / "plots")
    except FairPPOError as exc:
        print(f"plot: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


def cmd_report(args) -> int:
    root = args.runs
    found = sorted(root.rglob("report.txt"))
    if not found:
        print(f"no reports under {root}", file=sys.stderr)
        return 1
    for path in found:
        print(f"== {path.parent.relative_to(root)}")
        print(path.read_text().rstrip())
    evals, _ = rows_from_directory(root)
    rows = ex.summary_rows(evals)
    if args.csv:
        ex.write_csv(args.csv, rows, ex.SWEEP_SUMMARY_COLUMNS)
    for row in rows:
        print(json.dumps(row, default=str))
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "plot": cmd_plot, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FairPPOError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
