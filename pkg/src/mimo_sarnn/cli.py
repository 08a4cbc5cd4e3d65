"""Command line entry point for corpus simulation, training and inference.

Exit code 0 is success and 1 a usage or input error; 2 marks a numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(path):
    from .pipeline.config import RunConfig, desk_config
    return RunConfig.load(path) if path else desk_config()


def cmd_config(args) -> int:
    cfg = _load_config(args.config)
    text = json.dumps(cfg.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .acoustics import generate_corpus
    cfg = _load_config(args.config)
    sizes = dict(zip(("train", "val", "test"), cfg.corpus_sizes))
    splits = args.splits.split(",")
    for k, split in enumerate(splits):
        if split not in sizes:
            raise UsageError(f"unknown split {split!r}; choose from train,val,test")
        n = args.num if args.num is not None else sizes[split]
        rows = generate_corpus(cfg.recipe, n, args.seed + k, Path(args.out) / split, prefix=f"{split}_")
        print(f"{split}: {len(rows)} utterances -> {Path(args.out) / split / 'manifest.jsonl'}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline.data import load_corpus
    from .pipeline.train import train
    cfg = _load_config(args.config)
    if args.variant:
        cfg = cfg.with_variant(args.variant)
    if args.max_steps is not None:
        cfg.train.max_steps = args.max_steps
    if args.time_budget is not None:
        cfg.train.time_budget_s = args.time_budget
    train_utts = load_corpus(args.train, cfg.ref_channel)
    val_utts = load_corpus(args.val, cfg.ref_channel) if args.val else None
    _, res = train(cfg, train_utts, val_utts, out_dir=args.out)
    print(json.dumps({"steps": res.steps, "epochs": res.epochs, "best_val_si_snr": res.best_val,
                      "checkpoint": str(res.best_checkpoint), "stopped_early": res.stopped_early}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .pipeline.data import load_corpus, load_multichannel_refs
    from .pipeline.evaluate import SYSTEMS, evaluate_systems
    systems = args.systems.split(",") if args.systems else list(SYSTEMS)
    checkpoints = {}
    if args.checkpoint:
        checkpoints["default"] = args.checkpoint
    for item in args.checkpoint_for or []:
        name, sep, path = item.partition("=")
        if not sep:
            raise UsageError(f"--checkpoint-for expects SYSTEM=PATH, got {item!r}")
        checkpoints[name] = path
    utts = load_corpus(args.test)
    oracle = load_multichannel_refs(args.test) if "mvdr_oracle" in systems else None
    report = evaluate_systems(utts, systems, checkpoints=checkpoints, oracle_refs=oracle)
    print(report.to_text())
    if args.json:
        Path(args.json).write_text(report.to_json() + "\n")
    return EXIT_OK


def cmd_separate(args) -> int:
    from .pipeline.separate import separate
    try:
        doas = [float(d) for d in args.doas.split(",")]
    except ValueError as exc:
        raise UsageError(f"--doas must be comma-separated numbers: {exc}") from exc
    for p in separate(args.checkpoint, args.input, doas, args.out):
        print(p)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import main_suite
    ok, text = main_suite(instances=args.instances, seed=args.seed)
    print(text)
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="python -m mimo_sarnn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("config", help="print the run configuration (desk profile by default)")
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_config)

    s = sub.add_parser("simulate", help="generate a simulated corpus")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--splits", default="train,val,test")
    s.add_argument("--num", type=int, help="utterances per split (default from the config)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="train a separation system")
    s.add_argument("--config")
    s.add_argument("--train", required=True, help="training corpus directory or manifest")
    s.add_argument("--val", help="validation corpus directory or manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--variant")
    s.add_argument("--max-steps", type=int)
    s.add_argument("--time-budget", type=float, help="seconds")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="score systems on a test corpus")
    s.add_argument("--test", required=True)
    s.add_argument("--checkpoint", help="default checkpoint for neural systems")
    s.add_argument("--checkpoint-for", action="append", metavar="SYSTEM=PATH")
    s.add_argument("--systems", help="comma-separated, default: every system")
    s.add_argument("--json", help="also write machine-readable rows here")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("separate", help="separate a multichannel WAV")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--doas", required=True, help="comma-separated degrees")
    s.add_argument("--out")
    s.set_defaults(func=cmd_separate)

    s = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    s.add_argument("--instances", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    from .pipeline.train import NumericFailure
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NumericFailure, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
