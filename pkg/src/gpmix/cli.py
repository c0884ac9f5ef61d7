"""Command line entry point: run, evaluate, replay."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from gpmix import harness
from gpmix.harness import (
    CheckpointError,
    RunConfig,
    checkpoint_load,
    evaluate_run_dir,
    load_transitions_csv,
)


def _cmd_run(args) -> int:
    if args.config:
        config = RunConfig.load(args.config)
    else:
        config = harness.default_cartpole_config()
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out_dir = args.out
    if args.ablate_prior is not None:
        config.mixture = dataclasses.replace(config.mixture, prior_mode=args.ablate_prior)
    if args.no_merge_prune:
        config.mixture = dataclasses.replace(config.mixture, merge_prune=False)
    try:
        report = harness.run(config)
    except Exception as exc:  # partial logs are already flushed
        logging.error("run aborted: %s", exc)
        return 1
    print(json.dumps(report.to_dict(), indent=2))
    print(f"artifacts written to {config.out_dir}", file=sys.stderr)
    return 0


def _cmd_evaluate(args) -> int:
    report = evaluate_run_dir(args.out)
    payload = json.dumps(report.to_dict(), indent=2)
    (Path(args.out) / "report.json").write_text(payload + "\n")
    print(payload)
    return 0


def _cmd_replay(args) -> int:
    try:
        mixture, config = checkpoint_load(args.checkpoint)
    except CheckpointError as exc:
        logging.error("%s", exc)
        return 1
    points, recorded, ts = load_transitions_csv(args.transitions)
    start_t = mixture.t
    tail = [(p, a, t) for p, a, t in zip(points, recorded, ts) if t >= start_t]
    if args.count is not None:
        tail = tail[: args.count]
    if not tail:
        logging.error("no transitions at or after checkpoint step %d", start_t)
        return 1
    replayed = harness.replay(mixture, [p for p, _, _ in tail])
    matches = sum(int(r == a) for r, (_, a, _) in zip(replayed, tail))
    print(f"replayed {len(tail)} transitions from t={start_t}: "
          f"{matches}/{len(tail)} assignments match the recorded run")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rows = [
            {"t": t, "recorded": a, "replayed": r}
            for r, (_, a, t) in zip(replayed, tail)
        ]
        (out / "replay.json").write_text(json.dumps(rows, indent=1) + "\n")
    return 0 if matches == len(tail) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpmix",
        description="Online model-based RL with a mixture of GP dynamics experts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a full run from a config file")
    p_run.add_argument("--config", type=str, default=None, help="path to a config JSON")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", type=str, default=None, help="override the output directory")
    p_run.add_argument(
        "--ablate-prior", choices=("dp", "transition"), default=None,
        help="replace the assignment prior",
    )
    p_run.add_argument(
        "--no-merge-prune", action="store_true", help="disable expert merging and pruning"
    )
    p_run.set_defaults(func=_cmd_run)

    p_eval = sub.add_parser("evaluate", help="recompute metrics from a run directory")
    p_eval.add_argument("--out", type=str, required=True, help="run directory with logs")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_replay = sub.add_parser(
        "replay", help="replay recorded transitions against a checkpoint"
    )
    p_replay.add_argument("--checkpoint", type=str, required=True)
    p_replay.add_argument("--transitions", type=str, required=True,
                          help="transitions.csv from the recorded run")
    p_replay.add_argument("--count", type=int, default=None)
    p_replay.add_argument("--out", type=str, default=None,
                          help="directory for the replay comparison")
    p_replay.set_defaults(func=_cmd_replay)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
