"""Command line entry point: train, eval, params, curves, gradcheck.

Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from . import harness
from .algo import AlgoVariant
from .numkit import gradcheck_suite


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route it through our exit codes instead
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="demaddpg", description="Escort-team multi-agent training and evaluation.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="run a seeded training campaign")
    t.add_argument("--config", required=True, help="flat key = value config file")
    t.add_argument("--seed", type=int, action="append", help="seed (repeatable); replaces config seeds")
    t.add_argument("--episodes", type=int)
    t.add_argument("--variant", help="e.g. DE-MADDPG(TD3+PER), MADDPG, DDPG, DE-MAUPG")
    t.add_argument("--scenario", action="append", help="scenario name (repeatable)")
    t.add_argument("--output-dir")
    t.add_argument("--workers", type=int, default=1)

    e = sub.add_parser("eval", help="evaluate saved policies without exploration noise")
    e.add_argument("--checkpoints", required=True, help="run dir with seed_* folders, or one checkpoint dir")
    e.add_argument("--scenario", required=True)
    e.add_argument("--episodes", type=int, default=1000)

    c = sub.add_parser("params", help="critic parameter counts versus team size")
    c.add_argument("--min-agents", type=int, required=True)
    c.add_argument("--max-agents", type=int, required=True)
    c.add_argument("--obs-dim", type=int, default=40)
    c.add_argument("--action-dim", type=int, default=2)

    lc = sub.add_parser("curves", help="cross-seed learning curves as CSV")
    lc.add_argument("--runs", required=True, help="run dir with seed_*/log.csv")
    lc.add_argument("--window", type=int, default=1)
    lc.add_argument("--out", help="write here instead of standard output")

    g = sub.add_parser("gradcheck", help="finite-difference check of the MLP gradients")
    g.add_argument("--networks", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    return p


def _train(args) -> int:
    cfg = harness.load_config(args.config)
    kw = {}
    if args.seed:
        kw["seeds"] = args.seed
    if args.episodes is not None:
        kw["episodes"] = args.episodes
    if args.variant:
        kw["variant"] = AlgoVariant.from_name(args.variant)
    if args.scenario:
        kw["scenarios"] = args.scenario
    if args.output_dir:
        kw["output_dir"] = args.output_dir
    cfg = replace(cfg, **kw)
    results = harness.run_training(cfg, workers=args.workers)
    print(json.dumps({str(s): r.status for s, r in sorted(results.items())}, sort_keys=True))
    failed = [r for r in results.values() if r.status != "ok"]
    for r in failed:
        print(f"seed {r.seed} failed: {r.error}", file=sys.stderr)
    return 2 if failed else 0


def _eval(args) -> int:
    report = harness.evaluate_checkpoints(args.checkpoints, args.scenario, args.episodes)
    print(report.to_json())
    return 0


def _params(args) -> int:
    if args.min_agents < 1 or args.max_agents < args.min_agents:
        raise ValueError("need 1 <= --min-agents <= --max-agents")
    rep = harness.count_parameters(range(args.min_agents, args.max_agents + 1), args.obs_dim, args.action_dim)
    print(rep.to_json())
    return 0


def _curves(args) -> int:
    text = harness.emit_learning_curves(harness.load_run_logs(args.runs), args.window, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return 0


def _gradcheck(args) -> int:
    rep = gradcheck_suite(n_networks=args.networks, seed=args.seed)
    print(json.dumps(rep, sort_keys=True, indent=2))
    return 0 if rep["pass"] else 2


_COMMANDS = {"train": _train, "eval": _eval, "params": _params, "curves": _curves, "gradcheck": _gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    if args.command is None:
        print(parser.format_usage(), file=sys.stderr, end="")
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (harness.ConfigError, harness.CheckpointError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
