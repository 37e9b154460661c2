"""Command-line entry point.

Subcommands: ``train``, ``eval``, ``toy-gmm``, ``verify``, ``serve-info``.
Exit codes: 0 success, 1 a check or run failed, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .envs import make_env
from .toy import run_toy, write_toy_outputs
from .verify import SUITES, run_suite


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowrl")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the training loop")
    t.add_argument("--env", required=True,
                   help="environment name or remote:host:port")
    t.add_argument("--config", help="flat key=value config file")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int, help="override total_env_steps")
    t.add_argument("--out", required=True, help="run output directory")
    t.add_argument("--no-figures", action="store_true")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("toy-gmm", help="guided vs unguided flow matching on the 10-mode mixture")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--iters", type=int, default=8000)
    g.add_argument("--samples", type=int, default=100_000)
    g.add_argument("--no-figures", action="store_true")

    v = sub.add_parser("verify", help="run verification suites")
    v.add_argument("--suite", default="all", help=f"one of {sorted(SUITES)} or 'all'")
    v.add_argument("--out", help="optional JSON report path")

    s = sub.add_parser("serve-info", help="print an environment spec as the wire protocol reports it")
    s.add_argument("--env", default="pendulum")
    return p


def _cmd_train(args) -> int:
    from .plots import render_training_curves
    from .trainer import train

    cfg = RunConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.steps is not None:
        cfg = cfg.replace(total_env_steps=args.steps)
    report = train(cfg, args.env, args.out)
    if not args.no_figures:
        render_training_curves(report.metrics_path, Path(args.out) / "training_curves.png")
    print(json.dumps({"steps": report.steps, "episodes": report.episodes,
                      "final_eval_return": report.final_eval_return,
                      "out_dir": report.out_dir}))
    return 0


def _cmd_eval(args) -> int:
    from .trainer import evaluate_policy, load_checkpoint

    agent, _, _, header = load_checkpoint(args.checkpoint)
    env = make_env(header["env_name"])
    rng = np.random.default_rng(args.seed)
    mean_return = evaluate_policy(agent, env, args.episodes, rng)
    print(json.dumps({"env": header["env_name"], "episodes": args.episodes,
                      "mean_return": mean_return}))
    return 0


def _cmd_toy(args) -> int:
    result = run_toy(seed=args.seed, iters=args.iters, n_samples=args.samples)
    scores = write_toy_outputs(result, args.out, render=not args.no_figures)
    print(json.dumps(scores, indent=2))
    return 0 if scores["guided_tv"] < scores["unguided_tv"] else 1


def _cmd_verify(args) -> int:
    checks = run_suite(args.suite)
    report = {"suite": args.suite, "checks": checks,
              "pass": all(c["pass"] for c in checks)}
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0 if report["pass"] else 1


def _cmd_serve_info(args) -> int:
    env = make_env(args.env)
    spec = env.spec
    print(json.dumps({"state_dim": spec.state_dim, "action_dim": spec.action_dim,
                      "action_low": spec.action_low.tolist(),
                      "action_high": spec.action_high.tolist(),
                      "max_episode_steps": spec.max_episode_steps}))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    handlers = {"train": _cmd_train, "eval": _cmd_eval, "toy-gmm": _cmd_toy,
                "verify": _cmd_verify, "serve-info": _cmd_serve_info}
    try:
        return handlers[args.command](args)
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
