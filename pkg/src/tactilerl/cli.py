"""Command line entry point.

Verbs:

* ``train <config-file>``: run training as configured; ``--resume`` continues
  a checkpointed seed.
* ``eval <checkpoint> [--episodes N] [--seed S] [--random]``: roll out a
  frozen checkpoint and print return / success statistics.
* ``plot <metrics-file> [--window W] [--out FILE]``: render the learning
  curve SVG.
* ``gradcheck``: verify analytic gradients against finite differences.

Exit codes: 0 success, 1 configuration error, 2 runtime divergence or failed
numeric check, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import nets
from .config import ConfigError, load_run_config
from .harness import DimensionMismatchError, eval_run, plot_metrics, train_run

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGENCE = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: A003 - argparse API
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="tactilerl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run training from a config file")
    p_train.add_argument("config", help="key=value config file")
    p_train.add_argument("--resume", default=None, help="checkpoint to continue from")

    p_eval = sub.add_parser("eval", help="evaluate a frozen checkpoint")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--episodes", type=int, default=20)
    p_eval.add_argument("--seed", type=int, default=1000)
    p_eval.add_argument("--random", action="store_true", help="random-action baseline")

    p_plot = sub.add_parser("plot", help="plot a metrics file as SVG")
    p_plot.add_argument("metrics")
    p_plot.add_argument("--window", type=int, default=10)
    p_plot.add_argument("--out", default=None)

    sub.add_parser("gradcheck", help="finite-difference gradient check")
    return parser


def _cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    summary = train_run(cfg, resume=args.resume)
    print(f"metrics: {summary.metrics_path}")
    print(f"checkpoints: {len(summary.checkpoints)}")
    if summary.halted_seeds:
        print(f"halted seeds (divergence): {summary.halted_seeds}")
        return EXIT_DIVERGENCE
    return EXIT_OK


def _cmd_eval(args) -> int:
    report = eval_run(
        args.checkpoint, episodes=args.episodes, seed=args.seed, random_policy=args.random
    )
    if report.empty:
        print("no episodes requested; nothing evaluated")
        return EXIT_OK
    print(f"episodes: {len(report.returns)}")
    print(f"mean return: {report.mean_return:.6g}")
    print(f"success rate: {report.success_rate:.3f}")
    shears = [s for s in report.mean_abs_shear if s == s]
    if shears:
        print(f"mean |shear|: {float(np.mean(shears)):.6g}")
    return EXIT_OK


def _cmd_plot(args) -> int:
    out, skipped = plot_metrics(args.metrics, window=args.window, out_path=args.out)
    print(f"wrote {out} (skipped {skipped} malformed rows)")
    return EXIT_OK


def _cmd_gradcheck() -> int:
    rng = np.random.default_rng(7)
    worst = 0.0
    for trial in range(5):
        net = nets.Network.init((3, 8, 8, 2), rng, head="linear")
        err = nets.finite_diff_check(net, rng.standard_normal(3), rng.standard_normal(2))
        worst = max(worst, err)
        gnet = nets.Network.init((3, 8, 8, 4), rng, head="gaussian")
        gerr = nets.finite_diff_check(gnet, rng.standard_normal(3), rng.standard_normal(2))
        worst = max(worst, gerr)
    print(f"max relative gradient error over 10 random nets: {worst:.3e}")
    if worst > 1e-4:
        print("FAIL: analytic gradients disagree with finite differences")
        return EXIT_DIVERGENCE
    print("OK")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "plot":
            return _cmd_plot(args)
        return _cmd_gradcheck()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (nets.NonFiniteError, DimensionMismatchError) as exc:
        print(f"runtime divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
