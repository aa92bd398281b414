"""Command-line surface: train, apply, trace, eval, distill.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import evaluate
from .agent import Agent, AgentState
from .distill import distill_dirs
from .errors import CheckpointError, DataError, NumericError
from .filters import FILTER_KINDS, EditScript
from .images import ImageError, LinearImage, downsample, load_image, save_image
from .model import load_checkpoint
from .trainer import parse_config, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

PROXY_SIDE = 64
BAR_WIDTH = 40


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="exposure", description="White-box photo retouching engine")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train an agent on unpaired raw/target sets")
    p.add_argument("--config", required=True, help="flat key=value hyperparameter file")
    p.add_argument("--raw", required=True, help="directory of raw images")
    p.add_argument("--target", required=True, help="directory of images in the target style")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--metrics", default=None, help="metrics log path (default: <out>.log)")

    p = sub.add_parser("apply", help="retouch an image with a trained agent or a saved script")
    p.add_argument("--ckpt", default=None, help="checkpoint to run the agent from")
    p.add_argument("--in", dest="input", required=True, help="input image (.ppm or .pfm)")
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument(
        "--script",
        default=None,
        help="with --ckpt: where to save the edit script; alone: script to replay",
    )
    p.add_argument("--sample", action="store_true", help="sample the filter choice instead of argmax")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("trace", help="print the step-by-step decision trace for an image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--sample", action="store_true")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="style similarity between two image collections")
    p.add_argument("--outputs", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("distill", help="fit an explicit filter sequence to a black-box edit")
    p.add_argument("--before", required=True, help="directory of inputs to the black box")
    p.add_argument("--after", required=True, help="directory of its outputs (same file names)")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", required=True, help="edit-script JSON output path")

    return parser


def _run_agent(ckpt: str, image: LinearImage, sample: bool, seed: int):
    agent = Agent(load_checkpoint(ckpt))
    proxy = downsample(image, PROXY_SIDE)
    rng = np.random.default_rng(seed)
    return agent.run_episode(proxy, rng, sample=sample)


def cmd_train(args) -> int:
    config = parse_config(args.config)
    metrics = args.metrics if args.metrics is not None else args.out + ".log"
    train(config, args.raw, args.target, args.out, metrics)
    print(f"checkpoint written to {args.out}")
    print(f"metrics written to {metrics}")
    return EXIT_OK


def cmd_apply(args) -> int:
    if args.ckpt is None and args.script is None:
        raise UsageError("apply needs --ckpt (run the agent) or --script (replay)")
    image = load_image(args.input)
    if args.ckpt is not None:
        script, _ = _run_agent(args.ckpt, image, args.sample, args.seed)
        if args.script is not None:
            script.save(args.script)
    else:
        script = EditScript.load(args.script)
    save_image(script.apply(image), args.out)
    return EXIT_OK


def cmd_trace(args) -> int:
    image = load_image(args.input)
    script, tables = _run_agent(args.ckpt, image, args.sample, args.seed)
    for step, (action, probs) in enumerate(zip(script.steps, tables), start=1):
        print(f"Step {step}")
        for kind, p in zip(FILTER_KINDS, probs):
            bar = "#" * round(p * BAR_WIDTH)
            print(f"  {kind.value:<13} {p:7.4f} {bar}")
        print(f"  -> {action.display}")
    return EXIT_OK


def cmd_eval(args) -> int:
    outputs = evaluate.load_directory(args.outputs)
    targets = evaluate.load_directory(args.targets)
    # same crop seed on both sides so identical collections score 100%
    h_out = evaluate.dataset_histograms(outputs, seed=args.seed)
    h_tgt = evaluate.dataset_histograms(targets, seed=args.seed)
    print(evaluate.report(evaluate.compare(h_out, h_tgt)))
    return EXIT_OK


def cmd_distill(args) -> int:
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    result = distill_dirs(args.before, args.after, args.steps)
    result.script.save(args.out)
    for action in result.script.steps:
        print(action.display)
    print(f"residual {result.residual:.6g}")
    return EXIT_OK


class UsageError(Exception):
    pass


COMMANDS = {
    "train": cmd_train,
    "apply": cmd_apply,
    "trace": cmd_trace,
    "eval": cmd_eval,
    "distill": cmd_distill,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"exposure: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ImageError, CheckpointError, FileNotFoundError) as exc:
        print(f"exposure: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"exposure: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
