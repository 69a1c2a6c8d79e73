"""``python -m minispeechlm {prepare,train,infer,eval} --config PATH ...``"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .pipeline import StageError, cmd_eval, cmd_infer, cmd_prepare, cmd_train


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="minispeechlm", description="toy multitask speech language model workflow")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="experiment YAML file")
        sp.add_argument("--seed", type=int, default=None, help="override the experiment seed")
        sp.add_argument("--out", default=None, help="override the output root")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("prepare", help="train tokenizers, build the vocabulary, write manifests")
    common(sp)
    sp.add_argument("--synthesize", action="store_true", help="generate the toy corpus first")

    sp = sub.add_parser("train", help="train on the fused task mixture")
    common(sp)
    sp.add_argument("--resume", action="store_true", help="continue from exp/last.npz if present")
    sp.add_argument("--steps", type=int, default=None, help="override the configured step count")

    for name, text in (("infer", "decode a split with the trained model"), ("eval", "score inference output")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.add_argument("--task", required=True)
        sp.add_argument("--split", default="test")
        sp.add_argument("--checkpoint", default="best", choices=("best", "last"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, out=args.out)
        if args.command == "prepare":
            res = cmd_prepare(cfg, synthesize_corpus=args.synthesize)
            print(f"prepare: {len(res['written'])} files written, {len(res['kept'])} unchanged")
        elif args.command == "train":
            state = cmd_train(cfg, resume=args.resume, steps=args.steps)
            print(f"train: finished at step {state.step}")
        elif args.command == "infer":
            out = cmd_infer(cfg, args.task, args.split, args.checkpoint)
            print(f"infer: wrote {out}")
        else:
            report = cmd_eval(cfg, args.task, args.split, args.checkpoint)
            sys.stdout.write(report.summary())
    except ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    return 0
