"""rcreader command line: train a checkpoint, serve it over the protocol."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings

from rcreader.data import SchemaError
from rcreader.serve import load_checkpoint, serve_stdio, serve_tcp
from rcreader.train import TrainConfig, train


def _setup_logging() -> None:
    level = os.environ.get("RCREADER_LOG", "WARNING").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )
    # the padding-mask fast path trips a prototype-API notice; not actionable here
    warnings.filterwarnings("ignore", message=".*nested tensors.*")


def cmd_train(args) -> int:
    config = TrainConfig.from_file(args.config)
    meta = train(args.examples, config, args.out)
    json.dump(meta, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def cmd_serve(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    if args.tcp:
        host, _, port = args.tcp.rpartition(":")
        if not host or not port.isdigit():
            raise SchemaError(f"--tcp wants host:port, got {args.tcp!r}")
        return serve_tcp(model, host, int(port))
    return serve_stdio(model)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcreader", description="neural reader over the NDJSON protocol"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fine-tune on JSONL examples")
    p.add_argument("--examples", required=True, help="JSONL example file")
    p.add_argument("--config", required=True, help="training config JSON")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("serve", help="answer protocol requests")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tcp", help="listen on host:port instead of stdio")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, OSError) as exc:
        print(f"rcreader: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
