"""Command line front end.

Subcommands wire the pipeline stages together: convert raw exports,
analyze slot statistics, generate reading-comprehension examples, track
dialogue states with a chosen reader, evaluate predictions, subsample
few-shot corpora, and synthesize the bundled replica corpus. Every
subcommand is deterministic given its inputs and flags; outputs embed a
config fingerprint so mixed-config comparisons are detectable.

Logging goes to stderr and is controlled by the DSTRC_LOG environment
variable (DEBUG/INFO/WARNING/ERROR, default WARNING); data outputs go
only to --out paths, so reruns produce byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass

from .corpus import (
    InvalidFraction,
    MalformedCorpus,
    convert_raw_multiwoz,
    convert_raw_ontology,
    fewshot_size,
    load_corpus,
    subsample_fewshot,
)
from .decode import DecodeConfig
from .examples import GenerationReport, generate_corpus, write_examples_jsonl
from .readers import (
    ExactMatchReader,
    ExternalReader,
    OracleReader,
    RandomReader,
    Reader,
    ReaderFailure,
)
from .rng import sample_indices
from .stats import classify_slots, compute_slot_stats, load_questions, write_analysis_csv
from .track import config_fingerprint, evaluate, prediction_to_json, track_corpus

log = logging.getLogger("dstrc")

ABLATIONS = ("no-canonicalization", "no-categorical-model")
READERS = ("oracle", "exact-match", "random", "external")


class ConfigError(ValueError):
    """Mutually inconsistent command line flags."""


@dataclass(frozen=True, slots=True)
class RunConfig:
    """Resolved settings for the track/evaluate subcommands."""

    dialogues: str
    ontology: str
    aliases: str | None
    questions: str | None
    domains: tuple[str, ...] | None
    fraction: float | None
    seed: int
    reader: str
    endpoint: str | None
    decode: DecodeConfig
    num_categorical: int
    no_categorical_model: bool
    partial: bool
    jobs: int

    def __post_init__(self):
        if self.reader not in READERS:
            raise ConfigError(f"unknown reader {self.reader!r}")
        if (self.reader == "external") != (self.endpoint is not None):
            raise ConfigError("--endpoint is required for --reader external and invalid otherwise")
        if self.jobs < 1:
            raise ConfigError("--jobs must be at least 1")

    def as_dict(self) -> dict:
        return {
            "dialogues": self.dialogues,
            "ontology": self.ontology,
            "aliases": self.aliases,
            "questions": self.questions,
            "domains": list(self.domains) if self.domains else None,
            "fraction": self.fraction,
            "seed": self.seed,
            "reader": self.reader,
            "endpoint": self.endpoint,
            "decode": self.decode.as_dict(),
            "num_categorical": self.num_categorical,
            "no_categorical_model": self.no_categorical_model,
            "partial": self.partial,
        }


def _setup_logging():
    level = os.environ.get("DSTRC_LOG", "WARNING").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _write_json(path: str, payload) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=1, sort_keys=True)
        f.write("\n")


def _read_json(path: str):
    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as exc:
            raise MalformedCorpus(f"{path}: invalid JSON at byte offset {exc.pos}: {exc.msg}")


def _add_corpus_flags(parser: argparse.ArgumentParser, ontology_required: bool = True):
    parser.add_argument("--dialogues", required=True, help="converted dialogue JSON file")
    parser.add_argument("--ontology", required=ontology_required, help="slot ontology JSON file")
    parser.add_argument("--aliases", help="alias map JSON file")
    parser.add_argument("--domains", help="comma separated domain filter")


def _add_taxonomy_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--questions", help="slot question JSON file (default: bundled)")
    parser.add_argument("--num-categorical", type=int, default=15,
                        help="slots with the fewest values treated as categorical")


def _domains(args) -> tuple[str, ...] | None:
    if not getattr(args, "domains", None):
        return None
    names = tuple(d.strip() for d in args.domains.split(",") if d.strip())
    return names or None


def _load(args):
    return load_corpus(
        args.dialogues,
        args.ontology,
        aliases_file=args.aliases,
        filter_domains=_domains(args),
    )


def _specs(corpus, args):
    questions = load_questions(args.questions)
    stats = compute_slot_stats(corpus)
    specs = classify_slots(
        stats, corpus.ontology, questions=questions, num_categorical=args.num_categorical
    )
    return stats, specs


def _build_reader(name: str, endpoint: str | None, seed: int, corpus, specs) -> Reader:
    if name == "oracle":
        return OracleReader.from_examples(generate_corpus(corpus, specs))
    if name == "exact-match":
        return ExactMatchReader.from_specs(specs, corpus.ontology)
    if name == "random":
        return RandomReader(seed)
    return ExternalReader(endpoint)


# --- subcommands ----------------------------------------------------------------


def cmd_convert(args) -> int:
    if bool(args.dialogues) == bool(args.ontology):
        raise ConfigError("convert takes exactly one of --dialogues / --ontology")
    if args.dialogues:
        records = convert_raw_multiwoz(_read_json(args.dialogues))
        _write_json(args.out, records)
        log.info("converted %d dialogues -> %s", len(records), args.out)
    else:
        values = convert_raw_ontology(_read_json(args.ontology))
        _write_json(args.out, values)
        log.info("converted %d slots -> %s", len(values), args.out)
    return 0


def cmd_analyze(args) -> int:
    corpus = _load(args)
    stats, specs = _specs(corpus, args)
    write_analysis_csv(args.out, stats, specs)
    log.info("analyzed %d slots over %d dialogues -> %s", len(stats), len(corpus), args.out)
    return 0


def cmd_generate(args) -> int:
    corpus = _load(args)
    _, specs = _specs(corpus, args)
    report = GenerationReport()
    count = write_examples_jsonl(args.out, generate_corpus(corpus, specs, report=report))
    log.info(
        "wrote %d examples (%d span, %d choice, %d unspannable) -> %s",
        count, report.span_examples, report.choice_examples, report.unspannable, args.out,
    )
    return 0


def _run_config(args) -> RunConfig:
    decode = DecodeConfig(
        max_span_len=args.max_span_len,
        null_threshold=args.null_threshold,
        canonicalize="no-canonicalization" not in args.ablate,
        similarity_cutoff=args.similarity_cutoff,
    )
    return RunConfig(
        dialogues=args.dialogues,
        ontology=args.ontology,
        aliases=args.aliases,
        questions=args.questions,
        domains=_domains(args),
        fraction=args.fraction,
        seed=args.seed,
        reader=args.reader,
        endpoint=args.endpoint,
        decode=decode,
        num_categorical=args.num_categorical,
        no_categorical_model="no-categorical-model" in args.ablate,
        partial=args.partial,
        jobs=args.jobs,
    )


def _tracked(args):
    """Shared track/evaluate path: load, classify, subsample, predict."""
    config = _run_config(args)
    corpus = _load(args)
    _, specs = _specs(corpus, args)
    if config.fraction is not None:
        corpus = subsample_fewshot(corpus, config.fraction, config.seed)
    reader = _build_reader(config.reader, config.endpoint, config.seed, corpus, specs)
    try:
        predictions, report = track_corpus(
            corpus,
            specs,
            reader,
            config.decode,
            no_categorical_model=config.no_categorical_model,
            partial=config.partial,
            carryover=args.carryover,
            jobs=config.jobs,
        )
    finally:
        reader.close()
    if reader.is_oracle:
        log.warning("oracle reader: outputs are upper bounds, not model scores")
    return config, corpus, specs, reader, predictions, report


def cmd_track(args) -> int:
    config, corpus, specs, reader, predictions, report = _tracked(args)
    header = {
        "type": "run_header",
        "config": config.as_dict(),
        "fingerprint": config_fingerprint(
            config.decode, specs,
            extra={"no_categorical_model": config.no_categorical_model},
        ),
        "reader": config.reader,
        "oracle": reader.is_oracle,
        "num_dialogues": report.num_dialogues,
        "num_turns": report.num_turns,
        "failures": len(report.failures),
    }
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for prediction in predictions:
            f.write(json.dumps(prediction_to_json(prediction), sort_keys=True) + "\n")
    log.info("tracked %d turns -> %s", report.num_turns, args.out)
    return 0


def cmd_evaluate(args) -> int:
    config, corpus, specs, reader, predictions, report = _tracked(args)
    result = evaluate(
        predictions,
        corpus,
        specs,
        config=config.decode,
        no_categorical_model=config.no_categorical_model,
        reader=config.reader,
        oracle=reader.is_oracle,
        failures=len(report.failures),
    )
    payload = result.as_dict()
    payload["config"] = config.as_dict()
    if args.out:
        _write_json(args.out, payload)
    else:
        json.dump(payload, sys.stdout, ensure_ascii=False, indent=1, sort_keys=True)
        sys.stdout.write("\n")
    log.info("JGA %.4f over %d turns", result.joint_goal_accuracy, result.num_turns)
    return 0


def cmd_subsample(args) -> int:
    records = _read_json(args.dialogues)
    if not isinstance(records, list):
        raise MalformedCorpus(f"{args.dialogues}: expected a JSON array of dialogues")
    size = fewshot_size(len(records), args.fraction)
    chosen = sample_indices(len(records), size, args.seed)
    _write_json(args.out, [records[i] for i in chosen])
    log.info("kept %d of %d dialogues -> %s", size, len(records), args.out)
    return 0


def cmd_synth(args) -> int:
    from . import synth

    paths = synth.write_replica(args.out, seed=args.seed)
    log.info("replica written: %s", ", ".join(sorted(paths)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dstrc",
        description="dialogue state tracking via span and multiple-choice reading",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert a raw export to the corpus schema")
    p.add_argument("--dialogues", help="raw dialogue JSON export")
    p.add_argument("--ontology", help="raw ontology JSON export")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("analyze", help="per-slot statistics and classification CSV")
    _add_corpus_flags(p)
    _add_taxonomy_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("generate", help="emit span/choice examples as JSONL")
    _add_corpus_flags(p)
    _add_taxonomy_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    for name, helptext in (
        ("track", "predict states, write predictions JSONL"),
        ("evaluate", "predict states and report metrics"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_corpus_flags(p)
        _add_taxonomy_flags(p)
        p.add_argument("--reader", choices=READERS, default="exact-match")
        p.add_argument("--endpoint", help="external reader: command line or tcp://host:port")
        p.add_argument("--fraction", type=float, help="few-shot fraction of dialogues")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--max-span-len", type=int, default=DecodeConfig().max_span_len)
        p.add_argument("--null-threshold", type=float, default=DecodeConfig().null_threshold)
        p.add_argument("--similarity-cutoff", type=float,
                       default=DecodeConfig().similarity_cutoff)
        p.add_argument("--ablate", action="append", choices=ABLATIONS, default=[])
        p.add_argument("--carryover", action="store_true",
                       help="carry previous turn values over predicted empties")
        p.add_argument("--partial", action="store_true",
                       help="tolerate per-slot reader failures")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
        if name == "track":
            p.add_argument("--out", required=True)
            p.set_defaults(func=cmd_track)
        else:
            p.add_argument("--out")
            p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("subsample", help="deterministic few-shot dialogue subset")
    p.add_argument("--dialogues", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_subsample)

    p = sub.add_parser("synth", help="write the bundled replica corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=11)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidFraction) as exc:
        print(f"dstrc: {exc}", file=sys.stderr)
        return 2
    except (MalformedCorpus, ReaderFailure, OSError, ValueError, KeyError) as exc:
        print(f"dstrc: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
