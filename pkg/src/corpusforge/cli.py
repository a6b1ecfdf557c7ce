"""Command-line entry point.

    corpusforge run --config FILE [--workers N] [--seed S] [--lenient]
    corpusforge <stage> --config FILE [...]     # run a single stage
    corpusforge stats SHARDS... [--lenient]

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import glob as globmod
import json
import logging
import sys

from .errors import ConfigError, CorpusForgeError, DataError, RecordParseError, SchemaError
from .pipeline import STAGE_NAMES, PipelineConfig, run_pipeline, stats
from .version import __version__

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="pipeline config file (.json/.yaml)")
    parser.add_argument("--workers", type=int, default=None, help="worker pool size (default: logical cores)")
    parser.add_argument("--seed", type=int, default=None, help="override the config's global seed")
    parser.add_argument("--lenient", action="store_true", help="fold unknown record fields into metadata")
    parser.add_argument("--input", default=None, help="override the config's input glob")
    parser.add_argument("--output-dir", default=None, help="override the config's output directory")


def _load_config(args: argparse.Namespace, only_stage: str | None = None) -> PipelineConfig:
    config = PipelineConfig.load(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.workers is not None:
        config.workers = args.workers
    if args.lenient:
        config.lenient = True
    if args.input:
        config.input = args.input
    if args.output_dir:
        config.output_dir = args.output_dir
    if only_stage is not None:
        matching = [s for s in config.stages if s.name == only_stage]
        if not matching:
            from .pipeline import StageSpec

            matching = [StageSpec(name=only_stage)]
        config.stages = matching[:1]
        config.validate()
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corpusforge",
        description="Corpus curation and tokenization pipeline.",
    )
    parser.add_argument("--version", action="version", version=f"corpusforge {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="run the full configured pipeline")
    _add_run_options(run_parser)

    stats_parser = sub.add_parser("stats", help="summarize JSONL shards")
    stats_parser.add_argument("shards", nargs="+", help="shard paths or globs")
    stats_parser.add_argument("--lenient", action="store_true")

    for stage_name in STAGE_NAMES:
        stage_parser = sub.add_parser(stage_name, help=f"run only the {stage_name} stage")
        _add_run_options(stage_parser)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "stats":
            paths: list[str] = []
            for pattern in args.shards:
                expanded = sorted(globmod.glob(pattern))
                paths.extend(expanded if expanded else [pattern])
            summary = stats(paths, lenient=args.lenient)
            json.dump(summary.to_dict(), sys.stdout, ensure_ascii=False, indent=2, sort_keys=True)
            sys.stdout.write("\n")
            return EXIT_OK

        only_stage = None if args.command == "run" else args.command
        config = _load_config(args, only_stage=only_stage)
        manifest = run_pipeline(config)
        json.dump(manifest.to_dict(), sys.stdout, ensure_ascii=False, indent=2, sort_keys=True)
        sys.stdout.write("\n")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SchemaError, RecordParseError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (CorpusForgeError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
