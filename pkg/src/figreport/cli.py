"""Command line entry point: ``figreport run`` and ``figreport judge``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .gateway import GatewayError, MockGateway
from .research import EmptyEvidencePool


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="figreport", description="Figure-grounded research report generator.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="research a topic and write report.md")
    run.add_argument("--topic", help="research topic (overrides the config file)")
    run.add_argument("--config", type=Path, help="YAML run configuration")
    run.add_argument("--output-dir", type=Path, help="run directory (default from config, else runs/latest)")
    run.add_argument("--no-enrichment", action="store_true", help="ablation: metadata-only image selection")
    run.add_argument("--global-generation", action="store_true", help="ablation: one global writing pass")
    run.add_argument("--mock-transcript", type=Path, help="replay recorded gateway responses instead of the network")
    cache = run.add_mutually_exclusive_group()
    cache.add_argument("--cache", dest="cache", action="store_true", default=None, help="cache gateway calls")
    cache.add_argument("--no-cache", dest="cache", action="store_false", help="disable the gateway cache")

    judge = sub.add_parser("judge", help="score report bundles with the rubric judge")
    judge.add_argument("--bundles", type=Path, required=True, help="directory of report bundles")
    judge.add_argument("--runs", type=int, default=1, help="independent judging runs per report")
    judge.add_argument("--config", type=Path, help="YAML configuration (models section)")
    judge.add_argument("--mock-transcript", type=Path, help="replay recorded judge responses")
    judge.add_argument("--out", type=Path, help="where to write scores.csv / stability.json")
    return parser


def _run(args) -> int:
    from .pipeline import run

    config = load_config(
        args.config,
        topic=args.topic,
        output_dir=args.output_dir,
        mock_transcript=args.mock_transcript,
        cache=args.cache,
        disable_enrichment=args.no_enrichment or None,
        global_generation=args.global_generation or None,
    )
    path = run(config)
    print(path)
    return 0


def _judge(args) -> int:
    from .judge import judge_bundles

    if args.mock_transcript:
        gateway = MockGateway.from_transcript(args.mock_transcript)
    else:
        from .gateway.http import HttpGateway

        config = load_config(args.config, topic="judge")
        gateway = HttpGateway(config.http)
    path = judge_bundles(args.bundles, gateway, runs=args.runs, out_dir=args.out)
    print(path)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args) if args.command == "run" else _judge(args)
    except (ConfigError, EmptyEvidencePool, GatewayError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
