"""Command-line entry point: validate assets, replay scenario traces, query
the resulting knowledge base.

Exit codes: 0 success, 1 asset error, 2 trace error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .errors import ParseError, SocamError, UnsortedTrace
from .ontology import SchemaRegistry, load_schema
from .reasoner import parse_pattern, parse_rules
from .runtime import (
    Engine,
    default_home_aggregations,
    default_home_providers,
    default_home_services,
    parse_trace,
    render_jsonl,
    render_text,
    run_trace,
)
from .turtle import parse as parse_turtle
from .turtle import render_term

EXIT_OK = 0
EXIT_ASSET_ERROR = 1
EXIT_TRACE_ERROR = 2

logger = logging.getLogger(__name__)


def asset_path(name: str) -> Path:
    """Path of a bundled asset file (upper.ttl, home.ttl, home.rules, ...)."""
    return Path(str(resources.files(__package__) / "assets" / name))


def _resolve(path: str) -> Path:
    """Use the path as given; fall back to the bundled asset of that name."""
    p = Path(path)
    if p.exists():
        return p
    bundled = asset_path(path)
    if bundled.exists():
        return bundled
    return p


@dataclass
class RunConfig:
    ontologies: list[Path]
    rules: Optional[Path] = None
    trace: Optional[Path] = None
    strict: bool = False
    output_format: str = "text"
    queries: list[str] = field(default_factory=list)


@dataclass
class _Assets:
    registry: SchemaRegistry
    rules: object
    prefixes: dict[str, str]


def _load_assets(config: RunConfig, diagnostics: list[str]) -> Optional[_Assets]:
    registry = SchemaRegistry()
    prefixes: dict[str, str] = {}
    failed = False
    for path in config.ontologies:
        try:
            doc = parse_turtle(path.read_text(encoding="utf-8"))
            prefixes.update(doc.prefixes)
            schema = load_schema(doc, module_id=path.stem, registry=registry, strict=config.strict)
            registry.plug(schema)
        except (OSError, SocamError) as exc:
            diagnostics.append(_diagnostic(path, exc))
            failed = True
    ruleset = None
    if config.rules is not None:
        try:
            ruleset = parse_rules(
                config.rules.read_text(encoding="utf-8"),
                registry=registry,
                strict=config.strict,
                prefixes=prefixes,
            )
        except (OSError, SocamError) as exc:
            diagnostics.append(_diagnostic(config.rules, exc))
            failed = True
    if failed:
        return None
    return _Assets(registry=registry, rules=ruleset, prefixes=prefixes)


def _diagnostic(path: Path, exc: Exception) -> str:
    if isinstance(exc, ParseError) and exc.line:
        return f"{path}:{exc.line}:{exc.column}: {type(exc).__name__}: {exc.message}"
    return f"{path}: {type(exc).__name__}: {exc}"


def cmd_validate(config: RunConfig) -> int:
    """Parse and load every asset; report all diagnostics; 0 iff clean."""
    diagnostics: list[str] = []
    assets = _load_assets(config, diagnostics)
    if assets is not None and config.trace is not None:
        try:
            events, _ = parse_trace(config.trace.read_text(encoding="utf-8"))
            for earlier, later in zip(events, events[1:]):
                if later.time < earlier.time:
                    raise UnsortedTrace(f"event at t={later.time} after t={earlier.time} (line {later.line})")
        except (OSError, SocamError) as exc:
            diagnostics.append(_diagnostic(config.trace, exc))
    for line in diagnostics:
        print(line, file=sys.stderr)
    if diagnostics:
        return EXIT_ASSET_ERROR
    print(f"ok: {len(config.ontologies)} ontology module(s) loaded", file=sys.stderr)
    return EXIT_OK


def cmd_run(config: RunConfig) -> int:
    """Replay the trace and print the event log; then answer --query patterns."""
    diagnostics: list[str] = []
    assets = _load_assets(config, diagnostics)
    if assets is None:
        for line in diagnostics:
            print(line, file=sys.stderr)
        return EXIT_ASSET_ERROR

    try:
        events, trace_prefixes = parse_trace(config.trace.read_text(encoding="utf-8"))
    except (OSError, SocamError) as exc:
        print(_diagnostic(config.trace, exc), file=sys.stderr)
        return EXIT_TRACE_ERROR

    prefixes = dict(assets.prefixes)
    prefixes.update(trace_prefixes)
    engine = Engine(
        registry=assets.registry,
        rules=assets.rules,
        services=default_home_services(),
        providers=default_home_providers(),
        aggregations=default_home_aggregations(),
        strict=config.strict,
        prefixes=prefixes,
    )
    try:
        records = run_trace(engine, events)
    except UnsortedTrace as exc:
        print(f"{config.trace}: UnsortedTrace: {exc}", file=sys.stderr)
        return EXIT_TRACE_ERROR

    if config.output_format == "line-json":
        sys.stdout.write(render_jsonl(records))
    else:
        sys.stdout.write(render_text(records, engine.prefixes))

    for query in config.queries:
        try:
            pattern = parse_pattern(query, engine.prefixes)
        except SocamError as exc:
            print(f"--query {query!r}: {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_TRACE_ERROR
        print(f"query {query}")
        for match in engine.kb.query(pattern, fresh_only=True):
            t = match.statement.triple
            print(
                "  "
                + " ".join(
                    render_term(term, engine.prefixes)
                    for term in (t.subject, t.predicate, t.object)
                )
            )
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="socam",
        description="Context-awareness engine: validate assets and replay scenario traces.",
        epilog="Paths that do not exist are looked up among the bundled assets "
        "(upper.ttl, home.ttl, home.rules, scenario.trc).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, trace_required: bool) -> None:
        p.add_argument("--ontology", action="append", required=True, metavar="FILE",
                       help="ontology module (.ttl); repeatable, loaded in order")
        p.add_argument("--rules", metavar="FILE", help="rule file (.rules)")
        p.add_argument("--trace", metavar="FILE", required=trace_required, help="event trace (.trc)")
        p.add_argument("--strict", action="store_true",
                       help="reject undeclared predicates and unclassified properties")

    validate = sub.add_parser("validate", help="parse and check all assets")
    common(validate, trace_required=False)

    run = sub.add_parser("run", help="replay a trace and print the event log")
    common(run, trace_required=True)
    run.add_argument("--format", choices=("text", "line-json"), default="text",
                     help="event log output format")
    run.add_argument("--query", action="append", default=[], metavar="PATTERN",
                     help='post-run KB query, e.g. "(?a home:feasible ?v)"; repeatable')
    return parser


def _configure_logging() -> None:
    level = os.environ.get("SOCAM_LOG", "").lower()
    if level == "debug":
        logging.basicConfig(level=logging.DEBUG)
    elif level == "info":
        logging.basicConfig(level=logging.INFO)
    else:
        logging.basicConfig(level=logging.WARNING)


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    args = _build_parser().parse_args(argv)
    config = RunConfig(
        ontologies=[_resolve(p) for p in args.ontology],
        rules=_resolve(args.rules) if args.rules else None,
        trace=_resolve(args.trace) if args.trace else None,
        strict=args.strict,
        output_format=getattr(args, "format", "text"),
        queries=list(getattr(args, "query", [])),
    )
    missing = [p for p in [*config.ontologies, config.rules, config.trace] if p is not None and not p.exists()]
    if missing:
        for p in missing:
            print(f"{p}: file not found", file=sys.stderr)
        return EXIT_ASSET_ERROR
    if args.command == "validate":
        return cmd_validate(config)
    return cmd_run(config)


if __name__ == "__main__":
    sys.exit(main())
