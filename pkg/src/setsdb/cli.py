"""Command line front end.

The data directory is taken from --data-dir, then the SETSDB_DATA_DIR
environment variable, then ./setsdb-data. Domain errors exit with status 1,
usage errors and anything unexpected with status 2.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import Error
from .query import BasicQuery, _parse_series_ref, parse_query, run_query
from .store import RetentionPolicy, format_value
from .system import System

DEFAULT_DATA_DIR = "./setsdb-data"


def _load_json(path: str):
    with open(path, "r") as handle:
        return json.load(handle)


def _sample_lines(samples) -> list[str]:
    return [f"{s.timestamp} {format_value(s.value)}" for s in samples]


def _sample_docs(samples) -> list[dict]:
    return [{"timestamp": s.timestamp, "value": s.value} for s in samples]


def cmd_create_db(system: System, args) -> int:
    retention = RetentionPolicy()
    if args.retention:
        retention = RetentionPolicy.parse_spec(args.retention)
    system.create_database(args.name, retention)
    print(f"created database {args.name}")
    return 0


def cmd_load_ontology(system: System, args) -> int:
    onts = system.load_ontology(_load_json(args.file))
    print(
        f"loaded ontology: {len(onts.system.concepts)} concepts, "
        f"{len(onts.metrics)} metrics, {len(onts.units)} units"
    )
    return 0


def cmd_load_architecture(system: System, args) -> int:
    db_sem = system.load_architecture(args.database, _load_json(args.file))
    arch = db_sem.architecture
    print(
        f"described database {args.database}: system {arch.system_id}, "
        f"{len(arch.entities)} entities"
    )
    return 0


def cmd_register_stream(system: System, args) -> int:
    sem = system.register_stream(_load_json(args.file))
    print(f"registered {sem.key}")
    return 0


def cmd_load_similarity(system: System, args) -> int:
    cfg = system.load_similarity(_load_json(args.file))
    print(f"similarity config: top_k={cfg.top_k} min_score={cfg.min_score}")
    return 0


def cmd_write(system: System, args) -> int:
    if args.file:
        text = Path(args.file).read_text()
    else:
        text = sys.stdin.read()
    written = system.write_lines(args.database, text)
    print(f"wrote {written} samples")
    return 0


def cmd_query(system: System, args) -> int:
    parsed = parse_query(args.text)
    if args.materialize and not hasattr(parsed, "query"):
        print("error: --materialize applies only to DERIVE queries", file=sys.stderr)
        return 2
    result = run_query(parsed, system, materialize=args.materialize)

    if args.json:
        doc: dict = {"samples": _sample_docs(result.samples)}
        if args.explain and result.explanation:
            doc["explanation"] = result.explanation.splitlines()
        if result.derived_key is not None:
            doc["derived_series"] = str(result.derived_key)
        if result.matches is not None:
            doc["matches"] = [
                {
                    "series": str(m.key),
                    "score": m.score,
                    "samples": _sample_docs(m.samples),
                    **({"explanation": m.explanation.splitlines()} if args.explain else {}),
                }
                for m in result.matches
            ]
        print(json.dumps(doc, indent=2))
        return 0

    if result.matches is not None:
        for m in result.matches:
            print(f"# {m.key} score={m.score:.6f}")
            if args.explain and m.explanation:
                for line in m.explanation.splitlines():
                    print(f"#   {line}")
            for line in _sample_lines(m.samples):
                print(line)
        if not result.matches:
            print("# no matches")
        return 0

    if args.explain and result.explanation:
        for line in result.explanation.splitlines():
            print(f"# {line}")
    if result.derived_key is not None:
        print(f"# materialized as {result.derived_key}")
    for line in _sample_lines(result.samples):
        print(line)
    if isinstance(parsed, BasicQuery) and not result.samples:
        print("# no data in window", file=sys.stderr)
    return 0


def cmd_lineage(system: System, args) -> int:
    key = _parse_series_ref(args.series, 0)
    if args.descendants:
        for k in sorted(system.lineage_descendants(key)):
            print(k)
    else:
        for node in sorted(system.lineage_sources(key), key=lambda n: n.id):
            print(f"{node.id} raw sensor={node.sensor_entity}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="setsdb", description="semantics-enhanced time series store"
    )
    parser.add_argument(
        "--data-dir",
        default=os.environ.get("SETSDB_DATA_DIR", DEFAULT_DATA_DIR),
        help="where databases, descriptions and samples live",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("create-db", help="create a database")
    p.add_argument("name")
    p.add_argument("--retention", help="e.g. raw:86400000,rollup:60000:mean:inf")
    p.set_defaults(func=cmd_create_db)

    p = sub.add_parser("load-ontology", help="load concept, metric and unit definitions")
    p.add_argument("file")
    p.set_defaults(func=cmd_load_ontology)

    p = sub.add_parser("load-architecture", help="describe a database's system")
    p.add_argument("database")
    p.add_argument("file")
    p.set_defaults(func=cmd_load_architecture)

    p = sub.add_parser("register-stream", help="attach semantics to a stream")
    p.add_argument("file")
    p.set_defaults(func=cmd_register_stream)

    p = sub.add_parser("load-similarity", help="configure similarity search")
    p.add_argument("file")
    p.set_defaults(func=cmd_load_similarity)

    p = sub.add_parser("write", help="ingest line protocol text")
    p.add_argument("database")
    p.add_argument("--file", help="read lines from a file instead of stdin")
    p.set_defaults(func=cmd_write)

    p = sub.add_parser("query", help="run a SELECT, DERIVE or MATCH query")
    p.add_argument("text")
    p.add_argument("--materialize", action="store_true", help="store a derived answer")
    p.add_argument("--explain", action="store_true", help="show how the answer was produced")
    p.add_argument("--json", action="store_true", help="machine readable output")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("lineage", help="show where a stream's data comes from")
    p.add_argument("series", help="db.metric{k=v,...}")
    direction = p.add_mutually_exclusive_group()
    direction.add_argument("--sources", action="store_true", help="raw sensor origins (default)")
    direction.add_argument("--descendants", action="store_true", help="streams derived from this one")
    p.set_defaults(func=cmd_lineage)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        system = System(args.data_dir)
        return args.func(system, args)
    except Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
