#!/usr/bin/env python3
"""Regenerate fixtures/cloud from the builders in setsdb.cloud.

The checked-in JSON and line protocol files are what the CLI walkthrough in
the README consumes; a test asserts they stay in sync with the builders, so
rerun this after changing anything in setsdb/cloud.py.
"""

import argparse
import json
from pathlib import Path

from setsdb.cloud import scripted_fixture

DEFAULT_OUT = Path(__file__).resolve().parent.parent / "fixtures" / "cloud"

SIMILARITY_CONFIG = {
    "weights": {"sys": 1.0, "entity": 1.0, "metric": 1.0, "sensor": 1.0},
    "min_score": 0.0,
    "top_k": 10,
    "tree_thresholds": [0.0, 0.0],
}


def export(out_dir: Path) -> list[Path]:
    fixture = scripted_fixture()
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "semantics").mkdir(exist_ok=True)
    written = []

    def dump(relative: str, doc) -> None:
        path = out_dir / relative
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        written.append(path)

    dump("ontology.json", fixture.ontology)
    dump("architecture.json", fixture.architecture)
    dump("similarity.json", SIMILARITY_CONFIG)
    for doc in fixture.stream_documents:
        host = doc["tags"]["host"]
        dump(f"semantics/{doc['metric']}-{host}.json", doc)
    data = out_dir / "data.lp"
    data.write_text(fixture.lines())
    written.append(data)
    return written


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = parser.parse_args()
    for path in export(args.out):
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
