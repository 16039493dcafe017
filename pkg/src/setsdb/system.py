"""Runtime facade: store + semantic catalog + similarity config, with a
single on-disk layout.

    <data_dir>/
        streams/            sample data and the database registry
        ontology.json       concept, metric and unit definitions
        similarity.json     scoring weights and thresholds
        architectures/      one document per described database
        semantics/          one document per registered stream
        provenance.json     derivation graph

Everything is optional; a System with no data_dir lives in memory only.
Opening an existing directory replays all of it in dependency order.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Mapping, Sequence

from .errors import SchemaError, UnknownDatabase, UnknownUnit
from .ontology import OntologySet, load_architecture, load_ontology
from .query import QueryResult, parse_query, run_query
from .reasoning import MappedQuery, SemanticQuery, plan_exact
from .semantics import (
    DatabaseSemantics,
    Operation,
    ProvenanceNode,
    SemanticCatalog,
    StreamSemantics,
    semantics_from_document,
    semantics_to_document,
)
from .similarity import SimilarityConfig
from .store import BaseStore, RetentionPolicy, Sample, SeriesKey, parse_lines

ARCH_EXTRA_KEYS = ("storage_architecture", "retention_sharding_notes", "storage_scheme")


def _key_digest(key: SeriesKey) -> str:
    return hashlib.sha1(str(key).encode()).hexdigest()[:20]


class System:
    """One embedded instance: data, descriptions, and query entry points."""

    def __init__(self, data_dir: str | Path | None = None):
        self._dir = Path(data_dir) if data_dir is not None else None
        store_dir = self._dir / "streams" if self._dir is not None else None
        if self._dir is not None:
            self._dir.mkdir(parents=True, exist_ok=True)
        self.store = BaseStore(store_dir)
        self.catalog = SemanticCatalog()
        self.sim_config = SimilarityConfig()
        self._arch_documents: dict[str, dict] = {}
        if self._dir is not None:
            self._replay()

    @property
    def ontologies(self) -> OntologySet | None:
        return self.catalog.ontologies

    # -- persistence helpers

    def _write_json(self, relative: str, doc) -> None:
        if self._dir is None:
            return
        path = self._dir / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def _replay(self) -> None:
        ontology_path = self._dir / "ontology.json"
        if ontology_path.exists():
            self.catalog.set_ontologies(
                load_ontology(json.loads(ontology_path.read_text()))
            )
        similarity_path = self._dir / "similarity.json"
        if similarity_path.exists():
            self.sim_config = SimilarityConfig.from_document(
                json.loads(similarity_path.read_text())
            )
        arch_dir = self._dir / "architectures"
        if arch_dir.is_dir():
            for path in sorted(arch_dir.glob("*.json")):
                self._register_architecture(path.stem, json.loads(path.read_text()))
        sem_dir = self._dir / "semantics"
        if sem_dir.is_dir():
            for path in sorted(sem_dir.glob("*.json")):
                doc = json.loads(path.read_text())
                self.catalog.register_stream(semantics_from_document(doc))
        provenance_path = self._dir / "provenance.json"
        if provenance_path.exists():
            self.catalog.import_provenance(json.loads(provenance_path.read_text()))

    # -- setup surface

    def create_database(self, name: str, retention: RetentionPolicy | None = None):
        return self.store.create_database(name, retention)

    def load_ontology(self, doc: Mapping) -> OntologySet:
        onts = load_ontology(doc)
        self.catalog.set_ontologies(onts)
        self._write_json("ontology.json", dict(doc))
        return onts

    def load_architecture(self, database: str, doc: Mapping) -> DatabaseSemantics:
        if not self.store.has_database(database):
            raise UnknownDatabase(f"no database named {database!r}")
        self._register_architecture(database, doc)
        self._write_json(f"architectures/{database}.json", dict(doc))
        return self.catalog.database_semantics(database)

    def _register_architecture(self, database: str, doc: Mapping) -> None:
        if self.ontologies is None:
            raise SchemaError("load an ontology before any architecture")
        arch = load_architecture(doc, self.ontologies)
        extras = {k: str(doc.get(k, "")) for k in ARCH_EXTRA_KEYS}
        extras = {k: v for k, v in extras.items() if v}
        self.catalog.register_database(DatabaseSemantics(database, arch, **extras))
        self._arch_documents[database] = dict(doc)

    def load_similarity(self, doc: Mapping) -> SimilarityConfig:
        self.sim_config = SimilarityConfig.from_document(doc)
        self._write_json("similarity.json", dict(doc))
        return self.sim_config

    def register_stream(self, sem: StreamSemantics | Mapping) -> StreamSemantics:
        if isinstance(sem, Mapping):
            sem = semantics_from_document(sem)
        if not self.store.has_database(sem.key.database):
            raise UnknownDatabase(f"no database named {sem.key.database!r}")
        self.catalog.register_stream(sem)
        registered = self.catalog.get_semantics(sem.key)
        self._save_stream(registered)
        self._save_provenance()
        return registered

    def _save_stream(self, sem: StreamSemantics) -> None:
        self._write_json(
            f"semantics/{_key_digest(sem.key)}.json", semantics_to_document(sem)
        )

    def _save_provenance(self) -> None:
        self._write_json("provenance.json", self.catalog.export_provenance())

    # -- data and queries

    def write_lines(self, database: str, text: str) -> int:
        """Ingest line-protocol text addressed to one database."""
        parsed = parse_lines(text)
        by_key: dict[SeriesKey, list[Sample]] = {}
        for key, sample in parsed:
            if key.database != database:
                raise SchemaError(
                    f"line addresses database {key.database!r}, expected {database!r}"
                )
            by_key.setdefault(key, []).append(sample)
        written = 0
        for key in sorted(by_key):
            written += self.store.write_points(key, by_key[key])
        return written

    def query(self, text: str, materialize: bool = False) -> QueryResult:
        return run_query(parse_query(text), self, materialize=materialize)

    def lineage_sources(self, key: SeriesKey) -> set[ProvenanceNode]:
        return self.catalog.lineage_sources(key)

    def lineage_descendants(self, key: SeriesKey) -> set[SeriesKey]:
        return self.catalog.lineage_descendants(key)

    # -- materialization of derived answers

    def materialize_exact(
        self,
        query: SemanticQuery,
        plan: MappedQuery | None = None,
        samples: Sequence[Sample] | None = None,
    ) -> SeriesKey:
        """Store a derived answer as a first-class stream with provenance.

        The derived stream is keyed by the resolved metric name and tagged
        with the entity path, so repeated materializations land on the same
        series. Returns the stream key."""
        onts = self.ontologies
        if onts is None:
            raise SchemaError("load an ontology before materializing")
        if plan is None:
            plan = plan_exact(query, self.catalog, onts)
        if samples is None:
            from .reasoning import execute

            samples = execute(plan, self.store)
        node = onts.resolve_metric(query.metric)
        database = plan.source_keys()[0].database if plan.source_keys() else query.database
        if database is None:
            raise SchemaError("cannot infer a database for the derived stream")
        key = SeriesKey(database, node.name, {"entity": query.entity})

        if not self.catalog.has_stream(key):
            unit = query.desired_unit
            if unit is None and node.unit_dimension is not None:
                try:
                    unit = onts.base_unit(node.unit_dimension).name
                except UnknownUnit:
                    unit = None
            if unit is None:
                sources = [k for k in plan.source_keys() if self.catalog.has_stream(k)]
                unit = self.catalog.get_semantics(sources[0]).unit if sources else None
            if unit is None:
                raise SchemaError(f"cannot infer a unit for derived stream {key}")
            self.catalog.register_stream(
                StreamSemantics(
                    key=key,
                    metric=node.name,
                    entity=query.entity,
                    unit=unit,
                    missing_data_policy="ignore",
                )
            )
            self._save_stream(self.catalog.get_semantics(key))

        inputs = []
        for source in plan.source_keys():
            # A repeat materialization plans a direct read of the derived
            # stream itself; that adds no lineage and must not self-loop.
            if source == key:
                continue
            if self.catalog.has_stream(source) and source not in inputs:
                inputs.append(source)
        if inputs:
            operation = Operation(
                type="compute",
                name=f"derive {node.name}",
                features=plan.explanation,
            )
            self.catalog.record_derivation(key, operation, inputs)
            self._save_provenance()
        if samples:
            self.store.write_points(key, list(samples))
        return key
