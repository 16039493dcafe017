"""Semantic descriptions of databases and streams, plus data provenance.

The catalog binds physical stream keys to ontology terms: which metric a
stream measures, for which entity, in what unit, and how it was collected.
Provenance is a DAG whose leaves are raw sensor nodes and whose internal
nodes are operations (migrate, downsample, compute). Node ids are content
addressed over (kind, operation, inputs), so re-recording a derivation is
idempotent.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from .errors import (
    CycleError,
    DuplicateStream,
    SchemaError,
    UnknownDatabase,
    UnknownMetric,
    UnknownStream,
    UnknownUnit,
    UnresolvedReference,
)
from .metric_expr import POLICIES
from .ontology import OntologySet, SystemArchitecture
from .store import SeriesKey

RAW = "raw"
DERIVED = "derived"
OPERATION_TYPES = ("migrate", "downsample", "compute")


@dataclass(frozen=True)
class Operation:
    type: str
    name: str | None = None
    features: str | None = None
    url: str | None = None

    def __post_init__(self):
        if self.type not in OPERATION_TYPES:
            raise SchemaError(f"unknown operation type {self.type!r}")


@dataclass(frozen=True)
class ProvenanceNode:
    id: str
    kind: str
    sensor_entity: str | None = None
    operation: Operation | None = None
    inputs: tuple[str, ...] = ()


@dataclass(frozen=True)
class Timing:
    frequency_ms: int | None = None
    period: str | None = None


@dataclass(frozen=True)
class StreamSemantics:
    key: SeriesKey
    metric: str
    entity: str
    unit: str
    missing_data_policy: str = "interpolate"
    timing: Timing | None = None
    collection_procedure: str = ""
    sensor_entity: str | None = None
    provenance: str | None = None  # provenance node id


@dataclass
class DatabaseSemantics:
    database: str
    architecture: SystemArchitecture
    storage_architecture: str = "single-node"
    retention_sharding_notes: str = ""
    storage_scheme: str = ""


def _raw_node(key: SeriesKey, sensor_entity: str) -> ProvenanceNode:
    digest = hashlib.sha256(f"raw|{key}|{sensor_entity}".encode()).hexdigest()[:16]
    return ProvenanceNode(digest, RAW, sensor_entity=sensor_entity)


def _derived_node(op: Operation, inputs: tuple[str, ...]) -> ProvenanceNode:
    payload = f"derived|{op.type}|{op.name}|{op.features}|{op.url}|{'|'.join(inputs)}"
    digest = hashlib.sha256(payload.encode()).hexdigest()[:16]
    return ProvenanceNode(digest, DERIVED, operation=op, inputs=inputs)


class SemanticCatalog:
    """Registry of database semantics, stream semantics, and provenance."""

    def __init__(self, ontologies: OntologySet | None = None):
        self.ontologies = ontologies
        self._dbs: dict[str, DatabaseSemantics] = {}
        self._streams: dict[SeriesKey, StreamSemantics] = {}
        self._nodes: dict[str, ProvenanceNode] = {}
        # Stream-level dependencies: output key -> keys it was derived from.
        self._deps: dict[SeriesKey, tuple[SeriesKey, ...]] = {}
        self._by_metric_entity: dict[tuple[str, str, str], SeriesKey] = {}
        self._lock = threading.RLock()

    # -- ontologies and databases

    def set_ontologies(self, onts: OntologySet) -> None:
        """Swap in a new ontology version and re-validate everything loaded."""
        with self._lock:
            previous = self.ontologies
            self.ontologies = onts
            try:
                for sem in self._streams.values():
                    self._validate_stream(sem)
            except UnresolvedReference:
                self.ontologies = previous
                raise

    def register_database(self, db_sem: DatabaseSemantics) -> None:
        with self._lock:
            self._dbs[db_sem.database] = db_sem
            for sem in self._streams.values():
                if sem.key.database == db_sem.database:
                    self._validate_stream(sem)

    def database_semantics(self, database: str) -> DatabaseSemantics:
        try:
            return self._dbs[database]
        except KeyError:
            raise UnknownDatabase(f"no semantics registered for database {database!r}") from None

    def databases(self) -> list[str]:
        return sorted(self._dbs)

    # -- streams

    def _validate_stream(self, sem: StreamSemantics) -> StreamSemantics:
        if self.ontologies is None:
            raise UnresolvedReference("load an ontology before registering streams")
        db_sem = self._dbs.get(sem.key.database)
        if db_sem is None:
            raise UnknownDatabase(
                f"no database semantics for {sem.key.database!r}; load an architecture first"
            )
        try:
            metric = self.ontologies.resolve_metric(sem.metric).name
        except UnknownMetric:
            raise UnresolvedReference(f"stream {sem.key}: unknown metric {sem.metric!r}") from None
        if not db_sem.architecture.has_entity(sem.entity):
            raise UnresolvedReference(f"stream {sem.key}: unknown entity {sem.entity!r}")
        try:
            self.ontologies.unit(sem.unit)
        except UnknownUnit:
            raise UnresolvedReference(f"stream {sem.key}: unknown unit {sem.unit!r}") from None
        if sem.sensor_entity is not None and not db_sem.architecture.has_entity(sem.sensor_entity):
            raise UnresolvedReference(
                f"stream {sem.key}: unknown sensor entity {sem.sensor_entity!r}"
            )
        if sem.missing_data_policy not in POLICIES:
            raise SchemaError(f"unknown missing-data policy {sem.missing_data_policy!r}")
        return replace(sem, metric=metric)

    def register_stream(self, sem: StreamSemantics) -> SeriesKey:
        """Validate references, create a raw provenance node when a sensor is
        named, and index the stream. Returns the stream key."""
        with self._lock:
            if sem.key in self._streams:
                raise DuplicateStream(f"stream {sem.key} is already registered")
            sem = self._validate_stream(sem)
            if sem.sensor_entity is not None and sem.provenance is None:
                node = _raw_node(sem.key, sem.sensor_entity)
                self._nodes.setdefault(node.id, node)
                sem = replace(sem, provenance=node.id)
            self._streams[sem.key] = sem
            self._by_metric_entity[(sem.key.database, sem.metric, sem.entity)] = sem.key
            return sem.key

    def get_semantics(self, key: SeriesKey) -> StreamSemantics:
        try:
            return self._streams[key]
        except KeyError:
            raise UnknownStream(f"no semantics for stream {key}") from None

    def has_stream(self, key: SeriesKey) -> bool:
        return key in self._streams

    def streams(self, database: str | None = None) -> list[SeriesKey]:
        keys = self._streams.keys()
        if database is not None:
            keys = (k for k in keys if k.database == database)
        return sorted(keys)

    def find_stream(self, database: str, metric: str, entity: str) -> SeriesKey | None:
        return self._by_metric_entity.get((database, metric, entity))

    # -- provenance

    def record_derivation(
        self, output: SeriesKey, op: Operation, inputs: Iterable[SeriesKey]
    ) -> str:
        """Attach a derived provenance node to ``output``. Inputs must already
        carry provenance; the derivation must keep the graph acyclic."""
        with self._lock:
            out_sem = self.get_semantics(output)
            input_keys = tuple(inputs)
            if not input_keys:
                raise SchemaError("a derivation needs at least one input stream")
            input_ids = []
            for key in input_keys:
                sem = self.get_semantics(key)
                if sem.provenance is None:
                    raise SchemaError(f"input stream {key} has no provenance node")
                input_ids.append(sem.provenance)
            if output in input_keys or self._reaches(input_keys, output):
                raise CycleError(f"derivation of {output} would create a provenance cycle")
            node = _derived_node(op, tuple(input_ids))
            self._nodes.setdefault(node.id, node)
            self._streams[output] = replace(out_sem, provenance=node.id)
            self._deps[output] = input_keys
            return node.id

    def _reaches(self, roots: Iterable[SeriesKey], target: SeriesKey) -> bool:
        stack = list(roots)
        seen: set[SeriesKey] = set()
        while stack:
            key = stack.pop()
            if key == target:
                return True
            if key in seen:
                continue
            seen.add(key)
            stack.extend(self._deps.get(key, ()))
        return False

    def node(self, node_id: str) -> ProvenanceNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownStream(f"no provenance node {node_id!r}") from None

    def _closure(self, node_id: str) -> set[str]:
        out: set[str] = set()
        stack = [node_id]
        while stack:
            current = stack.pop()
            if current in out:
                continue
            out.add(current)
            stack.extend(self._nodes[current].inputs)
        return out

    def lineage_sources(self, key: SeriesKey) -> set[ProvenanceNode]:
        """Raw nodes reachable from the stream's provenance."""
        sem = self.get_semantics(key)
        if sem.provenance is None:
            return set()
        return {
            self._nodes[nid]
            for nid in self._closure(sem.provenance)
            if self._nodes[nid].kind == RAW
        }

    def lineage_descendants(self, key: SeriesKey) -> set[SeriesKey]:
        """Streams whose lineage passes through this stream's node."""
        sem = self.get_semantics(key)
        if sem.provenance is None:
            return set()
        out = set()
        for other_key, other in self._streams.items():
            if other_key == key or other.provenance is None:
                continue
            if sem.provenance in self._closure(other.provenance):
                out.add(other_key)
        return out

    # -- document round trips

    def export_provenance(self) -> dict:
        nodes = []
        for node_id in sorted(self._nodes):
            node = self._nodes[node_id]
            if node.kind == RAW:
                nodes.append(
                    {
                        "id": node.id,
                        "kind": RAW,
                        "sensor_entity": node.sensor_entity,
                        "repository": None,
                    }
                )
            else:
                op = node.operation
                nodes.append(
                    {
                        "id": node.id,
                        "kind": DERIVED,
                        "operation": {
                            "type": op.type,
                            "name": op.name,
                            "features": op.features,
                            "url": op.url,
                        },
                        "inputs": list(node.inputs),
                        "repository": None,
                    }
                )
        streams = []
        for key in sorted(self._streams):
            sem = self._streams[key]
            if sem.provenance is None:
                continue
            streams.append(
                {
                    "database": key.database,
                    "metric": key.metric,
                    "tags": key.tag_dict(),
                    "node": sem.provenance,
                    "inputs": [str(k) for k in self._deps.get(key, ())],
                }
            )
        return {"nodes": nodes, "streams": streams}

    def import_provenance(self, doc: Mapping) -> None:
        """Restore an exported provenance graph over already registered streams."""
        with self._lock:
            by_str = {str(k): k for k in self._streams}
            for node_doc in doc.get("nodes", []):
                if node_doc.get("kind") == RAW:
                    node = ProvenanceNode(
                        node_doc["id"], RAW, sensor_entity=node_doc.get("sensor_entity")
                    )
                else:
                    op_doc = node_doc.get("operation", {})
                    node = ProvenanceNode(
                        node_doc["id"],
                        DERIVED,
                        operation=Operation(
                            op_doc.get("type", "compute"),
                            op_doc.get("name"),
                            op_doc.get("features"),
                            op_doc.get("url"),
                        ),
                        inputs=tuple(node_doc.get("inputs", ())),
                    )
                self._nodes[node.id] = node
            for stream_doc in doc.get("streams", []):
                key = SeriesKey(
                    stream_doc["database"], stream_doc["metric"], stream_doc.get("tags", {})
                )
                if key not in self._streams:
                    continue
                self._streams[key] = replace(self._streams[key], provenance=stream_doc["node"])
                deps = tuple(
                    by_str[s] for s in stream_doc.get("inputs", ()) if s in by_str
                )
                if deps:
                    self._deps[key] = deps


def semantics_from_document(doc: Mapping) -> StreamSemantics:
    """Build StreamSemantics from its JSON document form."""
    if not isinstance(doc, Mapping):
        raise SchemaError("stream semantics document must be a JSON object")
    for field_name in ("database", "metric", "metric_ref", "entity", "unit"):
        if not isinstance(doc.get(field_name), str) or not doc.get(field_name):
            raise SchemaError(f"stream semantics: {field_name!r} must be a non-empty string")
    key = SeriesKey(doc["database"], doc["metric"], doc.get("tags", {}))
    timing = None
    if "timing" in doc and doc["timing"] is not None:
        t = doc["timing"]
        if not isinstance(t, Mapping):
            raise SchemaError("stream semantics: timing must be an object")
        timing = Timing(frequency_ms=t.get("frequency_ms"), period=t.get("period"))
    return StreamSemantics(
        key=key,
        metric=doc["metric_ref"],
        entity=doc["entity"],
        unit=doc["unit"],
        missing_data_policy=doc.get("missing_data_policy", "interpolate"),
        timing=timing,
        collection_procedure=doc.get("collection_procedure", ""),
        sensor_entity=doc.get("sensor_entity"),
    )


def semantics_to_document(sem: StreamSemantics) -> dict:
    doc: dict = {
        "database": sem.key.database,
        "metric": sem.key.metric,
        "tags": sem.key.tag_dict(),
        "metric_ref": sem.metric,
        "entity": sem.entity,
        "unit": sem.unit,
        "missing_data_policy": sem.missing_data_policy,
    }
    if sem.timing is not None:
        doc["timing"] = {
            "frequency_ms": sem.timing.frequency_ms,
            "period": sem.timing.period,
        }
    if sem.collection_procedure:
        doc["collection_procedure"] = sem.collection_procedure
    if sem.sensor_entity is not None:
        doc["sensor_entity"] = sem.sensor_entity
    return doc
