"""Ontology documents: system concepts, architectures, metrics, and units.

A single JSON document declares three ontologies. Concepts form an acyclic
``has`` hierarchy, metric nodes form a tree with synonym pools and optional
quantitative definitions, and units carry per-dimension conversion factors.
Architectures instantiate concepts as named entities and load separately,
validated against an already loaded ontology set.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from . import metric_expr
from .errors import (
    CycleError,
    DanglingReference,
    ExpressionParseError,
    SchemaError,
    UnitMismatch,
    UnknownEntity,
    UnknownMetric,
    UnknownUnit,
)

HAS = "has"
RELATION_LABELS = ("has", "connects", "interacts")
UNIT_KINDS = ("basic", "ratio", "volume", "complex")

_ALNUM = re.compile(r"[^a-z0-9]+")


def normalize_token(text: str) -> str:
    """Lowercase and strip everything that is not a letter or digit."""
    return _ALNUM.sub("", text.lower())


def tokenize(text: str | None) -> frozenset[str]:
    if not text:
        return frozenset()
    return frozenset(t for t in _ALNUM.split(text.lower()) if t)


def _require(doc: Mapping, key: str, kind: type, where: str):
    if key not in doc:
        raise SchemaError(f"{where}: missing {key!r}")
    value = doc[key]
    if not isinstance(value, kind):
        raise SchemaError(f"{where}: {key!r} must be {kind.__name__}")
    return value


@dataclass(frozen=True)
class SystemOntology:
    concepts: frozenset[str]
    has_relations: frozenset[tuple[str, str]]


@dataclass(frozen=True)
class MetricNode:
    name: str
    parent: str | None = None
    description: str = ""
    concept_pool: tuple[str, ...] = ()
    quantitative_definition: str | None = None
    unit_dimension: str | None = None
    expr: metric_expr.Expr | None = None  # parsed definition, filled at load


@dataclass(frozen=True)
class UnitNode:
    name: str
    kind: str
    dimension: str
    factor_to_base: float | None = None
    composition: tuple[tuple[str, ...], tuple[str, ...]] | None = None


@dataclass(frozen=True)
class Entity:
    name: str
    concept: str
    identity: tuple[tuple[str, str], ...] = ()
    context: tuple[tuple[str, str], ...] = ()
    function: str = ""
    description: str = ""

    def leaf(self) -> str:
        return self.name.rsplit("/", 1)[-1]


class SystemArchitecture:
    """A concrete system: entities named by hierarchical paths plus their
    has/connects/interacts relations. ``has`` edges must form a forest."""

    def __init__(
        self,
        system_id: str,
        entities: Iterable[Entity],
        relations: Iterable[tuple[str, str, str]] = (),
    ):
        self.system_id = system_id
        self.entities: dict[str, Entity] = {}
        for entity in entities:
            if entity.name in self.entities:
                raise SchemaError(f"duplicate entity {entity.name!r}")
            self.entities[entity.name] = entity
        self.relations: tuple[tuple[str, str, str], ...] = tuple(relations)
        self._children: dict[str, list[str]] = {}
        parents: dict[str, str] = {}
        for source, label, target in self.relations:
            if label == HAS:
                if target in parents and parents[target] != source:
                    raise SchemaError(f"entity {target!r} has two has-parents")
                parents[target] = source
                self._children.setdefault(source, []).append(target)
        for children in self._children.values():
            children.sort()
        self._check_has_acyclic(parents)

    @staticmethod
    def _check_has_acyclic(parents: Mapping[str, str]) -> None:
        for start in parents:
            seen = {start}
            node = start
            while node in parents:
                node = parents[node]
                if node in seen:
                    raise CycleError(f"has relations cycle through {node!r}")
                seen.add(node)

    def entity(self, name: str) -> Entity:
        try:
            return self.entities[name]
        except KeyError:
            raise UnknownEntity(f"no entity {name!r} in system {self.system_id!r}") from None

    def has_entity(self, name: str) -> bool:
        return name in self.entities

    def children(self, name: str) -> list[str]:
        self.entity(name)
        return list(self._children.get(name, []))


def sub_entities(arch: SystemArchitecture, entity: str) -> list[Entity]:
    """Direct has-children of the entity, in name order."""
    return [arch.entity(name) for name in arch.children(entity)]


class OntologySet:
    """The three loaded ontologies plus the lookup indexes built over them."""

    def __init__(
        self,
        system: SystemOntology,
        metrics: Iterable[MetricNode],
        units: Iterable[UnitNode],
    ):
        self.system = system
        self.metrics: dict[str, MetricNode] = {m.name: m for m in metrics}
        self.units: dict[str, UnitNode] = {u.name: u for u in units}
        self._by_token: dict[str, MetricNode] = {}
        self._by_synonym: dict[str, MetricNode] = {}
        for node in self.metrics.values():
            self._by_token[normalize_token(node.name)] = node
            for synonym in node.concept_pool:
                self._by_synonym[normalize_token(synonym)] = node
        self._base_units: dict[str, UnitNode] = {}
        for unit in self.units.values():
            if unit.factor_to_base == 1.0:
                self._base_units[unit.dimension] = unit

    # -- metrics

    def resolve_metric(self, token: str) -> MetricNode:
        """Match by normalized name first, then by concept-pool synonym."""
        norm = normalize_token(token)
        node = self._by_token.get(norm) or self._by_synonym.get(norm)
        if node is None:
            raise UnknownMetric(f"no metric matches {token!r}")
        return node

    def canonical_metric(self, token: str) -> str | None:
        norm = normalize_token(token)
        node = self._by_token.get(norm) or self._by_synonym.get(norm)
        return node.name if node is not None else None

    def expand_metric(self, token: str) -> set[str]:
        """The metric plus every metric its definition references, transitively."""
        root = self.resolve_metric(token)
        out: set[str] = set()
        stack = [root]
        while stack:
            node = stack.pop()
            if node.name in out:
                continue
            out.add(node.name)
            if node.expr is not None:
                for ref in metric_expr.referenced_metrics(node.expr):
                    stack.append(self.resolve_metric(ref))
        return out

    # -- units

    def unit(self, name: str) -> UnitNode:
        try:
            return self.units[name]
        except KeyError:
            raise UnknownUnit(f"no unit named {name!r}") from None

    def base_unit(self, dimension: str) -> UnitNode:
        try:
            return self._base_units[dimension]
        except KeyError:
            raise UnknownUnit(f"dimension {dimension!r} has no base unit") from None

    def unit_conversion_factor(self, from_unit: str, to_unit: str) -> float:
        a = self.unit(from_unit)
        b = self.unit(to_unit)
        if a.dimension != b.dimension:
            raise UnitMismatch(
                f"cannot convert {from_unit!r} ({a.dimension}) to {to_unit!r} ({b.dimension})"
            )
        if a.factor_to_base is None or b.factor_to_base is None:
            raise UnitMismatch(
                f"no conversion factor between {from_unit!r} and {to_unit!r}"
            )
        return a.factor_to_base / b.factor_to_base


# -- document loading ----------------------------------------------------------

def load_ontology(document: Mapping) -> OntologySet:
    """Parse and validate a full ontology document."""
    if not isinstance(document, Mapping):
        raise SchemaError("ontology document must be a JSON object")
    system = _load_system(_require(document, "system_ontology", Mapping, "ontology"))
    units = _load_units(_require(document, "unit_ontology", list, "ontology"))
    metrics = _load_metrics(
        _require(document, "metric_ontology", list, "ontology"),
        {u.dimension for u in units},
    )
    return OntologySet(system, metrics, units)


def _load_system(doc: Mapping) -> SystemOntology:
    concepts = _require(doc, "concepts", list, "system_ontology")
    if not all(isinstance(c, str) and c for c in concepts):
        raise SchemaError("system_ontology: concepts must be non-empty strings")
    concept_set = frozenset(concepts)
    relations = []
    for pair in doc.get("has_relations", []):
        if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
            raise SchemaError(f"system_ontology: bad has_relation {pair!r}")
        parent, child = pair
        for end in (parent, child):
            if end not in concept_set:
                raise DanglingReference(f"has_relation endpoint {end!r} is not a concept")
        relations.append((parent, child))
    _check_dag(
        concept_set,
        {(p, c) for p, c in relations},
        "system_ontology has_relations",
    )
    return SystemOntology(concept_set, frozenset(relations))


def _check_dag(nodes: Iterable[str], edges: set[tuple[str, str]], what: str) -> None:
    adjacency: dict[str, list[str]] = {}
    for parent, child in edges:
        adjacency.setdefault(parent, []).append(child)
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in nodes}

    def visit(node: str) -> None:
        color[node] = GRAY
        for nxt in adjacency.get(node, []):
            if color[nxt] == GRAY:
                raise CycleError(f"{what} contain a cycle through {nxt!r}")
            if color[nxt] == WHITE:
                visit(nxt)
        color[node] = BLACK

    for node in list(color):
        if color[node] == WHITE:
            visit(node)


def _load_units(items: list) -> list[UnitNode]:
    units: list[UnitNode] = []
    names: set[str] = set()
    for item in items:
        if not isinstance(item, Mapping):
            raise SchemaError("unit_ontology entries must be objects")
        name = _require(item, "name", str, "unit")
        if name in names:
            raise SchemaError(f"duplicate unit {name!r}")
        names.add(name)
        kind = _require(item, "kind", str, f"unit {name}")
        if kind not in UNIT_KINDS:
            raise SchemaError(f"unit {name}: unknown kind {kind!r}")
        dimension = _require(item, "dimension", str, f"unit {name}")
        factor = item.get("factor_to_base")
        if factor is not None:
            factor = float(factor)
            if factor <= 0:
                raise SchemaError(f"unit {name}: factor_to_base must be positive")
        elif kind == "basic":
            raise SchemaError(f"unit {name}: basic units need factor_to_base")
        composition = item.get("composition")
        if composition is not None:
            if not (isinstance(composition, Mapping)
                    and isinstance(composition.get("numerator"), list)
                    and isinstance(composition.get("denominator"), list)):
                raise SchemaError(f"unit {name}: composition needs numerator/denominator lists")
            composition = (
                tuple(composition["numerator"]),
                tuple(composition["denominator"]),
            )
        elif kind != "basic":
            raise SchemaError(f"unit {name}: {kind} units need a composition")
        if kind == "basic" and composition is not None:
            raise SchemaError(f"unit {name}: basic units take no composition")
        units.append(UnitNode(name, kind, dimension, factor, composition))

    dimensions = {u.dimension for u in units}
    for unit in units:
        if unit.composition is None:
            continue
        for dim in unit.composition[0] + unit.composition[1]:
            if dim not in dimensions:
                raise DanglingReference(
                    f"unit {unit.name}: composition dimension {dim!r} is not declared"
                )
    for dimension in sorted(dimensions):
        bases = [u.name for u in units if u.dimension == dimension and u.factor_to_base == 1.0]
        factored = [u for u in units if u.dimension == dimension and u.factor_to_base is not None]
        if factored and len(bases) != 1:
            raise SchemaError(
                f"dimension {dimension!r} must have exactly one base unit, found {bases}"
            )
    return units


def _load_metrics(items: list, dimensions: set[str]) -> list[MetricNode]:
    drafts: list[dict] = []
    names: set[str] = set()
    for item in items:
        if not isinstance(item, Mapping):
            raise SchemaError("metric_ontology entries must be objects")
        name = _require(item, "name", str, "metric")
        if name in names:
            raise SchemaError(f"duplicate metric {name!r}")
        names.add(name)
        drafts.append(
            {
                "name": name,
                "parent": item.get("parent"),
                "description": item.get("description", ""),
                "concept_pool": tuple(item.get("concept_pool", ())),
                "quantitative_definition": item.get("quantitative_definition"),
                "unit_dimension": item.get("unit_dimension"),
            }
        )

    norm_names: dict[str, str] = {}
    for draft in drafts:
        norm = normalize_token(draft["name"])
        if norm in norm_names:
            raise SchemaError(
                f"metric names {norm_names[norm]!r} and {draft['name']!r}"
                " collide after normalization"
            )
        norm_names[norm] = draft["name"]
    pool_owner: dict[str, str] = {}
    for draft in drafts:
        for synonym in draft["concept_pool"]:
            norm = normalize_token(synonym)
            other = norm_names.get(norm)
            if other is not None and other != draft["name"]:
                raise SchemaError(
                    f"synonym {synonym!r} of {draft['name']} collides with metric {other!r}"
                )
            if norm in pool_owner and pool_owner[norm] != draft["name"]:
                raise SchemaError(
                    f"synonym {synonym!r} appears in both {pool_owner[norm]!r}"
                    f" and {draft['name']!r}"
                )
            pool_owner[norm] = draft["name"]

    for draft in drafts:
        parent = draft["parent"]
        if parent is not None and parent not in names:
            raise DanglingReference(f"metric {draft['name']}: unknown parent {parent!r}")
        dim = draft["unit_dimension"]
        if dim is not None and dim not in dimensions:
            raise DanglingReference(f"metric {draft['name']}: unknown dimension {dim!r}")
    _check_dag(
        names,
        {(d["parent"], d["name"]) for d in drafts if d["parent"] is not None},
        "metric hierarchy",
    )

    resolve = dict(norm_names)
    resolve.update({syn: owner for syn, owner in pool_owner.items()})
    definition_edges: set[tuple[str, str]] = set()
    exprs: dict[str, metric_expr.Expr] = {}
    for draft in drafts:
        text = draft["quantitative_definition"]
        if text is None:
            continue
        try:
            expr = metric_expr.parse_expr(text)
        except ExpressionParseError as exc:
            raise ExpressionParseError(
                f"metric {draft['name']}: {exc.message}", exc.position
            ) from None
        exprs[draft["name"]] = expr
        for ref in metric_expr.referenced_metrics(expr):
            target = resolve.get(normalize_token(ref))
            if target is None:
                raise DanglingReference(
                    f"metric {draft['name']}: definition references unknown metric {ref!r}"
                )
            definition_edges.add((draft["name"], target))
    _check_dag(names, definition_edges, "metric definitions")

    return [
        MetricNode(
            name=d["name"],
            parent=d["parent"],
            description=d["description"],
            concept_pool=d["concept_pool"],
            quantitative_definition=d["quantitative_definition"],
            unit_dimension=d["unit_dimension"],
            expr=exprs.get(d["name"]),
        )
        for d in drafts
    ]


def _string_pairs(doc: Mapping | None, where: str) -> tuple[tuple[str, str], ...]:
    if doc is None:
        return ()
    if not isinstance(doc, Mapping):
        raise SchemaError(f"{where} must be an object")
    return tuple(sorted((str(k), str(v)) for k, v in doc.items()))


def load_architecture(document: Mapping, onts: OntologySet) -> SystemArchitecture:
    """Parse and validate an architecture document against loaded concepts."""
    if not isinstance(document, Mapping):
        raise SchemaError("architecture document must be a JSON object")
    system_id = _require(document, "system_id", str, "architecture")
    entity_docs = _require(document, "entities", list, "architecture")
    entities = []
    for doc in entity_docs:
        if not isinstance(doc, Mapping):
            raise SchemaError("architecture entities must be objects")
        name = _require(doc, "name", str, "entity")
        concept = _require(doc, "concept", str, f"entity {name}")
        if concept not in onts.system.concepts:
            raise DanglingReference(f"entity {name}: unknown concept {concept!r}")
        entities.append(
            Entity(
                name=name,
                concept=concept,
                identity=_string_pairs(doc.get("identity"), f"entity {name} identity"),
                context=_string_pairs(doc.get("context"), f"entity {name} context"),
                function=doc.get("function", ""),
                description=doc.get("description", ""),
            )
        )
    known = {e.name for e in entities}
    relations = []
    for rel in document.get("relations", []):
        if not (isinstance(rel, (list, tuple)) and len(rel) == 3):
            raise SchemaError(f"bad relation {rel!r}")
        source, label, target = rel
        if label not in RELATION_LABELS:
            raise SchemaError(f"unknown relation label {label!r}")
        for end in (source, target):
            if end not in known:
                raise DanglingReference(f"relation endpoint {end!r} is not an entity")
        relations.append((source, label, target))
    return SystemArchitecture(system_id, entities, relations)
