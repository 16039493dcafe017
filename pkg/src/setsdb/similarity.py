"""Similarity scoring for approximate stream search.

A request describes up to four attributes (system, entity, metric, sensor).
Keyword attributes compare by Jaccard similarity over normalized tokens with
concept-pool synonyms canonicalized first. Metrics compare through definition
expansion before falling back to keywords. Systems compare either by keywords
or, when both sides carry architectures, by a normalized graph edit distance.
A two-level keyword filter tree prunes the catalog before scoring.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NoUsableAttributes, SchemaError, UnknownMetric
from .ontology import OntologySet, SystemArchitecture, normalize_token, tokenize
from .reasoning import MappedQuery, SemanticQuery, plan_exact
from .semantics import DatabaseSemantics, SemanticCatalog, StreamSemantics
from .store import SeriesKey

ATTRIBUTES = ("sys", "entity", "metric", "sensor")

EXACT_NODE_LIMIT = 8  # larger graphs fall back to the assignment bound


@dataclass(frozen=True)
class LabeledGraph:
    """Undirected graph with keyword-labeled nodes."""

    nodes: tuple[tuple[str, frozenset[str]], ...]
    edges: frozenset[frozenset[str]]

    @staticmethod
    def build(
        nodes: Mapping[str, Iterable[str]], edges: Iterable[tuple[str, str]] = ()
    ) -> "LabeledGraph":
        node_tuple = tuple(sorted((n, frozenset(kw)) for n, kw in nodes.items()))
        known = {n for n, _ in node_tuple}
        edge_set = set()
        for a, b in edges:
            if a not in known or b not in known:
                raise SchemaError(f"edge ({a!r}, {b!r}) references an unknown node")
            if a == b:
                continue
            edge_set.add(frozenset((a, b)))
        return LabeledGraph(node_tuple, frozenset(edge_set))

    @classmethod
    def from_architecture(cls, arch: SystemArchitecture) -> "LabeledGraph":
        nodes = {
            e.name: entity_label_keywords(e)
            for e in arch.entities.values()
        }
        edges = [(s, t) for s, _, t in arch.relations]
        return cls.build(nodes, edges)

    def keyword_union(self) -> frozenset[str]:
        out: set[str] = set()
        for _, kw in self.nodes:
            out |= kw
        return frozenset(out)

    def size(self) -> int:
        return len(self.nodes) + len(self.edges)


SystemDescriptor = Union[frozenset, LabeledGraph]


def entity_label_keywords(entity) -> frozenset[str]:
    return (
        frozenset({normalize_token(entity.concept)})
        | tokenize(entity.leaf())
        | tokenize(entity.description)
        | tokenize(entity.function)
    )


@dataclass(frozen=True)
class GedCosts:
    node_ins: float = 1.0
    node_del: float = 1.0
    node_sub: float = 1.0
    edge_ins: float = 1.0
    edge_del: float = 1.0

    @classmethod
    def from_document(cls, doc: Mapping) -> "GedCosts":
        return cls(**{k: float(doc[k]) for k in doc})


@dataclass(frozen=True)
class GedResult:
    cost: float
    exact: bool


@dataclass(frozen=True)
class SimilarityConfig:
    weights: Mapping[str, float] = field(
        default_factory=lambda: {a: 1.0 for a in ATTRIBUTES}
    )
    min_score: float = 0.0
    top_k: int = 10
    tree_thresholds: tuple[float, ...] = (0.0, 0.0)
    ged_costs: GedCosts = field(default_factory=GedCosts)

    def __post_init__(self):
        weights = {a: 0.0 for a in ATTRIBUTES}
        for attr, w in dict(self.weights).items():
            if attr not in ATTRIBUTES:
                raise SchemaError(f"unknown similarity attribute {attr!r}")
            if w < 0:
                raise SchemaError("similarity weights must be non-negative")
            weights[attr] = float(w)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "tree_thresholds", tuple(self.tree_thresholds))
        if len(self.tree_thresholds) < 2:
            raise SchemaError("tree_thresholds needs one value per tree level (2)")
        if self.top_k <= 0:
            raise SchemaError("top_k must be positive")

    @classmethod
    def from_document(cls, doc: Mapping) -> "SimilarityConfig":
        if not isinstance(doc, Mapping):
            raise SchemaError("similarity config must be a JSON object")
        kwargs: dict = {}
        if "weights" in doc:
            kwargs["weights"] = {k: float(v) for k, v in doc["weights"].items()}
        if "min_score" in doc:
            kwargs["min_score"] = float(doc["min_score"])
        if "top_k" in doc:
            kwargs["top_k"] = int(doc["top_k"])
        if "tree_thresholds" in doc:
            kwargs["tree_thresholds"] = tuple(float(t) for t in doc["tree_thresholds"])
        if "ged_costs" in doc:
            kwargs["ged_costs"] = GedCosts.from_document(doc["ged_costs"])
        return cls(**kwargs)


@dataclass(frozen=True)
class SemanticVector:
    """What the requester knows: any subset of the four attributes, at least
    one of them present."""

    sys: SystemDescriptor | None = None
    entity: frozenset[str] | None = None
    metric: str | None = None
    sensor: frozenset[str] | None = None

    def __post_init__(self):
        if self.sys is None and self.entity is None and self.metric is None and self.sensor is None:
            raise ValueError("a semantic vector needs at least one attribute")
        for attr in ("entity", "sensor"):
            value = getattr(self, attr)
            if value is not None and not isinstance(value, frozenset):
                object.__setattr__(self, attr, frozenset(value))
        if self.sys is not None and not isinstance(self.sys, (frozenset, LabeledGraph)):
            object.__setattr__(self, "sys", frozenset(self.sys))

    def pooled_keywords(self) -> frozenset[str]:
        out: set[str] = set()
        if isinstance(self.sys, LabeledGraph):
            out |= self.sys.keyword_union()
        elif self.sys is not None:
            out |= self.sys
        if self.entity is not None:
            out |= self.entity
        if self.metric is not None:
            out.add(self.metric)
        if self.sensor is not None:
            out |= self.sensor
        return frozenset(out)


# -- keyword and metric similarity ----------------------------------------------

def _canonical_set(tokens: Iterable[str], onts: OntologySet | None) -> frozenset[str]:
    out: set[str] = set()
    for token in tokens:
        norm = normalize_token(str(token))
        if not norm:
            continue
        canonical = onts.canonical_metric(norm) if onts is not None else None
        out.add(normalize_token(canonical) if canonical is not None else norm)
    return frozenset(out)


def keyword_similarity(
    a: Iterable[str], b: Iterable[str], onts: OntologySet | None = None
) -> float:
    """Jaccard similarity over normalized, synonym-canonicalized keyword sets.
    Two empty sets count as identical."""
    left = _canonical_set(a, onts)
    right = _canonical_set(b, onts)
    if not left and not right:
        return 1.0
    return len(left & right) / len(left | right)


def metric_similarity(q_token: str, ds_metric: str, onts: OntologySet) -> float:
    """1.0 when one metric's definition expansion contains the other, else a
    keyword comparison over names and descriptions."""
    ds_node = onts.resolve_metric(ds_metric)
    try:
        q_node = onts.resolve_metric(q_token)
    except UnknownMetric:
        q_node = None
    if q_node is not None:
        if ds_node.name in onts.expand_metric(q_node.name):
            return 1.0
        if q_node.name in onts.expand_metric(ds_node.name):
            return 1.0
    q_tokens = set(tokenize(q_token))
    if q_node is not None:
        q_tokens |= {normalize_token(q_node.name)} | set(tokenize(q_node.description))
    ds_tokens = {normalize_token(ds_node.name)} | set(tokenize(ds_node.description))
    return keyword_similarity(q_tokens, ds_tokens, onts)


# -- graph edit distance ---------------------------------------------------------

def _node_sub_cost(
    kw1: frozenset[str], kw2: frozenset[str], costs: GedCosts, onts: OntologySet | None
) -> float:
    return costs.node_sub * (1.0 - keyword_similarity(kw1, kw2, onts))


def _induced_cost(
    g1: LabeledGraph,
    g2: LabeledGraph,
    mapping: dict[str, str | None],
    costs: GedCosts,
    onts: OntologySet | None,
) -> float:
    """Exact edit cost implied by a complete node mapping."""
    labels1 = dict(g1.nodes)
    labels2 = dict(g2.nodes)
    cost = 0.0
    used = {v for v in mapping.values() if v is not None}
    for u, v in mapping.items():
        if v is None:
            cost += costs.node_del
        else:
            cost += _node_sub_cost(labels1[u], labels2[v], costs, onts)
    cost += costs.node_ins * (len(labels2) - len(used))
    for edge in g1.edges:
        u, v = tuple(edge)
        img_u, img_v = mapping.get(u), mapping.get(v)
        if img_u is None or img_v is None:
            cost += costs.edge_del
        elif frozenset((img_u, img_v)) not in g2.edges:
            cost += costs.edge_del
    preimage = {v: u for u, v in mapping.items() if v is not None}
    for edge in g2.edges:
        a, b = tuple(edge)
        if a not in used or b not in used:
            cost += costs.edge_ins
        elif frozenset((preimage[a], preimage[b])) not in g1.edges:
            cost += costs.edge_ins
    return cost


def _assignment_mapping(
    g1: LabeledGraph, g2: LabeledGraph, costs: GedCosts, onts: OntologySet | None
) -> dict[str, str | None]:
    """Node mapping from a bipartite assignment over node operations with a
    local edge term, per the usual square cost matrix construction."""
    n1, n2 = len(g1.nodes), len(g2.nodes)
    if n1 == 0 or n2 == 0:
        return {u: None for u, _ in g1.nodes}
    names1 = [n for n, _ in g1.nodes]
    names2 = [n for n, _ in g2.nodes]
    deg1 = {n: 0 for n in names1}
    for edge in g1.edges:
        for n in edge:
            deg1[n] += 1
    deg2 = {n: 0 for n in names2}
    for edge in g2.edges:
        for n in edge:
            deg2[n] += 1
    big = 1e9
    size = n1 + n2
    matrix = np.full((size, size), 0.0)
    labels1 = dict(g1.nodes)
    labels2 = dict(g2.nodes)
    for i, u in enumerate(names1):
        for j, v in enumerate(names2):
            local = abs(deg1[u] - deg2[v]) * min(costs.edge_del, costs.edge_ins) / 2.0
            matrix[i, j] = _node_sub_cost(labels1[u], labels2[v], costs, onts) + local
        for j in range(n2, size):
            matrix[i, j] = costs.node_del + deg1[u] * costs.edge_del / 2.0 if j - n2 == i else big
    for i in range(n1, size):
        for j, v in enumerate(names2):
            matrix[i, j] = costs.node_ins + deg2[v] * costs.edge_ins / 2.0 if i - n1 == j else big
    rows, cols = linear_sum_assignment(matrix)
    mapping: dict[str, str | None] = {}
    for r, c in zip(rows, cols):
        if r < n1:
            mapping[names1[r]] = names2[c] if c < n2 else None
    return mapping


def _ged_exact(
    g1: LabeledGraph,
    g2: LabeledGraph,
    costs: GedCosts,
    onts: OntologySet | None,
    upper: float,
) -> float:
    """Branch and bound over node mappings. Edge costs are charged as soon as
    both endpoints are decided, which keeps the partial cost admissible."""
    names1 = [n for n, _ in g1.nodes]
    names2 = [n for n, _ in g2.nodes]
    labels1 = dict(g1.nodes)
    labels2 = dict(g2.nodes)
    sub = [
        [_node_sub_cost(labels1[u], labels2[v], costs, onts) for v in names2]
        for u in names1
    ]
    adj1 = {u: set() for u in names1}
    for edge in g1.edges:
        a, b = tuple(edge)
        adj1[a].add(b)
        adj1[b].add(a)
    best = upper

    def completion(mapping: list[str | None], used: set[str]) -> float:
        cost = costs.node_ins * (len(names2) - len(used))
        for edge in g2.edges:
            a, b = tuple(edge)
            if a not in used or b not in used:
                cost += costs.edge_ins
        return cost

    def lower_bound(i: int, used: set[str]) -> float:
        bound = 0.0
        for k in range(i, len(names1)):
            cheapest = costs.node_del
            row = sub[k]
            for j, v in enumerate(names2):
                if v not in used and row[j] < cheapest:
                    cheapest = row[j]
            bound += cheapest
        surplus = (len(names2) - len(used)) - (len(names1) - i)
        if surplus > 0:
            bound += surplus * costs.node_ins
        return bound

    def edge_delta(i: int, image: str | None, mapping: list[str | None]) -> float:
        u = names1[i]
        delta = 0.0
        for j in range(i):
            w = names1[j]
            g1_edge = w in adj1[u]
            other = mapping[j]
            if image is None or other is None:
                if g1_edge:
                    delta += costs.edge_del
                continue
            g2_edge = frozenset((image, other)) in g2.edges
            if g1_edge and not g2_edge:
                delta += costs.edge_del
            elif g2_edge and not g1_edge:
                delta += costs.edge_ins
        return delta

    mapping: list[str | None] = []
    used: set[str] = set()

    def recurse(i: int, cost: float) -> None:
        nonlocal best
        if cost + lower_bound(i, used) >= best - 1e-12:
            return
        if i == len(names1):
            total = cost + completion(mapping, used)
            if total < best:
                best = total
            return
        for j, v in enumerate(names2):
            if v in used:
                continue
            delta = sub[i][j] + edge_delta(i, v, mapping)
            mapping.append(v)
            used.add(v)
            recurse(i + 1, cost + delta)
            used.remove(v)
            mapping.pop()
        delta = costs.node_del + edge_delta(i, None, mapping)
        mapping.append(None)
        recurse(i + 1, cost + delta)
        mapping.pop()

    recurse(0, 0.0)
    return best


def graph_edit_distance(
    g1: LabeledGraph,
    g2: LabeledGraph,
    costs: GedCosts | None = None,
    onts: OntologySet | None = None,
) -> GedResult:
    """Minimum-cost edit path between two labeled graphs. Exact up to
    EXACT_NODE_LIMIT nodes per side; beyond that the result is an upper
    bound from a bipartite node assignment, flagged approximate."""
    costs = costs or GedCosts()
    mapping = _assignment_mapping(g1, g2, costs, onts)
    upper = _induced_cost(g1, g2, mapping, costs, onts)
    if max(len(g1.nodes), len(g2.nodes)) > EXACT_NODE_LIMIT:
        return GedResult(upper, exact=False)
    return GedResult(_ged_exact(g1, g2, costs, onts, upper + 1e-9), exact=True)


def system_similarity(
    q_sys: SystemDescriptor,
    ds_sys: SystemDescriptor,
    onts: OntologySet | None = None,
    costs: GedCosts | None = None,
) -> float:
    """Graph mode when both sides carry architectures, keyword mode otherwise."""
    if isinstance(q_sys, LabeledGraph) and isinstance(ds_sys, LabeledGraph):
        denominator = q_sys.size() + ds_sys.size()
        if denominator == 0:
            return 1.0
        ged = graph_edit_distance(q_sys, ds_sys, costs, onts)
        return max(0.0, min(1.0, 1.0 - ged.cost / denominator))
    left = q_sys.keyword_union() if isinstance(q_sys, LabeledGraph) else q_sys
    right = ds_sys.keyword_union() if isinstance(ds_sys, LabeledGraph) else ds_sys
    return keyword_similarity(left, right, onts)


def aggregate_similarity(
    scores: Mapping[str, float | None], cfg: SimilarityConfig
) -> float:
    """Weighted mean over present attributes with weights renormalized."""
    total = 0.0
    weight_sum = 0.0
    for attr in ATTRIBUTES:
        score = scores.get(attr)
        weight = cfg.weights.get(attr, 0.0)
        if score is None or weight == 0.0:
            continue
        total += weight * score
        weight_sum += weight
    if weight_sum == 0.0:
        raise NoUsableAttributes("no present attribute has a positive weight")
    return total / weight_sum


# -- catalog keyword extraction ---------------------------------------------------

def system_keywords(db_sem: DatabaseSemantics) -> frozenset[str]:
    arch = db_sem.architecture
    out = set(tokenize(arch.system_id))
    for entity in arch.entities.values():
        out.add(normalize_token(entity.concept))
    out |= tokenize(db_sem.storage_architecture)
    out |= tokenize(db_sem.retention_sharding_notes)
    out |= tokenize(db_sem.storage_scheme)
    return frozenset(out)


def entity_keywords(arch: SystemArchitecture, path: str) -> frozenset[str]:
    return entity_label_keywords(arch.entity(path))


def stream_keywords(catalog: SemanticCatalog, sem: StreamSemantics) -> frozenset[str]:
    arch = catalog.database_semantics(sem.key.database).architecture
    out = set(tokenize(sem.metric))
    out |= entity_keywords(arch, sem.entity)
    if sem.sensor_entity is not None:
        out |= entity_keywords(arch, sem.sensor_entity)
    return frozenset(out)


def vector_for_stream(catalog: SemanticCatalog, key: SeriesKey) -> SemanticVector:
    """The descriptor a stream advertises about itself, used as the target
    side of every comparison."""
    sem = catalog.get_semantics(key)
    db_sem = catalog.database_semantics(key.database)
    arch = db_sem.architecture
    return SemanticVector(
        sys=system_keywords(db_sem),
        entity=entity_keywords(arch, sem.entity),
        metric=sem.metric,
        sensor=entity_keywords(arch, sem.sensor_entity) if sem.sensor_entity else None,
    )


# -- filter tree --------------------------------------------------------------------

class TreeLeaf(NamedTuple):
    key: SeriesKey
    keywords: frozenset[str]


class TreeNode(NamedTuple):
    name: str
    keywords: frozenset[str]
    leaves: tuple[TreeLeaf, ...]


@dataclass(frozen=True)
class FilterTree:
    databases: tuple[TreeNode, ...]


def build_filter_tree(catalog: SemanticCatalog) -> FilterTree:
    """Root over database nodes over stream leaves. A node's keyword set is
    the union of its children's plus, for databases, the system keywords."""
    databases = []
    for database in catalog.databases():
        db_sem = catalog.database_semantics(database)
        leaves = []
        union: set[str] = set(system_keywords(db_sem))
        for key in catalog.streams(database):
            kw = stream_keywords(catalog, catalog.get_semantics(key))
            leaves.append(TreeLeaf(key, kw))
            union |= kw
        databases.append(TreeNode(database, frozenset(union), tuple(leaves)))
    return FilterTree(tuple(databases))


def prune(
    tree: FilterTree,
    q: SemanticVector,
    cfg: SimilarityConfig,
    onts: OntologySet | None = None,
) -> set[SeriesKey]:
    """Candidate streams that survive the level thresholds. The first
    threshold gates database nodes, the second gates stream leaves."""
    pooled = q.pooled_keywords()
    out: set[SeriesKey] = set()
    for db_node in tree.databases:
        if keyword_similarity(pooled, db_node.keywords, onts) < cfg.tree_thresholds[0]:
            continue
        for leaf in db_node.leaves:
            if keyword_similarity(pooled, leaf.keywords, onts) < cfg.tree_thresholds[1]:
                continue
            out.add(leaf.key)
    return out


class Match(NamedTuple):
    key: SeriesKey
    score: float
    plan: MappedQuery


def score_stream(
    q: SemanticVector,
    catalog: SemanticCatalog,
    key: SeriesKey,
    cfg: SimilarityConfig,
    onts: OntologySet,
    sys_score: float | None = None,
) -> float:
    """Aggregate similarity between the request and one stream's descriptor."""
    target = vector_for_stream(catalog, key)
    if sys_score is None and q.sys is not None:
        db_sem = catalog.database_semantics(key.database)
        ds_sys = _db_descriptor(q.sys, db_sem)
        sys_score = system_similarity(q.sys, ds_sys, onts, cfg.ged_costs)
    scores: dict[str, float | None] = {
        "sys": sys_score if q.sys is not None else None,
        "entity": (
            keyword_similarity(q.entity, target.entity, onts)
            if q.entity is not None
            else None
        ),
        "metric": (
            metric_similarity(q.metric, target.metric, onts)
            if q.metric is not None
            else None
        ),
        "sensor": (
            keyword_similarity(q.sensor, target.sensor, onts)
            if q.sensor is not None and target.sensor is not None
            else None
        ),
    }
    return aggregate_similarity(scores, cfg)


def _db_descriptor(q_sys: SystemDescriptor, db_sem: DatabaseSemantics) -> SystemDescriptor:
    if isinstance(q_sys, LabeledGraph):
        return LabeledGraph.from_architecture(db_sem.architecture)
    return system_keywords(db_sem)


def plan_similarity(
    q: SemanticVector,
    window: tuple[int, int],
    cfg: SimilarityConfig,
    catalog: SemanticCatalog,
    onts: OntologySet | None = None,
) -> list[Match]:
    """Prune, gate databases on system similarity, score survivors, rank,
    and plan retrieval for the top matches."""
    onts = onts or catalog.ontologies
    present = [a for a in ATTRIBUTES if getattr(q, a) is not None]
    if not any(cfg.weights.get(a, 0.0) > 0.0 for a in present):
        raise NoUsableAttributes("no present attribute has a positive weight")

    tree = build_filter_tree(catalog)
    candidates = prune(tree, q, cfg, onts)
    by_db: dict[str, list[SeriesKey]] = {}
    for key in candidates:
        by_db.setdefault(key.database, []).append(key)

    scored: list[tuple[SeriesKey, float]] = []
    for database in sorted(by_db):
        db_sem = catalog.database_semantics(database)
        sys_score: float | None = None
        if q.sys is not None:
            sys_score = system_similarity(
                q.sys, _db_descriptor(q.sys, db_sem), onts, cfg.ged_costs
            )
            if sys_score < cfg.min_score:
                continue
        for key in sorted(by_db[database]):
            try:
                score = score_stream(q, catalog, key, cfg, onts, sys_score=sys_score)
            except NoUsableAttributes:
                continue  # e.g. only a sensor was asked for and this stream has none
            if score >= cfg.min_score:
                scored.append((key, score))

    scored.sort(key=lambda item: (-item[1], item[0]))
    matches = []
    for key, score in scored[: cfg.top_k]:
        sem = catalog.get_semantics(key)
        plan = plan_exact(
            SemanticQuery(
                entity=sem.entity,
                metric=sem.metric,
                window=window,
                database=key.database,
            ),
            catalog,
            onts,
        )
        matches.append(Match(key, score, plan))
    return matches
