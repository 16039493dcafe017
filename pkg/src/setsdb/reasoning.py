"""Rewriting semantic queries into executable retrieval plans.

``plan_exact`` maps an (entity, metric) request onto stored streams using
three rules, tried in order for each (entity, metric) pair:

1. direct: a registered stream measures the metric for the entity;
2. metric: the metric's quantitative definition is evaluated, with every
   referenced metric planned recursively for the same entity;
3. composition: ``sum_over_subentities`` / ``mean_over_subentities`` calls
   aggregate the inner metric planned for each direct sub-entity.

Plans are trees of frozen nodes, so planning the same query twice yields a
structurally identical plan. Every plan carries a numbered explanation, one
line per rule application:

    <step#> <rule: direct|metric|composition|unit> <detail>
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from . import metric_expr
from .errors import KindMismatch, Underivable, UnknownEntity, UnitMismatch
from .metric_expr import (
    IGNORE,
    INTERPOLATE,
    MEAN_OVER,
    BinOp,
    Call,
    EvalContext,
    Expr,
    Ref,
    evaluate,
    state_arguments,
)
from .ontology import MetricNode, OntologySet
from .semantics import SemanticCatalog
from .store import BaseStore, Sample, SeriesKey


@dataclass(frozen=True)
class SemanticQuery:
    entity: str
    metric: str
    window: tuple[int, int]
    desired_unit: str | None = None
    database: str | None = None

    def __post_init__(self):
        t0, t1 = self.window
        if t0 >= t1:
            raise ValueError("query window must satisfy t0 < t1")


@dataclass(frozen=True)
class Retrieval:
    key: SeriesKey


@dataclass(frozen=True)
class ConvertUnit:
    source: "PlanNode"
    factor: float
    from_unit: str
    to_unit: str


@dataclass(frozen=True)
class EvaluateExpr:
    expr: Expr
    bindings: tuple[tuple[str, "PlanNode"], ...]
    policy: str = INTERPOLATE


@dataclass(frozen=True)
class Aggregate:
    op: str  # "mean" or "sum"
    parts: tuple["PlanNode", ...]


PlanNode = Union[Retrieval, ConvertUnit, EvaluateExpr, Aggregate]


@dataclass(frozen=True)
class MappedQuery:
    root: PlanNode
    window: tuple[int, int]
    explanation: str

    @property
    def retrievals(self) -> list[tuple[SeriesKey, tuple[int, int]]]:
        out: list[tuple[SeriesKey, tuple[int, int]]] = []

        def walk(node: PlanNode) -> None:
            if isinstance(node, Retrieval):
                out.append((node.key, self.window))
            elif isinstance(node, ConvertUnit):
                walk(node.source)
            elif isinstance(node, EvaluateExpr):
                for _, sub in node.bindings:
                    walk(sub)
            else:
                for part in node.parts:
                    walk(part)

        walk(self.root)
        return out

    @property
    def pipeline(self) -> list[PlanNode]:
        """Transform steps in execution (post) order, retrievals excluded."""
        out: list[PlanNode] = []

        def walk(node: PlanNode) -> None:
            if isinstance(node, ConvertUnit):
                walk(node.source)
                out.append(node)
            elif isinstance(node, EvaluateExpr):
                for _, sub in node.bindings:
                    walk(sub)
                out.append(node)
            elif isinstance(node, Aggregate):
                for part in node.parts:
                    walk(part)
                out.append(node)

        walk(self.root)
        return out

    def source_keys(self) -> list[SeriesKey]:
        seen: list[SeriesKey] = []
        for key, _ in self.retrievals:
            if key not in seen:
                seen.append(key)
        return seen


_AGG_OP = {metric_expr.SUM_OVER: "sum", MEAN_OVER: "mean"}


class _Planner:
    def __init__(self, catalog: SemanticCatalog, onts: OntologySet, database: str):
        self.catalog = catalog
        self.onts = onts
        self.database = database
        self.arch = catalog.database_semantics(database).architecture
        self.steps: list[str] = []
        self.memo: dict[tuple[str, str], PlanNode] = {}

    def step(self, rule: str, detail: str) -> None:
        self.steps.append(f"{len(self.steps) + 1} {rule} {detail}")

    def plan(self, entity: str, node: MetricNode) -> PlanNode:
        memo_key = (entity, node.name)
        if memo_key in self.memo:
            return self.memo[memo_key]
        plan = self._plan(entity, node)
        self.memo[memo_key] = plan
        return plan

    def _plan(self, entity: str, node: MetricNode) -> PlanNode:
        self.arch.entity(entity)  # UnknownEntity if the path is wrong
        key = self.catalog.find_stream(self.database, node.name, entity)
        if key is not None:
            self.step("direct", f"retrieve {key} for {node.name}@{entity}")
            return Retrieval(key)
        if node.expr is None:
            raise Underivable(
                f"no stream stores {node.name} for {entity} and the metric has no definition"
            )
        if metric_expr.has_subentity_call(node.expr):
            return self._plan_composition(entity, node)
        return self._plan_metric(entity, node, node.expr)

    def _plan_metric(self, entity: str, node: MetricNode, expr: Expr) -> PlanNode:
        self.step(
            "metric",
            f"{node.name} := {metric_expr.format_expr(expr)} at {entity}",
        )
        bindings = []
        for ref in metric_expr.referenced_metrics(expr):
            sub = self.plan(entity, self.onts.resolve_metric(ref))
            bindings.append((ref, self._normalized(sub)))
        return EvaluateExpr(expr, tuple(bindings), policy=self._policy(bindings))

    def _plan_composition(self, entity: str, node: MetricNode) -> PlanNode:
        expr = node.expr
        if isinstance(expr, Call) and expr.func in _AGG_OP:
            return self._aggregate(entity, node, expr)
        # Mixed definition: swap each aggregation call for a synthetic
        # reference bound to its own sub-plan, then evaluate the rest.
        self.step(
            "metric",
            f"{node.name} := {metric_expr.format_expr(expr)} at {entity}",
        )
        counter = 0
        bindings: list[tuple[str, PlanNode]] = []

        def rewrite(e: Expr) -> Expr:
            nonlocal counter
            if isinstance(e, Call) and e.func in _AGG_OP:
                name = f"__agg{counter}"
                counter += 1
                bindings.append((name, self._aggregate(entity, node, e)))
                return Ref(name)
            if isinstance(e, BinOp):
                return BinOp(e.op, rewrite(e.left), rewrite(e.right))
            return e

        rewritten = rewrite(expr)
        for ref in metric_expr.referenced_metrics(rewritten):
            if ref.startswith("__agg"):
                continue
            bindings.append((ref, self._normalized(self.plan(entity, self.onts.resolve_metric(ref)))))
        return EvaluateExpr(rewritten, tuple(bindings), policy=self._policy(bindings))

    def _aggregate(self, entity: str, node: MetricNode, call: Call) -> PlanNode:
        children = self.arch.children(entity)
        if not children:
            raise Underivable(
                f"{node.name} aggregates over sub-entities, but {entity} has none"
            )
        inner = self.onts.resolve_metric(call.arg)
        op = _AGG_OP[call.func]
        self.step(
            "composition",
            f"{entity} -> [{', '.join(children)}] via {op} over {inner.name}",
        )
        parts = tuple(self._normalized(self.plan(child, inner)) for child in children)
        return Aggregate(op, parts)

    def _normalized(self, plan: PlanNode) -> PlanNode:
        """Bring a direct retrieval feeding a derivation onto its dimension's
        base unit, so expression arithmetic sees consistent magnitudes."""
        if not isinstance(plan, Retrieval):
            return plan
        sem = self.catalog.get_semantics(plan.key)
        unit = self.onts.unit(sem.unit)
        if unit.factor_to_base in (None, 1.0):
            return plan
        base = self.onts.base_unit(unit.dimension)
        factor = self.onts.unit_conversion_factor(unit.name, base.name)
        self.step("unit", f"convert {unit.name} -> {base.name} factor {factor!r}")
        return ConvertUnit(plan, factor, unit.name, base.name)

    def _policy(self, bindings: list[tuple[str, PlanNode]]) -> str:
        # Dropping rows is the conservative choice, so one "ignore" source
        # switches the whole evaluation over.
        for _, sub in bindings:
            node = sub.source if isinstance(sub, ConvertUnit) else sub
            if isinstance(node, Retrieval):
                if self.catalog.get_semantics(node.key).missing_data_policy == IGNORE:
                    return IGNORE
        return INTERPOLATE


def _pick_database(q: SemanticQuery, catalog: SemanticCatalog) -> str:
    if q.database is not None:
        catalog.database_semantics(q.database)
        return q.database
    for database in catalog.databases():
        if catalog.database_semantics(database).architecture.has_entity(q.entity):
            return database
    raise UnknownEntity(f"no registered architecture contains entity {q.entity!r}")


def plan_exact(
    q: SemanticQuery, catalog: SemanticCatalog, onts: OntologySet | None = None
) -> MappedQuery:
    """Plan a semantic query. Rule order is direct, then metric definition,
    then composition; a desired unit adds a final conversion step."""
    onts = onts or catalog.ontologies
    if onts is None:
        raise Underivable("no ontologies loaded")
    database = _pick_database(q, catalog)
    node = onts.resolve_metric(q.metric)
    planner = _Planner(catalog, onts, database)
    root = planner.plan(q.entity, node)

    if q.desired_unit is not None:
        if isinstance(root, Retrieval):
            from_unit = catalog.get_semantics(root.key).unit
        elif node.unit_dimension is not None:
            from_unit = onts.base_unit(node.unit_dimension).name
        else:
            raise UnitMismatch(
                f"metric {node.name} declares no unit dimension; cannot honor"
                f" desired unit {q.desired_unit!r}"
            )
        if from_unit != q.desired_unit:
            factor = onts.unit_conversion_factor(from_unit, q.desired_unit)
            planner.step("unit", f"convert {from_unit} -> {q.desired_unit} factor {factor!r}")
            root = ConvertUnit(root, factor, from_unit, q.desired_unit)

    return MappedQuery(root, q.window, "\n".join(planner.steps))


def convert_units(points: list[Sample], factor: float) -> list[Sample]:
    out = []
    for t, v in points:
        if isinstance(v, str):
            raise KindMismatch("cannot unit-convert a state sample")
        out.append(Sample(t, v * factor))
    return out


def execute(
    mq: MappedQuery, store: BaseStore, window: tuple[int, int] | None = None
) -> list[Sample]:
    """Run a plan bottom-up against the store. A planned stream that has no
    physical data yet reads as empty rather than failing."""
    t0, t1 = window if window is not None else mq.window
    return _exec(mq.root, store, t0, t1)


def _exec(node: PlanNode, store: BaseStore, t0: int, t1: int) -> list[Sample]:
    if isinstance(node, Retrieval):
        if not store.has_series(node.key):
            return []
        return store.read_range(node.key, t0, t1)
    if isinstance(node, ConvertUnit):
        return convert_units(_exec(node.source, store, t0, t1), node.factor)
    if isinstance(node, EvaluateExpr):
        carries_state = state_arguments(node.expr)
        bindings = {}
        for name, sub in node.bindings:
            series = _exec(sub, store, t0, t1)
            # State streams carry across the window edge: a host that last
            # reported "down" before t0 is still down at t0, so up_ratio must
            # see that event even though it falls outside the read window.
            if name in carries_state and isinstance(sub, Retrieval) and store.has_series(sub.key):
                prior = store.latest_before(sub.key, t0)
                if prior is not None:
                    series = [prior, *series]
            bindings[name] = series
        ctx = EvalContext(t0, t1, bindings, missing_data_policy=node.policy)
        return evaluate(node.expr, ctx)
    return _exec_aggregate(node, store, t0, t1)


def _exec_aggregate(node: Aggregate, store: BaseStore, t0: int, t1: int) -> list[Sample]:
    series = [_exec(part, store, t0, t1) for part in node.parts]
    per_ts: dict[int, list[float]] = {}
    for samples in series:
        for t, v in samples:
            if isinstance(v, str):
                raise KindMismatch("cannot aggregate state samples")
            per_ts.setdefault(t, []).append(v)
    out = []
    for t in sorted(per_ts):
        values = per_ts[t]
        if len(values) != len(series):
            continue  # a part has no value here; drop the incomplete row
        total = sum(values)
        out.append(Sample(t, total / len(values) if node.op == "mean" else total))
    return out
