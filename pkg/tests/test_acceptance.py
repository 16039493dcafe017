"""End-to-end acceptance checks, one per shipped guarantee.

Each test prints a single PASS/FAIL line (straight to the real stdout so it
shows up in any pytest run) and then asserts. Tolerances are stated inline;
every expected value is produced by an independent oracle, not by the code
under test.
"""

import itertools
import random

import pytest

from setsdb.cloud import (
    cluster_availability_oracle,
    generate_fixture,
    load_fixture,
    ontology_document,
    run_case_study,
    scripted_fixture,
    state_scan_up_fraction,
)
from setsdb.errors import CycleError, UnitMismatch
from setsdb.metric_expr import (
    BUILTINS,
    BinOp,
    Call,
    Num,
    Ref,
    format_expr,
    parse_expr,
)
from setsdb.ontology import load_ontology
from setsdb.query import (
    BasicQuery,
    ExactQuery,
    SimilarityQuery,
    parse_query,
    print_query,
)
from setsdb.reasoning import SemanticQuery
from setsdb.semantics import Operation
from setsdb.similarity import (
    SemanticVector,
    SimilarityConfig,
    build_filter_tree,
    graph_edit_distance,
    plan_similarity,
    prune,
    vector_for_stream,
)
from setsdb.store import BaseStore, Sample, SeriesKey, downsample
from setsdb.system import System

from test_similarity import oracle_ged, random_graph


def report(capsys, number: int, name: str, ok: bool, detail: str = ""):
    line = f"ACCEPTANCE {number} {name}: {'PASS' if ok else 'FAIL'}"
    with capsys.disabled():
        print(line, flush=True)
    assert ok, f"{name} failed: {detail}"


def test_01_cloud_case_study(capsys):
    study = run_case_study()
    value_ok = abs(study.value - study.oracle) < 1e-9 and study.value == pytest.approx(0.9)
    rules = [line.split()[1] for line in study.explanation.splitlines()]
    order_ok = (
        "composition" in rules
        and "metric" in rules
        and rules.index("composition") < rules.index("metric")
        and "up_ratio" in study.explanation
    )
    ok = value_ok and order_ok and study.lineage_ok
    report(
        capsys,
        1,
        "cloud case study",
        ok,
        f"value={study.value} oracle={study.oracle} rules={rules} "
        f"sources={sorted(study.sources)}",
    )


def test_02_planner_availability_matches_scan(capsys):
    duration = 300
    checked = 0
    worst = 0.0
    for seed in range(25):
        fixture = generate_fixture(seed, hosts=4, duration_ms=duration)
        system = System()
        load_fixture(system, fixture)
        for host in fixture.host_paths():
            for t0, t1 in ((0, duration), (duration // 4, 3 * duration // 4)):
                res = system.query(f"DERIVE metric=availability entity={host} RANGE {t0} {t1}")
                expected = state_scan_up_fraction(fixture.status_events[host], t0, t1)
                if expected is None:
                    assert res.samples == []
                else:
                    worst = max(worst, abs(res.samples[0].value - expected))
            checked += 1
        cluster = system.query(f"DERIVE metric=cluster_availability entity=/dc1/c1 RANGE 0 {duration}")
        oracle = cluster_availability_oracle(fixture, 0, duration)
        worst = max(worst, abs(cluster.samples[0].value - oracle))
    ok = checked == 100 and worst < 1e-9
    report(
        capsys,
        2,
        "planner availability vs millisecond scan",
        ok,
        f"streams={checked} worst_abs_err={worst}",
    )


def test_03_unit_conversion_round_trips(capsys):
    onts = load_ontology(ontology_document())
    units = list(onts.units.values())
    worst = 0.0
    cross_checked = 0
    for a, b in itertools.permutations(units, 2):
        if a.dimension != b.dimension:
            with pytest.raises(UnitMismatch):
                onts.unit_conversion_factor(a.name, b.name)
            cross_checked += 1
        elif a.factor_to_base is None or b.factor_to_base is None:
            with pytest.raises(UnitMismatch):
                onts.unit_conversion_factor(a.name, b.name)
        else:
            product = onts.unit_conversion_factor(a.name, b.name) * onts.unit_conversion_factor(
                b.name, a.name
            )
            worst = max(worst, abs(product - 1.0))
    spot = (
        onts.unit_conversion_factor("millisecond", "second") == pytest.approx(0.001)
        and onts.unit_conversion_factor("ratio", "percent") == pytest.approx(100.0)
        and onts.unit_conversion_factor("megabytes_per_second", "bytes_per_second")
        == pytest.approx(1e6)
    )
    ok = worst < 1e-12 and cross_checked > 0 and spot
    report(
        capsys,
        3,
        "unit conversion round trips",
        ok,
        f"worst_round_trip_err={worst} cross_dimension_pairs={cross_checked} spot={spot}",
    )


def test_04_graph_edit_distance_vs_exhaustive_search(capsys):
    rng = random.Random(99)
    worst = 0.0
    all_exact = True
    for _ in range(60):
        g1 = random_graph(rng, max_nodes=4)
        g2 = random_graph(rng, max_nodes=4)
        result = graph_edit_distance(g1, g2)
        all_exact = all_exact and result.exact
        worst = max(worst, abs(result.cost - oracle_ged(g1, g2)))
    ok = all_exact and worst < 1e-9
    report(
        capsys,
        4,
        "graph edit distance vs exhaustive search",
        ok,
        f"worst_abs_err={worst} all_exact={all_exact}",
    )


def test_05_filter_tree_completeness(capsys):
    system = System()
    for i in (1, 2, 3):
        load_fixture(system, generate_fixture(i, hosts=10, database=f"clouddb{i}"))
    everything = set(system.catalog.streams())
    assert len(everything) == 60

    cfg = SimilarityConfig()  # zero thresholds
    tree = build_filter_tree(system.catalog)
    queries = [
        SemanticVector(metric="load"),
        SemanticVector(entity={"h3", "host"}),
        SemanticVector(sensor={"heartbeat"}),
        SemanticVector(sys={"dc1"}, entity={"h1"}, metric="availability", sensor={"probe"}),
    ]
    prune_ok = all(prune(tree, q, cfg, system.ontologies) == everything for q in queries)

    matches = plan_similarity(
        SemanticVector(metric="load"),
        (0, 100),
        SimilarityConfig(top_k=100, min_score=0.0),
        system.catalog,
        system.ontologies,
    )
    scan_ok = {m.key for m in matches} == everything
    ok = prune_ok and scan_ok
    report(
        capsys,
        5,
        "filter tree completeness",
        ok,
        f"prune_ok={prune_ok} scored={len(matches)} of {len(everything)}",
    )


def test_06_self_match_and_weight_scaling(capsys):
    system = System()
    load_fixture(system, scripted_fixture())
    cfg = SimilarityConfig()
    scaled = SimilarityConfig(weights={"sys": 7.0, "entity": 7.0, "metric": 7.0, "sensor": 7.0})
    self_ok = True
    scale_ok = True
    for key in system.catalog.streams():
        q = vector_for_stream(system.catalog, key)
        base = plan_similarity(q, (0, 100), cfg, system.catalog, system.ontologies)
        self_ok = self_ok and base[0].key == key and base[0].score == 1.0
        again = plan_similarity(q, (0, 100), scaled, system.catalog, system.ontologies)
        scale_ok = scale_ok and [m.key for m in again] == [m.key for m in base]
        scale_ok = scale_ok and all(
            abs(a.score - b.score) < 1e-12 for a, b in zip(again, base)
        )
    ok = self_ok and scale_ok
    report(
        capsys,
        6,
        "self match and weight scaling",
        ok,
        f"self_match={self_ok} weight_scaling={scale_ok}",
    )


def test_07_provenance_stays_a_dag(capsys):
    system = System()
    load_fixture(system, scripted_fixture())
    rng = random.Random(123)
    keys = list(system.catalog.streams())
    edges: list[tuple[SeriesKey, SeriesKey]] = []  # (input, output)
    for i in range(1000):
        key = SeriesKey("clouddb", "load", {"step": str(i)})
        system.register_stream(
            {
                "database": "clouddb",
                "metric": "load",
                "tags": {"step": str(i)},
                "metric_ref": "load",
                "entity": "/dc1/c1/h1",
                "unit": "ratio",
            }
        )
        pool = keys[-40:]
        inputs = rng.sample(pool, rng.randint(1, min(3, len(pool))))
        system.catalog.record_derivation(key, Operation("compute", name=f"step {i}"), inputs)
        edges.extend((inp, key) for inp in inputs)
        keys.append(key)

    sources_ok = True
    for key in rng.sample(keys[4:], 100):
        nodes = system.catalog.lineage_sources(key)
        sources_ok = sources_ok and bool(nodes) and all(n.kind == "raw" for n in nodes)

    cycles_refused = 0
    for inp, out in rng.sample(edges, 30):
        try:
            system.catalog.record_derivation(
                inp, Operation("compute", name="backwards"), [out]
            )
        except CycleError:
            cycles_refused += 1
    ok = sources_ok and cycles_refused == 30
    report(
        capsys,
        7,
        "provenance stays a dag",
        ok,
        f"raw_leaves={sources_ok} cycles_refused={cycles_refused}/30",
    )


def test_08_randomized_store_model(capsys):
    rng = random.Random(4242)
    store = BaseStore()
    store.create_database("db1")
    series = [SeriesKey("db1", "m", {"i": str(i)}) for i in range(12)]
    model: dict[SeriesKey, dict[int, float]] = {k: {} for k in series}
    cases = 0
    for _ in range(10_000):
        key = rng.choice(series)
        if rng.random() < 0.7 or not model[key]:
            batch = [
                Sample(rng.randrange(0, 1000), round(rng.uniform(-50, 50), 6))
                for _ in range(rng.randint(1, 5))
            ]
            store.write_points(key, batch)
            for s in batch:  # later duplicates win, like the store
                model[key][s.timestamp] = s.value
            lo = min(s.timestamp for s in batch)
            hi = max(s.timestamp for s in batch) + 1
            got = store.read_range(key, lo, hi)
            want = [Sample(t, model[key][t]) for t in sorted(model[key]) if lo <= t < hi]
            assert got == want, f"read-your-writes broke for {key} on [{lo},{hi})"
        else:
            a = rng.randrange(0, 1000)
            b = rng.randrange(a, 1001)
            got = store.read_range(key, a, b)
            want = [Sample(t, model[key][t]) for t in sorted(model[key]) if a <= t < b]
            assert got == want, f"window read diverged for {key} on [{a},{b})"
            mid = rng.randrange(a, b + 1)
            left = store.read_range(key, a, mid)
            right = store.read_range(key, mid, b)
            assert left + right == got, "adjacent windows must tile"
        cases += 1

    constant = SeriesKey("db1", "steady")
    store.write_points(constant, [Sample(t, 3.25) for t in range(100)])
    rolled = downsample(store.read_range(constant, 0, 100), 10, "mean")
    constant_ok = [s.value for s in rolled] == [3.25] * 10
    ok = cases == 10_000 and constant_ok
    report(
        capsys,
        8,
        "randomized store model",
        ok,
        f"cases={cases} constant_mean_ok={constant_ok}",
    )


def _random_expr(rng: random.Random, depth: int):
    names = ["load", "status", "cpu", "rt", "x1"]
    if depth <= 0 or rng.random() < 0.3:
        pick = rng.random()
        if pick < 0.4:
            return Num(round(rng.uniform(0, 100), 3))
        if pick < 0.8:
            return Ref(rng.choice(names))
        return Call(rng.choice(BUILTINS), rng.choice(names))
    return BinOp(
        rng.choice("+-*/"),
        _random_expr(rng, depth - 1),
        _random_expr(rng, depth - 1),
    )


def _random_query(rng: random.Random):
    words = ["cpu", "load", "host", "h1", "rack", "probe", "credit", "time"]
    t0 = rng.randint(-1000, 1000)
    t1 = t0 + rng.randint(1, 500)
    form = rng.choice(["select", "derive", "match"])
    if form == "select":
        tags = {f"{rng.choice(words)}{i}": rng.choice(words) for i in range(rng.randint(0, 3))}
        return BasicQuery(SeriesKey("db1", rng.choice(words), tags), (t0, t1))
    if form == "derive":
        return ExactQuery(
            SemanticQuery(
                metric=" ".join(rng.sample(words, rng.randint(1, 2))),
                entity="/" + "/".join(rng.sample(words, rng.randint(1, 3))),
                window=(t0, t1),
                desired_unit=rng.choice([None, "percent", "second"]),
                database=rng.choice([None, "clouddb"]),
            )
        )
    attrs = {}
    for name in rng.sample(["sys", "entity", "metric", "sensor"], rng.randint(1, 4)):
        if name == "metric":
            attrs[name] = " ".join(rng.sample(words, rng.randint(1, 2)))
        else:
            attrs[name] = frozenset(rng.sample(words, rng.randint(1, 3)))
    return SimilarityQuery(
        SemanticVector(**attrs),
        (t0, t1),
        top_k=rng.choice([None, 1, 5]),
        min_score=rng.choice([None, 0.0, 0.5]),
    )


def test_09_grammar_round_trips(capsys):
    rng = random.Random(31337)
    expr_ok = 0
    for _ in range(1000):
        tree = _random_expr(rng, 4)
        if parse_expr(format_expr(tree)) == tree:
            expr_ok += 1
    query_ok = 0
    for _ in range(1000):
        q = _random_query(rng)
        if parse_query(print_query(q)) == q:
            query_ok += 1
    ok = expr_ok == 1000 and query_ok == 1000
    report(
        capsys,
        9,
        "grammar round trips",
        ok,
        f"expressions={expr_ok}/1000 queries={query_ok}/1000",
    )
