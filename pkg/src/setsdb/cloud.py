"""Cloud monitoring fixture: a small data center described end to end.

Builders here produce the ontology, architecture, stream semantics and
sample data for a two-host cluster (the scripted scenario) or a seeded
randomized variant of any size. The scripted numbers are chosen so that
cluster availability over [0, 100) works out to exactly 0.9: host h1 is up
for 80 of 100 ms, h2 for all 100, and the cluster averages its hosts.

Oracles in this module recompute the same answers by brute force (per-ms
state scans) so the planner's interval arithmetic can be checked against
something independently simple.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

from .reasoning import SemanticQuery, execute, plan_exact
from .store import Sample, SeriesKey, format_line
from .system import System

DATABASE = "clouddb"
CLUSTER = "/dc1/c1"
WINDOW = (0, 100)

CONCEPTS = (
    "DataCenter",
    "Cluster",
    "Rack",
    "Host",
    "VMM",
    "VM",
    "OS",
    "AppInstance",
    "Network",
    "Sensor",
)

HAS_RELATIONS = (
    ("DataCenter", "Cluster"),
    ("Cluster", "Rack"),
    ("Rack", "Host"),
    ("Cluster", "Host"),
    ("Host", "VMM"),
    ("VMM", "VM"),
    ("VM", "OS"),
    ("OS", "AppInstance"),
    ("Host", "Sensor"),
    ("DataCenter", "Network"),
)


def ontology_document() -> dict:
    """Concepts, metrics and units for the cloud monitoring domain."""
    return {
        "system_ontology": {
            "concepts": list(CONCEPTS),
            "has_relations": [list(pair) for pair in HAS_RELATIONS],
        },
        "metric_ontology": [
            {"name": "QoSMetricConcept", "description": "quality of service measures"},
            {
                "name": "Performance",
                "parent": "QoSMetricConcept",
                "description": "how fast and how loaded",
            },
            {
                "name": "Dependability",
                "parent": "QoSMetricConcept",
                "description": "whether the service is there at all",
            },
            {
                "name": "load",
                "parent": "Performance",
                "description": "normalized utilization of a host",
                "unit_dimension": "fraction",
            },
            {
                "name": "CPUtime",
                "parent": "Performance",
                "description": "processor time consumed",
                "concept_pool": ["CPUcredit"],
                "unit_dimension": "time",
            },
            {
                "name": "response_time",
                "parent": "Performance",
                "description": "request round trip latency",
                "unit_dimension": "time",
            },
            {
                "name": "throughput",
                "parent": "Performance",
                "description": "bytes moved per unit time",
                "unit_dimension": "throughput",
            },
            {
                "name": "status",
                "parent": "Dependability",
                "description": "up/down heartbeat state of a component",
                "unit_dimension": "state",
            },
            {
                "name": "availability",
                "parent": "Dependability",
                "description": "fraction of time a component reports up",
                "quantitative_definition": "up_ratio(status)",
                "unit_dimension": "fraction",
            },
            {
                "name": "cluster_availability",
                "parent": "Dependability",
                "description": (
                    "mean availability over a cluster's hosts; a stricter"
                    " variant would multiply per-host availabilities instead"
                ),
                "quantitative_definition": "mean_over_subentities(availability)",
                "unit_dimension": "fraction",
            },
            {
                "name": "cluster_load",
                "parent": "Performance",
                "description": "summed host load across a cluster",
                "quantitative_definition": "sum_over_subentities(load)",
                "unit_dimension": "fraction",
            },
        ],
        "unit_ontology": [
            {"name": "second", "kind": "basic", "dimension": "time", "factor_to_base": 1.0},
            {"name": "millisecond", "kind": "basic", "dimension": "time", "factor_to_base": 0.001},
            {"name": "minute", "kind": "basic", "dimension": "time", "factor_to_base": 60.0},
            {"name": "ratio", "kind": "basic", "dimension": "fraction", "factor_to_base": 1.0},
            {"name": "percent", "kind": "basic", "dimension": "fraction", "factor_to_base": 0.01},
            {"name": "byte", "kind": "basic", "dimension": "data", "factor_to_base": 1.0},
            {"name": "gigabyte", "kind": "basic", "dimension": "data", "factor_to_base": 1e9},
            {"name": "core", "kind": "basic", "dimension": "compute", "factor_to_base": 1.0},
            {"name": "state", "kind": "basic", "dimension": "state", "factor_to_base": 1.0},
            {
                "name": "bytes_per_second",
                "kind": "ratio",
                "dimension": "throughput",
                "factor_to_base": 1.0,
                "composition": {"numerator": ["data"], "denominator": ["time"]},
            },
            {
                "name": "megabytes_per_second",
                "kind": "ratio",
                "dimension": "throughput",
                "factor_to_base": 1e6,
                "composition": {"numerator": ["data"], "denominator": ["time"]},
            },
            {
                "name": "vm_demand",
                "kind": "volume",
                "dimension": "demand",
                "composition": {
                    "numerator": ["compute", "data", "data"],
                    "denominator": [],
                },
            },
        ],
    }


def host_path(index: int) -> str:
    return f"{CLUSTER}/h{index}"


def architecture_document(hosts: int = 2) -> dict:
    """The /dc1 data center: one cluster of ``hosts`` hosts, two sensors per
    host, and a shared network."""
    entities = [
        {
            "name": "/dc1",
            "concept": "DataCenter",
            "description": "primary data center",
            "function": "runs the production fleet",
        },
        {
            "name": CLUSTER,
            "concept": "Cluster",
            "description": "general purpose compute cluster",
            "function": "schedules tenant workloads",
        },
        {
            "name": "/dc1/net",
            "concept": "Network",
            "description": "top of rack switching fabric",
            "function": "connects cluster hosts",
        },
    ]
    relations = [
        ["/dc1", "has", CLUSTER],
        ["/dc1", "has", "/dc1/net"],
    ]
    for i in range(1, hosts + 1):
        host = host_path(i)
        entities.append(
            {
                "name": host,
                "concept": "Host",
                "identity": {"hostname": f"h{i}"},
                "description": f"compute host h{i}",
                "function": "executes virtual machines",
            }
        )
        entities.append(
            {
                "name": f"{host}/hb-sensor",
                "concept": "Sensor",
                "description": "heartbeat watchdog",
                "function": "emits host up and down status transitions",
            }
        )
        entities.append(
            {
                "name": f"{host}/load-sensor",
                "concept": "Sensor",
                "description": "load average probe",
                "function": "samples normalized cpu load",
            }
        )
        relations.append([CLUSTER, "has", host])
        relations.append([host, "has", f"{host}/hb-sensor"])
        relations.append([host, "has", f"{host}/load-sensor"])
        relations.append(["/dc1/net", "connects", host])
    return {"system_id": "dc1", "entities": entities, "relations": relations}


def stream_semantics_documents(database: str = DATABASE, hosts: int = 2) -> list[dict]:
    docs = []
    for i in range(1, hosts + 1):
        host = host_path(i)
        docs.append(
            {
                "database": database,
                "metric": "status",
                "tags": {"host": f"h{i}"},
                "metric_ref": "status",
                "entity": host,
                "unit": "state",
                "missing_data_policy": "interpolate",
                "sensor_entity": f"{host}/hb-sensor",
                "collection_procedure": "watchdog pushes a sample on every state change",
            }
        )
        docs.append(
            {
                "database": database,
                "metric": "load",
                "tags": {"host": f"h{i}"},
                "metric_ref": "load",
                "entity": host,
                "unit": "ratio",
                "missing_data_policy": "interpolate",
                "sensor_entity": f"{host}/load-sensor",
                "timing": {"frequency_ms": 20, "period": "fixed"},
                "collection_procedure": "probe samples /proc load on a fixed cadence",
            }
        )
    return docs


def status_key(database: str, index: int) -> SeriesKey:
    return SeriesKey(database, "status", {"host": f"h{index}"})


def load_key(database: str, index: int) -> SeriesKey:
    return SeriesKey(database, "load", {"host": f"h{index}"})


@dataclass
class CloudFixture:
    """Everything needed to stand up one populated cloud database."""

    database: str
    hosts: int
    window: tuple[int, int]
    ontology: dict
    architecture: dict
    stream_documents: list[dict]
    status_events: dict[str, list[tuple[int, str]]]  # entity path -> events
    loads: dict[str, list[tuple[int, float]]] = field(default_factory=dict)

    def host_paths(self) -> list[str]:
        return [host_path(i) for i in range(1, self.hosts + 1)]

    def lines(self) -> str:
        out = []
        for i in range(1, self.hosts + 1):
            host = host_path(i)
            for ts, label in self.status_events.get(host, []):
                out.append(format_line(status_key(self.database, i), Sample(ts, label)))
            for ts, value in self.loads.get(host, []):
                out.append(format_line(load_key(self.database, i), Sample(ts, value)))
        return "\n".join(out) + "\n"


def scripted_fixture(database: str = DATABASE) -> CloudFixture:
    """The worked two-host scenario. h1 drops out for [60, 80), so its
    availability over [0, 100) is 0.8; h2 stays up for 1.0; the cluster
    mean is 0.9."""
    h1, h2 = host_path(1), host_path(2)
    return CloudFixture(
        database=database,
        hosts=2,
        window=WINDOW,
        ontology=ontology_document(),
        architecture=architecture_document(hosts=2),
        stream_documents=stream_semantics_documents(database, hosts=2),
        status_events={
            h1: [(0, "up"), (60, "down"), (80, "up")],
            h2: [(0, "up")],
        },
        loads={
            h1: [(0, 0.2), (20, 0.4), (40, 0.6), (60, 0.4), (80, 0.4)],
            h2: [(0, 0.1), (20, 0.3), (40, 0.3), (60, 0.1), (80, 0.2)],
        },
    )


def generate_fixture(
    seed: int,
    hosts: int = 2,
    duration_ms: int = 1000,
    database: str = DATABASE,
) -> CloudFixture:
    """Deterministic randomized scenario. Every host starts up at t=0 and
    flips state at random times; loads are sampled on a fixed cadence."""
    if hosts <= 0:
        raise ValueError("need at least one host")
    if duration_ms <= 1:
        raise ValueError("duration must exceed one millisecond")
    rng = random.Random(seed)
    status_events: dict[str, list[tuple[int, str]]] = {}
    loads: dict[str, list[tuple[int, float]]] = {}
    cadence = max(1, duration_ms // 10)
    for i in range(1, hosts + 1):
        host = host_path(i)
        events = [(0, "up")]
        state = "up"
        t = 0
        while True:
            t += rng.randint(1, max(2, duration_ms // 4))
            if t >= duration_ms:
                break
            state = "down" if state == "up" else "up"
            events.append((t, state))
        status_events[host] = events
        loads[host] = [
            (ts, round(rng.random(), 4)) for ts in range(0, duration_ms, cadence)
        ]
    return CloudFixture(
        database=database,
        hosts=hosts,
        window=(0, duration_ms),
        ontology=ontology_document(),
        architecture=architecture_document(hosts=hosts),
        stream_documents=stream_semantics_documents(database, hosts=hosts),
        status_events=status_events,
        loads=loads,
    )


def load_fixture(system: System, fixture: CloudFixture) -> None:
    """Stand the fixture up inside a System: database, descriptions, data."""
    if not system.store.has_database(fixture.database):
        system.create_database(fixture.database)
    system.load_ontology(fixture.ontology)
    system.load_architecture(fixture.database, fixture.architecture)
    for doc in fixture.stream_documents:
        system.register_stream(doc)
    system.write_lines(fixture.database, fixture.lines())


# -- independent oracles ---------------------------------------------------------

def state_scan_up_fraction(
    events: list[tuple[int, str]], t0: int, t1: int
) -> float | None:
    """Walk every millisecond of [t0, t1) and count time spent up. State at
    an instant is the latest event at or before it; instants before any
    event are skipped. None when no instant has a defined state."""
    ordered = sorted(events)
    up = 0
    counted = 0
    index = 0
    state: str | None = None
    for ts, label in ordered:
        if ts <= t0:
            state = label
            index += 1
        else:
            break
    for t in range(t0, t1):
        while index < len(ordered) and ordered[index][0] <= t:
            state = ordered[index][1]
            index += 1
        if state is None:
            continue
        counted += 1
        if state == "up":
            up += 1
    if counted == 0:
        return None
    return up / counted


def cluster_availability_oracle(fixture: CloudFixture, t0: int, t1: int) -> float | None:
    """Mean of per-host per-ms up fractions. None when any host has no
    defined state in the window, mirroring how aggregation drops rows that
    not every part contributes to."""
    fractions = []
    for host in fixture.host_paths():
        fraction = state_scan_up_fraction(fixture.status_events.get(host, []), t0, t1)
        if fraction is None:
            return None
        fractions.append(fraction)
    return sum(fractions) / len(fractions)


@dataclass
class CaseStudyReport:
    value: float
    oracle: float
    explanation: str
    derived_key: SeriesKey
    sources: set[str]  # sensor entity paths backing the answer
    expected_sources: set[str]
    lineage_ok: bool

    @property
    def ok(self) -> bool:
        return abs(self.value - self.oracle) < 1e-9 and self.lineage_ok


def run_case_study(data_dir: str | Path | None = None) -> CaseStudyReport:
    """Stand up the scripted fixture, ask for cluster availability the
    semantic way, materialize the answer, and check its lineage points back
    at exactly the heartbeat sensors."""
    fixture = scripted_fixture()
    system = System(data_dir)
    load_fixture(system, fixture)
    t0, t1 = fixture.window

    query = SemanticQuery(entity=CLUSTER, metric="cluster_availability", window=(t0, t1))
    plan = plan_exact(query, system.catalog, system.ontologies)
    samples = execute(plan, system.store)
    if len(samples) != 1:
        raise AssertionError(f"expected one aggregated sample, got {samples!r}")
    value = samples[0].value

    oracle = cluster_availability_oracle(fixture, t0, t1)
    derived_key = system.materialize_exact(query, plan, samples)

    sources = {
        node.sensor_entity for node in system.lineage_sources(derived_key)
    }
    expected = {f"{host}/hb-sensor" for host in fixture.host_paths()}
    return CaseStudyReport(
        value=value,
        oracle=oracle,
        explanation=plan.explanation,
        derived_key=derived_key,
        sources=sources,
        expected_sources=expected,
        lineage_ok=sources == expected,
    )
