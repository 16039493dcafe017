"""Append-oriented single-node time series storage.

Streams are keyed by (database, metric, sorted tags). A stream holds either
numeric samples or symbolic state labels; the first write fixes the kind.
Reads cover half-open ranges [t0, t1) over the merge of the raw tier and any
rollup tiers produced by retention. Writes merge on ingest, so out-of-order
and duplicate timestamps are handled with last-write-wins.

Storage is in memory, with optional append-only persistence: one
line-protocol file per stream tier under the store's data directory,
replayed on open. The line protocol is

    <database> <metric> <k1=v1,k2=v2|-> <timestamp_ms> <float | state:LABEL>
"""

from __future__ import annotations

import bisect
import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence, Union

from .errors import (
    DuplicateDatabase,
    InvalidName,
    KindMismatch,
    SchemaError,
    UnknownDatabase,
    UnknownSeries,
)

Value = Union[float, str]

NUMERIC = "numeric"
SYMBOLIC = "symbolic"


class Sample(NamedTuple):
    timestamp: int
    value: Value


def kind_of(value: Value) -> str:
    return SYMBOLIC if isinstance(value, str) else NUMERIC


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


# Values arrive in timestamp order, so "last" is simply the final one.
AGGREGATORS: dict[str, Callable[[Sequence[float]], float]] = {
    "mean": _mean,
    "min": min,
    "max": max,
    "last": lambda values: values[-1],
    "count": lambda values: float(len(values)),
}

# Characters that would break the line protocol or the query grammar.
_RESERVED = set(" \t\n\r{},")


def _check_name(text: str, what: str, extra_reserved: str = "") -> str:
    if not isinstance(text, str) or not text:
        raise InvalidName(f"{what} must be a non-empty string")
    bad = _RESERVED.union(extra_reserved)
    if any(c in bad for c in text):
        raise InvalidName(f"{what} {text!r} contains reserved characters")
    return text


@dataclass(frozen=True, order=True)
class SeriesKey:
    """Identity of one stream. Tags are kept sorted so equal keys compare equal
    and keys order canonically by (database, metric, tags)."""

    database: str
    metric: str
    tags: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        _check_name(self.database, "database name", extra_reserved=".")
        _check_name(self.metric, "metric name")
        raw = self.tags
        pairs = list(raw.items()) if isinstance(raw, Mapping) else [tuple(p) for p in raw]
        for pair in pairs:
            if len(pair) != 2:
                raise InvalidName(f"tag {pair!r} is not a key=value pair")
            _check_name(pair[0], "tag key", extra_reserved="=")
            _check_name(pair[1], "tag value", extra_reserved="=")
        if len({k for k, _ in pairs}) != len(pairs):
            raise InvalidName("duplicate tag keys")
        object.__setattr__(self, "tags", tuple(sorted(pairs)))

    def tag_dict(self) -> dict[str, str]:
        return dict(self.tags)

    def __str__(self) -> str:
        if not self.tags:
            return f"{self.database}.{self.metric}"
        tags = ",".join(f"{k}={v}" for k, v in self.tags)
        return f"{self.database}.{self.metric}{{{tags}}}"


@dataclass(frozen=True)
class Rollup:
    window_ms: int
    aggregator: str
    keep_duration_ms: int | None = None  # None keeps the tier forever

    def __post_init__(self):
        if self.window_ms <= 0:
            raise SchemaError("rollup window must be positive")
        if self.aggregator not in AGGREGATORS:
            raise SchemaError(f"unknown aggregator {self.aggregator!r}")
        if self.keep_duration_ms is not None and self.keep_duration_ms <= 0:
            raise SchemaError("rollup keep duration must be positive")


@dataclass(frozen=True)
class RetentionPolicy:
    """How long raw samples live and what they collapse into afterwards.

    ``raw_duration`` of None means raw samples are kept forever. Rollup
    windows must be strictly increasing so each tier is coarser than the
    one before it.
    """

    raw_duration: int | None = None
    rollups: tuple[Rollup, ...] = ()

    def __post_init__(self):
        if self.raw_duration is not None and self.raw_duration <= 0:
            raise SchemaError("raw_duration must be positive")
        rollups = tuple(
            r if isinstance(r, Rollup) else Rollup(*r) for r in self.rollups
        )
        object.__setattr__(self, "rollups", rollups)
        windows = [r.window_ms for r in rollups]
        if any(b <= a for a, b in zip(windows, windows[1:])):
            raise SchemaError("rollup windows must be strictly increasing")

    def to_document(self) -> dict:
        return {
            "raw_duration": self.raw_duration,
            "rollups": [[r.window_ms, r.aggregator, r.keep_duration_ms] for r in self.rollups],
        }

    @classmethod
    def from_document(cls, doc: Mapping) -> "RetentionPolicy":
        if not isinstance(doc, Mapping):
            raise SchemaError("retention document must be an object")
        rollups = tuple(Rollup(*r) for r in doc.get("rollups", []))
        return cls(raw_duration=doc.get("raw_duration"), rollups=rollups)

    @classmethod
    def parse_spec(cls, text: str) -> "RetentionPolicy":
        """Parse the compact CLI form, e.g. ``raw:86400000,rollup:60000:mean:inf``."""
        raw: int | None = None
        rollups: list[Rollup] = []
        for part in filter(None, (p.strip() for p in text.split(","))):
            fields = part.split(":")
            if fields[0] == "raw" and len(fields) == 2:
                raw = None if fields[1] == "inf" else int(fields[1])
            elif fields[0] == "rollup" and len(fields) == 4:
                keep = None if fields[3] == "inf" else int(fields[3])
                rollups.append(Rollup(int(fields[1]), fields[2], keep))
            else:
                raise SchemaError(f"bad retention component {part!r}")
        return cls(raw_duration=raw, rollups=tuple(rollups))


def downsample(points: Sequence[Sample], window_ms: int, aggregator: str) -> list[Sample]:
    """Aggregate numeric samples into windows [n*w, (n+1)*w), one output sample
    per non-empty window, timestamped at the window start."""
    if window_ms <= 0:
        raise ValueError("window_ms must be positive")
    agg = AGGREGATORS.get(aggregator)
    if agg is None:
        raise ValueError(f"unknown aggregator {aggregator!r}")
    ordered = sorted(points)
    groups: dict[int, list[float]] = {}
    for ts, value in ordered:
        if isinstance(value, str):
            raise KindMismatch("cannot downsample a symbolic stream")
        groups.setdefault((ts // window_ms) * window_ms, []).append(float(value))
    return [Sample(start, agg(groups[start])) for start in sorted(groups)]


def _merge_lww(existing: list[Sample], incoming: Iterable[Sample]) -> list[Sample]:
    by_ts = {s.timestamp: s.value for s in existing}
    for s in incoming:
        by_ts[s.timestamp] = s.value
    return [Sample(t, by_ts[t]) for t in sorted(by_ts)]


# -- line protocol -------------------------------------------------------------

def format_value(value: Value) -> str:
    if isinstance(value, str):
        _check_name(value, "state label", extra_reserved="=.")
        return f"state:{value}"
    return repr(float(value))


def format_line(key: SeriesKey, sample: Sample) -> str:
    tags = ",".join(f"{k}={v}" for k, v in key.tags) or "-"
    return f"{key.database} {key.metric} {tags} {sample.timestamp} {format_value(sample.value)}"


def format_lines(key: SeriesKey, samples: Iterable[Sample]) -> list[str]:
    return [format_line(key, s) for s in samples]


def parse_line(line: str) -> tuple[SeriesKey, Sample]:
    parts = line.split()
    if len(parts) != 5:
        raise SchemaError(f"line must have 5 fields, got {len(parts)}: {line!r}")
    database, metric, tagtext, tstext, valtext = parts
    tags: list[tuple[str, str]] = []
    if tagtext != "-":
        for item in tagtext.split(","):
            if "=" not in item:
                raise SchemaError(f"bad tag {item!r} in line {line!r}")
            k, _, v = item.partition("=")
            tags.append((k, v))
    try:
        timestamp = int(tstext)
    except ValueError:
        raise SchemaError(f"bad timestamp {tstext!r} in line {line!r}") from None
    value: Value
    if valtext.startswith("state:"):
        value = valtext[len("state:"):]
        if not value:
            raise SchemaError(f"empty state label in line {line!r}")
    else:
        try:
            value = float(valtext)
        except ValueError:
            raise SchemaError(f"bad value {valtext!r} in line {line!r}") from None
    return SeriesKey(database, metric, tuple(tags)), Sample(timestamp, value)


def parse_lines(text_or_lines: str | Iterable[str]) -> list[tuple[SeriesKey, Sample]]:
    lines = text_or_lines.splitlines() if isinstance(text_or_lines, str) else text_or_lines
    out = []
    for i, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            out.append(parse_line(line))
        except SchemaError as exc:
            raise SchemaError(f"line {i}: {exc}") from None
    return out


# -- store ---------------------------------------------------------------------

class _Stream:
    __slots__ = ("key", "kind", "tiers")

    def __init__(self, key: SeriesKey, kind: str):
        self.key = key
        self.kind = kind
        # tiers[0] is raw; tiers[i] holds the output of rollup level i-1.
        self.tiers: list[list[Sample]] = [[]]

    def total(self) -> int:
        return sum(len(t) for t in self.tiers)


@dataclass
class Database:
    name: str
    retention: RetentionPolicy = field(default_factory=RetentionPolicy)
    _streams: dict[SeriesKey, _Stream] = field(default_factory=dict, repr=False)


class BaseStore:
    """In-memory multi-database store with optional file persistence.

    A single lock guards mutation; reads hand back fresh lists, so callers
    see a stable snapshot regardless of later writes.
    """

    def __init__(self, data_dir: str | Path | None = None):
        self._dbs: dict[str, Database] = {}
        self._lock = threading.RLock()
        self._dir = Path(data_dir) if data_dir is not None else None
        if self._dir is not None:
            self._dir.mkdir(parents=True, exist_ok=True)
            self._replay()

    # -- database lifecycle

    def create_database(self, name: str, retention: RetentionPolicy | None = None) -> Database:
        _check_name(name, "database name", extra_reserved=".")
        with self._lock:
            if name in self._dbs:
                raise DuplicateDatabase(f"database {name!r} already exists")
            db = Database(name, retention or RetentionPolicy())
            self._dbs[name] = db
            self._save_registry()
            return db

    def database(self, name: str) -> Database:
        try:
            return self._dbs[name]
        except KeyError:
            raise UnknownDatabase(f"no database named {name!r}") from None

    def has_database(self, name: str) -> bool:
        return name in self._dbs

    def databases(self) -> list[str]:
        return sorted(self._dbs)

    def _resolve(self, db: Database | str) -> Database:
        return db if isinstance(db, Database) else self.database(db)

    # -- writes and reads

    def write_points(self, key: SeriesKey, points: Sequence[Sample]) -> int:
        """Merge points into the stream; returns the number of distinct
        timestamps ingested. The first write fixes the stream kind."""
        with self._lock:
            db = self.database(key.database)
            if not points:
                return 0
            normalized: dict[int, Value] = {}
            kinds = set()
            for p in points:
                ts, value = p
                kinds.add(kind_of(value))
                normalized[int(ts)] = value if isinstance(value, str) else float(value)
            if len(kinds) > 1:
                raise KindMismatch("cannot mix numeric and state samples in one write")
            batch_kind = kinds.pop()
            stream = db._streams.get(key)
            if stream is None:
                stream = db._streams[key] = _Stream(key, batch_kind)
            elif stream.kind != batch_kind:
                raise KindMismatch(
                    f"stream {key} holds {stream.kind} samples, write is {batch_kind}"
                )
            batch = [Sample(t, normalized[t]) for t in sorted(normalized)]
            stream.tiers[0] = _merge_lww(stream.tiers[0], batch)
            self._append(db, stream, batch)
            return len(batch)

    def read_range(self, key: SeriesKey, t0: int, t1: int) -> list[Sample]:
        """All samples with t0 <= timestamp < t1, ascending. Half-open, so
        adjacent ranges tile with no overlap."""
        if t0 > t1:
            raise ValueError("t0 must be <= t1")
        with self._lock:
            db = self._dbs.get(key.database)
            stream = db._streams.get(key) if db is not None else None
            if stream is None:
                raise UnknownSeries(f"no series {key}")
            # Finer tiers win if a timestamp somehow appears twice.
            seen: dict[int, Value] = {}
            for tier in reversed(stream.tiers):
                lo = bisect.bisect_left(tier, t0, key=lambda s: s.timestamp)
                hi = bisect.bisect_left(tier, t1, key=lambda s: s.timestamp)
                for s in tier[lo:hi]:
                    seen[s.timestamp] = s.value
            return [Sample(t, seen[t]) for t in sorted(seen)]

    def latest_before(self, key: SeriesKey, t: int) -> Sample | None:
        """The newest sample with timestamp strictly before t, or None.

        Lets callers recover state that carries into a window, e.g. the
        up/down transition a host made before the window opened. Finer tiers
        win timestamp ties, matching read_range."""
        with self._lock:
            db = self._dbs.get(key.database)
            stream = db._streams.get(key) if db is not None else None
            if stream is None:
                raise UnknownSeries(f"no series {key}")
            best: Sample | None = None
            for tier in reversed(stream.tiers):
                i = bisect.bisect_left(tier, t, key=lambda s: s.timestamp)
                if i > 0 and (best is None or tier[i - 1].timestamp >= best.timestamp):
                    best = tier[i - 1]
            return best

    def has_series(self, key: SeriesKey) -> bool:
        db = self._dbs.get(key.database)
        return db is not None and key in db._streams

    def series_kind(self, key: SeriesKey) -> str:
        db = self._dbs.get(key.database)
        stream = db._streams.get(key) if db is not None else None
        if stream is None:
            raise UnknownSeries(f"no series {key}")
        return stream.kind

    def list_series(self, db: Database | str) -> list[SeriesKey]:
        with self._lock:
            return sorted(self._resolve(db)._streams)

    # -- retention

    def apply_retention(self, db: Database | str, now: int) -> int:
        """Evict raw samples past the policy horizon into rollup tiers and
        expire old rollups. Returns the net drop in stored sample count."""
        with self._lock:
            database = self._resolve(db)
            dropped = 0
            for stream in database._streams.values():
                dropped += self._retain_stream(database, stream, now)
            return dropped

    def _retain_stream(self, database: Database, stream: _Stream, now: int) -> int:
        policy = database.retention
        before = stream.total()
        while len(stream.tiers) < len(policy.rollups) + 1:
            stream.tiers.append([])
        changed = False

        def split(samples: list[Sample], cutoff: int) -> tuple[list[Sample], list[Sample]]:
            i = bisect.bisect_left(samples, cutoff, key=lambda s: s.timestamp)
            return samples[:i], samples[i:]

        if policy.raw_duration is not None:
            cutoff = now - policy.raw_duration
            fold = bool(policy.rollups) and stream.kind == NUMERIC
            if fold:
                # Only whole windows are evicted, so a window is folded at
                # most once and refolds cannot corrupt earlier aggregates.
                w = policy.rollups[0].window_ms
                cutoff = (cutoff // w) * w
            evicted, kept = split(stream.tiers[0], cutoff)
            if evicted:
                stream.tiers[0] = kept
                changed = True
                if fold:
                    first = policy.rollups[0]
                    folded = downsample(evicted, first.window_ms, first.aggregator)
                    stream.tiers[1] = _merge_lww(stream.tiers[1], folded)

        for level, rollup in enumerate(policy.rollups):
            if rollup.keep_duration_ms is None:
                continue
            tier_index = level + 1
            cutoff = now - rollup.keep_duration_ms
            nxt = policy.rollups[level + 1] if level + 1 < len(policy.rollups) else None
            if nxt is not None:
                cutoff = (cutoff // nxt.window_ms) * nxt.window_ms
            evicted, kept = split(stream.tiers[tier_index], cutoff)
            if evicted:
                stream.tiers[tier_index] = kept
                changed = True
                if nxt is not None:
                    folded = downsample(evicted, nxt.window_ms, nxt.aggregator)
                    stream.tiers[tier_index + 1] = _merge_lww(stream.tiers[tier_index + 1], folded)

        if changed:
            self._rewrite(database, stream)
        return before - stream.total()

    # -- persistence

    def _db_dir(self, database: Database) -> Path:
        assert self._dir is not None
        return self._dir / database.name

    def _stream_path(self, database: Database, key: SeriesKey, tier: int) -> Path:
        digest = hashlib.sha1(str(key).encode()).hexdigest()[:20]
        suffix = ".lp" if tier == 0 else f".t{tier}.lp"
        return self._db_dir(database) / f"{digest}{suffix}"

    def _append(self, database: Database, stream: _Stream, batch: Sequence[Sample]) -> None:
        if self._dir is None:
            return
        path = self._stream_path(database, stream.key, 0)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a", encoding="utf-8") as fh:
            for sample in batch:
                fh.write(format_line(stream.key, sample) + "\n")

    def _rewrite(self, database: Database, stream: _Stream) -> None:
        if self._dir is None:
            return
        for tier_index, tier in enumerate(stream.tiers):
            path = self._stream_path(database, stream.key, tier_index)
            if not tier:
                path.unlink(missing_ok=True)
                continue
            path.parent.mkdir(parents=True, exist_ok=True)
            text = "".join(format_line(stream.key, s) + "\n" for s in tier)
            path.write_text(text, encoding="utf-8")

    def _save_registry(self) -> None:
        if self._dir is None:
            return
        doc = {name: db.retention.to_document() for name, db in self._dbs.items()}
        (self._dir / "databases.json").write_text(
            json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8"
        )

    def _replay(self) -> None:
        registry = self._dir / "databases.json"
        if not registry.exists():
            return
        doc = json.loads(registry.read_text(encoding="utf-8"))
        for name in sorted(doc):
            self._dbs[name] = Database(name, RetentionPolicy.from_document(doc[name]))
        for name, database in self._dbs.items():
            db_dir = self._dir / name
            if not db_dir.is_dir():
                continue
            for path in sorted(db_dir.glob("*.lp")):
                stem = path.name.split(".", 1)[0]
                rest = path.name[len(stem):]
                tier_index = 0 if rest == ".lp" else int(rest[2: rest.index(".lp")])
                for key, sample in parse_lines(path.read_text(encoding="utf-8")):
                    stream = database._streams.get(key)
                    if stream is None:
                        stream = database._streams[key] = _Stream(key, kind_of(sample.value))
                    elif stream.kind != kind_of(sample.value):
                        raise KindMismatch(f"persisted stream {key} mixes kinds")
                    while len(stream.tiers) <= tier_index:
                        stream.tiers.append([])
                    stream.tiers[tier_index] = _merge_lww(
                        stream.tiers[tier_index], [sample]
                    )
