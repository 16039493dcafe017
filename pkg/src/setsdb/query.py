"""Text query language.

Three forms, one per line:

    SELECT <db>.<metric>{k=v,...} RANGE <t0> <t1>
    DERIVE metric=<name> entity=<path> [unit=<unit>] [db=<db>] RANGE <t0> <t1>
    MATCH [system~"..."] [entity~"..."] [metric~"..."] [sensor~"..."]
          [top=<k>] [min=<score>] RANGE <t0> <t1>

Keywords are case-insensitive. Timestamps are integer milliseconds and the
range is half open. MATCH needs at least one ~ clause; quoted payloads may
contain spaces.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Union

from .errors import QueryParseError
from .ontology import tokenize
from .reasoning import SemanticQuery, execute, plan_exact
from .similarity import SemanticVector, plan_similarity
from .store import Sample, SeriesKey, format_value

TILDE_CLAUSES = ("system", "entity", "metric", "sensor")
DERIVE_KEYS = ("metric", "entity", "unit", "db")


@dataclass(frozen=True)
class BasicQuery:
    key: SeriesKey
    window: tuple[int, int]

    def __post_init__(self):
        t0, t1 = self.window
        if t0 > t1:
            raise ValueError("window start must not exceed end")
        object.__setattr__(self, "window", (int(t0), int(t1)))


@dataclass(frozen=True)
class ExactQuery:
    query: SemanticQuery


@dataclass(frozen=True)
class SimilarityQuery:
    vector: SemanticVector
    window: tuple[int, int]
    top_k: int | None = None
    min_score: float | None = None

    def __post_init__(self):
        t0, t1 = self.window
        if t0 >= t1:
            raise ValueError("window start must precede end")
        object.__setattr__(self, "window", (int(t0), int(t1)))


Query = Union[BasicQuery, ExactQuery, SimilarityQuery]


class _Scanner:
    """Whitespace-separated tokens with quote support and positions."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _skip_space(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str | None:
        save = self.pos
        token = self.next(optional=True)
        self.pos = save
        return token

    def next(self, optional: bool = False) -> str | None:
        self._skip_space()
        if self.pos >= len(self.text):
            if optional:
                return None
            raise QueryParseError("unexpected end of query", self.pos)
        start = self.pos
        out = []
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch.isspace():
                break
            if ch == '"':
                end = self.text.find('"', self.pos + 1)
                if end < 0:
                    raise QueryParseError("unterminated quote", self.pos)
                out.append(self.text[self.pos + 1 : end])
                self.pos = end + 1
                continue
            out.append(ch)
            self.pos += 1
        token = "".join(out)
        if not token and self.text[start] == '"':
            return ""  # explicit empty quoted payload
        return token

    def expect_end(self) -> None:
        self._skip_space()
        if self.pos < len(self.text):
            raise QueryParseError(
                f"unexpected trailing input {self.text[self.pos:].split()[0]!r}",
                self.pos,
            )

    def fail(self, message: str) -> QueryParseError:
        return QueryParseError(message, self.pos)


def _parse_int(token: str, what: str, pos: int) -> int:
    body = token[1:] if token.startswith("-") else token
    if not body.isdigit():
        raise QueryParseError(f"{what} must be an integer, got {token!r}", pos)
    return int(token)


def _parse_range(scanner: _Scanner) -> tuple[int, int]:
    keyword = scanner.next(optional=True)
    if keyword is None or keyword.upper() != "RANGE":
        raise scanner.fail(f"expected RANGE, got {keyword!r}")
    pos = scanner.pos
    t0 = _parse_int(scanner.next(), "range start", pos)
    pos = scanner.pos
    t1 = _parse_int(scanner.next(), "range end", pos)
    scanner.expect_end()
    return (t0, t1)


def _parse_series_ref(token: str, pos: int) -> SeriesKey:
    body = token
    tags: dict[str, str] = {}
    if "{" in body:
        if not body.endswith("}"):
            raise QueryParseError("tag block must end with '}'", pos)
        body, _, tag_text = body[:-1].partition("{")
        if tag_text:
            for pair in tag_text.split(","):
                name, eq, value = pair.partition("=")
                if not eq or not name or not value:
                    raise QueryParseError(f"bad tag pair {pair!r}", pos)
                tags[name] = value
    database, dot, metric = body.partition(".")
    if not dot or not database or not metric:
        raise QueryParseError(
            f"expected <db>.<metric>, got {body!r}", pos
        )
    try:
        return SeriesKey(database, metric, tags)
    except Exception as exc:
        raise QueryParseError(str(exc), pos) from exc


def parse_query(text: str) -> Query:
    scanner = _Scanner(text)
    head = scanner.next()
    form = head.upper()
    if form == "SELECT":
        pos = scanner.pos
        key = _parse_series_ref(scanner.next(), pos)
        window = _parse_range(scanner)
        try:
            return BasicQuery(key, window)
        except ValueError as exc:
            raise QueryParseError(str(exc), len(text)) from exc
    if form == "DERIVE":
        return _parse_derive(scanner, text)
    if form == "MATCH":
        return _parse_match(scanner, text)
    raise QueryParseError(f"unknown query form {head!r}", 0)


def _parse_derive(scanner: _Scanner, text: str) -> ExactQuery:
    fields: dict[str, str] = {}
    while True:
        token = scanner.peek()
        if token is None:
            raise scanner.fail("expected RANGE")
        if token.upper() == "RANGE":
            break
        pos = scanner.pos
        token = scanner.next()
        name, eq, value = token.partition("=")
        if not eq or name not in DERIVE_KEYS:
            raise QueryParseError(f"expected one of {DERIVE_KEYS} as key=value, got {token!r}", pos)
        if name in fields:
            raise QueryParseError(f"duplicate {name!r}", pos)
        if not value:
            raise QueryParseError(f"empty value for {name!r}", pos)
        fields[name] = value
    for required in ("metric", "entity"):
        if required not in fields:
            raise scanner.fail(f"DERIVE requires {required}=")
    window = _parse_range(scanner)
    try:
        query = SemanticQuery(
            entity=fields["entity"],
            metric=fields["metric"],
            window=window,
            desired_unit=fields.get("unit"),
            database=fields.get("db"),
        )
    except ValueError as exc:
        raise QueryParseError(str(exc), len(text)) from exc
    return ExactQuery(query)


def _parse_match(scanner: _Scanner, text: str) -> SimilarityQuery:
    payloads: dict[str, str] = {}
    top_k: int | None = None
    min_score: float | None = None
    while True:
        token = scanner.peek()
        if token is None:
            raise scanner.fail("expected RANGE")
        if token.upper() == "RANGE":
            break
        pos = scanner.pos
        token = scanner.next()
        if "~" in token:
            name, _, payload = token.partition("~")
            if name not in TILDE_CLAUSES:
                raise QueryParseError(f"unknown attribute {name!r}", pos)
            if name in payloads:
                raise QueryParseError(f"duplicate {name!r} clause", pos)
            payloads[name] = payload
        elif "=" in token:
            name, _, value = token.partition("=")
            if name == "top":
                top_k = _parse_int(value, "top", pos)
                if top_k <= 0:
                    raise QueryParseError("top must be positive", pos)
            elif name == "min":
                try:
                    min_score = float(value)
                except ValueError:
                    raise QueryParseError(f"min must be a number, got {value!r}", pos)
            else:
                raise QueryParseError(f"unknown option {name!r}", pos)
        else:
            raise QueryParseError(f"expected a ~ clause or option, got {token!r}", pos)
    if not payloads:
        raise scanner.fail("MATCH needs at least one ~ clause")
    window = _parse_range(scanner)
    try:
        vector = SemanticVector(
            sys=tokenize(payloads["system"]) if "system" in payloads else None,
            entity=tokenize(payloads["entity"]) if "entity" in payloads else None,
            metric=payloads.get("metric"),
            sensor=tokenize(payloads["sensor"]) if "sensor" in payloads else None,
        )
        return SimilarityQuery(vector, window, top_k, min_score)
    except ValueError as exc:
        raise QueryParseError(str(exc), len(text)) from exc


def print_query(q: Query) -> str:
    """Render a query back to text. parse_query(print_query(q)) == q for
    queries this module can produce."""
    if isinstance(q, BasicQuery):
        return f"SELECT {q.key} RANGE {q.window[0]} {q.window[1]}"
    if isinstance(q, ExactQuery):
        sq = q.query
        parts = [f'DERIVE metric="{sq.metric}" entity="{sq.entity}"']
        if sq.desired_unit is not None:
            parts.append(f'unit="{sq.desired_unit}"')
        if sq.database is not None:
            parts.append(f'db="{sq.database}"')
        parts.append(f"RANGE {sq.window[0]} {sq.window[1]}")
        return " ".join(parts)
    if isinstance(q, SimilarityQuery):
        v = q.vector
        parts = ["MATCH"]
        for name in TILDE_CLAUSES:
            attr = "sys" if name == "system" else name
            value = getattr(v, attr)
            if value is None:
                continue
            if name == "metric":
                payload = value
            else:
                payload = " ".join(sorted(value))
            parts.append(f'{name}~"{payload}"')
        if q.top_k is not None:
            parts.append(f"top={q.top_k}")
        if q.min_score is not None:
            parts.append(f"min={q.min_score!r}")
        parts.append(f"RANGE {q.window[0]} {q.window[1]}")
        return " ".join(parts)
    raise TypeError(f"not a query: {q!r}")


class MatchResult(NamedTuple):
    key: SeriesKey
    score: float
    samples: list[Sample]
    explanation: str


@dataclass(frozen=True)
class QueryResult:
    samples: list[Sample]
    matches: list[MatchResult] | None = None
    explanation: str = ""
    derived_key: SeriesKey | None = None

    def format_samples(self) -> str:
        return "\n".join(f"{s.timestamp} {format_value(s.value)}" for s in self.samples)


def run_query(q: Query, system, materialize: bool = False) -> QueryResult:
    """Evaluate a parsed query against a runtime (something exposing .store,
    .catalog, .ontologies, .sim_config)."""
    if isinstance(q, BasicQuery):
        t0, t1 = q.window
        return QueryResult(list(system.store.read_range(q.key, t0, t1)))
    if isinstance(q, ExactQuery):
        plan = plan_exact(q.query, system.catalog, system.ontologies)
        samples = execute(plan, system.store)
        explanation = plan.explanation
        if not samples:
            explanation = explanation + ("\n" if explanation else "") + "note: no data in window"
        derived_key = None
        if materialize:
            derived_key = system.materialize_exact(q.query, plan, samples)
        return QueryResult(list(samples), explanation=explanation, derived_key=derived_key)
    if isinstance(q, SimilarityQuery):
        cfg = system.sim_config
        if q.top_k is not None or q.min_score is not None:
            overrides = {}
            if q.top_k is not None:
                overrides["top_k"] = q.top_k
            if q.min_score is not None:
                overrides["min_score"] = q.min_score
            cfg = replace(cfg, **overrides)
        matches = plan_similarity(
            q.vector, q.window, cfg, system.catalog, system.ontologies
        )
        results = [
            MatchResult(m.key, m.score, list(execute(m.plan, system.store)), m.plan.explanation)
            for m in matches
        ]
        return QueryResult([], matches=results)
    raise TypeError(f"not a query: {q!r}")
