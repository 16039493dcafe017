"""Expression language for quantitative metric definitions.

Grammar:

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := NUMBER | IDENT | IDENT '(' IDENT ')' | '(' expr ')'

The only callable identifiers are the builtins ``up_ratio``,
``sum_over_subentities`` and ``mean_over_subentities``. Evaluation combines
bound series pointwise; the timestamp grid of the leftmost series operand
wins and other operands are aligned to it per the missing-data policy.
"""

from __future__ import annotations

import bisect
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

from .errors import (
    DivisionByZero,
    ExpressionParseError,
    KindMismatch,
    UnboundMetric,
    UnsupportedHere,
)
from .store import Sample

UP_RATIO = "up_ratio"
SUM_OVER = "sum_over_subentities"
MEAN_OVER = "mean_over_subentities"
BUILTINS = (UP_RATIO, SUM_OVER, MEAN_OVER)
SUBENTITY_BUILTINS = (SUM_OVER, MEAN_OVER)

INTERPOLATE = "interpolate"
IGNORE = "ignore"
POLICIES = (INTERPOLATE, IGNORE)


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class Call:
    func: str
    arg: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Num, Ref, Call, BinOp]


_TOKEN = re.compile(
    r"(?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/()])"
)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            if text[pos].isspace():
                pos += 1
                continue
            m = _TOKEN.match(text, pos)
            if m is None:
                raise ExpressionParseError(f"unexpected character {text[pos]!r}", pos)
            self.tokens.append((m.lastgroup, m.group(), pos))
            pos = m.end()
        self.index = 0

    def peek(self) -> tuple[str, str, int] | None:
        return self.tokens[self.index] if self.index < len(self.tokens) else None

    def take(self) -> tuple[str, str, int] | None:
        tok = self.peek()
        if tok is not None:
            self.index += 1
        return tok

    def fail(self, message: str) -> None:
        tok = self.peek()
        position = tok[2] if tok is not None else len(self.text)
        raise ExpressionParseError(message, position)

    def expect_op(self, op: str) -> None:
        tok = self.peek()
        if tok is None or tok[0] != "op" or tok[1] != op:
            self.fail(f"expected {op!r}")
        self.take()

    def expr(self) -> Expr:
        node = self.term()
        while (tok := self.peek()) is not None and tok[0] == "op" and tok[1] in "+-":
            self.take()
            node = BinOp(tok[1], node, self.term())
        return node

    def term(self) -> Expr:
        node = self.factor()
        while (tok := self.peek()) is not None and tok[0] == "op" and tok[1] in "*/":
            self.take()
            node = BinOp(tok[1], node, self.factor())
        return node

    def factor(self) -> Expr:
        tok = self.peek()
        if tok is None:
            self.fail("expected an operand")
        kind, text, position = tok
        if kind == "num":
            self.take()
            return Num(float(text))
        if kind == "ident":
            self.take()
            nxt = self.peek()
            if nxt is not None and nxt[0] == "op" and nxt[1] == "(":
                if text not in BUILTINS:
                    raise ExpressionParseError(f"unknown function {text!r}", position)
                self.take()
                arg = self.peek()
                if arg is None or arg[0] != "ident":
                    self.fail("expected a metric name")
                self.take()
                self.expect_op(")")
                return Call(text, arg[1])
            return Ref(text)
        if kind == "op" and text == "(":
            self.take()
            node = self.expr()
            self.expect_op(")")
            return node
        self.fail(f"unexpected {text!r}")


def parse_expr(text: str) -> Expr:
    parser = _Parser(text)
    node = parser.expr()
    if parser.peek() is not None:
        parser.fail("trailing input")
    return node


_LEVEL = {"+": 1, "-": 1, "*": 2, "/": 2}


def format_expr(e: Expr) -> str:
    """Print with the fewest parentheses that still reparse to the same tree."""
    if isinstance(e, Num):
        if e.value == int(e.value) and abs(e.value) < 1e15:
            return str(int(e.value))
        return repr(e.value)
    if isinstance(e, Ref):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({e.arg})"
    level = _LEVEL[e.op]

    def wrap(child: Expr, right_side: bool) -> str:
        text = format_expr(child)
        if isinstance(child, BinOp):
            child_level = _LEVEL[child.op]
            # The grammar is left-associative, so a right child at the same
            # level needs parentheses to survive a round trip.
            if child_level < level or (right_side and child_level == level):
                return f"({text})"
        return text

    return f"{wrap(e.left, False)} {e.op} {wrap(e.right, True)}"


def referenced_metrics(e: Expr) -> list[str]:
    """Identifiers referenced by the expression, in order of first appearance."""
    out: list[str] = []

    def walk(node: Expr) -> None:
        if isinstance(node, Ref):
            if node.name not in out:
                out.append(node.name)
        elif isinstance(node, Call):
            if node.arg not in out:
                out.append(node.arg)
        elif isinstance(node, BinOp):
            walk(node.left)
            walk(node.right)

    walk(e)
    return out


def free_metrics(e: Expr) -> set[str]:
    return set(referenced_metrics(e))


def state_arguments(e: Expr) -> set[str]:
    """Metric names the expression feeds to up_ratio. Their series carry
    state across the window edge, so readers should include the last event
    before the window too."""
    if isinstance(e, Call):
        return {e.arg} if e.func == UP_RATIO else set()
    if isinstance(e, BinOp):
        return state_arguments(e.left) | state_arguments(e.right)
    return set()


def has_subentity_call(e: Expr) -> bool:
    if isinstance(e, Call):
        return e.func in SUBENTITY_BUILTINS
    if isinstance(e, BinOp):
        return has_subentity_call(e.left) or has_subentity_call(e.right)
    return False


@dataclass(frozen=True)
class EvalContext:
    t0: int
    t1: int
    bindings: Mapping[str, Sequence[Sample]] = field(default_factory=dict)
    missing_data_policy: str = INTERPOLATE

    def __post_init__(self):
        if self.t0 >= self.t1:
            raise ValueError("evaluation window must satisfy t0 < t1")
        if self.missing_data_policy not in POLICIES:
            raise ValueError(f"unknown missing-data policy {self.missing_data_policy!r}")


def evaluate(e: Expr, ctx: EvalContext) -> list[Sample]:
    """Evaluate to a numeric series. A purely constant expression collapses to
    a single sample at the window start."""
    value = _eval(e, ctx)
    if isinstance(value, float):
        return [Sample(ctx.t0, value)]
    return value


def _eval(e: Expr, ctx: EvalContext) -> Union[float, list[Sample]]:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Ref):
        series = _bound(e.name, ctx)
        for s in series:
            if isinstance(s.value, str):
                raise KindMismatch(
                    f"metric {e.name!r} is a state stream; only {UP_RATIO} accepts it"
                )
        return list(series)
    if isinstance(e, Call):
        if e.func in SUBENTITY_BUILTINS:
            raise UnsupportedHere(
                f"{e.func} is resolved by query planning, not direct evaluation"
            )
        return _up_ratio(_bound(e.arg, ctx), ctx.t0, ctx.t1)
    return _binop(e, ctx)


def _bound(name: str, ctx: EvalContext) -> Sequence[Sample]:
    try:
        return ctx.bindings[name]
    except KeyError:
        raise UnboundMetric(f"no series bound for metric {name!r}") from None


def _apply(op: str, a: float, b: float) -> float:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if b == 0.0:
        raise DivisionByZero("division by zero during evaluation")
    return a / b


def _binop(e: BinOp, ctx: EvalContext) -> Union[float, list[Sample]]:
    left = _eval(e.left, ctx)
    right = _eval(e.right, ctx)
    if isinstance(left, float) and isinstance(right, float):
        return _apply(e.op, left, right)
    if isinstance(right, float):
        assert isinstance(left, list)
        return [Sample(t, _apply(e.op, v, right)) for t, v in left]
    if isinstance(left, float):
        assert isinstance(right, list)
        return [Sample(t, _apply(e.op, left, v)) for t, v in right]
    out: list[Sample] = []
    timestamps = [s.timestamp for s in right]
    for t, v in left:
        other = _value_at(right, timestamps, t, ctx.missing_data_policy)
        if other is None:
            continue
        out.append(Sample(t, _apply(e.op, v, other)))
    return out


def _value_at(
    series: list[Sample], timestamps: list[int], t: int, policy: str
) -> float | None:
    i = bisect.bisect_left(timestamps, t)
    if i < len(timestamps) and timestamps[i] == t:
        return float(series[i].value)
    if policy == IGNORE:
        return None
    if i == 0 or i == len(timestamps):
        return None  # outside the operand's support, nothing to interpolate
    t_lo, v_lo = series[i - 1]
    t_hi, v_hi = series[i]
    frac = (t - t_lo) / (t_hi - t_lo)
    return float(v_lo) + (float(v_hi) - float(v_lo)) * frac


def _up_ratio(events: Sequence[Sample], t0: int, t1: int) -> list[Sample]:
    """Fraction of [t0, t1) spent in state "up".

    The state at any instant is the most recent event at or before it. When
    no event precedes the window, the stretch before the first in-window
    event is excluded from both numerator and denominator. With no usable
    events at all the ratio is undefined and the result is empty.
    """
    ordered = sorted(events)
    for _, label in ordered:
        if not isinstance(label, str):
            raise KindMismatch(f"{UP_RATIO} needs a state stream, got a numeric sample")
        if label not in ("up", "down"):
            raise KindMismatch(f"{UP_RATIO} only understands up/down, got {label!r}")
    timestamps = [s.timestamp for s in ordered]
    i = bisect.bisect_right(timestamps, t0) - 1
    if i >= 0:
        start = t0
        state = ordered[i].value
        next_index = i + 1
    else:
        next_index = bisect.bisect_right(timestamps, t0)
        if next_index >= len(ordered) or ordered[next_index].timestamp >= t1:
            return []
        start = ordered[next_index].timestamp
        state = ordered[next_index].value
        next_index += 1
    up_ms = 0
    cursor = start
    for ts, label in ordered[next_index:]:
        if ts >= t1:
            break
        if state == "up":
            up_ms += ts - cursor
        cursor = ts
        state = label
    if state == "up":
        up_ms += t1 - cursor
    return [Sample(t0, up_ms / (t1 - start))]
