import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from setsdb.errors import (
    DivisionByZero,
    ExpressionParseError,
    KindMismatch,
    UnboundMetric,
    UnsupportedHere,
)
from setsdb.metric_expr import (
    BinOp,
    Call,
    EvalContext,
    Num,
    Ref,
    evaluate,
    format_expr,
    free_metrics,
    has_subentity_call,
    parse_expr,
    referenced_metrics,
    state_arguments,
)
from setsdb.store import Sample


class TestParse:
    def test_precedence(self):
        assert parse_expr("a + b * c") == BinOp("+", Ref("a"), BinOp("*", Ref("b"), Ref("c")))

    def test_left_associativity(self):
        assert parse_expr("a - b - c") == BinOp("-", BinOp("-", Ref("a"), Ref("b")), Ref("c"))

    def test_parens_override(self):
        assert parse_expr("(a + b) * c") == BinOp("*", BinOp("+", Ref("a"), Ref("b")), Ref("c"))

    def test_call(self):
        assert parse_expr("up_ratio(status)") == Call("up_ratio", "status")

    def test_numbers(self):
        assert parse_expr("2") == Num(2.0)
        assert parse_expr("2.5e2") == Num(250.0)

    def test_unknown_function_rejected(self):
        with pytest.raises(ExpressionParseError):
            parse_expr("median(load)")

    def test_dangling_operator_position(self):
        # "a +" has nothing after the operator; the error points past the end.
        with pytest.raises(ExpressionParseError) as err:
            parse_expr("a +")
        assert err.value.position == 3
        assert "(position 3)" in str(err.value)

    def test_trailing_input_position(self):
        with pytest.raises(ExpressionParseError) as err:
            parse_expr("a b")
        assert err.value.position == 2

    def test_bad_character(self):
        with pytest.raises(ExpressionParseError) as err:
            parse_expr("a @ b")
        assert err.value.position == 2

    def test_unclosed_paren(self):
        with pytest.raises(ExpressionParseError):
            parse_expr("(a + b")

    def test_call_needs_identifier(self):
        with pytest.raises(ExpressionParseError):
            parse_expr("up_ratio(2)")


class TestFormat:
    @pytest.mark.parametrize(
        "text",
        [
            "a + b * c",
            "(a + b) * c",
            "a - (b - c)",
            "a - b - c",
            "a / b / c",
            "up_ratio(status)",
            "2 * load + 1",
            "sum_over_subentities(load) / 4",
        ],
    )
    def test_round_trip_preserves_tree(self, text):
        tree = parse_expr(text)
        assert parse_expr(format_expr(tree)) == tree

    def test_integral_numbers_print_bare(self):
        assert format_expr(Num(3.0)) == "3"
        assert format_expr(Num(2.5)) == "2.5"

    def test_minimal_parens(self):
        assert format_expr(parse_expr("a + (b * c)")) == "a + b * c"
        assert format_expr(parse_expr("(a - b) - c")) == "a - b - c"
        assert format_expr(parse_expr("a - (b - c)")) == "a - (b - c)"


class TestIntrospection:
    def test_referenced_metrics_in_order(self):
        tree = parse_expr("b + a * b + up_ratio(c)")
        assert referenced_metrics(tree) == ["b", "a", "c"]
        assert free_metrics(tree) == {"a", "b", "c"}

    def test_has_subentity_call(self):
        assert has_subentity_call(parse_expr("sum_over_subentities(load)"))
        assert has_subentity_call(parse_expr("1 + mean_over_subentities(load)"))
        assert not has_subentity_call(parse_expr("up_ratio(status)"))

    def test_state_arguments(self):
        assert state_arguments(parse_expr("up_ratio(status)")) == {"status"}
        assert state_arguments(parse_expr("a + up_ratio(s) * up_ratio(t)")) == {"s", "t"}
        assert state_arguments(parse_expr("a + b")) == set()
        assert state_arguments(parse_expr("sum_over_subentities(load)")) == set()


def ctx(bindings, policy="interpolate", t0=0, t1=100):
    return EvalContext(t0, t1, bindings, missing_data_policy=policy)


class TestEvaluate:
    def test_constant_collapses_to_window_start(self):
        assert evaluate(parse_expr("2 + 3"), ctx({})) == [Sample(0, 5.0)]

    def test_context_validation(self):
        with pytest.raises(ValueError):
            EvalContext(10, 10, {})
        with pytest.raises(ValueError):
            EvalContext(0, 10, {}, missing_data_policy="drop")

    def test_unbound_reference(self):
        with pytest.raises(UnboundMetric):
            evaluate(parse_expr("load"), ctx({}))

    def test_constant_broadcast_onto_series(self):
        series = [Sample(0, 1.0), Sample(10, 2.0)]
        assert evaluate(parse_expr("load * 2"), ctx({"load": series})) == [
            Sample(0, 2.0),
            Sample(10, 4.0),
        ]
        assert evaluate(parse_expr("10 - load"), ctx({"load": series})) == [
            Sample(0, 9.0),
            Sample(10, 8.0),
        ]

    def test_leftmost_grid_wins(self):
        left = [Sample(0, 1.0), Sample(10, 3.0)]
        right = [Sample(0, 10.0), Sample(5, 20.0), Sample(10, 30.0)]
        out = evaluate(parse_expr("a + b"), ctx({"a": left, "b": right}))
        assert [s.timestamp for s in out] == [0, 10]
        assert out == [Sample(0, 11.0), Sample(10, 33.0)]

    def test_interpolation_fills_gaps(self):
        left = [Sample(5, 1.0)]
        right = [Sample(0, 0.0), Sample(10, 10.0)]
        out = evaluate(parse_expr("a + b"), ctx({"a": left, "b": right}))
        # b linearly interpolated at t=5 gives 5.0; computed by hand.
        assert out == [Sample(5, 6.0)]

    def test_interpolation_does_not_extrapolate(self):
        left = [Sample(50, 1.0)]
        right = [Sample(0, 0.0), Sample(10, 10.0)]
        assert evaluate(parse_expr("a + b"), ctx({"a": left, "b": right})) == []

    def test_ignore_policy_drops_unmatched(self):
        left = [Sample(0, 1.0), Sample(5, 2.0)]
        right = [Sample(0, 10.0), Sample(10, 10.0)]
        out = evaluate(parse_expr("a + b"), ctx({"a": left, "b": right}, policy="ignore"))
        assert out == [Sample(0, 11.0)]

    def test_division_by_zero(self):
        with pytest.raises(DivisionByZero):
            evaluate(parse_expr("1 / 0"), ctx({}))
        with pytest.raises(DivisionByZero):
            evaluate(parse_expr("a / b"), ctx({"a": [Sample(0, 1.0)], "b": [Sample(0, 0.0)]}))

    def test_state_stream_only_usable_by_up_ratio(self):
        with pytest.raises(KindMismatch):
            evaluate(parse_expr("status + 1"), ctx({"status": [Sample(0, "up")]}))

    def test_subentity_call_unsupported_here(self):
        with pytest.raises(UnsupportedHere):
            evaluate(parse_expr("sum_over_subentities(load)"), ctx({"load": []}))


class TestUpRatio:
    def run(self, events, t0=0, t1=100):
        return evaluate(parse_expr("up_ratio(status)"), ctx({"status": events}, t0=t0, t1=t1))

    def test_worked_example(self):
        # up [0,60), down [60,80), up [80,100): 80 of 100 ms up.
        events = [Sample(0, "up"), Sample(60, "down"), Sample(80, "up")]
        assert self.run(events) == [Sample(0, 0.8)]

    def test_always_up(self):
        assert self.run([Sample(0, "up")]) == [Sample(0, 1.0)]

    def test_no_events_is_empty(self):
        assert self.run([]) == []

    def test_prior_event_defines_state_from_t0(self):
        # The last event before the window was "down" at t=-10... using 0 here
        # and reading [50, 100): down the whole way.
        events = [Sample(0, "down")]
        assert self.run(events, t0=50, t1=100) == [Sample(50, 0.0)]

    def test_late_first_event_shrinks_denominator(self):
        # First event at 40; [0, 40) is unknown and excluded on both sides:
        # up 60 of the 60 known ms.
        events = [Sample(40, "up")]
        assert self.run(events) == [Sample(0, 1.0)]

    def test_late_first_event_mixed(self):
        # Known span [40, 100): up [40, 70) = 30 of 60, by hand.
        events = [Sample(40, "up"), Sample(70, "down")]
        assert self.run(events) == [Sample(0, 0.5)]

    def test_events_outside_window_only(self):
        assert self.run([Sample(200, "up")]) == []

    def test_bad_labels_rejected(self):
        with pytest.raises(KindMismatch):
            self.run([Sample(0, "degraded")])
        with pytest.raises(KindMismatch):
            self.run([Sample(0, 1.0)])


# Round-trip property: format then parse reproduces the tree.

_names = st.sampled_from(["a", "b", "load", "cpu_time", "x1"])


def _exprs():
    leaves = st.one_of(
        st.integers(min_value=0, max_value=999).map(lambda n: Num(float(n))),
        _names.map(Ref),
        st.tuples(st.sampled_from(["up_ratio", "sum_over_subentities"]), _names).map(
            lambda t: Call(*t)
        ),
    )
    return st.recursive(
        leaves,
        lambda children: st.tuples(
            st.sampled_from(["+", "-", "*", "/"]), children, children
        ).map(lambda t: BinOp(*t)),
        max_leaves=12,
    )


@settings(max_examples=300, deadline=None)
@given(_exprs())
def test_format_parse_round_trip(tree):
    assert parse_expr(format_expr(tree)) == tree
