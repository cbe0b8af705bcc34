import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memsolve.exprs import (
    Binary,
    Const,
    DomainError,
    ExprSyntaxError,
    Unary,
    UnknownVariableError,
    Var,
    count_constants,
    eval_expr,
    eval_expr_array,
    eval_expr_array_clamped,
    map_constants,
    parse_expr,
    pretty,
    substitute,
    variables,
)

ALL = {"t", "s", "v", "omega"}


def test_parse_memductance_has_three_summands():
    e = parse_expr("-2 + 0.001*v + exp(-t)*omega", {"t", "v", "omega"})
    # ((-2 + 0.001*v) + exp(-t)*omega): two nested additions
    assert isinstance(e, Binary) and e.op == "add"
    assert isinstance(e.lhs, Binary) and e.lhs.op == "add"
    assert e.lhs.lhs == Unary("neg", Const(2.0))
    assert e.lhs.rhs == Binary("mul", Const(0.001), Var("v"))
    assert e.rhs == Binary("mul", Unary("exp", Unary("neg", Var("t"))), Var("omega"))


def test_parse_ln_squared():
    e = parse_expr("ln(v)^2", {"v"})
    assert e == Binary("pow", Unary("ln", Var("v")), Const(2.0))


def test_unknown_variable_rejected():
    with pytest.raises(UnknownVariableError) as exc:
        parse_expr("v + s", {"v"})
    assert exc.value.name == "s"
    assert exc.value.offset == 4


def test_syntax_error_reports_offset():
    with pytest.raises(ExprSyntaxError) as exc:
        parse_expr("1 + * 2", ALL)
    assert exc.value.offset == 4


@pytest.mark.parametrize(
    "src",
    ["", "exp", "exp 3", "(1 + 2", "1 2", "1 +", "0x12", "1_000", "t(3)"],
)
def test_rejected_sources(src):
    with pytest.raises(ExprSyntaxError):
        parse_expr(src, ALL)


def test_precedence_mul_over_add():
    assert parse_expr("t+s*v", ALL) == parse_expr("t+(s*v)", ALL)


def test_precedence_pow_over_unary_minus():
    assert parse_expr("-t^2", ALL) == Unary("neg", Binary("pow", Var("t"), Const(2.0)))


def test_pow_left_associative():
    e = parse_expr("2^3^2", ALL)
    assert e == Binary("pow", Binary("pow", Const(2.0), Const(3.0)), Const(2.0))
    assert eval_expr(e, {}) == 64.0


def test_left_associativity_sub_div():
    assert eval_expr(parse_expr("8 - 3 - 1", ALL), {}) == 4.0
    assert eval_expr(parse_expr("8 / 4 / 2", ALL), {}) == 1.0


def test_eval_examples():
    assert eval_expr(parse_expr("exp(-t)", {"t"}), {"t": 0.0}) == 1.0
    g = parse_expr("-2 + 0.001*v + exp(-t)*omega", {"t", "v", "omega"})
    assert eval_expr(g, {"t": 0.0, "v": 0.0, "omega": 0.0}) == -2.0


def test_eval_domain_errors():
    with pytest.raises(DomainError):
        eval_expr(parse_expr("ln(v)", {"v"}), {"v": 0.0})
    with pytest.raises(DomainError):
        eval_expr(parse_expr("1/t", {"t"}), {"t": 0.0})
    with pytest.raises(DomainError):
        eval_expr(parse_expr("sqrt(t)", {"t"}), {"t": -1.0})
    with pytest.raises(DomainError):
        eval_expr(parse_expr("exp(t)", {"t"}), {"t": 1000.0})
    with pytest.raises(DomainError):
        eval_expr(parse_expr("t^0.5", {"t"}), {"t": -2.0})


def test_eval_is_deterministic():
    e = parse_expr("sin(t) + cos(s)*sqrt(v) - abs(omega)^2", ALL)
    b = {"t": 0.3, "s": -1.2, "v": 2.0, "omega": -0.7}
    assert eval_expr(e, b) == eval_expr(e, b)


def test_eval_array_matches_scalar():
    import numpy as np

    e = parse_expr("exp(-t)*t/(1+t)", {"t"})
    ts = np.linspace(0.0, 3.0, 7)
    arr = eval_expr_array(e, {"t": ts})
    for ti, ai in zip(ts, arr):
        assert ai == pytest.approx(eval_expr(e, {"t": ti}), abs=0.0, rel=1e-15)


def test_eval_array_clamped_counts():
    import numpy as np

    e = parse_expr("ln(v)", {"v"})
    vals, clamps = eval_expr_array_clamped(e, {"v": np.array([1.0, 1e-12, 0.5])}, 1e-9)
    assert clamps == 1
    assert vals[1] == pytest.approx(math.log(1e-9))
    with pytest.raises(DomainError):
        eval_expr_array(e, {"v": np.array([1.0, 0.0])})


def test_variables_and_substitute():
    e = parse_expr("exp(s)*s/(1+s)", {"s"})
    assert variables(e) == {"s"}
    et = substitute(e, {"s": Var("t")})
    assert variables(et) == {"t"}
    assert et == parse_expr("exp(t)*t/(1+t)", {"t"})
    assert pretty(et) == "exp(t)*t/(1 + t)"


def test_map_constants_preorder():
    e = parse_expr("-2 + 0.001*v + exp(-t)*omega", {"t", "v", "omega"})
    assert count_constants(e) == 2
    seen = []
    e2 = map_constants(e, lambda i, c: seen.append((i, c)) or c * 2)
    assert seen == [(0, 2.0), (1, 0.001)]
    assert eval_expr(e2, {"t": 0.0, "v": 0.0, "omega": 0.0}) == -4.0


# --- round-trip property -----------------------------------------------------

_vars = st.sampled_from(["t", "s", "v", "omega"])
_consts = st.floats(min_value=0.0, max_value=1e6, allow_nan=False, allow_infinity=False)


def _exprs(depth):
    if depth == 0:
        return st.one_of(_consts.map(Const), _vars.map(Var))
    sub = _exprs(depth - 1)
    return st.one_of(
        _consts.map(Const),
        _vars.map(Var),
        st.tuples(st.sampled_from(["neg", "exp", "ln", "sin", "cos", "sqrt", "abs"]), sub).map(
            lambda p: Unary(*p)
        ),
        st.tuples(st.sampled_from(["add", "sub", "mul", "div", "pow"]), sub, sub).map(
            lambda p: Binary(*p)
        ),
    )


@settings(max_examples=300, deadline=None)
@given(_exprs(4))
def test_pretty_parse_round_trip(e):
    assert parse_expr(pretty(e), ALL) == e


@settings(max_examples=100, deadline=None)
@given(_exprs(3))
def test_pretty_is_stable(e):
    assert pretty(parse_expr(pretty(e), ALL)) == pretty(e)
