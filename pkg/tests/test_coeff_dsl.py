import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vwsolve.coeff_dsl import (
    Atom,
    BinOp,
    Call,
    DSLError,
    Num,
    Pow,
    Var,
    eval_node,
    eval_smooth,
    is_zero,
    parse_expr,
    print_expr,
    print_node,
    support_interval,
    support_radius,
    variables,
)


# random atom-free trees ------------------------------------------------------

nums = st.floats(min_value=-5, max_value=5, allow_nan=False).map(lambda v: Num(round(v, 3)))
leaves = st.one_of(nums, st.sampled_from([Var("t"), Var("x1")]))


def _extend(children):
    return st.one_of(
        st.builds(BinOp, st.sampled_from(["+", "-", "*"]), children, children),
        st.builds(Pow, children, st.integers(0, 3)),
        st.builds(lambda f, a: Call(f, (a,)), st.sampled_from(["sin", "cos"]), children),
        st.builds(lambda a, c, r: Call("bump", (a, Num(c), Num(r))), children,
                  st.floats(-2, 2).map(lambda v: round(v, 2)), st.floats(0.5, 3).map(lambda v: round(v, 2))),
    )


trees = st.recursive(leaves, _extend, max_leaves=12)


def _reference(node, t, x):
    """Scalar recursive evaluation with math, independent of the numpy evaluator."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return t if node.name == "t" else x
    if isinstance(node, BinOp):
        a, b = _reference(node.left, t, x), _reference(node.right, t, x)
        return {"+": a + b, "-": a - b, "*": a * b, "/": a / b if b else math.nan}[node.op]
    if isinstance(node, Pow):
        return _reference(node.base, t, x) ** node.exponent
    a = _reference(node.args[0], t, x)
    if node.func == "sin":
        return math.sin(a)
    if node.func == "cos":
        return math.cos(a)
    u = (a - node.args[1].value) / node.args[2].value
    return math.e * math.exp(-1 / (1 - u * u)) if abs(u) < 1 else 0.0


@settings(max_examples=200, deadline=None)
@given(trees)
def test_print_parse_round_trip(tree):
    e = parse_expr(print_node(tree))
    again = parse_expr(print_expr(e))
    assert again == e


@settings(max_examples=200, deadline=None)
@given(trees, st.floats(-3, 3), st.floats(-3, 3))
def test_eval_matches_reference(tree, t, x):
    e = parse_expr(print_node(tree))
    want = _reference(tree, t, x)
    got = eval_smooth(e, t, x)
    assert got.real == pytest.approx(want, rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(-4, 4).map(lambda v: round(v, 3)), st.floats(-3, 3).map(lambda v: round(v, 3)),
       st.sampled_from(["H", "delta"]), st.integers(0, 3))
def test_atom_round_trip(loc, coef, kind, order):
    if coef == 0:
        return
    body = f"H(x-{loc})" if kind == "H" else f"ddelta(x-{loc},{order})"
    e = parse_expr(f"sin(x) + {coef}*{body}")
    assert parse_expr(print_expr(e)) == e
    (a,) = e.atoms
    assert a.location == pytest.approx(loc)
    assert a.coefficient == pytest.approx(coef)


def test_atoms_are_extracted():
    e = parse_expr("0.5*H(x) + bump(x,0,2) - 2*delta(x+1)")
    assert e.atoms == (Atom("H", "x1", 0.0, 0.5), Atom("delta", "x1", -1.0, -2.0, 0))
    assert e.singular_variable == "x1"
    assert e.has_dirac


def test_time_atoms():
    e = parse_expr("delta(t-0.5)")
    assert e.singular_variable == "t"
    assert e.atoms[0].location == 0.5


def test_ddelta_default_order():
    assert parse_expr("ddelta(x)").atoms[0].order == 1


@pytest.mark.parametrize(
    "text",
    [
        "H(x)*H(x)",
        "sin(H(x))",
        "H(x)^2",
        "x*H(x)",
        "1/H(x)",
        "H(x)+delta(t)",
        "H(2*x)",
        "foo(x)",
        "y",
        "1 +",
        "(x",
        "x^1.5",
        "ddelta(x, 1.5)",
        "bump(x,1,2,3)",
        "sin(x,1)",
    ],
)
def test_invalid_expressions(text):
    with pytest.raises(DSLError):
        parse_expr(text)


def test_error_carries_position():
    with pytest.raises(DSLError) as info:
        parse_expr("1 + foo(x)")
    assert "foo" in str(info.value)


def test_bump_peak_is_one():
    assert eval_smooth(parse_expr("bump(x,1,2)"), 0.0, 1.0).real == pytest.approx(1.0)
    assert eval_smooth(parse_expr("bump(x,1,2)"), 0.0, 3.0).real == 0.0


def test_heaviside_pointwise():
    e = parse_expr("2*H(x-1)")
    vals = eval_smooth(e, 0.0, np.array([0.0, 1.0, 2.0]))
    np.testing.assert_allclose(vals.real, [0, 2, 2])


def test_dirac_not_pointwise():
    with pytest.raises(DSLError):
        eval_smooth(parse_expr("delta(x)"), 0.0, 0.0)


def test_eval_two_dimensions():
    e = parse_expr("x1*x2 + t")
    x = np.array([[1.0, 2.0], [3.0, -1.0]])
    np.testing.assert_allclose(eval_smooth(e, 1.0, x, n=2).real, [3.0, -2.0])


def test_supports():
    assert support_interval(parse_expr("bump(x,1,2)")) == (-1.0, 3.0)
    assert support_interval(parse_expr("bump(x,0,1)*sin(x)")) == (-1.0, 1.0)
    assert support_interval(parse_expr("0")) is None
    assert support_interval(parse_expr("H(x-2)")) == (2.0, math.inf)
    assert support_interval(parse_expr("delta(x-2)")) == (2.0, 2.0)
    assert support_radius(parse_expr("bump(x,1,2)")) == 3.0
    assert math.isinf(support_radius(parse_expr("H(x)")))
    assert support_radius(parse_expr("H(x)"), window=5.0) == 5.0


def test_zero_and_variables():
    assert is_zero(parse_expr("0"))
    assert is_zero(parse_expr("0*1"))
    assert not is_zero(parse_expr("x"))
    assert not is_zero(parse_expr("H(x)"))
    assert variables(parse_expr("sin(t)*x").smooth) == {"t", "x1"}


def test_negative_literals_and_powers():
    e = parse_expr("-x^2 + 2^-1")
    assert eval_smooth(e, 0.0, 3.0).real == pytest.approx(-8.5)


@pytest.mark.parametrize("base,k", [(-0.0, 0), (-2.0, 2), (-2.0, 3)])
def test_negative_power_base_printed_with_parentheses(base, k):
    text = print_node(Pow(Num(base), k))
    assert eval_smooth(parse_expr(text), 0.0, 0.0).real == pytest.approx(base**k)
