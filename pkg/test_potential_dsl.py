# -*- coding: utf-8 -*-
"""
表达式语法与有限差分测试
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from potential_dsl import (
    MAX_DEPTH, DiffConfig, DimensionError, DomainError, Expr, ParseError,
    eval_expr, grad, grad_points, hess, hess_points, lambda_expr, parse,
)


def test_evaluate_basic_expressions():
    """四则运算、乘方、函数与常量"""
    cases = [
        ("x1^2/2", [3.0], 4.5),
        ("-x1^2", [3.0], -9.0),
        ("2^3^2", [0.0], 512.0),
        ("exp(x1) * log(x2)", [0.0, np.e], 1.0),
        ("sqrt(abs(x1 - x2))", [1.0, 5.0], 2.0),
        ("min(x1, x2, 0.5) + max(x1, x2)", [1.0, 2.0], 2.5),
        ("normsq(x)", [1.0, 2.0, 2.0], 9.0),
        ("pi - e", [0.0], np.pi - np.e),
        ("neg(x1) * 2", [1.5], -3.0),
        ("1.5e2 + .5", [0.0], 150.5),
    ]
    for text, point, expected in cases:
        e = parse(text, len(point))
        assert eval_expr(e, point) == pytest.approx(expected, rel=1e-12), text


def test_vectorized_call_matches_pointwise():
    e = parse("x1^2 + 3*x1*x2 - exp(-x2)", 2)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 2))
    values = e(X)
    assert values.shape == (50,)
    for x, v in zip(X, values):
        assert eval_expr(e, x) == pytest.approx(v, rel=1e-14)


def test_parse_error_reports_offset_and_expected():
    with pytest.raises(ParseError) as info:
        parse("x1 +", 1)
    assert info.value.offset == 4
    assert 'number' in info.value.expected

    with pytest.raises(ParseError) as info:
        parse("x1 $ 2", 1)
    assert info.value.offset == 3

    with pytest.raises(ParseError) as info:
        parse("(x1 + 1", 1)
    assert ')' in info.value.expected

    with pytest.raises(ParseError) as info:
        parse("x1++2", 1)
    assert info.value.offset == 3


def test_variable_index_beyond_dimension():
    with pytest.raises(ParseError) as info:
        parse("x1 + x3", 2)
    assert info.value.offset == 5
    assert info.value.expected == frozenset({'x1', 'x2'})


@pytest.mark.parametrize('text', ["x", "normsq(x1)", "foo(x1)", "exp(x1, x1)", "min()", "", "   ", "x0", "1e999"])
def test_rejected_inputs(text):
    with pytest.raises(ParseError):
        parse(text, 2)


def test_nesting_depth_limit():
    ok = "(" * (MAX_DEPTH - 1) + "x1" + ")" * (MAX_DEPTH - 1)
    assert eval_expr(parse(ok, 1), [2.0]) == 2.0
    with pytest.raises(ParseError):
        parse("(" * (MAX_DEPTH + 5) + "x1" + ")" * (MAX_DEPTH + 5), 1)
    with pytest.raises(ParseError):
        parse("-" * (MAX_DEPTH + 5) + "x1", 1)


def test_long_flat_sum_is_not_nested():
    text = " + ".join(["x1"] * 300)
    assert eval_expr(parse(text, 1), [1.0]) == 300.0


@pytest.mark.parametrize('text, point, expected', [
    ("+".join(["1"] * 500), [0.0], 500.0),
    ("*".join(["x1"] * 500), [1.0], 1.0),
    ("x1" + "-1+2" * 300, [0.5], 300.5),
    ("x1" + "/2*4" * 250, [1.0], 2.0 ** 250),
])
def test_long_chains_print_and_reparse(text, point, expected):
    """几百项的左结合链：打印、再解析、求值都不依赖递归深度"""
    e = parse(text, 1)
    out = e.to_text()
    assert len(out) >= len(text) - 1
    again = parse(out, 1)
    assert again.to_text() == out
    assert eval_expr(again, point) == pytest.approx(expected, rel=1e-12)
    assert eval_expr(e, point) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.sampled_from(["x1", "2", "0.5", "(x1 - 1)", "x1*x1"]), min_size=200, max_size=500),
       st.sampled_from(["+", "-"]))
def test_long_sum_round_trip(terms, op):
    e = parse(f" {op} ".join(terms), 1)
    again = parse(e.to_text(), 1)
    assert again.to_text() == e.to_text()
    X = np.array([[0.3], [1.7]])
    assert np.allclose(again(X), e(X), rtol=1e-12, atol=1e-9)


def test_domain_errors_carry_point():
    e = parse("log(x1)", 1)
    with pytest.raises(DomainError) as info:
        eval_expr(e, [0.0])
    assert info.value.point == (0.0,)
    with pytest.raises(DomainError):
        eval_expr(parse("sqrt(x1)", 1), [-1.0])
    with pytest.raises(DomainError):
        eval_expr(parse("1/x1", 1), [0.0])
    with pytest.raises(DomainError):
        eval_expr(parse("exp(x1)", 1), [1000.0])


def test_dimension_mismatch():
    e = parse("x1 + x2", 2)
    with pytest.raises(DimensionError):
        e(np.zeros((3, 3)))


@pytest.mark.parametrize('text, printed', [
    ("(x1 + x2)*x3", "(x1 + x2)*x3"),
    ("x1 - (x2 - x3)", "x1 - (x2 - x3)"),
    ("x1 - x2 - x3", "x1 - x2 - x3"),
    ("(x1^2)^3", "(x1^2)^3"),
    ("x1^x2^x3", "x1^x2^x3"),
    ("(-x1)^2", "(-x1)^2"),
    ("x1^-2", "x1^-2"),
    ("-(x1*x2)", "-(x1*x2)"),
])
def test_to_text_uses_minimal_parentheses(text, printed):
    e = parse(text, 3)
    out = e.to_text()
    assert parse(out, 3) == e
    assert out.replace(".0", "") == printed


def test_gradient_and_hessian():
    e = parse("x1^2/2 + 3*x2 + x1*x2", 2)
    g = grad(e, [1.0, 2.0])
    assert np.allclose(g, [3.0, 4.0], atol=1e-7)
    H = hess(e, [1.0, 2.0])
    assert np.allclose(H, [[1.0, 1.0], [1.0, 0.0]], atol=1e-5)
    assert np.array_equal(H, H.T)


def test_gradient_of_random_quadratic():
    """V = xᵀAx/2 + bᵀx 的梯度为 Ax + b"""
    rng = np.random.default_rng(5)
    d = 3
    M = rng.normal(size=(d, d))
    A = 0.5 * (M + M.T)
    b = rng.normal(size=d)
    terms = [f"({float(0.5 * A[i, j])!r})*x{i + 1}*x{j + 1}" for i in range(d) for j in range(d)]
    terms += [f"({float(b[i])!r})*x{i + 1}" for i in range(d)]
    V = parse(" + ".join(terms), d)
    X = rng.uniform(-3.0, 3.0, size=(50, d))
    assert np.allclose(grad_points(V, X), X @ A + b, atol=1e-6)
    for x in X[:5]:
        assert np.allclose(hess(V, x), A, atol=1e-5)


def test_hessian_of_norm_squared_batch():
    e = parse("normsq(x)", 3)
    X = np.random.default_rng(1).uniform(-3, 3, size=(20, 3))
    H = hess_points(e, X)
    assert H.shape == (20, 3, 3)
    assert np.allclose(H, 2.0 * np.eye(3), atol=1e-5)


def test_richardson_improves_gradient():
    e = parse("exp(x1)", 1)
    plain = abs(grad(e, [1.0], DiffConfig(h=1e-2))[0] - np.e)
    extrap = abs(grad(e, [1.0], DiffConfig(h=1e-2, richardson=True))[0] - np.e)
    assert extrap < plain / 100


def test_diff_config_validation():
    with pytest.raises(ValueError):
        DiffConfig(h=0.0)
    with pytest.raises(ValueError):
        DiffConfig(h=0.5).validate_for(10.0)
    DiffConfig(h=1e-4).validate_for(10.0)


def test_lambda_expr_wraps_plain_callable():
    f = lambda_expr(lambda X: np.sum(np.sin(X), axis=1), 2)
    g = grad_points(f, np.array([[0.0, 0.0], [np.pi, 0.0]]))
    assert np.allclose(g, [[1.0, 1.0], [-1.0, 1.0]], atol=1e-8)


def test_fuzz_parser_never_crashes():
    """10⁴ 个随机输入（<= 1000 字节）：只允许成功解析或 ParseError"""
    rng = np.random.default_rng(20240601)
    pieces = ["x1", "x2", "x", "+", "-", "*", "/", "^", "(", ")", ",", "exp", "log", "sqrt", "abs",
              "min", "max", "normsq", "neg", "pi", "e", "1", "2.5", "1e3", ".", " ", "x9", "@", "0"]
    accepted = 0
    for i in range(10_000):
        if i % 2 == 0:
            k = int(rng.integers(1, 200))
            text = "".join(pieces[j] for j in rng.integers(len(pieces), size=k))
        else:
            k = int(rng.integers(0, 1000))
            text = bytes(rng.integers(0, 256, size=k, dtype=np.uint8)).decode('latin-1')
        text = text.encode('utf-8')[:1000].decode('utf-8', errors='ignore')
        try:
            e = parse(text, 2)
        except ParseError:
            continue
        assert isinstance(e, Expr)
        accepted += 1
    assert accepted > 0


_atoms = st.sampled_from(["x1", "x2", "2", "0.5", "pi", "normsq(x)"])


def _compound(children):
    binary = st.tuples(children, st.sampled_from(["+", "-", "*", "/", "^"]), children).map(
        lambda t: f"({t[0]}){t[1]}({t[2]})")
    unary = st.tuples(st.sampled_from(["-", "exp", "abs", "neg"]), children).map(
        lambda t: f"-({t[1]})" if t[0] == "-" else f"{t[0]}({t[1]})")
    nary = st.lists(children, min_size=1, max_size=3).map(lambda xs: f"max({', '.join(xs)})")
    return st.one_of(binary, unary, nary)


@settings(max_examples=200, deadline=None)
@given(st.recursive(_atoms, _compound, max_leaves=12))
def test_print_parse_round_trip(text):
    e = parse(text, 2)
    again = parse(e.to_text(), 2)
    assert again == e
    assert again.to_text() == e.to_text()
