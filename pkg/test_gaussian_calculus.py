# -*- coding: utf-8 -*-
"""
高斯空间、det₂、Λ(U)、OU 半群与高斯 Prékopa–Leindler 测试
"""

import math

import numpy as np
import pytest

from gaussian_calculus import (
    GaussianSpace, OUSmoothed, ShiftMap, check_monotone, check_one_logconcave,
    conditional_expectation, det2, det2_batch, det2_logconcavity_check, divergence,
    export_jacobian_trace, lambda_jacobian, mixture_lambda, ou_apply, ou_evaluate,
    smoothing_sequence_lambda, verify_change_of_variables, verify_gaussian_pl, verify_preservation,
    _deficit_node_expr, _deficit_node_grid,
)
from measure_core import (
    BoxDomain, GeometryError, GridDensity, gaussian_weight, grid_nodes, indicator_grid, mask_from_boxes,
)
from potential_dsl import lambda_expr, parse


def linear_lambda(eps: float, x: np.ndarray) -> np.ndarray:
    """U(x) = (1+ε)x 时 Λ(U)(x) = (1+ε)·exp(-(ε + ε²/2)x²)"""
    return (1.0 + eps) * np.exp(-(eps + 0.5 * eps * eps) * x * x)


def test_gaussian_space_moments():
    space = GaussianSpace(2, 32)
    assert space.size == 32 ** 2
    assert space.expect(parse("x1^2", 2)) == pytest.approx(1.0, abs=1e-12)
    assert space.expect(parse("x1^2 * x2^4", 2)) == pytest.approx(3.0, abs=1e-10)
    assert space.weights().sum() == pytest.approx(1.0, abs=1e-13)
    with pytest.raises(GeometryError):
        GaussianSpace(5)
    with pytest.raises(ValueError):
        GaussianSpace(1, 2)


def test_det2_oracles():
    assert det2(np.zeros((3, 3))) == pytest.approx(1.0)
    assert det2([[1.0]]) == pytest.approx(2.0 / math.e)
    assert det2([[-1.0]]) == 0.0
    rng = np.random.default_rng(0)
    A = rng.normal(scale=0.4, size=(10, 3, 3))
    assert np.allclose(det2_batch(A), [det2(M) for M in A], rtol=1e-10)
    with pytest.raises(GeometryError):
        det2(np.zeros((2, 3)))


def test_det2_logconcavity_over_symmetric_segments():
    report = det2_logconcavity_check(pairs=20, dim=3, seed=0)
    assert report.passed
    assert report.samples == 20


def test_divergence_and_lambda_of_linear_map():
    U = ShiftMap.from_texts(["0.3*x1"])
    ev = lambda_jacobian(U, [1.2])
    assert ev.det2 == pytest.approx(1.3 * math.exp(-0.3), rel=1e-8)
    assert ev.divergence == pytest.approx(0.3 * 1.2 ** 2 - 0.3, rel=1e-7)
    assert ev.Lambda == pytest.approx(float(linear_lambda(0.3, np.array(1.2))), rel=1e-7)
    assert ev.j_value * math.exp(-ev.half_norm_sq) == pytest.approx(ev.Lambda, rel=1e-12)
    shift = ShiftMap.constant([0.5, -1.0])
    assert divergence(shift, [2.0, 1.0]) == pytest.approx(0.0, abs=1e-9)
    assert divergence(shift, [2.0, 3.0]) == pytest.approx(-2.0, abs=1e-9)


def test_shift_from_gradient():
    U = ShiftMap.gradient_of(parse("x1^2/4 + x2^2", 2), 2)
    assert np.allclose(U([[2.0, 1.0]]), [[1.0, 2.0]], atol=1e-6)


def test_export_jacobian_trace():
    frame = export_jacobian_trace(ShiftMap.from_texts(["0.1*x1", "0.2*x2"]), np.zeros((4, 2)))
    assert list(frame.columns) == ['x1', 'x2', 'Lambda', 'det2', 'divergence', 'half_norm_sq']
    assert len(frame) == 4


def test_check_monotone():
    assert check_monotone(ShiftMap.from_texts(["-0.5*x1"]), seed=1).passed
    assert check_monotone(ShiftMap.from_texts(["0.2*x1^3 - 0.5*x1", "0.3*x2"]), seed=1).passed
    bad = check_monotone(ShiftMap.from_texts(["-1.5*x1"]), seed=1)
    assert bad.failed
    w, h = bad.witness
    assert len(w) == len(h) == 1


@pytest.mark.parametrize('eps', [-0.5, 0.3, 0.9])
def test_change_of_variables_equality_for_linear_shift(eps):
    U = ShiftMap.from_texts([f"{eps}*x1"])
    report = verify_change_of_variables(U, parse("1 + x1^2", 1), GaussianSpace(1), seed=2)
    assert report.passed
    assert abs(report.worst_margin) <= 1e-6
    assert report.details['equality']
    assert report.details['E_f'] == pytest.approx(2.0, abs=1e-10)


def test_change_of_variables_cameron_martin():
    report = verify_change_of_variables(ShiftMap.constant([0.7]), parse("exp(x1 - 0.1*x1^2)", 1),
                                        GaussianSpace(1), seed=3)
    assert report.details['equality']
    assert abs(report.worst_margin) <= 1e-6


def test_change_of_variables_preconditions():
    space = GaussianSpace(1)
    report = verify_change_of_variables(ShiftMap.from_texts(["-1.5*x1"]), parse("1", 1), space)
    assert report.failed and report.failure == 'precondition'
    report = verify_change_of_variables(ShiftMap.from_texts(["0.1*x1"]), parse("x1", 1), space)
    assert report.failed and report.failure == 'precondition'
    with pytest.raises(GeometryError):
        verify_change_of_variables(ShiftMap.from_texts(["0", "0"]), parse("1", 2), space)


def test_change_of_variables_witness_in_double_cover():
    """u = -0.7·1{x>0} 使 (-0.7, 0) 被覆盖两次：失败见证点落在增益最大的正半轴"""
    jump = lambda_expr(lambda X: np.where(X[:, 0] > 0.0, -0.7, 0.0), 1)
    report = verify_change_of_variables(ShiftMap((jump,)), parse("1", 1), GaussianSpace(1),
                                        require_monotone=False)
    assert report.failed and report.failure == 'conclusion'
    assert report.worst_margin < -0.1
    (node,) = report.witness
    assert len(node) == 1
    assert node[0] > 0.35


def test_ou_semigroup_on_polynomials():
    space = GaussianSpace(1)
    X = np.linspace(-3.0, 3.0, 13)[:, None]
    for tau in (0.1, 0.5, 2.0):
        d = math.exp(-tau)
        assert np.allclose(ou_evaluate(parse("x1", 1), tau, space, X), d * X[:, 0], atol=1e-6)
        expected = d * d * X[:, 0] ** 2 + (1.0 - d * d)
        assert np.allclose(ou_evaluate(parse("x1^2", 1), tau, space, X), expected, atol=1e-6)
    with pytest.raises(ValueError):
        ou_evaluate(parse("x1", 1), -1.0, space, X)


def test_ou_semigroup_composition():
    space = GaussianSpace(1)
    f = parse("exp(-x1^2)", 1)
    X = np.linspace(-2.0, 2.0, 9)[:, None]
    twice = ou_evaluate(OUSmoothed(f, 0.3, space), 0.4, space, X)
    once = ou_evaluate(f, 0.7, space, X)
    assert np.allclose(twice, once, atol=1e-10)


def test_ou_apply_returns_density_grid():
    out = ou_apply(parse("exp(-x1^2)", 1), 0.5, GaussianSpace(1), BoxDomain.cube(-4.0, 4.0, 1), 33)
    assert isinstance(out, GridDensity)
    assert out.resolution == (33,)


def test_conditional_expectation_of_norm():
    out = conditional_expectation(parse("x1^2 + x2^2", 2), [1], GaussianSpace(2, 16),
                                  BoxDomain.cube(-3.0, 3.0, 1), 25)
    x = out.axes[0]
    assert np.allclose(out.values, x * x + 1.0, atol=1e-10)
    with pytest.raises(GeometryError):
        conditional_expectation(parse("x1", 2), [1, 2], GaussianSpace(2, 16))


def test_one_logconcave_expressions():
    space = GaussianSpace(1)
    assert check_one_logconcave(parse("1", 1), space, seed=4).passed
    assert check_one_logconcave(parse("exp(-x1^2)", 1), space, seed=4).passed
    bad = check_one_logconcave(parse("exp(x1^2)", 1), space, seed=4)
    assert bad.failed
    assert len(bad.witness) == 3


def test_one_logconcave_fails_on_two_intervals():
    ind = indicator_grid(BoxDomain.cube(-4.0, 4.0, 1), 129, [[[-2.0], [-1.0]], [[1.0], [2.0]]])
    report = check_one_logconcave(ind, GaussianSpace(1), seed=5)
    assert report.failed
    assert report.worst_margin < -0.5


def test_preservation_under_ou_and_conditioning():
    report = verify_preservation(parse("exp(-x1^2)", 1), 'ou', GaussianSpace(1), tau=0.5, seed=6)
    assert report.passed
    assert report.details['mode'] == 'ou'
    f = parse("exp(-(x1^2 + x1*x2 + x2^2))", 2)
    report = verify_preservation(f, 'conditional', GaussianSpace(2, 32), keep=[1], seed=6)
    assert report.passed
    with pytest.raises(ValueError):
        verify_preservation(f, 'conditional', GaussianSpace(2, 32))


def test_preservation_rejects_bad_input():
    report = verify_preservation(parse("exp(x1^2)", 1), 'ou', GaussianSpace(1), tau=0.5)
    assert report.failed
    assert report.failure == 'precondition'


def test_gaussian_brunn_minkowski_with_masks():
    dom = BoxDomain.cube(-8.0, 8.0, 1)
    res = 1025
    A = mask_from_boxes(dom, res, [[[-1.0], [0.0]]])
    B = mask_from_boxes(dom, res, [[[0.0], [1.0]]])
    C = mask_from_boxes(dom, res, [[[-0.5], [0.5]]])
    report = verify_gaussian_pl(C, A, B, seed=7)
    assert report.details['mode'] == 'supplied'
    assert report.details['nu_a'] == pytest.approx(0.38292, abs=1e-4)
    assert report.details['nu_b'] == pytest.approx(0.34134, abs=1e-4)
    assert report.passed

    small = mask_from_boxes(dom, res, [[[0.0], [0.2]]])
    report = verify_gaussian_pl(small, A, B, seed=7)
    assert report.failed
    assert report.failure == 'precondition'


def test_gaussian_pl_expressions():
    space = GaussianSpace(1)
    one = parse("1", 1)
    report = verify_gaussian_pl(one, one, one, space=space, seed=8)
    assert report.passed
    assert report.details['quadrature'] == 'gauss-hermite'
    auto = verify_gaussian_pl(None, one, one, space=space)
    assert auto.details['mode'] == 'auto'
    assert auto.details['nu_a'] == pytest.approx(1.0, abs=1e-8)
    assert auto.passed


def test_gaussian_pl_rejects_non_one_logconcave_weight():
    one = parse("1", 1)
    report = verify_gaussian_pl(one, one, one, q=parse("exp(x1^2)", 1), space=GaussianSpace(1))
    assert report.failed
    assert report.failure == 'precondition'


def test_gaussian_pl_deficit_locator():
    """b = c = 1、a = 1 - exp(-(x-1)²)：加权亏量 φ(x)·exp(-(x-1)²) 在 x = 2/3 处最大"""
    a, one = parse("1 - exp(-(x1 - 1)^2)", 1), parse("1", 1)
    node = _deficit_node_expr(a, one, one, None, 0.5, GaussianSpace(1))
    assert abs(node[0] - 2.0 / 3.0) < 0.35
    weighted = _deficit_node_expr(a, one, one, parse("exp(2*x1 - 2)", 1), 0.5, GaussianSpace(1))
    assert weighted[0] > node[0]

    dom = BoxDomain.cube(-8.0, 8.0, 1)
    X = grid_nodes(dom, (257,))
    weight = GridDensity(dom, gaussian_weight(X))
    arrays = [(a(X), False), (np.ones(257), False), (np.ones(257), False)]
    assert abs(_deficit_node_grid(arrays, weight, X, 0.5)[0] - 2.0 / 3.0) < 0.07


def test_mixture_lambda_for_linear_maps():
    T1 = ShiftMap.from_texts(["-0.5*x1"])
    T2 = ShiftMap.from_texts(["0.8*x1"])
    report = mixture_lambda(T1, T2, 0.3, points=100, seed=9)
    assert report.passed
    assert report.details['inconclusive_points'] == 0
    fixed = mixture_lambda(T1, T2, 0.6, points=np.linspace(-2.0, 2.0, 11)[:, None])
    assert fixed.passed and fixed.samples == 11
    bad = mixture_lambda(ShiftMap.from_texts(["-2*x1"]), T2, 0.5)
    assert bad.failure == 'precondition'


def test_smoothing_sequence_of_linear_shift():
    eps = 0.2
    n_list = [1, 4, 16, 64, 256, 1024]
    seq = smoothing_sequence_lambda(ShiftMap.from_texts([f"{eps}*x1"]), n_list, GaussianSpace(1),
                                    BoxDomain.cube(-3.0, 3.0, 1), 65)
    x = seq.liminf.axes[0]
    for n, grid in zip(n_list, seq.grids):
        eps_n = eps * math.exp(-1.0 / n)
        assert np.allclose(grid.values, linear_lambda(eps_n, x), atol=1e-6)
    diffs = seq.diagnostics['successive_sup_diff']
    assert len(diffs) == len(n_list) - 1
    assert all(b < a for a, b in zip(diffs, diffs[1:]))
    assert seq.diagnostics['ratio'] < 1.0
    assert np.max(np.abs(seq.liminf.values - linear_lambda(eps, x))) < 1e-2
    with pytest.raises(ValueError):
        smoothing_sequence_lambda(ShiftMap.from_texts(["x1"]), [0, 1], GaussianSpace(1))
