import numpy as np
import pytest

from divfreedg.quadrature import segment_rule, triangle_rule


@pytest.mark.parametrize("order", [1, 3, 5, 7, 9, 11, 15])
def test_segment_exactness(order):
    rule = segment_rule(order)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)
    for d in range(rule.order + 1):
        exact = 1.0 / (d + 1)
        approx = np.sum(rule.weights * rule.points ** d)
        assert approx == pytest.approx(exact, abs=1e-12)


@pytest.mark.parametrize("order", [1, 2, 3, 5, 7, 9, 12])
def test_triangle_exactness(order):
    rule = triangle_rule(order)
    assert rule.weights.sum() == pytest.approx(0.5, abs=1e-14)
    x, y = rule.points[:, 0], rule.points[:, 1]
    for a in range(rule.order + 1):
        for b in range(rule.order + 1 - a):
            # int_T x^a y^b = a! b! / (a + b + 2)!
            exact = 1.0
            for i in range(1, a + 1):
                exact *= i / (b + i)
            exact /= (a + b + 1) * (a + b + 2)
            approx = np.sum(rule.weights * x ** a * y ** b)
            assert approx == pytest.approx(exact, abs=1e-12)


def test_points_inside_reference_domains():
    tri = triangle_rule(8)
    assert np.all(tri.points >= 0)
    assert np.all(tri.points.sum(axis=1) <= 1 + 1e-14)
    seg = segment_rule(8)
    assert np.all((seg.points >= 0) & (seg.points <= 1))
