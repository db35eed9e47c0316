import numpy as np
import pytest

from quadrature import (SEGMENT_POINTS, SEGMENT_WEIGHTS, TRIANGLE_WEIGHTS, segment_points, subdivide,
                        triangle_areas, triangle_points)

REF = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])


def _monomial_integral(i, j):
    # int_{ref} x^i y^j = i! j! / (i + j + 2)!
    from math import factorial
    return factorial(i) * factorial(j) / factorial(i + j + 2)


def test_weights_normalized():
    assert TRIANGLE_WEIGHTS.sum() == pytest.approx(1.0, abs=1e-12)
    assert SEGMENT_WEIGHTS.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.all((SEGMENT_POINTS > 0) & (SEGMENT_POINTS < 1))


@pytest.mark.parametrize("i,j", [(i, j) for i in range(5) for j in range(5) if i + j <= 4])
def test_triangle_rule_exact_to_degree_four(i, j):
    pts = triangle_points(REF)[0]
    approx = 0.5 * np.sum(TRIANGLE_WEIGHTS * pts[:, 0] ** i * pts[:, 1] ** j)
    assert approx == pytest.approx(_monomial_integral(i, j), rel=1e-12)


def test_segment_rule_exact_for_cubics():
    p = np.array([[0.0, 0.0]])
    q = np.array([[2.0, 0.0]])
    x = segment_points(p, q)[0, :, 0]
    assert 2.0 * np.sum(SEGMENT_WEIGHTS * x ** 3) == pytest.approx(4.0, rel=1e-13)


def test_subdivide_preserves_area_and_parents():
    tris = np.array([[[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]],
                     [[1.0, 1.0], [2.0, 1.0], [1.0, 3.0]]])
    children, parent = subdivide(tris, 2)
    assert children.shape == (32, 3, 2)
    areas = triangle_areas(children)
    assert np.all(areas > 0)
    assert np.bincount(parent, weights=areas) == pytest.approx(triangle_areas(tris), rel=1e-13)
