import json

import numpy as np
import pytest
import shapely
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Polygon

from gibbsfiksel.geometry import (
    CannotDilateError,
    DegenerateGeometryError,
    EmptyWindowError,
    PolygonalWindow,
    convex_hull,
    erode_border,
    intersect_windows,
    ripley_rasson_factor,
    ripley_rasson_window,
    tile_grid,
)


def star_polygon(seed, n=None):
    """Random simple star-shaped polygon around the origin."""
    r = np.random.default_rng(seed)
    n = n or int(r.integers(3, 14))
    ang = np.sort(r.uniform(0, 2 * np.pi, n))
    ang += np.linspace(0, 1e-3, n)  # keep angles distinct
    rad = r.uniform(0.5, 3.0, n)
    pts = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)]) * r.uniform(1, 50)
    return pts


def test_rectangle_basics(square):
    assert square.area == pytest.approx(100.0)
    assert square.diameter == pytest.approx(np.hypot(10, 10))
    assert square.is_rectangle
    assert square.contains([[0, 0], [10, 10], [5, 5]]).all()
    assert not square.contains([[10.1, 5]]).any()


def test_from_rings_hole_and_orientation():
    outer = [(0, 0), (4, 0), (4, 4), (0, 4)]
    hole = [(1, 1), (1, 2), (2, 2), (2, 1)]  # clockwise
    w = PolygonalWindow.from_rings([outer, hole])
    assert w.area == pytest.approx(15.0)
    assert not w.contains([[1.5, 1.5]])[0]
    cw_only = PolygonalWindow.from_rings([outer[::-1]])
    assert cw_only.area == pytest.approx(16.0)


def test_self_intersecting_ring_rejected():
    with pytest.raises(DegenerateGeometryError):
        PolygonalWindow.from_rings([[(0, 0), (1, 1), (1, 0), (0, 1)]])


def test_dict_round_trip(l_shape):
    d = json.loads(json.dumps(l_shape.to_dict()))
    assert set(d) == {"rings", "area"}
    back = PolygonalWindow.from_dict(d)
    assert back.area == pytest.approx(l_shape.area)
    assert back.geom.equals(l_shape.geom)


def test_convex_hull_square_with_interior_points():
    pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5], [0.2, 0.7]])
    assert convex_hull(pts).area == pytest.approx(1.0)


def test_convex_hull_collinear_raises():
    with pytest.raises(DegenerateGeometryError):
        convex_hull(np.array([[0, 0], [1, 1], [2, 2], [3, 3]]))


def test_ripley_rasson_factor_values():
    assert ripley_rasson_factor(10, 4) == pytest.approx(1 / np.sqrt(0.6))
    with pytest.raises(CannotDilateError):
        ripley_rasson_factor(4, 4)


def test_ripley_rasson_square_corners_only_cannot_dilate():
    with pytest.raises(CannotDilateError):
        ripley_rasson_window(np.array([[0, 0], [1, 0], [1, 1], [0, 1]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(8, 200))
def test_ripley_rasson_area_scales_by_factor_squared(seed, n):
    pts = np.random.default_rng(seed).uniform(0, 1, (n, 2))
    hull = convex_hull(pts)
    w = len(hull.rings[0])
    if n <= w:
        return
    win = ripley_rasson_window(pts)
    f = ripley_rasson_factor(n, w)
    assert win.area == pytest.approx(hull.area * f**2, rel=1e-9)
    assert win.contains(pts).all()
    assert win.geom.centroid.distance(hull.geom.centroid) < 1e-9


def test_intersection_properties(square):
    other = PolygonalWindow.rectangle(5, 5, 15, 15)
    inter = intersect_windows([square, other])
    assert inter.area == pytest.approx(25.0)
    assert intersect_windows([square, square]).area == pytest.approx(square.area)
    with pytest.raises(EmptyWindowError):
        intersect_windows([square, PolygonalWindow.rectangle(20, 20, 30, 30)])


def test_intersection_of_five_patients_not_larger_than_smallest():
    rng = np.random.default_rng(3)
    wins = [ripley_rasson_window(rng.uniform(0, 10, (60, 2))) for _ in range(5)]
    inter = intersect_windows(wins)
    assert inter.area <= min(w.area for w in wins) + 1e-9


def test_erode_rectangle_exact(square):
    assert erode_border(square, 2.0).area == pytest.approx(36.0, rel=1e-9)
    assert erode_border(square, 0.0) is square
    with pytest.raises(EmptyWindowError):
        erode_border(square, 5.0)
    with pytest.raises(ValueError):
        erode_border(square, -1.0)


def test_erode_polygon_points_far_from_boundary(l_shape):
    er = erode_border(l_shape, 0.2)
    pts = er.sample_uniform(500, np.random.default_rng(0))
    d = shapely.distance(l_shape.geom.boundary, shapely.points(pts))
    assert np.all(d >= 0.2 - 1e-6)


def test_set_covariance_rectangle_analytic(square):
    dx = np.array([0.0, 3.0, -2.0, 11.0])
    dy = np.array([0.0, 4.0, 1.0, 0.0])
    expect = np.maximum(10 - np.abs(dx), 0) * np.maximum(10 - np.abs(dy), 0)
    np.testing.assert_allclose(square.set_covariance(dx, dy), expect)


def test_set_covariance_polygon_matches_exact_overlap(l_shape):
    rng = np.random.default_rng(1)
    d = rng.uniform(-1.5, 1.5, (40, 2))
    approx = l_shape.set_covariance(d[:, 0], d[:, 1])
    exact = [l_shape.geom.intersection(shapely.affinity.translate(l_shape.geom, a, b)).area for a, b in d]
    np.testing.assert_allclose(approx, exact, atol=0.02 * l_shape.area)
    assert l_shape.set_covariance(np.zeros(1), np.zeros(1))[0] == pytest.approx(l_shape.area, rel=1e-3)


def test_tile_grid_rectangle(square):
    g = tile_grid(square, 5, 4)
    assert g.shape == (4, 5)
    assert g.areas.sum() == pytest.approx(100.0)
    np.testing.assert_allclose(g.areas, 5.0)
    assert g.cell_index([[10.0, 10.0]])[0] == 19
    assert g.cell_index([[0.0, 0.0]])[0] == 0
    assert g.cell_index([[-1.0, 0.0]])[0] == -1


def test_tile_points_lie_in_their_tiles(l_shape):
    g = tile_grid(l_shape, 9, 7)
    pos = g.areas > 0
    assert l_shape.contains(g.points[pos]).all()
    np.testing.assert_array_equal(g.cell_index(g.points[pos]), np.flatnonzero(pos))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 40), st.integers(1, 40))
def test_tile_areas_sum_to_window_area(seed, nx, ny):
    w = PolygonalWindow(Polygon(star_polygon(seed)))
    g = tile_grid(w, nx, ny)
    assert g.areas.sum() == pytest.approx(w.area, rel=1e-9)
    assert np.all(g.areas >= 0) and np.all(g.areas <= g.dx * g.dy * (1 + 1e-9))


def test_sample_uniform_inside_and_uniform(l_shape):
    pts = l_shape.sample_uniform(4000, np.random.default_rng(2))
    assert l_shape.contains(pts).all()
    # the 1x2 arm above y=1 holds 2/6 of the area
    frac = np.mean(pts[:, 1] > 1)
    assert abs(frac - 1 / 3) < 4 * np.sqrt(2 / 9 / 4000)


def test_window_shared_between_threads():
    # a many-vertex window queried concurrently used to crash inside GEOS
    from concurrent.futures import ThreadPoolExecutor

    t = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    w = PolygonalWindow.from_rings([np.column_stack([20 + 18 * np.cos(t) * (1 + 0.1 * np.sin(7 * t)),
                                                     20 + 18 * np.sin(t)])])
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 40, (2000, 2))
    expect = w.contains(pts)

    def work(k):
        g = tile_grid(w, 20 + k % 5)
        return g.areas.sum(), w.contains(pts)

    with ThreadPoolExecutor(4) as ex:
        for area, inside in ex.map(work, range(32)):
            assert area == pytest.approx(w.area, rel=1e-9)
            np.testing.assert_array_equal(inside, expect)
