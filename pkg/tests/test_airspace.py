from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamway.airspace import (
    BOUNDARY,
    INTERIOR,
    OBSTACLE,
    ObstacleKind,
    ObstaclePolygon,
    Region,
    build_grid,
    cylinder,
    make_layers,
    merge_proximal_obstacles,
    points_in_polygon,
    section_layer,
    square,
)
from streamway.errors import ObstacleTouchesBoundary


def unit_square(x0, y0, base=0.0, top=10.0, name=""):
    return ObstaclePolygon(((x0, y0), (x0 + 1, y0), (x0 + 1, y0 + 1), (x0, y0 + 1)), base, top, name=name)


class TestTypes:
    def test_region_rejects_degenerate(self):
        with pytest.raises(ValueError):
            Region(0, 0, 0, 1)
        with pytest.raises(ValueError):
            Region(0, 1, 2, 1)

    def test_polygon_normalised_ccw(self):
        p = ObstaclePolygon(((0, 0), (0, 1), (1, 1), (1, 0)), 0, 1)
        xs, ys = np.array(p.vertices).T
        area = 0.5 * np.sum(xs * np.roll(ys, -1) - np.roll(xs, -1) * ys)
        assert area > 0

    @pytest.mark.parametrize("verts", [((0, 0), (1, 1)), ((0, 0), (1, 1), (1, 0), (0, 1))])
    def test_polygon_rejects_invalid(self, verts):
        with pytest.raises(ValueError):
            ObstaclePolygon(verts, 0, 1)

    def test_polygon_altitudes(self):
        with pytest.raises(ValueError):
            ObstaclePolygon(((0, 0), (1, 0), (0, 1)), 5, 5)

    def test_cylinder_encloses_disk(self):
        c = cylinder((3.0, -2.0), 5.0, 0, 10)
        assert len(c.vertices) == 32
        theta = np.linspace(0, 2 * np.pi, 720, endpoint=False)
        inside = points_in_polygon(3 + 5 * np.cos(theta), -2 + 5 * np.sin(theta), c.vertices)
        assert inside.all()
        radii = np.hypot(*(np.array(c.vertices) - (3, -2)).T)
        assert radii.max() < 5.0 * 1.005
        assert c.kind is ObstacleKind.ATM_NO_FLY

    def test_layer_parity_and_directions(self):
        layers = make_layers([20, 25, 30, 35, 40, 45, 50, 55])
        assert [(l.axis, l.direction) for l in layers] == [
            ("x", 1), ("y", -1), ("x", -1), ("y", 1), ("x", 1), ("y", -1), ("x", -1), ("y", 1)]
        with pytest.raises(ValueError):
            make_layers([20, 20])
        with pytest.raises(ValueError):
            make_layers([20, 25], [("y", 1), ("x", 1)])


class TestMerge:
    def test_far_apart_unchanged(self):
        polys = [unit_square(0, 0), unit_square(101, 0)]
        assert merge_proximal_obstacles(polys, 10) == polys

    def test_close_squares_become_one_hull(self):
        a, b = unit_square(0, 0, 0, 10, "a"), unit_square(2, 0, 5, 30, "b")
        out = merge_proximal_obstacles([a, b], 10)
        assert len(out) == 1
        hull = out[0]
        pts = np.array(a.vertices + b.vertices)
        assert points_in_polygon(pts[:, 0], pts[:, 1], hull.vertices).all()
        assert (hull.base_altitude, hull.top_altitude) == (0, 30)
        assert hull.name == "a+b"

    def test_single_identity(self):
        p = unit_square(0, 0)
        assert merge_proximal_obstacles([p], 10) == [p]
        assert merge_proximal_obstacles([], 10) == []

    def test_chained_merge_is_transitive(self):
        polys = [unit_square(0, 0), unit_square(4, 0), unit_square(8, 0)]
        assert len(merge_proximal_obstacles(polys, 3.5)) == 1

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 80), st.floats(0, 80)), min_size=1, max_size=6),
           st.floats(0.5, 15))
    def test_output_separated_and_covering(self, corners, dist):
        polys = [unit_square(x, y) for x, y in corners]
        out = merge_proximal_obstacles(polys, dist)
        for i in range(len(out)):
            for j in range(i + 1, len(out)):
                assert out[i].shape.distance(out[j].shape) > dist
        for p in polys:
            pts = np.array(p.vertices)
            assert any(points_in_polygon(pts[:, 0], pts[:, 1], q.vertices).all() for q in out)


class TestSection:
    def test_building_below_layer_excluded(self):
        b = unit_square(0, 0, 0, 30)
        assert section_layer([b], 40) == []
        assert section_layer([b], 30) == [b]

    def test_tall_cylinder_everywhere(self):
        c = cylinder((0, 0), 5, 0, 100)
        assert all(section_layer([c], h) == [c] for h in (20, 25, 30, 35, 40, 45, 50, 55))

    def test_empty_and_order(self):
        assert section_layer([], 20) == []
        polys = [unit_square(0, 0, 0, 50, "a"), unit_square(5, 5, 0, 10, "b"), unit_square(9, 9, 0, 60, "c")]
        out = section_layer(polys, 20)
        assert [p.name for p in out] == ["a", "c"]
        assert section_layer(out, 20) == out


class TestGrid:
    def test_empty_5x5_counts(self):
        g = build_grid(Region(0, 4, 0, 4), [], 1, 1)
        assert (g.m_B, g.m_I, g.m_O) == (16, 9, 0)
        assert g.m == 25

    def test_center_node_obstacle(self):
        sq = square((2, 2), 0.5, 0, 1)
        g = build_grid(Region(0, 4, 0, 4), [sq], 1, 1, inflation=0.0)
        assert g.m_O == 1 and g.m_I == 8
        assert g.kind[2, 2] == OBSTACLE

    def test_circle_three_classes_simply_connected(self):
        from scipy import ndimage

        c = cylinder((0, 0), 1.0, 0, 1)
        g = build_grid(Region(-4, 4, -2, 2), [c], 0.1, 0.1, inflation=0.0)
        assert g.m_B > 0 and g.m_I > 0 and g.m_O > 0
        obst = g.kind == OBSTACLE
        _, n_parts = ndimage.label(obst)
        _, n_holes = ndimage.label(~obst)
        assert n_parts == 1 and n_holes == 1

    def test_partition_exhaustive(self):
        g = build_grid(Region(0, 20, 0, 10), [square((10, 5), 3, 0, 1)], 1, 1)
        assert g.m_B + g.m_I + g.m_O == g.m
        assert set(np.unique(g.kind)) <= {BOUNDARY, INTERIOR, OBSTACLE}
        # interior nodes have four neighbours inside the grid
        jj, ii = np.nonzero(g.kind == INTERIOR)
        assert ii.min() >= 1 and jj.min() >= 1 and ii.max() <= g.nx - 2 and jj.max() <= g.ny - 2

    def test_full_span_obstacle(self):
        wall = ObstaclePolygon(((4, -1), (6, -1), (6, 11), (4, 11)), 0, 1)
        with pytest.raises(ObstacleTouchesBoundary):
            build_grid(Region(0, 10, 0, 10), [wall], 1, 1)

    def test_inflation_monotone(self):
        r = Region(0, 40, 0, 20)
        sq = square((20, 10), 4, 0, 1)
        small = build_grid(r, [sq], 1, 1, inflation=0.0).kind == OBSTACLE
        big = build_grid(r, [sq], 1, 1, inflation=2.0).kind == OBSTACLE
        assert np.all(big[small])
        assert big.sum() > small.sum()

    def test_bad_steps(self):
        with pytest.raises(ValueError):
            build_grid(Region(0, 10, 0, 10), [], 3, 1)
        with pytest.raises(ValueError):
            build_grid(Region(0, 1, 0, 1), [], 1, 1)

    def test_boundary_points_inside(self):
        tri = ((0, 0), (2, 0), (0, 2))
        assert points_in_polygon(np.array([1.0, 0.0, 1.0]), np.array([0.0, 1.0, 1.0]), tri).all()
        assert not points_in_polygon(np.array([1.5]), np.array([1.5]), tri)[0]
