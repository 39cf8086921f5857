"""Shared oracles for the test-suite."""

from __future__ import annotations

import heapq

import numpy as np

from streamway.airspace import INTERIOR, OBSTACLE, ObstaclePolygon, Region, build_grid, cylinder
from streamway.flow import AnalyticFlowSpec, analytic_potential, solve_laplace

CYL_REGION = Region(-4.0, 4.0, -2.0, 2.0)
CYL_SPEC = AnalyticFlowSpec(((0.0, 0.0),), (1.0,))


def cylinder_error(h: float) -> float:
    """Max interior |psi_numeric - psi_exact| for the unit cylinder on the 8x4 domain.

    Every fixed node (border and obstacle nodes next to the fluid) carries the exact
    stream value, so the only error left is the stencil's truncation error.
    """
    grid = build_grid(CYL_REGION, [cylinder((0.0, 0.0), 1.0, 0, 1)], h, h, inflation=0.0)
    X, Y = grid.coords()
    exact = np.zeros(X.shape)
    far = np.hypot(X, Y) > 0.5 * h
    exact[far] = analytic_potential(CYL_SPEC, X[far], Y[far]).imag
    fixed = exact.copy()
    obst = grid.kind == OBSTACLE
    touching = np.zeros_like(obst)
    inner = grid.kind == INTERIOR
    touching[1:, :] |= inner[:-1, :]
    touching[:-1, :] |= inner[1:, :]
    touching[:, 1:] |= inner[:, :-1]
    touching[:, :-1] |= inner[:, 1:]
    fixed[obst & ~touching] = 0.0
    psi, _ = solve_laplace(grid, fixed, tol=1e-10)
    return float(np.abs(psi - exact)[inner].max())


def dijkstra_to_goal(transitions, goal: int) -> np.ndarray:
    """Label-setting shortest-path costs to `goal` on the reversed transition graph."""
    n = len(transitions)
    rev = [[] for _ in range(n)]
    for s, outs in enumerate(transitions):
        for _, s2, c in outs:
            if s2 != s:
                rev[s2].append((s, c))
    dist = np.full(n, np.inf)
    dist[goal] = 0.0
    heap = [(0.0, goal)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, c in rev[u]:
            nd = d + c
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def random_polygons(rng, region: Region, k: int, size=(0.05, 0.2)) -> list[ObstaclePolygon]:
    """k random convex-ish polygons (star-shaped around a centre) away from the border."""
    out = []
    w, h = region.width, region.height
    for n in range(k):
        cx = rng.uniform(region.x_min + 0.25 * w, region.x_max - 0.25 * w)
        cy = rng.uniform(region.y_min + 0.25 * h, region.y_max - 0.25 * h)
        sides = int(rng.integers(3, 8))
        r = rng.uniform(*size) * min(w, h)
        ang = np.sort(rng.uniform(0, 2 * np.pi, sides))
        rad = r * rng.uniform(0.6, 1.0, sides)
        verts = tuple(zip(cx + rad * np.cos(ang), cy + rad * np.sin(ang)))
        try:
            out.append(ObstaclePolygon(verts, 0, 10, name=f"p{n}"))
        except ValueError:
            continue
    return out
