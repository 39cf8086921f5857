"""Layered airspace model: region, obstacle polygons, layers and the PDE node grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
import shapely.geometry as geom

from .errors import ObstacleTouchesBoundary

# node classes on the grid
INTERIOR = 0
BOUNDARY = 1
OBSTACLE = 2

CYLINDER_SIDES = 32


class ObstacleKind(str, Enum):
    BUILDING = "building"
    ATM_NO_FLY = "atm_no_fly"
    FAILED_UAS = "failed_uas"


@dataclass(frozen=True)
class Region:
    """Rectangular planar domain. Sides: C1 bottom, C2 right, C3 top, C4 left."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate region {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min


def _signed_area(vertices: Sequence[tuple[float, float]]) -> float:
    a = 0.0
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        a += x0 * y1 - x1 * y0
    return 0.5 * a


@dataclass(frozen=True)
class ObstaclePolygon:
    """Prism obstacle: a simple polygon extruded from base_altitude to top_altitude.

    Vertices are stored counterclockwise; clockwise input is reversed.
    """

    vertices: tuple[tuple[float, float], ...]
    base_altitude: float
    top_altitude: float
    kind: ObstacleKind = ObstacleKind.BUILDING
    name: str = ""

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise ValueError("obstacle polygon needs at least 3 vertices")
        if not self.base_altitude < self.top_altitude:
            raise ValueError("base_altitude must be below top_altitude")
        if not geom.Polygon(verts).is_valid:
            raise ValueError(f"obstacle polygon {self.name!r} is not simple")
        if _signed_area(verts) < 0:
            verts = verts[::-1]
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "kind", ObstacleKind(self.kind))

    @property
    def shape(self) -> geom.Polygon:
        return geom.Polygon(self.vertices)

    def contains(self, x, y):
        return points_in_polygon(np.atleast_1d(x), np.atleast_1d(y), self.vertices)


def cylinder(center: tuple[float, float], radius: float, base_altitude: float,
             top_altitude: float, kind=ObstacleKind.ATM_NO_FLY, name: str = "",
             sides: int = CYLINDER_SIDES) -> ObstaclePolygon:
    """Polygonize a vertical cylinder with a regular polygon circumscribing the circle."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    # circumscribed: every point of the true disk is inside the polygon
    r = radius / math.cos(math.pi / sides)
    cx, cy = center
    verts = tuple(
        (cx + r * math.cos(2 * math.pi * (k + 0.5) / sides),
         cy + r * math.sin(2 * math.pi * (k + 0.5) / sides))
        for k in range(sides)
    )
    return ObstaclePolygon(verts, base_altitude, top_altitude, kind, name)


def square(center: tuple[float, float], side: float, base_altitude: float,
           top_altitude: float, kind=ObstacleKind.BUILDING, name: str = "") -> ObstaclePolygon:
    cx, cy = center
    h = side / 2.0
    return ObstaclePolygon(((cx - h, cy - h), (cx + h, cy - h), (cx + h, cy + h), (cx - h, cy + h)),
                           base_altitude, top_altitude, kind, name)


@dataclass(frozen=True)
class Layer:
    index: int  # 1-based
    altitude: float
    axis: str  # "x" or "y"
    direction: int  # +1 or -1
    sections: tuple[ObstaclePolygon, ...] = ()

    def __post_init__(self):
        expected = "x" if self.index % 2 == 1 else "y"
        if self.axis != expected:
            raise ValueError(f"layer {self.index} must use axis {expected}")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")


# default direction table: L1 +x, L2 -y, L3 -x, L4 +y, repeating
_DIRECTION_CYCLE = (("x", 1), ("y", -1), ("x", -1), ("y", 1))


def default_direction(index: int) -> tuple[str, int]:
    return _DIRECTION_CYCLE[(index - 1) % 4]


def make_layers(altitudes: Sequence[float],
                directions: Sequence[tuple[str, int]] | None = None) -> list[Layer]:
    alts = list(altitudes)
    if any(b <= a for a, b in zip(alts, alts[1:])):
        raise ValueError("layer altitudes must be strictly increasing")
    if directions is None:
        directions = [default_direction(i + 1) for i in range(len(alts))]
    return [Layer(i + 1, float(h), ax, d) for i, (h, (ax, d)) in enumerate(zip(alts, directions))]


# ---------------------------------------------------------------------------
# geometry helpers

def points_in_polygon(px: np.ndarray, py: np.ndarray, vertices) -> np.ndarray:
    """Even-odd test; points on an edge count as inside."""
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    v = np.asarray(vertices, dtype=float)
    inside = np.zeros(px.shape, dtype=bool)
    n = len(v)
    for i in range(n):
        x0, y0 = v[i]
        x1, y1 = v[(i + 1) % n]
        crosses = (y0 > py) != (y1 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (px < xint)
    return inside | (distance_to_polygon(px, py, vertices) <= 1e-9)


def distance_to_polygon(px, py, vertices) -> np.ndarray:
    """Distance from points to the polygon boundary (not signed)."""
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    v = np.asarray(vertices, dtype=float)
    best = np.full(px.shape, np.inf)
    n = len(v)
    for i in range(n):
        ax, ay = v[i]
        bx, by = v[(i + 1) % n]
        dx, dy = bx - ax, by - ay
        seg2 = dx * dx + dy * dy
        t = np.clip(((px - ax) * dx + (py - ay) * dy) / seg2, 0.0, 1.0)
        d = np.hypot(px - (ax + t * dx), py - (ay + t * dy))
        np.minimum(best, d, out=best)
    return best


def inflated_mask(px, py, poly: ObstaclePolygon, inflation: float) -> np.ndarray:
    """Points inside the polygon or within `inflation` of its boundary."""
    inside = points_in_polygon(px, py, poly.vertices)
    if inflation > 0:
        inside |= distance_to_polygon(px, py, poly.vertices) <= inflation
    return inside


# ---------------------------------------------------------------------------
# operations

def merge_proximal_obstacles(polys: Sequence[ObstaclePolygon],
                             merge_distance: float) -> list[ObstaclePolygon]:
    """Replace groups of polygons closer than merge_distance by their convex hull.

    Repeats until no two output polygons are within merge_distance, since a new
    hull can reach a polygon that neither of its parts did.
    """
    current = list(polys)
    while True:
        n = len(current)
        parent = list(range(n))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        shapes = [p.shape for p in current]
        merged_any = False
        for i in range(n):
            for j in range(i + 1, n):
                if shapes[i].distance(shapes[j]) <= merge_distance:
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        parent[max(ri, rj)] = min(ri, rj)
                        merged_any = True
        if not merged_any:
            return current

        groups: dict[int, list[int]] = {}
        for i in range(n):
            groups.setdefault(find(i), []).append(i)
        out = []
        for root in sorted(groups):
            members = groups[root]
            if len(members) == 1:
                out.append(current[root])
                continue
            pts = [pt for m in members for pt in current[m].vertices]
            hull = geom.MultiPoint(pts).convex_hull
            coords = tuple(hull.exterior.coords)[:-1]
            first = current[members[0]]
            out.append(ObstaclePolygon(
                coords,
                min(current[m].base_altitude for m in members),
                max(current[m].top_altitude for m in members),
                first.kind,
                "+".join(current[m].name for m in members if current[m].name),
            ))
        current = out


def section_layer(polys: Iterable[ObstaclePolygon], h: float) -> list[ObstaclePolygon]:
    """Obstacles whose vertical extent contains altitude h, in input order."""
    return [p for p in polys if p.base_altitude <= h <= p.top_altitude]


@dataclass
class Grid:
    """Uniform node grid over a region. Arrays are indexed [row j (y), column i (x)]."""

    region: Region
    dx: float
    dy: float
    x: np.ndarray
    y: np.ndarray
    kind: np.ndarray
    sections: tuple[ObstaclePolygon, ...] = field(default=())
    inflation: float = 0.0

    @property
    def nx(self) -> int:
        return len(self.x)

    @property
    def ny(self) -> int:
        return len(self.y)

    @property
    def m(self) -> int:
        return self.nx * self.ny

    @property
    def m_B(self) -> int:
        return int(np.count_nonzero(self.kind == BOUNDARY))

    @property
    def m_I(self) -> int:
        return int(np.count_nonzero(self.kind == INTERIOR))

    @property
    def m_O(self) -> int:
        return int(np.count_nonzero(self.kind == OBSTACLE))

    def node_id(self, i: int, j: int) -> int:
        return j * self.nx + i

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y)

    def edges(self):
        """4-neighbour edges (a, b) with a < b, as flat node ids."""
        for j in range(self.ny):
            for i in range(self.nx):
                a = self.node_id(i, j)
                if i + 1 < self.nx:
                    yield a, a + 1
                if j + 1 < self.ny:
                    yield a, a + self.nx


def _axis_nodes(lo: float, hi: float, step: float, name: str) -> np.ndarray:
    if step <= 0:
        raise ValueError(f"{name} must be positive")
    cells = (hi - lo) / step
    n = int(round(cells))
    if abs(cells - n) > 1e-6 * max(1.0, cells):
        raise ValueError(f"region extent {hi - lo} is not a multiple of {name}={step}")
    if n + 1 < 3:
        raise ValueError(f"need at least 3 nodes along {name}")
    return lo + step * np.arange(n + 1)


def build_grid(region: Region, sections: Sequence[ObstaclePolygon], dx: float, dy: float,
               inflation: float | None = None) -> Grid:
    """Classify grid nodes as boundary, interior or (inflated) obstacle."""
    if inflation is None:
        inflation = max(dx, dy)
    x = _axis_nodes(region.x_min, region.x_max, dx, "dx")
    y = _axis_nodes(region.y_min, region.y_max, dy, "dy")
    X, Y = np.meshgrid(x, y)
    kind = np.full(X.shape, INTERIOR, dtype=np.int8)
    for poly in sections:
        kind[inflated_mask(X, Y, poly, inflation)] = OBSTACLE
    kind[0, :] = BOUNDARY
    kind[-1, :] = BOUNDARY
    kind[:, 0] = BOUNDARY
    kind[:, -1] = BOUNDARY

    inner = kind[1:-1, 1:-1]
    if inner.size:
        full_cols = np.flatnonzero(np.all(inner == OBSTACLE, axis=0))
        full_rows = np.flatnonzero(np.all(inner == OBSTACLE, axis=1))
        if full_cols.size:
            raise ObstacleTouchesBoundary(
                f"obstacle blocks the whole column at x={x[full_cols[0] + 1]:g}")
        if full_rows.size:
            raise ObstacleTouchesBoundary(
                f"obstacle blocks the whole row at y={y[full_rows[0] + 1]:g}")
    return Grid(region, float(dx), float(dy), x, y, kind, tuple(sections), float(inflation))
