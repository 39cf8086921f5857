"""Streamline extraction, per-layer corridor sets and waypoint discretization."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .airspace import Layer, points_in_polygon
from .errors import BrokenContour, DegeneratePolyline, LevelOnObstacle
from .flow import FlowField

logger = logging.getLogger(__name__)

DEFAULT_COUNTS = {"odd": 10, "even": 18}
DEFAULT_SPACING = 10.0

# cell edges: 0 bottom, 1 right, 2 top, 3 left
# corners: 0 BL, 1 BR, 2 TR, 3 TL
_CORNER_EDGES = ((0, 3), (0, 1), (1, 2), (2, 3))
_EDGE_CORNERS = ((0, 1), (1, 2), (3, 2), (0, 3))
_OPPOSITE = (2, 3, 0, 1)
_STEP = ((0, -1), (1, 0), (0, 1), (-1, 0))  # (di, dj) to the neighbour across each edge


@dataclass
class Streamline:
    level: float
    polyline: np.ndarray  # (n, 2), oriented along the layer direction
    layer_index: int
    index: int = 0

    @property
    def arc_length(self) -> float:
        return float(np.hypot(*np.diff(self.polyline, axis=0).T).sum())


@dataclass(frozen=True)
class Waypoint:
    layer: int
    streamline: int
    k: int
    x: float
    y: float
    z: float


@dataclass
class CorridorSet:
    layer: Layer
    streamlines: list[Streamline]
    waypoints: list[np.ndarray] = field(default_factory=list)  # per streamline, (K, 2)

    @property
    def layer_index(self) -> int:
        return self.layer.index

    @property
    def n_c(self) -> int:
        return len(self.streamlines)

    def waypoint(self, streamline: int, k: int) -> Waypoint:
        x, y = self.waypoints[streamline][k]
        return Waypoint(self.layer.index, streamline, k, float(x), float(y), self.layer.altitude)


def default_levels(field: FlowField, n_c: int) -> list[float]:
    """n_c levels spread over the boundary psi span, keeping clear of the obstacle level 0.

    When 0 lies strictly inside the span, levels are split between the negative and
    positive sides in proportion to their lengths; on a side of length L holding k
    levels the spacing is L/(k+2) and the first slot next to 0 stays empty, so every
    level sits more than one spacing away from 0.
    """
    if n_c < 1:
        raise ValueError("n_c must be >= 1")
    lo, hi = field.boundary_range()
    if not (lo < 0 < hi):
        return [lo + (hi - lo) * j / (n_c + 1) for j in range(1, n_c + 1)]
    share = n_c * hi / (hi - lo)
    n_pos = int(np.floor(share + 0.5))
    if n_c >= 2:
        n_pos = min(max(n_pos, 1), n_c - 1)
    n_neg = n_c - n_pos
    levels = [lo * (j + 1) / (n_neg + 2) for j in range(n_neg, 0, -1)]
    levels += [hi * (j + 1) / (n_pos + 2) for j in range(1, n_pos + 1)]
    return levels


def _edge_point(x, y, psi, i, j, edge, level):
    (ca, cb) = _EDGE_CORNERS[edge]
    corners = ((i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1))
    ia, ja = corners[ca]
    ib, jb = corners[cb]
    va, vb = psi[ja, ia], psi[jb, ib]
    t = 0.0 if vb == va else (level - va) / (vb - va)
    return (x[ia] + t * (x[ib] - x[ia]), y[ja] + t * (y[jb] - y[ja]))


def _exit_edge(psi, i, j, entry, level):
    vals = (psi[j, i], psi[j, i + 1], psi[j + 1, i + 1], psi[j + 1, i])
    above = [v > level for v in vals]
    crossing = [e for e in range(4) if above[_EDGE_CORNERS[e][0]] != above[_EDGE_CORNERS[e][1]]]
    if entry not in crossing:
        return None
    if len(crossing) == 2:
        return crossing[0] if crossing[1] == entry else crossing[1]
    # saddle: corners on the other side of the cell average are isolated
    centre_above = sum(vals) / 4.0 > level
    for c in range(4):
        if above[c] != centre_above and entry in _CORNER_EDGES[c]:
            a, b = _CORNER_EDGES[c]
            return b if a == entry else a
    return None


def trace_level(field: FlowField, level: float, axis: str) -> np.ndarray:
    """Follow the marching-squares contour of `level` from the inflow side to the outflow side.

    For axis="x" the contour starts on the left border and must end on the right
    border; for axis="y" it runs bottom to top.
    """
    g = field.grid
    x, y, psi = g.x, g.y, field.psi
    nx, ny = g.nx, g.ny

    def brackets(a, b):
        return (a > level) != (b > level)

    start = None
    if axis == "x":
        for j in range(ny - 1):
            if brackets(psi[j, 0], psi[j + 1, 0]):
                start = (0, j, 3)
                break
    else:
        for i in range(nx - 1):
            if brackets(psi[0, i], psi[0, i + 1]):
                start = (i, 0, 0)
                break
    if start is None:
        raise BrokenContour(f"level {level:g} does not cross the inflow boundary")

    i, j, entry = start
    pts = [_edge_point(x, y, psi, i, j, entry, level)]
    for _ in range(4 * nx * ny):
        exit_ = _exit_edge(psi, i, j, entry, level)
        if exit_ is None:
            raise BrokenContour(f"contour of level {level:g} lost at cell ({i}, {j})")
        pts.append(_edge_point(x, y, psi, i, j, exit_, level))
        di, dj = _STEP[exit_]
        ni, nj = i + di, j + dj
        if not (0 <= ni < nx - 1 and 0 <= nj < ny - 1):
            wanted = 1 if axis == "x" else 2
            if exit_ != wanted:
                raise BrokenContour(f"contour of level {level:g} leaves through the wrong side")
            return _dedupe(np.asarray(pts))
        i, j, entry = ni, nj, _OPPOSITE[exit_]
    raise BrokenContour(f"contour of level {level:g} does not terminate")


def _dedupe(pts: np.ndarray) -> np.ndarray:
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.any(np.abs(np.diff(pts, axis=0)) > 1e-12, axis=1)
    return pts[keep]


def _monotone(poly: np.ndarray, col: int, slack: float, level: float, axis: str) -> np.ndarray:
    """Drop vertices that step backwards along the axis by less than `slack`.

    Contours of the bilinear interpolant can wiggle by a fraction of a cell next to
    sharp obstacle corners; anything larger means the level curve genuinely turns back.
    """
    keep = [0]
    top = poly[0, col]
    for n in range(1, len(poly)):
        c = poly[n, col]
        if c > top:
            keep.append(n)
            top = c
        elif top - c > slack:
            raise BrokenContour(f"contour of level {level:g} is not monotone along {axis}")
    return poly[keep]


def extract_streamlines(field: FlowField, levels: Sequence[float], layer: Layer | None = None,
                        axis: str | None = None, direction: int = 1) -> list[Streamline]:
    if layer is not None:
        axis, direction = layer.axis, layer.direction
    axis = axis or (field.bc.axis if field.bc else "x")
    lo, hi = field.fixed_range()
    g = field.grid
    col = 0 if axis == "x" else 1
    cell = g.dx if axis == "x" else g.dy
    out = []
    for idx, level in enumerate(levels):
        if level == 0:
            raise LevelOnObstacle("level 0 is the obstacle streamline")
        if not lo < level < hi:
            raise ValueError(f"level {level:g} outside fixed range ({lo:g}, {hi:g})")
        poly = _monotone(trace_level(field, level, axis), col, 0.5 * cell, level, axis)
        if direction < 0:
            poly = poly[::-1].copy()
        out.append(Streamline(float(level), poly, layer.index if layer else 0, idx))
    return out


def discretize(streamline: Streamline, spacing: float = DEFAULT_SPACING, z: float = 0.0) -> list[Waypoint]:
    pts = resample(streamline.polyline, spacing)
    return [Waypoint(streamline.layer_index, streamline.index, k, float(px), float(py), z)
            for k, (px, py) in enumerate(pts)]


def resample(polyline: np.ndarray, spacing: float) -> np.ndarray:
    """Points at arc length 0, s, 2s, ... along the polyline (endpoint only if it lands on a multiple)."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    poly = np.asarray(polyline, dtype=float)
    if len(poly) < 2:
        raise DegeneratePolyline("polyline needs at least two points")
    seg = np.hypot(*np.diff(poly, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total < spacing * (1 - 1e-9):
        raise DegeneratePolyline(f"arc length {total:g} shorter than spacing {spacing:g}")
    n = int(np.floor(total / spacing + 1e-9)) + 1
    targets = spacing * np.arange(n)
    targets[-1] = min(targets[-1], total)
    xs = np.interp(targets, cum, poly[:, 0])
    ys = np.interp(targets, cum, poly[:, 1])
    return np.column_stack([xs, ys])


@dataclass
class CorridorConfig:
    counts: dict = field(default_factory=lambda: dict(DEFAULT_COUNTS))
    spacing: float = DEFAULT_SPACING
    per_layer_counts: dict | None = None  # layer index -> count, overrides parity defaults

    def count_for(self, layer: Layer) -> int:
        if self.per_layer_counts and layer.index in self.per_layer_counts:
            return int(self.per_layer_counts[layer.index])
        return int(self.counts["odd" if layer.index % 2 == 1 else "even"])


def _overhangs(sections, region) -> bool:
    for sec in sections:
        v = np.asarray(sec.vertices)
        if (v[:, 0].min() <= region.x_min or v[:, 0].max() >= region.x_max
                or v[:, 1].min() <= region.y_min or v[:, 1].max() >= region.y_max):
            return True
    return False


def _crosses_obstacle(poly: np.ndarray, sections) -> bool:
    return any(points_in_polygon(poly[:, 0], poly[:, 1], sec.vertices).any() for sec in sections)


def build_corridor_set(field: FlowField, layer: Layer, config: CorridorConfig) -> CorridorSet:
    """Streamlines and waypoints for one layer.

    An obstacle that overhangs the region border leaves a sliver between itself and
    the wall where the boundary data force contours through the obstacle or bend
    them backwards; such streamlines are dropped, so a layer may carry fewer
    corridors than configured.
    """
    levels = default_levels(field, config.count_for(layer))
    sections = field.grid.sections
    overhang = _overhangs(sections, field.grid.region)
    lines = []
    for level in levels:
        try:
            lines.extend(extract_streamlines(field, [level], layer))
        except BrokenContour:
            if not overhang:
                raise
            logger.info("layer %d: dropped broken contour of level %g next to an overhanging obstacle",
                        layer.index, level)
    kept = [s for s in lines if not _crosses_obstacle(s.polyline, sections)]
    if len(kept) < len(lines):
        logger.info("layer %d: dropped %d streamline(s) crossing an obstacle", layer.index, len(lines) - len(kept))
    for i, s in enumerate(kept):
        s.index = i
    wps = [resample(s.polyline, config.spacing) for s in kept]
    return CorridorSet(layer, kept, wps)


def build_corridor_sets(fields: Sequence[FlowField], layers: Sequence[Layer],
                        config: CorridorConfig | None = None) -> list[CorridorSet]:
    config = config or CorridorConfig()
    if len(fields) != len(layers):
        raise ValueError("one field per layer")
    return [build_corridor_set(f, layer, config) for f, layer in zip(fields, layers)]
