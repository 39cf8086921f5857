"""Stream-function fields: closed-form superposition and finite-difference Laplace solve."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .airspace import BOUNDARY, INTERIOR, OBSTACLE, Grid, Region
from .errors import InconsistentCorners, PhiAbsent, SingularPoint, SolverDiverged

logger = logging.getLogger(__name__)

DIRECT_SOLVE_LIMIT = 250_000
SOR_OMEGA = 1.8
DEFAULT_TOL = 1e-8
CORNER_TOL = 1e-9


@dataclass(frozen=True)
class BoundaryConditionSpec:
    """Dirichlet data for the stream function on the region border.

    axis="x": left/right sides carry K1*y + K2, bottom/top are constant. The bottom
    constant is K4 (K3 = 0); the top constant is K4 + K1*(y_max - y_min) so all four
    corners agree with the side formula. axis="y" mirrors this with K3, K4 on
    bottom/top, K2 on the left side and K2 + K3*(x_max - x_min) on the right.
    """

    K1: float
    K2: float
    K3: float
    K4: float
    axis: str

    def __post_init__(self):
        if self.axis == "x":
            if self.K3 != 0 or self.K1 == 0:
                raise ValueError("axis=x requires K3 == 0 and K1 != 0")
        elif self.axis == "y":
            if self.K1 != 0 or self.K3 == 0:
                raise ValueError("axis=y requires K1 == 0 and K3 != 0")
        else:
            raise ValueError(f"unknown axis {self.axis!r}")

    @classmethod
    def centered(cls, region: Region, axis: str, gain: float = 1.0) -> BoundaryConditionSpec:
        """Constants that put the zero streamline on the region's midline.

        Obstacles are held at zero, so centering lets corridors pass on both sides.
        """
        if axis == "x":
            k2 = -gain * 0.5 * (region.y_min + region.y_max)
            return cls(gain, k2, 0.0, gain * region.y_min + k2, "x")
        k4 = -gain * 0.5 * (region.x_min + region.x_max)
        return cls(0.0, gain * region.x_min + k4, gain, k4, "y")


@dataclass
class FlowField:
    grid: Grid
    psi: np.ndarray  # (ny, nx)
    bc: BoundaryConditionSpec | None = None
    phi: np.ndarray | None = None
    residual: float = 0.0

    def fixed_range(self) -> tuple[float, float]:
        """min/max of psi over boundary and obstacle nodes."""
        fixed = self.psi[self.grid.kind != INTERIOR]
        return float(fixed.min()), float(fixed.max())

    def boundary_range(self) -> tuple[float, float]:
        b = self.psi[self.grid.kind == BOUNDARY]
        return float(b.min()), float(b.max())


@dataclass(frozen=True)
class AnalyticFlowSpec:
    centers: tuple[tuple[float, float], ...]
    radii: tuple[float, ...]

    def __post_init__(self):
        if len(self.centers) != len(self.radii):
            raise ValueError("one radius per center")
        if any(r <= 0 for r in self.radii):
            raise ValueError("radii must be positive")
        for a in range(len(self.radii)):
            for b in range(a + 1, len(self.radii)):
                d = np.hypot(self.centers[a][0] - self.centers[b][0],
                             self.centers[a][1] - self.centers[b][1])
                if d <= self.radii[a] + self.radii[b]:
                    raise ValueError("wrapping circles must be disjoint")


def analytic_potential(spec: AnalyticFlowSpec, x, y) -> np.ndarray:
    """Complex potential f(z) = sum_i (z - z_i + r_i^2 / (z - z_i))."""
    z = np.asarray(x, dtype=float) + 1j * np.asarray(y, dtype=float)
    f = np.zeros(z.shape, dtype=complex)
    for (cx, cy), r in zip(spec.centers, spec.radii):
        w = z - complex(cx, cy)
        if np.any(w == 0):
            raise SingularPoint(f"query point coincides with center ({cx}, {cy})")
        f += w + r * r / w
    return f


def analytic_field(spec: AnalyticFlowSpec, points: Sequence[tuple[float, float]]):
    """(phi, psi) pairs at the query points."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    f = analytic_potential(spec, pts[:, 0], pts[:, 1])
    return [(float(v.real), float(v.imag)) for v in f]


def analytic_flow_field(spec: AnalyticFlowSpec, grid: Grid) -> FlowField:
    """Closed-form phi/psi sampled on grid nodes; obstacle nodes are set to zero."""
    X, Y = grid.coords()
    free = grid.kind != OBSTACLE
    f = np.zeros(X.shape, dtype=complex)
    f[free] = analytic_potential(spec, X[free], Y[free])
    return FlowField(grid, f.imag.copy(), None, f.real.copy(), 0.0)


def boundary_values(grid: Grid, bc: BoundaryConditionSpec) -> dict[int, float]:
    """Fixed psi for every boundary and obstacle node, keyed by flat node id."""
    arr = boundary_array(grid, bc)
    ids = np.flatnonzero(grid.kind.ravel() != INTERIOR)
    flat = arr.ravel()
    return {int(k): float(flat[k]) for k in ids}


def boundary_array(grid: Grid, bc: BoundaryConditionSpec) -> np.ndarray:
    """Same as boundary_values but as an (ny, nx) array; interior entries are 0."""
    r = grid.region
    X, Y = grid.coords()
    out = np.zeros(X.shape)
    if bc.axis == "x":
        side = bc.K1 * Y + bc.K2
        bottom = bc.K4
        top = bc.K4 + bc.K1 * (r.y_max - r.y_min)
        corners = [(bc.K1 * r.y_min + bc.K2, bottom), (bc.K1 * r.y_max + bc.K2, top)]
        out[:, 0] = side[:, 0]
        out[:, -1] = side[:, -1]
        out[0, 1:-1] = bottom
        out[-1, 1:-1] = top
    else:
        side = bc.K3 * X + bc.K4
        left = bc.K2
        right = bc.K2 + bc.K3 * (r.x_max - r.x_min)
        corners = [(bc.K3 * r.x_min + bc.K4, left), (bc.K3 * r.x_max + bc.K4, right)]
        out[0, :] = side[0, :]
        out[-1, :] = side[-1, :]
        out[1:-1, 0] = left
        out[1:-1, -1] = right
    for a, b in corners:
        if abs(a - b) > CORNER_TOL:
            raise InconsistentCorners(f"corner values disagree: {a} vs {b}")
    out[grid.kind == OBSTACLE] = 0.0
    out[grid.kind == INTERIOR] = 0.0
    return out


@dataclass
class LaplaceSystem:
    """A u = b over interior nodes (A is the negated 5-point Laplacian, SPD)."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    interior: np.ndarray  # flat node ids, row order of the system


def assemble_system(grid: Grid, fixed: np.ndarray | Mapping[int, float] | None = None) -> LaplaceSystem:
    """Five-point stencil rows for interior nodes; known neighbour values go to the rhs."""
    nx, ny = grid.nx, grid.ny
    kind = grid.kind.ravel()
    if fixed is None:
        fvals = np.zeros(nx * ny)
    elif isinstance(fixed, np.ndarray):
        fvals = fixed.ravel().astype(float)
    else:
        fvals = np.zeros(nx * ny)
        for k, v in fixed.items():
            fvals[k] = v

    interior = np.flatnonzero(kind == INTERIOR)
    n = interior.size
    if n == 0:
        return LaplaceSystem(sp.csr_matrix((0, 0)), np.zeros(0), interior)
    row_of = np.full(nx * ny, -1, dtype=np.int64)
    row_of[interior] = np.arange(n)

    cx = 1.0 / grid.dx ** 2
    cy = 1.0 / grid.dy ** 2
    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [np.full(n, 2 * cx + 2 * cy)]
    rhs = np.zeros(n)
    for offset, c in ((-1, cx), (1, cx), (-nx, cy), (nx, cy)):
        nb = interior + offset
        nb_row = row_of[nb]
        unknown = nb_row >= 0
        rows.append(np.flatnonzero(unknown))
        cols.append(nb_row[unknown])
        vals.append(np.full(int(unknown.sum()), -c))
        rhs[~unknown] += c * fvals[nb[~unknown]]
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return LaplaceSystem(A, rhs, interior)


def stencil_residual(grid: Grid, psi: np.ndarray) -> float:
    """Max stencil defect over interior nodes, relative to diag * (span of fixed values)."""
    system = assemble_system(grid, psi)
    if system.interior.size == 0:
        return 0.0
    u = psi.ravel()[system.interior]
    defect = np.abs(system.matrix @ u - system.rhs).max()
    fixed = psi[grid.kind != INTERIOR]
    span = max(float(fixed.max() - fixed.min()), 1e-300)
    diag = 2.0 / grid.dx ** 2 + 2.0 / grid.dy ** 2
    return float(defect / (diag * span))


def sor_solve(grid: Grid, fixed: np.ndarray, tol: float, omega: float = SOR_OMEGA,
              max_sweeps: int | None = None) -> np.ndarray:
    """Red-black successive over-relaxation on the node array; fixed sweep order."""
    psi = fixed.astype(float).copy()
    interior = grid.kind == INTERIOR
    if not interior.any():
        return psi
    if max_sweeps is None:
        max_sweeps = 50 * int(interior.sum())
    cx = 1.0 / grid.dx ** 2
    cy = 1.0 / grid.dy ** 2
    diag = 2 * cx + 2 * cy
    jj, ii = np.indices(psi.shape)
    colors = [interior & ((ii + jj) % 2 == c) for c in (0, 1)]
    colors = [c[1:-1, 1:-1] for c in colors]
    fixed_vals = psi[~interior]
    span = max(float(fixed_vals.max() - fixed_vals.min()), 1e-300)
    for sweep in range(max_sweeps):
        for mask in colors:
            inner = psi[1:-1, 1:-1]
            gs = (cx * (psi[1:-1, :-2] + psi[1:-1, 2:]) + cy * (psi[:-2, 1:-1] + psi[2:, 1:-1])) / diag
            inner[mask] += omega * (gs[mask] - inner[mask])
        if sweep % 10 == 9 and stencil_residual(grid, psi) <= tol:
            return psi
    if stencil_residual(grid, psi) <= tol:
        return psi
    raise SolverDiverged(f"SOR did not reach tol={tol} in {max_sweeps} sweeps (span {span:g})")


def solve_laplace(grid: Grid, fixed: np.ndarray, tol: float = DEFAULT_TOL,
                  method: str = "auto") -> tuple[np.ndarray, float]:
    """Solve for interior psi given fixed values on all other nodes. Returns (psi, residual)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    psi = fixed.astype(float).copy()
    psi[grid.kind == INTERIOR] = 0.0
    m_I = grid.m_I
    if method == "auto":
        method = "direct" if m_I <= DIRECT_SOLVE_LIMIT else "sor"
    if m_I:
        if method == "direct":
            system = assemble_system(grid, psi)
            u = spla.spsolve(system.matrix.tocsc(), system.rhs)
            flat = psi.ravel()
            flat[system.interior] = u
            psi = flat.reshape(psi.shape)
        elif method == "sor":
            psi = sor_solve(grid, psi, tol)
        else:
            raise ValueError(f"unknown method {method!r}")
    residual = stencil_residual(grid, psi)
    if not np.isfinite(residual) or residual > tol:
        raise SolverDiverged(f"residual {residual:g} exceeds tol {tol:g}")
    return psi, residual


def solve_stream_function(grid: Grid, bc: BoundaryConditionSpec, tol: float = DEFAULT_TOL,
                          method: str = "auto") -> FlowField:
    fixed = boundary_array(grid, bc)
    psi, residual = solve_laplace(grid, fixed, tol, method)
    logger.debug("solved %dx%d field, m_I=%d, residual=%.3g", grid.nx, grid.ny, grid.m_I, residual)
    return FlowField(grid, psi, bc, None, residual)


def verify_cauchy_riemann(field: FlowField) -> float:
    """Max |dPhi/dx - dPsi/dy|, |dPhi/dy + dPsi/dx| by central differences.

    Only nodes whose whole stencil avoids obstacle nodes are sampled.
    """
    if field.phi is None:
        raise PhiAbsent("field has no potential function")
    g = field.grid
    phi, psi = field.phi, field.psi
    free = g.kind != OBSTACLE
    ok = free[1:-1, 1:-1] & free[1:-1, :-2] & free[1:-1, 2:] & free[:-2, 1:-1] & free[2:, 1:-1]
    if not ok.any():
        return 0.0
    phix = (phi[1:-1, 2:] - phi[1:-1, :-2]) / (2 * g.dx)
    phiy = (phi[2:, 1:-1] - phi[:-2, 1:-1]) / (2 * g.dy)
    psix = (psi[1:-1, 2:] - psi[1:-1, :-2]) / (2 * g.dx)
    psiy = (psi[2:, 1:-1] - psi[:-2, 1:-1]) / (2 * g.dy)
    d1 = np.abs(phix - psiy)[ok]
    d2 = np.abs(phiy + psix)[ok]
    return float(max(d1.max(), d2.max()))


def write_field_dump(field: FlowField, path) -> None:
    """Plain-text dump: a header line then one row of psi per grid row (y ascending)."""
    g = field.grid
    header = (f"nx={g.nx} ny={g.ny} dx={g.dx!r} dy={g.dy!r} "
              f"x0={g.region.x_min!r} y0={g.region.y_min!r}")
    np.savetxt(path, field.psi, fmt="%.12e", header=header)


def read_field_dump(path) -> tuple[dict, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().lstrip("#").split()
    meta = {}
    for tok in header:
        k, v = tok.split("=")
        meta[k] = int(v) if k in ("nx", "ny") else float(v)
    psi = np.loadtxt(path, ndmin=2)
    return meta, psi
