"""P1 finite-element machinery on the fine mesh.

Assemblies are exact for piecewise-constant coefficients and run on any
Region (a union of coarse cells, or the whole domain).  Matrices are scipy
CSR; Dirichlet conditions are imposed by row/column elimination with a
lifted right-hand side, so the reduced systems stay symmetric positive
definite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficient import CoefficientField
from .mesh import Region, TwoLevelMesh


class SolverError(RuntimeError):
    """Linear solve failed (singular system or residual above tolerance)."""


@dataclass
class FineField:
    """Nodal values of a P1 function on a region's fine nodes."""

    region: Region
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.region.num_nodes,):
            raise ValueError(
                f"field length {self.values.shape} does not match region "
                f"node count {self.region.num_nodes}"
            )

    def copy(self) -> "FineField":
        return FineField(self.region, self.values.copy())


def _check_regions_match(a: Region, b: Region):
    if a.key != b.key:
        raise ValueError(f"region mismatch: {a.key} vs {b.key}")


# ---------------------------------------------------------------------- #
# assembly
# ---------------------------------------------------------------------- #

def _triangle_geometry(mesh: TwoLevelMesh, tris: np.ndarray):
    """Per-triangle hat-gradient components and areas (vectorized)."""
    pts = mesh.triangles[tris]
    x = mesh.node_x[pts]
    y = mesh.node_y[pts]
    # b_i = y_j - y_k, c_i = x_k - x_j for cyclic (i, j, k)
    b = np.empty_like(x)
    c = np.empty_like(x)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        b[:, i] = y[:, j] - y[:, k]
        c[:, i] = x[:, k] - x[:, j]
    area2 = x[:, 0] * b[:, 0] + x[:, 1] * b[:, 1] + x[:, 2] * b[:, 2]
    return pts, b, c, area2


def assemble_stiffness(mesh: TwoLevelMesh, a: CoefficientField, region: Region,
                       triangles: np.ndarray | None = None) -> sp.csr_matrix:
    """Stiffness matrix of grad(u) . a grad(v) over the region's triangles."""
    if a.values.shape != (mesh.num_triangles,):
        raise ValueError("coefficient/mesh mismatch: wrong number of triangle values")
    tris = region.triangles if triangles is None else triangles
    pts, b, c, area2 = _triangle_geometry(mesh, tris)
    coef = a.values[tris] / (2.0 * area2)
    local = np.einsum("t,ti,tj->tij", coef, b, b) + np.einsum("t,ti,tj->tij", coef, c, c)
    loc = region.local_index(pts.ravel()).reshape(pts.shape)
    rows = np.repeat(loc, 3, axis=1).ravel()
    cols = np.tile(loc, (1, 3)).ravel()
    n = region.num_nodes
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    return mat


def assemble_mass(mesh: TwoLevelMesh, region: Region,
                  triangles: np.ndarray | None = None) -> sp.csr_matrix:
    """Consistent P1 mass matrix over the region's triangles."""
    tris = region.triangles if triangles is None else triangles
    pts, _, _, area2 = _triangle_geometry(mesh, tris)
    base = (np.ones((3, 3)) + np.eye(3)) / 24.0
    local = area2[:, None, None] * base[None, :, :]
    loc = region.local_index(pts.ravel()).reshape(pts.shape)
    rows = np.repeat(loc, 3, axis=1).ravel()
    cols = np.tile(loc, (1, 3)).ravel()
    n = region.num_nodes
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    return mat


def assemble_cell_indicator_loads(mesh: TwoLevelMesh, region: Region) -> np.ndarray:
    """Load vectors for unit piecewise-constant forcing per coarse cell.

    Column c holds integral(hat_v) over region-cell c, i.e. area/3 summed
    from each triangle of that cell to its three vertices.
    """
    out = np.zeros((region.num_nodes, region.cells.size))
    for col, cell in enumerate(region.cells):
        tris = mesh.cell_triangles(int(cell))
        pts, _, _, area2 = _triangle_geometry(mesh, tris)
        loc = region.local_index(pts.ravel())
        np.add.at(out[:, col], loc, np.repeat(area2 / 6.0, 3))
    return out


# ---------------------------------------------------------------------- #
# SPD solves
# ---------------------------------------------------------------------- #

class SpdSolver:
    """Factorize once, solve many right-hand sides with a residual check."""

    def __init__(self, A: sp.spmatrix, tol: float = 1e-10):
        self.A = A.tocsc()
        self.tol = tol
        if self.A.shape[0] != self.A.shape[1]:
            raise ValueError("matrix must be square")
        try:
            self._lu = spla.splu(self.A)
        except RuntimeError as exc:  # pragma: no cover - depends on input
            raise SolverError(f"factorization failed: {exc}") from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SolverError("singular system: factorization produced non-finite values")
        norm_b = np.linalg.norm(b)
        if norm_b > 0.0:
            for _ in range(2):  # refinement for badly conditioned systems
                r = b - self.A @ x
                if np.linalg.norm(r) <= 0.1 * self.tol * norm_b:
                    break
                x = x + self._lu.solve(r)
            residual = np.linalg.norm(self.A @ x - b) / norm_b
            if residual > self.tol:
                raise SolverError(f"solve did not reach tolerance: residual {residual:.3e} > {self.tol:.1e}")
        return x


def solve_spd(A: sp.spmatrix, b: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Solve an SPD system to relative residual ``tol`` (deterministic)."""
    return SpdSolver(A, tol=tol).solve(b)


# ---------------------------------------------------------------------- #
# norms
# ---------------------------------------------------------------------- #

def energy_norm(field: FineField, mesh: TwoLevelMesh, a: CoefficientField,
                region: Region | None = None) -> float:
    region = field.region if region is None else region
    _check_regions_match(field.region, region)
    K = assemble_stiffness(mesh, a, region)
    return float(np.sqrt(max(field.values @ (K @ field.values), 0.0)))


def l2_norm(field: FineField, mesh: TwoLevelMesh, region: Region | None = None) -> float:
    region = field.region if region is None else region
    _check_regions_match(field.region, region)
    M = assemble_mass(mesh, region)
    return float(np.sqrt(max(field.values @ (M @ field.values), 0.0)))


def norm(field: FineField, kind: str, mesh: TwoLevelMesh,
         a: CoefficientField | None = None, region: Region | None = None) -> float:
    """Energy or L2 norm of a P1 field; kind in {'energy', 'l2'}."""
    if kind == "energy":
        if a is None:
            raise ValueError("energy norm requires a coefficient field")
        return energy_norm(field, mesh, a, region)
    if kind == "l2":
        return l2_norm(field, mesh, region)
    raise ValueError(f"unknown norm kind {kind!r}")
