"""Local sub-problems on regions.

A region's fine-node set splits into interior and boundary nodes; the
conductivity-weighted Laplacian on the interior drives three operations:
harmonic extension of boundary data, bubble solves (zero boundary data,
interior forcing), and the resulting harmonic/bubble split of any local
solution.  A factorized :class:`RegionOperator` is reused across many
right-hand sides.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .coefficient import CoefficientField
from .fem import FineField, SolverError, assemble_cell_indicator_loads, assemble_mass, assemble_stiffness
from .mesh import Edge, Region, TwoLevelMesh


@dataclass
class EdgeFunction:
    """Values of a P1 function along a coarse edge, endpoints included."""

    edge_index: int
    values: np.ndarray

    @property
    def interior_values(self) -> np.ndarray:
        return self.values[1:-1]

    @property
    def endpoint_values(self) -> tuple[float, float]:
        return float(self.values[0]), float(self.values[-1])


@dataclass
class LocalSplit:
    """Harmonic/bubble decomposition of a local solution."""

    harmonic: FineField
    bubble: FineField


class RegionOperator:
    """Assembled and factorized local problem on one region."""

    def __init__(self, mesh: TwoLevelMesh, a: CoefficientField, region: Region,
                 tol: float = 1e-10):
        self.mesh = mesh
        self.a = a
        self.region = region
        self.tol = tol
        self.A = assemble_stiffness(mesh, a, region)
        self.M = assemble_mass(mesh, region)
        self.interior = np.flatnonzero(~region.is_boundary)
        self.boundary = np.flatnonzero(region.is_boundary)
        A_csr = self.A
        self.A_II = A_csr[self.interior][:, self.interior].tocsc()
        self.A_IB = A_csr[self.interior][:, self.boundary].tocsr()
        self.A_BB = A_csr[self.boundary][:, self.boundary].tocsr()
        try:
            self._lu = spla.splu(self.A_II)
        except RuntimeError as exc:  # pragma: no cover
            raise SolverError(f"interior factorization failed: {exc}") from exc

    # -------------------------------------------------------------- #

    def _boundary_values(self, trace) -> np.ndarray:
        trace = np.asarray(trace, dtype=float)
        if trace.shape == (self.boundary.size,):
            return trace
        if trace.shape == (self.region.num_nodes,):
            return trace[self.boundary]
        raise ValueError(
            f"trace must cover the {self.boundary.size} boundary nodes "
            f"(or all {self.region.num_nodes} region nodes)"
        )

    def solve_interior(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        x = self._lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SolverError("local solve produced non-finite values")
        scale = np.linalg.norm(rhs)
        if scale > 0:
            # refinement recovers the digits lost on high-contrast systems
            for _ in range(2):
                r = rhs - self.A_II @ x
                if np.linalg.norm(r) <= 0.1 * self.tol * scale:
                    break
                x = x + self._lu.solve(r)
        return x

    def check_interior_residual(self, x: np.ndarray, rhs: np.ndarray):
        scale = np.linalg.norm(rhs)
        if scale > 0:
            res = np.linalg.norm(self.A_II @ x - rhs) / scale
            if res > self.tol:
                raise SolverError(f"local solve residual {res:.3e} exceeds {self.tol:.1e}")

    def extend(self, trace) -> np.ndarray:
        """Harmonic extension of boundary data; returns full nodal vector."""
        g = self._boundary_values(trace)
        rhs = -(self.A_IB @ g)
        x = self.solve_interior(rhs)
        self.check_interior_residual(x, rhs)
        out = np.zeros(self.region.num_nodes)
        out[self.boundary] = g
        out[self.interior] = x
        return out

    def extension_matrix(self, boundary_cols: np.ndarray) -> np.ndarray:
        """Interior block of harmonic extensions of unit boundary hats.

        ``boundary_cols`` indexes into this operator's boundary node list;
        returns a dense (n_interior, len(boundary_cols)) array.
        """
        rhs = -self.A_IB[:, boundary_cols].toarray()
        return self.solve_interior(rhs)

    def bubble(self, f_nodal: np.ndarray) -> np.ndarray:
        """Solve with zero boundary data and P1 forcing ``f_nodal``."""
        rhs = (self.M @ np.asarray(f_nodal, dtype=float))[self.interior]
        x = self.solve_interior(rhs)
        self.check_interior_residual(x, rhs)
        out = np.zeros(self.region.num_nodes)
        out[self.interior] = x
        return out

    def bubble_from_rhs(self, rhs_full: np.ndarray) -> np.ndarray:
        """Bubble solve from an already-assembled load vector."""
        rhs = rhs_full[self.interior] if rhs_full.shape == (self.region.num_nodes,) else rhs_full
        x = self.solve_interior(rhs)
        out = np.zeros(self.region.num_nodes)
        out[self.interior] = x
        return out

    def cell_indicator_bubbles(self) -> np.ndarray:
        """Bubbles of unit forcing per coarse cell, as full nodal columns."""
        loads = assemble_cell_indicator_loads(self.mesh, self.region)
        x = self.solve_interior(loads[self.interior])
        out = np.zeros((self.region.num_nodes, loads.shape[1]))
        out[self.interior] = x
        return out

    def energy_product(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(u @ (self.A @ v))


# ---------------------------------------------------------------------- #
# module-level operations
# ---------------------------------------------------------------------- #

def harmonic_extension(mesh: TwoLevelMesh, a: CoefficientField, region: Region,
                       trace, tol: float = 1e-10) -> FineField:
    op = RegionOperator(mesh, a, region, tol=tol)
    return FineField(region, op.extend(trace))


def bubble_solve(mesh: TwoLevelMesh, a: CoefficientField, region: Region,
                 f: FineField, tol: float = 1e-10) -> FineField:
    if f.region.key != region.key:
        raise ValueError("forcing field must live on the target region")
    op = RegionOperator(mesh, a, region, tol=tol)
    return FineField(region, op.bubble(f.values))


def split_local(mesh: TwoLevelMesh, a: CoefficientField, region: Region,
                u: FineField, f: FineField | None = None,
                ortho_tol: float = 1e-8) -> LocalSplit:
    """Split a local solution into harmonic and bubble parts.

    The parts reconstruct ``u`` exactly by construction; their energy
    product must vanish (relative to the part norms) or ``u`` was not a
    local solution and a ValueError is raised.
    """
    if u.region.key != region.key:
        raise ValueError("field must live on the target region")
    op = RegionOperator(mesh, a, region)
    harmonic = op.extend(u.values[op.boundary])
    bubble = u.values - harmonic
    cross = op.energy_product(harmonic, bubble)
    scale = np.sqrt(max(op.energy_product(harmonic, harmonic), 0.0))
    scale *= np.sqrt(max(op.energy_product(bubble, bubble), 0.0))
    if scale > 0 and abs(cross) / scale > ortho_tol:
        raise ValueError(
            f"inconsistency: parts are not energy-orthogonal "
            f"({abs(cross) / scale:.3e}); input does not solve the local equation"
        )
    return LocalSplit(FineField(region, harmonic), FineField(region, bubble))


def edge_trace(field: FineField, edge: Edge) -> EdgeFunction:
    """Restrict a field to a coarse edge (endpoint values included)."""
    region = field.region
    if not region.contains_nodes(edge.fine_nodes):
        raise ValueError(f"edge {edge.index} not covered by the field's region")
    values = field.values[region.local_index(edge.fine_nodes)]
    return EdgeFunction(edge.index, values)
