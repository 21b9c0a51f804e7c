"""Per-edge oversampling operator, weighted SVD, and edge basis truncation.

For an interior coarse edge e inside its oversampling patch W, local
solutions are parametrized by boundary traces on the patch rim (fine hats,
excluding nodes on the domain boundary) plus per-cell constant forcings.
The oversampling operator maps such a solution to its interpolation
residual on e; its singular value decomposition, weighted by the natural
Gram matrices of domain and range, yields the edge boundary basis.

Domain inner product: energy + L2 of the harmonic part plus L2 of the
forcing.  Range inner product: half the energy of the single-edge harmonic
extension into each neighbor cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .coefficient import CoefficientField
from .fem import SolverError
from .local import EdgeFunction, RegionOperator
from .mesh import Edge, Region, TwoLevelMesh


@dataclass
class DomainSpace:
    """Discretized space of local solutions on an oversampling patch.

    Coordinates are (trace values on patch-rim fine hats) + (one constant
    forcing per coarse cell).  ``trace_map`` evaluates a coordinate vector
    on the edge's fine nodes (endpoints included).
    """

    edge: Edge
    region: Region
    op: RegionOperator
    trace_nodes: np.ndarray     # global fine ids of rim dofs (ascending)
    trace_cols: np.ndarray      # positions within the patch boundary list
    n_trace: int
    n_forcing: int
    G_X: np.ndarray
    chol_lower: np.ndarray
    trace_map: np.ndarray       # (len(edge.fine_nodes), n)
    bubbles: np.ndarray         # full nodal columns, one per cell

    @property
    def n(self) -> int:
        return self.n_trace + self.n_forcing

    def realize(self, x: np.ndarray) -> np.ndarray:
        """Full nodal vector on the patch for domain coordinates ``x``."""
        x = np.asarray(x, dtype=float)
        g = np.zeros(self.op.boundary.size)
        g[self.trace_cols] = x[:self.n_trace]
        field = self.op.extend(g)
        if self.n_forcing:
            field = field + self.bubbles @ x[self.n_trace:]
        return field

    def gx_norm(self, x: np.ndarray) -> float:
        return float(np.sqrt(max(x @ (self.G_X @ x), 0.0)))


@dataclass
class OversamplingBundle:
    """Operator matrix, Gram matrices and SVD results for one edge."""

    edge_index: int
    P: np.ndarray
    G_X: np.ndarray
    G_Y: np.ndarray
    sigma: np.ndarray
    left_vectors: np.ndarray        # (n_interior_edge_nodes, n_sigma), Gram-orthonormal
    psi_traces: tuple[EdgeFunction, EdgeFunction]
    psi_objectives: tuple[float | None, float | None]
    n_trace: int
    n_forcing: int

    def left_edge_function(self, k: int) -> EdgeFunction:
        values = np.zeros(self.left_vectors.shape[0] + 2)
        values[1:-1] = self.left_vectors[:, k]
        return EdgeFunction(self.edge_index, values)


@dataclass
class EdgeBasisSet:
    """Kept singular vectors for one edge after thresholding."""

    edge_index: int
    sigma: np.ndarray
    functions: list[EdgeFunction]

    @property
    def count(self) -> int:
        return len(self.functions)


# ---------------------------------------------------------------------- #
# domain space
# ---------------------------------------------------------------------- #

_CHUNK = 256


def _scaled_cholesky(G: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor computed after Jacobi scaling.

    High-contrast coefficients make the Gram badly conditioned; scaling by
    the diagonal before factorizing keeps the backward error small.  The
    returned factor satisfies L @ L.T = G and is lower triangular.
    """
    if G.shape[0] == 0:
        return np.zeros((0, 0))
    d = np.sqrt(np.diag(G))
    if np.any(d <= 0):
        raise sla.LinAlgError("non-positive diagonal in Gram matrix")
    scaled = G / np.outer(d, d)
    return sla.cholesky(scaled, lower=True) * d[:, None]


def build_domain_space(mesh: TwoLevelMesh, a: CoefficientField, edge: Edge,
                       tol: float = 1e-10) -> DomainSpace:
    region = mesh.edge_patch(edge.index)
    op = RegionOperator(mesh, a, region, tol=tol)

    rim_nodes = region.nodes[op.boundary]
    keep = ~region.on_domain_boundary[op.boundary]
    trace_cols = np.flatnonzero(keep)
    trace_nodes = rim_nodes[trace_cols]
    n_trace = trace_cols.size
    n_forcing = region.cells.size

    E_int = op.extension_matrix(trace_cols) if n_trace else np.zeros((op.interior.size, 0))

    # Energy of extensions via the boundary Schur complement.
    A_BB_tt = op.A_BB[trace_cols][:, trace_cols].toarray() if n_trace else np.zeros((0, 0))
    A_IB_t = op.A_IB[:, trace_cols]
    energy = A_BB_tt + A_IB_t.T @ E_int

    # L2 Gram of extensions, chunked to bound peak memory.
    M_II = op.M[op.interior][:, op.interior].tocsr()
    M_IB_t = op.M[op.interior][:, op.boundary][:, trace_cols].tocsr()
    M_BB_tt = op.M[op.boundary][:, op.boundary][trace_cols][:, trace_cols].toarray() if n_trace else np.zeros((0, 0))
    mass = np.zeros((n_trace, n_trace))
    for c0 in range(0, n_trace, _CHUNK):
        c1 = min(c0 + _CHUNK, n_trace)
        mass[:, c0:c1] = E_int.T @ (M_II @ E_int[:, c0:c1])
    cross = M_IB_t.T @ E_int
    mass += cross + cross.T + M_BB_tt

    trace_block = energy + mass
    trace_block = 0.5 * (trace_block + trace_block.T)

    bubbles = op.cell_indicator_bubbles()

    n = n_trace + n_forcing
    G_X = np.zeros((n, n))
    G_X[:n_trace, :n_trace] = trace_block
    cell_area = mesh.H * mesh.H
    G_X[n_trace:, n_trace:] = cell_area * np.eye(n_forcing)

    # Evaluate every generator on the edge's fine nodes.
    inv_interior = np.full(region.num_nodes, -1)
    inv_interior[op.interior] = np.arange(op.interior.size)
    edge_local = region.local_index(edge.fine_nodes)
    trace_map = np.zeros((edge.fine_nodes.size, n))
    for row, l in enumerate(edge_local):
        ii = inv_interior[l]
        if ii >= 0:
            if n_trace:
                trace_map[row, :n_trace] = E_int[ii]
            trace_map[row, n_trace:] = bubbles[l]
        # rim nodes on the domain boundary evaluate to zero for every generator

    try:
        chol_lower = _scaled_cholesky(G_X)
    except sla.LinAlgError as exc:
        raise SolverError(f"domain Gram of edge {edge.index} is not SPD: {exc}") from exc

    return DomainSpace(
        edge=edge, region=region, op=op,
        trace_nodes=trace_nodes, trace_cols=trace_cols,
        n_trace=n_trace, n_forcing=n_forcing,
        G_X=G_X, chol_lower=chol_lower, trace_map=trace_map, bubbles=bubbles,
    )


# ---------------------------------------------------------------------- #
# range Gram
# ---------------------------------------------------------------------- #

def single_cell_edge_extension(mesh: TwoLevelMesh, cell_op: RegionOperator,
                               edge: Edge) -> tuple[np.ndarray, np.ndarray]:
    """Extensions of interior-edge hats into one neighbor cell.

    Boundary data is the hat on e and zero on the cell's other edges.
    Returns (interior extension block, boundary column positions).
    """
    region = cell_op.region
    cols = np.searchsorted(region.nodes[cell_op.boundary], edge.interior_nodes)
    if not np.array_equal(region.nodes[cell_op.boundary][cols], edge.interior_nodes):
        raise ValueError(f"edge {edge.index} does not border cell block {region.block}")
    E_int = cell_op.extension_matrix(cols)
    return E_int, cols


def build_range_gram(mesh: TwoLevelMesh, a: CoefficientField, edge: Edge,
                     cell_ops: dict[int, RegionOperator] | None = None,
                     tol: float = 1e-10) -> np.ndarray:
    """Gram of interior-edge hats in the two-cell extension energy.

    Averages the harmonic-extension energies over the two neighbor cells.
    """
    G = np.zeros((edge.interior_nodes.size,) * 2)
    for cell in edge.cells:
        op = cell_ops[cell] if cell_ops else RegionOperator(mesh, a, mesh.cell_region(cell), tol=tol)
        E_int, cols = single_cell_edge_extension(mesh, op, edge)
        S = op.A_BB[cols][:, cols].toarray() + op.A_IB[:, cols].T @ E_int
        G += 0.5 * S
    return 0.5 * (G + G.T)


# ---------------------------------------------------------------------- #
# interpolation traces
# ---------------------------------------------------------------------- #

def linear_psi_traces(mesh: TwoLevelMesh, edge: Edge) -> tuple[EdgeFunction, EdgeFunction]:
    """Linear hat traces on the edge; zero for an endpoint on the boundary."""
    m = edge.fine_nodes.size
    ramp = np.linspace(0.0, 1.0, m)
    first = np.zeros(m) if not mesh.edge_endpoint_is_interior(edge, 0) else 1.0 - ramp
    second = np.zeros(m) if not mesh.edge_endpoint_is_interior(edge, 1) else ramp
    return EdgeFunction(edge.index, first), EdgeFunction(edge.index, second)


def optimal_endpoint_traces(mesh: TwoLevelMesh, ds: DomainSpace,
                            constraint_tol: float = 1e-8):
    """Minimum-norm interpolation traces for the edge's endpoints.

    Minimizes the domain norm subject to point values (1, 0) resp. (0, 1)
    at the endpoints; endpoints on the domain boundary get the zero trace.
    Returns (trace_first, trace_second, objective values).
    """
    edge = ds.edge
    m = edge.fine_nodes.size
    active = [w for w in (0, 1) if mesh.edge_endpoint_is_interior(edge, w)]
    if not active:
        raise ValueError(f"edge {edge.index} has no interior endpoint")
    C = ds.trace_map[[0 if w == 0 else m - 1 for w in active], :]

    Y = sla.cho_solve((ds.chol_lower, True), C.T)
    S = C @ Y
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > 1e12:
        raise SolverError(
            f"rank-deficient point constraints on edge {edge.index} (cond {cond:.2e})"
        )

    traces: list[EdgeFunction] = [EdgeFunction(edge.index, np.zeros(m)),
                                  EdgeFunction(edge.index, np.zeros(m))]
    objectives: list[float | None] = [None, None]
    for slot, which in enumerate(active):
        d = np.zeros(len(active))
        d[slot] = 1.0
        x = Y @ np.linalg.solve(S, d)
        for _ in range(3):  # refine the constraints lost to Gram conditioning
            res = d - C @ x
            if np.max(np.abs(res)) < 1e-14:
                break
            x = x + Y @ np.linalg.solve(S, res)
        values = ds.trace_map @ x
        want = np.zeros(2)
        want[0 if which == 0 else 1] = 1.0
        err = max(abs(values[0] - want[0]), abs(values[-1] - want[1]))
        if err > constraint_tol:
            raise SolverError(
                f"interpolation trace on edge {edge.index} violates endpoint "
                f"constraints by {err:.3e}"
            )
        values[0], values[-1] = want
        traces[which] = EdgeFunction(edge.index, values)
        objectives[which] = float(x @ (ds.G_X @ x))
    return traces[0], traces[1], tuple(objectives)


# ---------------------------------------------------------------------- #
# operator assembly and SVD
# ---------------------------------------------------------------------- #

def assemble_oversampling_operator(mesh: TwoLevelMesh, ds: DomainSpace,
                                   psi_first: EdgeFunction,
                                   psi_second: EdgeFunction) -> np.ndarray:
    """Matrix of (restrict to edge) - (endpoint values times psi traces)."""
    edge = ds.edge
    for which, psi in ((0, psi_first), (1, psi_second)):
        v0, v1 = psi.values[0], psi.values[-1]
        if mesh.edge_endpoint_is_interior(edge, which):
            own, other = (v0, v1) if which == 0 else (v1, v0)
            if own != 1.0 or other != 0.0:
                raise ValueError(
                    f"psi trace for endpoint {which} of edge {edge.index} must "
                    f"take values (1, 0) at (own, other) endpoints"
                )
        elif np.any(psi.values != 0.0):
            raise ValueError(
                f"endpoint {which} of edge {edge.index} lies on the domain "
                f"boundary; its psi trace must be identically zero"
            )
    P = ds.trace_map[1:-1, :].copy()
    P -= np.outer(psi_first.interior_values, ds.trace_map[0, :])
    P -= np.outer(psi_second.interior_values, ds.trace_map[-1, :])
    return P


def weighted_svd(P: np.ndarray, G_X: np.ndarray, G_Y: np.ndarray,
                 chol_lower_x: np.ndarray | None = None):
    """Singular triplets of P between the G_X and G_Y inner products.

    Returns (sigma, left vectors) with left vectors G_Y-orthonormal in the
    original coordinates, each signed so its largest-magnitude entry is
    positive (ties break at the lowest index).
    """
    try:
        L_X = chol_lower_x if chol_lower_x is not None else _scaled_cholesky(G_X)
        L_Y = _scaled_cholesky(G_Y)
    except sla.LinAlgError as exc:
        raise SolverError(f"Gram matrix is not SPD: {exc}") from exc
    # B = L_Y^T P L_X^{-T}
    B = L_Y.T @ sla.solve_triangular(L_X, P.T, lower=True).T
    U, sigma, _ = np.linalg.svd(B, full_matrices=False)
    left = sla.solve_triangular(L_Y.T, U, lower=False)
    for k in range(left.shape[1]):
        i = int(np.argmax(np.abs(left[:, k])))
        if left[i, k] < 0:
            left[:, k] = -left[:, k]
    return sigma, left


def truncate_edge_basis(bundle: OversamplingBundle, eps: float) -> EdgeBasisSet:
    """Keep the left singular vectors with singular value >= eps."""
    if eps <= 0:
        raise ValueError("truncation threshold must be positive")
    kept = int(np.sum(bundle.sigma >= eps))
    return EdgeBasisSet(
        edge_index=bundle.edge_index,
        sigma=bundle.sigma[:kept].copy(),
        functions=[bundle.left_edge_function(k) for k in range(kept)],
    )


def build_edge_bundle(mesh: TwoLevelMesh, a: CoefficientField, edge_index: int,
                      interp_kind: str = "optimal",
                      cell_ops: dict[int, RegionOperator] | None = None,
                      tol: float = 1e-10) -> OversamplingBundle:
    """Full per-edge pipeline: domain space, psi traces, operator, SVD."""
    edge = mesh.edge(edge_index)
    ds = build_domain_space(mesh, a, edge, tol=tol)
    if interp_kind == "optimal":
        psi_first, psi_second, objectives = optimal_endpoint_traces(mesh, ds)
    elif interp_kind == "linear":
        psi_first, psi_second = linear_psi_traces(mesh, edge)
        objectives = (None, None)
    else:
        raise ValueError(f"unknown interpolation kind {interp_kind!r}")
    P = assemble_oversampling_operator(mesh, ds, psi_first, psi_second)
    G_Y = build_range_gram(mesh, a, edge, cell_ops=cell_ops, tol=tol)
    sigma, left = weighted_svd(P, ds.G_X, G_Y, chol_lower_x=ds.chol_lower)
    return OversamplingBundle(
        edge_index=edge_index, P=P, G_X=ds.G_X, G_Y=G_Y,
        sigma=sigma, left_vectors=left,
        psi_traces=(psi_first, psi_second), psi_objectives=objectives,
        n_trace=ds.n_trace, n_forcing=ds.n_forcing,
    )
