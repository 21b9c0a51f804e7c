"""Trial-space construction: interpolation basis, edge basis, coarse matrix.

Nodal interpolation functions take value one at their coarse node, zero at
every other coarse node, with per-cell harmonic interiors; their edge
traces are either linear hats or the minimum-norm traces from each edge's
oversampling problem.  Edge functions extend kept singular vectors into
the two neighbor cells.  The offline artifact bundles the basis vectors
with the coarse stiffness matrix for online reuse.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .coefficient import CoefficientField
from .fem import assemble_stiffness
from .local import EdgeFunction, RegionOperator
from .mesh import Edge, TwoLevelMesh
from .oversampling import (
    assemble_oversampling_operator,
    build_domain_space,
    build_range_gram,
    linear_psi_traces,
    optimal_endpoint_traces,
    weighted_svd,
)


@dataclass
class MsBasisFunction:
    """Sparse fine-node vector of one trial-space member."""

    kind: str                  # 'node' or 'edge'
    anchor: int                # interior coarse node index, or edge index
    support_cells: np.ndarray
    nodes: np.ndarray          # global fine ids, ascending
    values: np.ndarray

    def scatter(self, out: np.ndarray):
        out[self.nodes] += self.values


def _merge_cell_pieces(kind: str, anchor: int, cells, pieces) -> MsBasisFunction:
    """Combine per-cell nodal vectors; shared edge nodes carry equal values."""
    nodes = np.concatenate([p[0] for p in pieces])
    values = np.concatenate([p[1] for p in pieces])
    order = np.argsort(nodes, kind="stable")
    nodes = nodes[order]
    values = values[order]
    first = np.ones(nodes.size, dtype=bool)
    first[1:] = nodes[1:] != nodes[:-1]
    nodes = nodes[first]
    values = values[first]
    keep = values != 0.0
    return MsBasisFunction(
        kind=kind, anchor=anchor,
        support_cells=np.asarray(cells, dtype=np.int64),
        nodes=nodes[keep], values=values[keep],
    )


def _cell_extension(cell_op: RegionOperator, edge_data: list[tuple[Edge, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    """Harmonic extension into one cell of trace data given per edge."""
    region = cell_op.region
    rim = region.nodes[cell_op.boundary]
    g = np.zeros(cell_op.boundary.size)
    for edge, values in edge_data:
        cols = np.searchsorted(rim, edge.fine_nodes)
        if not np.array_equal(rim[cols], edge.fine_nodes):
            raise ValueError(f"edge {edge.index} does not border cell block {region.block}")
        g[cols] = values
    return region.nodes, cell_op.extend(g)


def make_cell_operators(mesh: TwoLevelMesh, a: CoefficientField,
                        tol: float = 1e-10) -> dict[int, RegionOperator]:
    """Factorized local problem per coarse cell (read-only, shareable)."""
    return {c: RegionOperator(mesh, a, mesh.cell_region(c), tol=tol)
            for c in range(mesh.num_cells)}


# ---------------------------------------------------------------------- #
# interpolation basis
# ---------------------------------------------------------------------- #

def assemble_interpolation_basis(mesh: TwoLevelMesh, node: int,
                                 traces: list[tuple[Edge, EdgeFunction]],
                                 cell_ops: dict[int, RegionOperator]) -> MsBasisFunction:
    """Nodal basis from one trace per incident edge, zero on the patch rim."""
    gx, gy = mesh.interior_node_grid(node)
    node_fine = mesh.coarse_node_fine_id(gx, gy)
    by_edge: dict[int, np.ndarray] = {}
    for edge, tr in traces:
        values = np.asarray(tr.values, dtype=float)
        own = 0 if edge.endpoint_nodes[0] == node_fine else -1
        far = -1 if own == 0 else 0
        if edge.endpoint_nodes[own] != node_fine:
            raise ValueError(f"trace edge {edge.index} is not incident to node {node}")
        if values[own] != 1.0 or values[far] != 0.0:
            raise ValueError(
                f"trace endpoint mismatch on edge {edge.index}: expected value 1 "
                f"at the anchor node and 0 at the far endpoint"
            )
        by_edge[edge.index] = values
    if len(by_edge) != 4:
        raise ValueError(f"node {node} needs one trace per incident edge (got {len(by_edge)})")

    patch = mesh.node_patch(node)
    pieces = []
    for cell in patch.cells:
        cy, cx = divmod(int(cell), mesh.Nc)
        nvert = (mesh.Nc - 1) * mesh.Nc
        e_v = mesh.edges[(gx - 1) * mesh.Nc + cy]
        e_h = mesh.edges[nvert + (gy - 1) * mesh.Nc + cx]
        edge_data = [(e_v, by_edge[e_v.index]), (e_h, by_edge[e_h.index])]
        pieces.append(_cell_extension(cell_ops[int(cell)], edge_data))
    return _merge_cell_pieces("node", node, patch.cells, pieces)


def linear_interpolation_basis(mesh: TwoLevelMesh, a: CoefficientField, node: int,
                               cell_ops: dict[int, RegionOperator] | None = None) -> MsBasisFunction:
    """Nodal basis with linear edge traces (hat on each incident edge)."""
    if cell_ops is None:
        cell_ops = {}
    traces = []
    for edge, which in mesh.node_incident_edges(node):
        first, second = linear_psi_traces(mesh, edge)
        traces.append((edge, first if which == 0 else second))
    needed = {int(c) for c in mesh.node_patch(node).cells}
    for c in needed:
        if c not in cell_ops:
            cell_ops[c] = RegionOperator(mesh, a, mesh.cell_region(c))
    return assemble_interpolation_basis(mesh, node, traces, cell_ops)


def extend_edge_basis(mesh: TwoLevelMesh, edge: Edge, v: EdgeFunction,
                      cell_ops: dict[int, RegionOperator]) -> MsBasisFunction:
    """Harmonic extension of an edge function into the two neighbor cells."""
    if v.values[0] != 0.0 or v.values[-1] != 0.0:
        raise ValueError(f"edge basis on edge {edge.index} must vanish at the endpoints")
    pieces = [_cell_extension(cell_ops[c], [(edge, v.values)]) for c in edge.cells]
    return _merge_cell_pieces("edge", edge.index, list(edge.cells), pieces)


# ---------------------------------------------------------------------- #
# offline artifact
# ---------------------------------------------------------------------- #

@dataclass
class OfflineArtifact:
    """Trial-space basis plus coarse stiffness matrix, ready for online use."""

    Nc: int
    Nf: int
    eps: float
    coeff_hash: bytes
    basis: list[MsBasisFunction]
    M: sp.csr_matrix
    kbar_e: float
    mesh: TwoLevelMesh = field(repr=False)
    spectra: dict[int, np.ndarray] | None = field(default=None, repr=False)
    _phi: sp.csr_matrix | None = field(default=None, repr=False)
    _fine_mass: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def n_basis(self) -> int:
        return len(self.basis)

    @property
    def n_nodal(self) -> int:
        return sum(1 for b in self.basis if b.kind == "node")

    @property
    def nodal_indices(self) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.basis) if b.kind == "node"], dtype=np.int64)

    def edge_basis_map(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for i, b in enumerate(self.basis):
            if b.kind == "edge":
                out.setdefault(b.anchor, []).append(i)
        return out

    def basis_matrix(self) -> sp.csr_matrix:
        if self._phi is None:
            rows = np.concatenate([b.nodes for b in self.basis]) if self.basis else np.empty(0, dtype=np.int64)
            cols = np.concatenate([np.full(b.nodes.size, i, dtype=np.int64)
                                   for i, b in enumerate(self.basis)]) if self.basis else np.empty(0, dtype=np.int64)
            vals = np.concatenate([b.values for b in self.basis]) if self.basis else np.empty(0)
            self._phi = sp.coo_matrix(
                (vals, (rows, cols)), shape=(self.mesh.num_nodes, len(self.basis))
            ).tocsr()
        return self._phi

    def coarse_node_values(self, c: np.ndarray) -> np.ndarray:
        """Solution values at interior coarse nodes (the nodal coefficients)."""
        return np.asarray(c)[self.nodal_indices]


def _edge_task(mesh, a, edge, interp_kind, include_edge_basis, eps, cell_ops, tol):
    ds = build_domain_space(mesh, a, edge, tol=tol)
    if interp_kind == "optimal":
        psi_first, psi_second, _ = optimal_endpoint_traces(mesh, ds)
    else:
        psi_first, psi_second = linear_psi_traces(mesh, edge)
    P = assemble_oversampling_operator(mesh, ds, psi_first, psi_second)
    G_Y = build_range_gram(mesh, a, edge, cell_ops=cell_ops, tol=tol)
    sigma, left = weighted_svd(P, ds.G_X, G_Y, chol_lower_x=ds.chol_lower)
    kept = int(np.sum(sigma >= eps)) if include_edge_basis else 0
    edge_funcs = []
    for k in range(kept):
        values = np.zeros(edge.fine_nodes.size)
        values[1:-1] = left[:, k]
        edge_funcs.append(extend_edge_basis(mesh, edge, EdgeFunction(edge.index, values), cell_ops))
    return edge.index, sigma, psi_first, psi_second, edge_funcs


def build_trial_space(mesh: TwoLevelMesh, a: CoefficientField, eps: float,
                      interp_kind: str = "optimal", include_edge_basis: bool = True,
                      threads: int = 1, tol: float = 1e-10) -> OfflineArtifact:
    """Run the offline stage and assemble the coarse stiffness matrix.

    The per-edge pipeline (domain space, interpolation traces, oversampling
    SVD, thresholding, extension) runs independently per edge; results are
    merged in edge order so the artifact does not depend on the worker
    count.
    """
    if interp_kind not in ("optimal", "linear"):
        raise ValueError(f"unknown interpolation kind {interp_kind!r}")
    if eps <= 0:
        raise ValueError("truncation threshold must be positive")
    cell_ops = make_cell_operators(mesh, a, tol=tol)

    def run_edge(edge):
        try:
            return _edge_task(mesh, a, edge, interp_kind, include_edge_basis, eps, cell_ops, tol)
        except Exception as exc:
            raise type(exc)(f"edge {edge.index}: {exc}") from exc

    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            edge_results = list(pool.map(run_edge, mesh.edges))
    else:
        edge_results = [run_edge(e) for e in mesh.edges]

    # traces per (node, edge) for the nodal basis
    trace_of: dict[tuple[int, int], EdgeFunction] = {}
    spectra: dict[int, np.ndarray] = {}
    edge_functions: list[MsBasisFunction] = []
    for edge_index, sigma, psi_first, psi_second, funcs in edge_results:
        spectra[edge_index] = sigma
        edge = mesh.edges[edge_index]
        for which, psi in ((0, psi_first), (1, psi_second)):
            if mesh.edge_endpoint_is_interior(edge, which):
                gx, gy = edge.endpoints[which]
                trace_of[(mesh.interior_node_index(gx, gy), edge_index)] = psi
        edge_functions.extend(funcs)

    def run_node(node):
        traces = [(edge, trace_of[(node, edge.index)])
                  for edge, _ in mesh.node_incident_edges(node)]
        return assemble_interpolation_basis(mesh, node, traces, cell_ops)

    nodes = list(range(mesh.num_interior_nodes))
    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            nodal = list(pool.map(run_node, nodes))
    else:
        nodal = [run_node(n) for n in nodes]

    basis = nodal + edge_functions
    kbar = len(edge_functions) / mesh.num_edges if mesh.num_edges else 0.0

    artifact = OfflineArtifact(
        Nc=mesh.Nc, Nf=mesh.Nf, eps=float(eps), coeff_hash=a.spec_hash(),
        basis=basis, M=sp.csr_matrix((len(basis), len(basis))),
        kbar_e=kbar, mesh=mesh, spectra=spectra,
    )
    phi = artifact.basis_matrix()
    A_fine = assemble_stiffness(mesh, a, mesh.omega_region())
    M = (phi.T @ (A_fine @ phi)).tocsr()
    M = ((M + M.T) * 0.5).tocsr()
    M.sum_duplicates()
    artifact.M = M
    return artifact
