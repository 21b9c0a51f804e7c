"""Two-level discretization of the unit square.

A coarse grid of ``Nc x Nc`` squares (side ``H = 1/Nc``) is overlaid on a
conforming fine triangulation obtained by splitting each of the ``Nf x Nf``
fine squares (side ``h = 1/Nf``) along its lower-left to upper-right
diagonal.  All topology (cells, interior coarse edges, coarse nodes,
oversampling patches) is derived from the two integers, with deterministic
row-major orderings so that rebuilding a mesh reproduces identical tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Edge:
    """Interior coarse edge of length H between two coarse cells.

    ``orientation`` is 'v' for vertical edges (on the grid line x = gfix*H,
    spanning cell row cvar) and 'h' for horizontal ones (y = gfix*H, cell
    column cvar).  Endpoints are ordered bottom-to-top resp. left-to-right.
    """

    index: int
    orientation: str
    gfix: int
    cvar: int
    endpoints: tuple[tuple[int, int], tuple[int, int]]  # coarse (gx, gy)
    endpoint_nodes: tuple[int, int]   # fine node ids
    fine_nodes: np.ndarray            # all fine nodes along edge, endpoints included
    cells: tuple[int, int]            # (lower/left cell, upper/right cell)

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.fine_nodes[1:-1]


@dataclass
class Region:
    """Axis-aligned union of coarse cells with its fine-mesh topology.

    Node ids are global fine ids, sorted ascending.  Boundary flags mark the
    topological boundary of the region; ``on_domain_boundary`` marks nodes
    that also lie on the boundary of the unit square.
    """

    key: tuple
    nodes: np.ndarray
    is_boundary: np.ndarray
    on_domain_boundary: np.ndarray
    triangles: np.ndarray
    cells: np.ndarray
    block: tuple[int, int, int, int]  # (cx0, cy0, cx1, cy1) inclusive

    _local: dict = field(default_factory=dict, repr=False)

    @property
    def num_nodes(self) -> int:
        return self.nodes.size

    def local_index(self, global_nodes) -> np.ndarray:
        """Map global fine node ids to local indices within this region."""
        idx = np.searchsorted(self.nodes, global_nodes)
        if np.any(idx >= self.nodes.size) or np.any(self.nodes[idx] != global_nodes):
            raise KeyError("node not contained in region")
        return idx

    def contains_nodes(self, global_nodes) -> bool:
        idx = np.searchsorted(self.nodes, global_nodes)
        ok = idx < self.nodes.size
        return bool(np.all(ok) and np.all(self.nodes[np.minimum(idx, self.nodes.size - 1)] == global_nodes))


class TwoLevelMesh:
    """Coarse squares over a fine right-triangle refinement of [0,1]^2."""

    def __init__(self, Nc: int, Nf: int):
        if Nc < 1:
            raise ValueError("Nc must be >= 1")
        if Nf % Nc != 0:
            raise ValueError(f"invalid ratio: Nf={Nf} is not a multiple of Nc={Nc}")
        if Nf // Nc < 2:
            raise ValueError(f"too coarse: need Nf/Nc >= 2, got {Nf}/{Nc}")
        self.Nc = Nc
        self.Nf = Nf
        self.r = Nf // Nc
        self.H = 1.0 / Nc
        self.h = 1.0 / Nf

        n = Nf + 1
        self.num_nodes = n * n
        ix, iy = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
        self.node_x = (ix.ravel() / Nf).astype(float)
        self.node_y = (iy.ravel() / Nf).astype(float)

        # Two triangles per fine square, split along the ll->ur diagonal:
        # even index = lower (ll, lr, ur), odd = upper (ll, ur, ul).
        sx, sy = np.meshgrid(np.arange(Nf), np.arange(Nf), indexing="xy")
        sx = sx.ravel()
        sy = sy.ravel()
        ll = sy * n + sx
        lr = ll + 1
        ul = ll + n
        ur = ul + 1
        tris = np.empty((2 * Nf * Nf, 3), dtype=np.int64)
        tris[0::2] = np.column_stack([ll, lr, ur])
        tris[1::2] = np.column_stack([ll, ur, ul])
        self.triangles = tris
        self.num_triangles = tris.shape[0]
        cell_of_square = (sy // self.r) * Nc + (sx // self.r)
        self.triangle_cell = np.repeat(cell_of_square, 2)

        self.num_cells = Nc * Nc
        self.edges = self._build_edges()
        self.num_interior_nodes = (Nc - 1) * (Nc - 1)

    # ------------------------------------------------------------------ #
    # basic index helpers
    # ------------------------------------------------------------------ #

    def node_id(self, ix: int, iy: int) -> int:
        return iy * (self.Nf + 1) + ix

    def coarse_node_fine_id(self, gx: int, gy: int) -> int:
        return self.node_id(gx * self.r, gy * self.r)

    def cell_index(self, cx: int, cy: int) -> int:
        return cy * self.Nc + cx

    def interior_node_index(self, gx: int, gy: int) -> int:
        if not (1 <= gx <= self.Nc - 1 and 1 <= gy <= self.Nc - 1):
            raise ValueError(f"coarse node ({gx},{gy}) is not interior")
        return (gy - 1) * (self.Nc - 1) + (gx - 1)

    def interior_node_grid(self, node: int) -> tuple[int, int]:
        if not (0 <= node < self.num_interior_nodes):
            raise ValueError(f"unknown interior coarse node {node}")
        gy, gx = divmod(node, self.Nc - 1)
        return gx + 1, gy + 1

    def cell_triangles(self, cell: int) -> np.ndarray:
        cy, cx = divmod(cell, self.Nc)
        r = self.r
        sx = np.arange(cx * r, (cx + 1) * r)
        sy = np.arange(cy * r, (cy + 1) * r)
        squares = (sy[:, None] * self.Nf + sx[None, :]).ravel()
        return np.sort(np.concatenate([2 * squares, 2 * squares + 1]))

    def triangle_centroids(self) -> np.ndarray:
        xs = self.node_x[self.triangles]
        ys = self.node_y[self.triangles]
        return np.column_stack([xs.mean(axis=1), ys.mean(axis=1)])

    # ------------------------------------------------------------------ #
    # coarse edges
    # ------------------------------------------------------------------ #

    def _build_edges(self) -> list[Edge]:
        Nc, r, n = self.Nc, self.r, self.Nf + 1
        edges = []
        for gx in range(1, Nc):
            for cy in range(Nc):
                fid = np.arange(cy * r, (cy + 1) * r + 1) * n + gx * r
                edges.append(Edge(
                    index=len(edges), orientation="v", gfix=gx, cvar=cy,
                    endpoints=((gx, cy), (gx, cy + 1)),
                    endpoint_nodes=(int(fid[0]), int(fid[-1])),
                    fine_nodes=fid,
                    cells=(self.cell_index(gx - 1, cy), self.cell_index(gx, cy)),
                ))
        for gy in range(1, Nc):
            for cx in range(Nc):
                fid = gy * r * n + np.arange(cx * r, (cx + 1) * r + 1)
                edges.append(Edge(
                    index=len(edges), orientation="h", gfix=gy, cvar=cx,
                    endpoints=((cx, gy), (cx + 1, gy)),
                    endpoint_nodes=(int(fid[0]), int(fid[-1])),
                    fine_nodes=fid,
                    cells=(self.cell_index(cx, gy - 1), self.cell_index(cx, gy)),
                ))
        return edges

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def edge(self, index: int) -> Edge:
        if not (0 <= index < len(self.edges)):
            raise ValueError(f"unknown edge {index}")
        return self.edges[index]

    def edge_endpoint_is_interior(self, edge: Edge, which: int) -> bool:
        gx, gy = edge.endpoints[which]
        return 1 <= gx <= self.Nc - 1 and 1 <= gy <= self.Nc - 1

    def node_incident_edges(self, node: int) -> list[tuple[Edge, int]]:
        """The four interior edges meeting an interior coarse node.

        Returns (edge, which) pairs where ``which`` is the endpoint slot of
        the node within each edge.
        """
        gx, gy = self.interior_node_grid(node)
        Nc = self.Nc
        nvert = (Nc - 1) * Nc
        out = []
        out.append((self.edges[(gx - 1) * Nc + (gy - 1)], 1))  # vertical below
        out.append((self.edges[(gx - 1) * Nc + gy], 0))        # vertical above
        out.append((self.edges[nvert + (gy - 1) * Nc + (gx - 1)], 1))  # horizontal left
        out.append((self.edges[nvert + (gy - 1) * Nc + gx], 0))        # horizontal right
        return out

    # ------------------------------------------------------------------ #
    # regions
    # ------------------------------------------------------------------ #

    def cell_block_region(self, cx0: int, cy0: int, cx1: int, cy1: int) -> Region:
        """Region covering coarse cells [cx0..cx1] x [cy0..cy1] (inclusive)."""
        Nc, Nf, r = self.Nc, self.Nf, self.r
        if not (0 <= cx0 <= cx1 < Nc and 0 <= cy0 <= cy1 < Nc):
            raise ValueError(f"cell block ({cx0},{cy0})..({cx1},{cy1}) outside mesh")
        n = Nf + 1
        x0, x1 = cx0 * r, (cx1 + 1) * r
        y0, y1 = cy0 * r, (cy1 + 1) * r
        ixs = np.arange(x0, x1 + 1)
        iys = np.arange(y0, y1 + 1)
        nodes = (iys[:, None] * n + ixs[None, :]).ravel()
        nodes.sort()

        ix = nodes % n
        iy = nodes // n
        is_boundary = (ix == x0) | (ix == x1) | (iy == y0) | (iy == y1)
        on_domega = (ix == 0) | (ix == Nf) | (iy == 0) | (iy == Nf)

        sxs = np.arange(x0, x1)
        sys_ = np.arange(y0, y1)
        squares = (sys_[:, None] * Nf + sxs[None, :]).ravel()
        tris = np.sort(np.concatenate([2 * squares, 2 * squares + 1]))

        cxs = np.arange(cx0, cx1 + 1)
        cys = np.arange(cy0, cy1 + 1)
        cells = np.sort((cys[:, None] * Nc + cxs[None, :]).ravel())

        # Key describes the fine-node footprint so regions of different
        # coarse levels over the same fine rectangle are interchangeable.
        return Region(
            key=("block", Nf, x0, y0, x1, y1),
            nodes=nodes, is_boundary=is_boundary, on_domain_boundary=on_domega,
            triangles=tris, cells=cells, block=(cx0, cy0, cx1, cy1),
        )

    def omega_region(self) -> Region:
        return self.cell_block_region(0, 0, self.Nc - 1, self.Nc - 1)

    def cell_region(self, cell: int) -> Region:
        cy, cx = divmod(cell, self.Nc)
        return self.cell_block_region(cx, cy, cx, cy)

    def edge_patch(self, edge_index: int) -> Region:
        """Oversampling patch: the up-to-six coarse cells around an edge.

        A 3x2 block for vertical edges (2x3 for horizontal), clipped at the
        domain boundary.
        """
        e = self.edge(edge_index)
        Nc = self.Nc
        if e.orientation == "v":
            cx0, cx1 = e.gfix - 1, e.gfix
            cy0, cy1 = max(e.cvar - 1, 0), min(e.cvar + 1, Nc - 1)
        else:
            cy0, cy1 = e.gfix - 1, e.gfix
            cx0, cx1 = max(e.cvar - 1, 0), min(e.cvar + 1, Nc - 1)
        return self.cell_block_region(cx0, cy0, cx1, cy1)

    def node_patch(self, node: int) -> Region:
        """The four coarse cells around an interior coarse node."""
        gx, gy = self.interior_node_grid(node)
        return self.cell_block_region(gx - 1, gy - 1, gx, gy)


def build_two_level_mesh(Nc: int, Nf: int) -> TwoLevelMesh:
    """Construct the two-level mesh; see :class:`TwoLevelMesh`."""
    return TwoLevelMesh(Nc, Nf)


def region_boundary_trace_nodes(region: Region, mesh: TwoLevelMesh) -> tuple[np.ndarray, np.ndarray]:
    """Fine nodes on the region boundary in counterclockwise order.

    Starts at the lower-left corner and walks bottom, right, top, left
    sides.  Returns (node ids, on-domain-boundary flags).
    """
    cx0, cy0, cx1, cy1 = region.block
    r, n, Nf = mesh.r, mesh.Nf + 1, mesh.Nf
    x0, x1 = cx0 * r, (cx1 + 1) * r
    y0, y1 = cy0 * r, (cy1 + 1) * r
    bottom = y0 * n + np.arange(x0, x1)
    right = np.arange(y0, y1) * n + x1
    top = y1 * n + np.arange(x1, x0, -1)
    left = np.arange(y1, y0, -1) * n + x0
    ordered = np.concatenate([bottom, right, top, left])
    ix = ordered % n
    iy = ordered // n
    on_domega = (ix == 0) | (ix == Nf) | (iy == 0) | (iy == Nf)
    return ordered, on_domega
