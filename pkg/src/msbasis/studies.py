"""Diagnostic studies: local solution-operator compactness, forcing
coarsening quality, convergence sweeps, and basis-count statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .basis import OfflineArtifact, build_trial_space
from .coefficient import CoefficientField, constant_field
from .fem import FineField, assemble_cell_indicator_loads, assemble_mass, assemble_stiffness
from .local import RegionOperator
from .mesh import Region, TwoLevelMesh, build_two_level_mesh
from .oversampling import weighted_svd
from .solve import bubble_correction, error_report, field_on_omega, online_solve, reference_solve


@dataclass
class SpectrumTable:
    """Non-increasing singular values with a descriptive label."""

    label: str
    sigma: np.ndarray

    def rows(self):
        for k, s in enumerate(self.sigma):
            yield k, float(s)


def local_operator_svd(mesh: TwoLevelMesh, a: CoefficientField,
                       D: Region, W: Region, forcing_grid: int,
                       cap: int = 64) -> SpectrumTable:
    """Spectrum of the map from global forcing to the local harmonic part.

    The forcing space is spanned by L2-orthonormal indicators on a
    ``forcing_grid``-by-``forcing_grid`` partition of the domain.  For each
    indicator the problem is solved globally (one shared factorization),
    the solution's harmonic part is formed on W and restricted to D, and
    the singular values are computed in the plain H1 inner product on D.
    """
    if forcing_grid > cap:
        raise ValueError(f"forcing grid {forcing_grid} exceeds the study cap {cap}")
    if forcing_grid < 1 or mesh.Nf % forcing_grid != 0:
        raise ValueError("forcing grid must divide the fine mesh")
    if not set(D.nodes).issubset(W.nodes):
        raise ValueError("D must be contained in W")

    omega = mesh.omega_region()
    g = forcing_grid
    centroids = mesh.triangle_centroids()
    fcell = (np.floor(centroids[:, 1] * g).astype(np.int64) * g
             + np.floor(centroids[:, 0] * g).astype(np.int64))
    pts = mesh.triangles
    area_third = np.full(mesh.num_triangles, (mesh.h * mesh.h / 2.0) / 3.0)
    loads = np.zeros((mesh.num_nodes, g * g))
    np.add.at(loads, (pts.ravel(), np.repeat(fcell, 3)), np.repeat(area_third, 3))
    loads *= g  # unit-L2 normalization of the indicators

    op = RegionOperator(mesh, a, omega)
    solutions = np.zeros((mesh.num_nodes, g * g))
    solutions[op.interior] = op.solve_interior(loads[op.interior])

    w_op = RegionOperator(mesh, a, W)
    trace = solutions[W.nodes[w_op.boundary]]
    harmonic = np.zeros((W.num_nodes, g * g))
    harmonic[w_op.boundary] = trace
    harmonic[w_op.interior] = w_op.solve_interior(-(w_op.A_IB @ trace))

    restricted = harmonic[W.local_index(D.nodes)]
    ones = constant_field(mesh, 1.0)
    G_D = (assemble_stiffness(mesh, ones, D) + assemble_mass(mesh, D)).toarray()
    sigma, _ = weighted_svd(restricted, np.eye(g * g), G_D)
    return SpectrumTable(label=a.spec.split(";")[0].split(":")[0], sigma=sigma)


def lemma31_ratio(mesh: TwoLevelMesh, f) -> float:
    """Coarsening quality of a forcing in the dual norm, relative to H.

    Projects the Poisson solution of ``f`` onto the span of the Poisson
    solutions of coarse-cell indicators; the projection error in the H1
    seminorm over (H times the forcing L2 norm) equals the dual-norm
    distance of ``f`` to piecewise-constant coarse forcings.

    ``f`` may be a FineField, a callable of (x, y), a scalar, or an array
    of one constant per coarse cell.
    """
    omega = mesh.omega_region()
    ones = constant_field(mesh, 1.0)
    op = RegionOperator(mesh, ones, omega)
    loads = assemble_cell_indicator_loads(mesh, omega)

    per_cell = isinstance(f, np.ndarray) and f.shape == (mesh.num_cells,)
    if per_cell:
        rhs_full = loads @ f
        f_l2 = float(np.sqrt(np.sum(f**2) * mesh.H**2))
    else:
        field = field_on_omega(mesh, f)
        rhs_full = op.M @ field.values
        f_l2 = float(np.sqrt(field.values @ (op.M @ field.values)))
    if f_l2 == 0.0:
        raise ValueError("zero forcing")

    u_int = op.solve_interior(rhs_full[op.interior])
    basis_int = op.solve_interior(loads[op.interior])
    G = loads[op.interior].T @ basis_int
    G = 0.5 * (G + G.T)
    r = loads[op.interior].T @ u_int
    c = sla.cho_solve(sla.cho_factor(G), r)
    d = u_int - basis_int @ c
    err = float(np.sqrt(max(d @ (op.A_II @ d), 0.0)))
    return err / (mesh.H * f_l2)


# ---------------------------------------------------------------------- #
# convergence sweep
# ---------------------------------------------------------------------- #

@dataclass
class ConvergenceRow:
    H: float
    e_a_ms: float
    e_a: float
    e_l2_ms: float
    e_l2: float
    kbar_e: float
    n_basis: int


@dataclass
class ConvergenceResult:
    rows: list[ConvergenceRow]
    slopes: dict[str, float] | None

    def csv_lines(self) -> list[str]:
        out = ["H,e_a_ms,e_a,e_l2_ms,e_l2"]
        for r in self.rows:
            out.append(f"{r.H!r},{r.e_a_ms!r},{r.e_a!r},{r.e_l2_ms!r},{r.e_l2!r}")
        return out


def convergence_study(config, H_list) -> ConvergenceResult:
    """Offline + online runs over a list of coarse sizes with eps = H.

    ``config`` supplies the fine mesh, coefficient, forcing, interpolation
    kind and threading; the reference solution is shared across coarse
    sizes since the fine mesh does not change.
    """
    from .config import build_coefficient, forcing_callable  # cycle-free at call time

    rows = []
    u_ref = None
    for H in H_list:
        Nc = round(1.0 / H)
        if not np.isclose(1.0 / Nc, H):
            raise ValueError(f"coarse size {H} is not 1/integer")
        mesh = build_two_level_mesh(Nc, config.Nf)
        a = build_coefficient(config.coefficient, mesh)
        f = field_on_omega(mesh, forcing_callable(config.forcing))
        eps = 1.0 / Nc if config.epsilon == "H" else float(config.epsilon)
        artifact = build_trial_space(
            mesh, a, eps=eps, interp_kind=config.interp_kind,
            include_edge_basis=config.include_edge_basis,
            threads=config.threads, tol=config.solver_tol,
        )
        if u_ref is None:
            u_ref = reference_solve(mesh, a, f, tol=config.solver_tol)
        _, u_ms, _ = online_solve(artifact, f)
        corrected = FineField(u_ms.region, u_ms.values + bubble_correction(mesh, a, f).values)
        errs = error_report(u_ref, u_ms, corrected, mesh, a)
        rows.append(ConvergenceRow(
            H=1.0 / Nc, e_a_ms=errs["e_a_ms"], e_a=errs["e_a"],
            e_l2_ms=errs["e_l2_ms"], e_l2=errs["e_l2"],
            kbar_e=artifact.kbar_e, n_basis=artifact.n_basis,
        ))

    slopes = None
    if len(rows) >= 2:
        logH = np.log([r.H for r in rows])
        slopes = {
            key: float(np.polyfit(logH, np.log([getattr(r, key) for r in rows]), 1)[0])
            for key in ("e_a_ms", "e_a", "e_l2_ms", "e_l2")
        }
    return ConvergenceResult(rows=rows, slopes=slopes)


def basis_count_stats(artifact: OfflineArtifact) -> tuple[float, dict[int, int]]:
    """Average kept edge-basis count and its histogram over edges."""
    per_edge = {e.index: 0 for e in artifact.mesh.edges}
    for b in artifact.basis:
        if b.kind == "edge":
            per_edge[b.anchor] += 1
    hist: dict[int, int] = {}
    for k in per_edge.values():
        hist[k] = hist.get(k, 0) + 1
    kbar = sum(per_edge.values()) / len(per_edge) if per_edge else 0.0
    return kbar, dict(sorted(hist.items()))
