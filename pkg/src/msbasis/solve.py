"""Online stage: load vectors, coarse Galerkin solve, bubble correction.

Given an offline artifact, each new forcing costs one load-vector product,
one small SPD solve, and a sparse reconstruction; the optional bubble
correction adds independent per-cell solves.  Errors are always measured
against the fine reference solution on the same mesh.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .basis import OfflineArtifact
from .coefficient import CoefficientField
from .fem import FineField, SpdSolver, assemble_mass, assemble_stiffness
from .local import RegionOperator
from .mesh import TwoLevelMesh


@dataclass
class SolveReport:
    """Relative errors and bookkeeping of one online solve."""

    config_id: str
    Nc: int
    Nf: int
    eps: float
    interp_kind: str
    n_basis: int
    kbar_e: float
    e_a_ms: float
    e_a: float
    e_l2_ms: float
    e_l2: float
    online_seconds: float

    CSV_HEADER = "config_id,Nc,Nf,eps,interp_kind,n_basis,kbar_e,e_a_ms,e_a,e_l2_ms,e_l2,online_seconds"

    def csv_row(self) -> str:
        return (f"{self.config_id},{self.Nc},{self.Nf},{self.eps!r},{self.interp_kind},"
                f"{self.n_basis},{self.kbar_e!r},{self.e_a_ms!r},{self.e_a!r},"
                f"{self.e_l2_ms!r},{self.e_l2!r},{self.online_seconds!r}")


def _fine_mass(artifact: OfflineArtifact):
    if artifact._fine_mass is None:
        artifact._fine_mass = assemble_mass(artifact.mesh, artifact.mesh.omega_region())
    return artifact._fine_mass


def field_on_omega(mesh: TwoLevelMesh, f) -> FineField:
    """P1 field on the whole domain from a callable, scalar, or array."""
    region = mesh.omega_region()
    if isinstance(f, FineField):
        if f.region.key != region.key:
            raise ValueError("forcing field must live on the whole domain")
        return f
    if callable(f):
        return FineField(region, np.asarray(f(mesh.node_x, mesh.node_y), dtype=float)
                         * np.ones(mesh.num_nodes))
    values = np.asarray(f, dtype=float)
    if values.ndim == 0:
        values = np.full(mesh.num_nodes, float(values))
    return FineField(region, values)


def assemble_load(artifact: OfflineArtifact, f: FineField) -> np.ndarray:
    """Load vector of the trial space for P1 forcing ``f``."""
    if f.region.key != artifact.mesh.omega_region().key:
        raise ValueError("mesh mismatch: forcing does not live on the artifact's mesh")
    return artifact.basis_matrix().T @ (_fine_mass(artifact) @ f.values)


def online_solve(artifact: OfflineArtifact, f, tol: float = 1e-12):
    """Coarse Galerkin solve; returns (coefficients, fine-mesh field, seconds)."""
    f = field_on_omega(artifact.mesh, f)
    t0 = time.perf_counter()
    b = assemble_load(artifact, f)
    c = SpdSolver(artifact.M, tol=tol).solve(b)
    u = artifact.basis_matrix() @ c
    seconds = time.perf_counter() - t0
    return c, FineField(artifact.mesh.omega_region(), u), seconds


def bubble_correction(mesh: TwoLevelMesh, a: CoefficientField, f,
                      tol: float = 1e-10) -> FineField:
    """Sum of per-cell zero-trace solves; vanishes on the coarse skeleton."""
    f = field_on_omega(mesh, f)
    out = np.zeros(mesh.num_nodes)
    for cell in range(mesh.num_cells):
        region = mesh.cell_region(cell)
        try:
            op = RegionOperator(mesh, a, region, tol=tol)
            local = op.bubble(f.values[region.nodes])
        except Exception as exc:
            raise type(exc)(f"cell {cell}: {exc}") from exc
        out[region.nodes] += local
    return FineField(mesh.omega_region(), out)


def reference_solve(mesh: TwoLevelMesh, a: CoefficientField, f,
                    tol: float = 1e-10) -> FineField:
    """Fine-mesh P1 solution with homogeneous Dirichlet data."""
    f = field_on_omega(mesh, f)
    op = RegionOperator(mesh, a, mesh.omega_region(), tol=tol)
    return FineField(mesh.omega_region(), op.bubble(f.values))


def error_report(u_ref: FineField, u_ms: FineField, u_corrected: FineField | None,
                 mesh: TwoLevelMesh, a: CoefficientField) -> dict[str, float]:
    """Relative energy and L2 errors against the fine reference."""
    omega = mesh.omega_region()
    for fld in (u_ref, u_ms) + (() if u_corrected is None else (u_corrected,)):
        if fld.region.key != omega.key:
            raise ValueError("error report requires fields on the whole domain")
    A = assemble_stiffness(mesh, a, omega)
    M = assemble_mass(mesh, omega)

    def pair(u, v, K):
        d = u - v
        return float(np.sqrt(max(d @ (K @ d), 0.0)))

    ref_a = float(np.sqrt(max(u_ref.values @ (A @ u_ref.values), 0.0)))
    ref_l2 = float(np.sqrt(max(u_ref.values @ (M @ u_ref.values), 0.0)))
    if ref_a == 0.0 or ref_l2 == 0.0:
        raise ValueError("zero-norm reference solution")
    out = {
        "e_a_ms": pair(u_ref.values, u_ms.values, A) / ref_a,
        "e_l2_ms": pair(u_ref.values, u_ms.values, M) / ref_l2,
    }
    if u_corrected is not None:
        out["e_a"] = pair(u_ref.values, u_corrected.values, A) / ref_a
        out["e_l2"] = pair(u_ref.values, u_corrected.values, M) / ref_l2
    else:
        out["e_a"] = out["e_a_ms"]
        out["e_l2"] = out["e_l2_ms"]
    return out
