"""Command-line driver: offline build, online solve, studies, artifact info.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O.
All CSV output is deterministic for a fixed config and seed, independent
of the worker thread count.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .artifact import ArtifactFormatError, load_artifact, save_artifact
from .basis import build_trial_space
from .config import CoefficientSpec, ConfigError, build_coefficient, forcing_callable, load_config
from .fem import FineField, SolverError
from .mesh import build_two_level_mesh
from .solve import (
    SolveReport,
    bubble_correction,
    error_report,
    field_on_omega,
    online_solve,
    reference_solve,
)
from .studies import basis_count_stats, convergence_study, lemma31_ratio, local_operator_svd


def _write_lines(path: Path, lines):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def _write_spectra(path: Path, spectra: dict[int, np.ndarray]):
    lines = ["edge_id,k,sigma"]
    for edge_index in sorted(spectra):
        for k, s in enumerate(spectra[edge_index]):
            lines.append(f"{edge_index},{k},{float(s)!r}")
    _write_lines(path, lines)


def _dump_field(path: Path, mesh, values: np.ndarray):
    lines = ["x,y,value"]
    for i in range(mesh.num_nodes):
        lines.append(f"{mesh.node_x[i]!r},{mesh.node_y[i]!r},{values[i]!r}")
    _write_lines(path, lines)


def _prepare(args) -> tuple[ExperimentConfig, Path]:
    cfg = load_config(args.config)
    if args.threads is not None:
        cfg.threads = args.threads
    if args.seed is not None:
        cfg.coefficient.seed = args.seed
    out = Path(args.out) if args.out else Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _cmd_offline(args) -> int:
    cfg, out = _prepare(args)
    mesh = build_two_level_mesh(cfg.Nc, cfg.Nf)
    a = build_coefficient(cfg.coefficient, mesh)
    t0 = time.perf_counter()
    artifact = build_trial_space(
        mesh, a, eps=cfg.resolve_epsilon(), interp_kind=cfg.interp_kind,
        include_edge_basis=cfg.include_edge_basis, threads=cfg.threads,
        tol=cfg.solver_tol,
    )
    elapsed = time.perf_counter() - t0
    path = out / "artifact.msba"
    save_artifact(artifact, path)
    _write_spectra(out / "spectra.csv", artifact.spectra)
    print(f"offline: {artifact.n_basis} basis functions (kbar_e={artifact.kbar_e:.4f}) "
          f"in {elapsed:.2f}s -> {path}")
    return 0


def _cmd_online(args) -> int:
    cfg, out = _prepare(args)
    if not args.artifact:
        raise ConfigError("online requires --artifact")
    artifact = load_artifact(args.artifact)
    mesh = artifact.mesh
    a = build_coefficient(cfg.coefficient, mesh)
    if a.spec_hash() != artifact.coeff_hash:
        raise ConfigError("coefficient spec does not match the artifact's hash")
    print(f"online: loaded artifact {args.artifact}; no offline recomputation")
    f = field_on_omega(mesh, forcing_callable(cfg.forcing))
    c, u_ms, seconds = online_solve(artifact, f)
    final = u_ms
    if args.bubble:
        corrected = FineField(u_ms.region, u_ms.values + bubble_correction(mesh, a, f).values)
        final = corrected
    else:
        corrected = None
    u_ref = reference_solve(mesh, a, f, tol=cfg.solver_tol)
    errs = error_report(u_ref, u_ms, corrected, mesh, a)
    report = SolveReport(
        config_id=cfg.config_id, Nc=artifact.Nc, Nf=artifact.Nf, eps=artifact.eps,
        interp_kind=cfg.interp_kind, n_basis=artifact.n_basis, kbar_e=artifact.kbar_e,
        e_a_ms=errs["e_a_ms"], e_a=errs["e_a"], e_l2_ms=errs["e_l2_ms"], e_l2=errs["e_l2"],
        online_seconds=seconds,
    )
    _write_lines(out / "report.csv", [SolveReport.CSV_HEADER, report.csv_row()])
    if args.dump:
        _dump_field(out / "solution.csv", mesh, final.values)
    print(f"online: n={artifact.n_basis} e_a_ms={report.e_a_ms:.4e} e_a={report.e_a:.4e} "
          f"e_l2_ms={report.e_l2_ms:.4e} e_l2={report.e_l2:.4e} ({seconds*1e3:.1f} ms)")
    return 0


def _cmd_reference(args) -> int:
    cfg, out = _prepare(args)
    mesh = build_two_level_mesh(cfg.Nc, cfg.Nf)
    a = build_coefficient(cfg.coefficient, mesh)
    f = field_on_omega(mesh, forcing_callable(cfg.forcing))
    u = reference_solve(mesh, a, f, tol=cfg.solver_tol)
    if args.dump:
        _dump_field(out / "reference.csv", mesh, u.values)
    print(f"reference: fine solve on {mesh.Nf}x{mesh.Nf} done "
          f"(max |u| = {np.abs(u.values).max():.6e})")
    return 0


def _cmd_study_svd(args) -> int:
    cfg, out = _prepare(args)
    mesh = build_two_level_mesh(cfg.Nc, cfg.Nf)
    if mesh.Nc < 3:
        raise ConfigError("study-svd needs Nc >= 3 for a 3x3 patch")
    a = build_coefficient(cfg.coefficient, mesh)
    # centered 3x3 cell patch with its middle cell as the target region
    c0 = mesh.Nc // 2 - 1
    W = mesh.cell_block_region(c0, c0, c0 + 2, c0 + 2)
    D = mesh.cell_block_region(c0 + 1, c0 + 1, c0 + 1, c0 + 1)
    lines = ["label,k,sigma"]
    for coeff in (a, build_coefficient(CoefficientSpec(kind="constant", c=1.0), mesh)):
        table = local_operator_svd(mesh, coeff, D, W, forcing_grid=mesh.Nc)
        for k, s in table.rows():
            lines.append(f"{table.label},{k},{s!r}")
    _write_lines(out / "spectra_study.csv", lines)
    print(f"study-svd: wrote {out / 'spectra_study.csv'}")
    return 0


def _cmd_study_convergence(args) -> int:
    cfg, out = _prepare(args)
    H_list = [1.0 / Nc for Nc in (4, 8, 16)
              if cfg.Nf % Nc == 0 and cfg.Nf // Nc >= 2]
    if not H_list:
        raise ConfigError(f"no admissible coarse sizes for Nf={cfg.Nf}")
    result = convergence_study(cfg, H_list)
    _write_lines(out / "convergence.csv", result.csv_lines())
    if result.slopes:
        print("study-convergence: slopes "
              + " ".join(f"{k}={v:.3f}" for k, v in result.slopes.items()))
    return 0


def _cmd_study_lemma31(args) -> int:
    cfg, out = _prepare(args)
    f = forcing_callable(cfg.forcing)
    lines = ["Nc,ratio"]
    for Nc in (4, 8, 16):
        if cfg.Nf % Nc != 0 or cfg.Nf // Nc < 2:
            continue
        mesh = build_two_level_mesh(Nc, cfg.Nf)
        ratio = lemma31_ratio(mesh, f)
        lines.append(f"{Nc},{ratio!r}")
    _write_lines(out / "ratios.csv", lines)
    print(f"study-lemma31: wrote {out / 'ratios.csv'}")
    return 0


def _cmd_info(args) -> int:
    if not args.artifact:
        raise ConfigError("info requires --artifact")
    artifact = load_artifact(args.artifact)
    kbar, hist = basis_count_stats(artifact)
    print(f"artifact: Nc={artifact.Nc} Nf={artifact.Nf} eps={artifact.eps!r}")
    print(f"  basis: {artifact.n_basis} total ({artifact.n_nodal} nodal, "
          f"{artifact.n_basis - artifact.n_nodal} edge), kbar_e={kbar:.4f}")
    print(f"  edge-count histogram: {hist}")
    print(f"  coefficient hash: {artifact.coeff_hash.hex()}")
    return 0


_COMMANDS = {
    "offline": _cmd_offline,
    "online": _cmd_online,
    "reference": _cmd_reference,
    "study-svd": _cmd_study_svd,
    "study-convergence": _cmd_study_convergence,
    "study-lemma31": _cmd_study_lemma31,
    "info": _cmd_info,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msbasis", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config file")
        p.add_argument("--artifact", help="offline artifact path")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--threads", type=int, help="worker threads (overrides config)")
        p.add_argument("--seed", type=int, help="coefficient seed (overrides config)")
        p.add_argument("--bubble", action="store_true", help="add the bubble correction")
        p.add_argument("--dump", action="store_true", help="dump solution fields as CSV")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command != "info" and not args.config:
        print("error: --config is required", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except ArtifactFormatError as exc:
        print(f"error: artifact: {exc}", file=sys.stderr)
        return 4
    except (SolverError, ValueError) as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
