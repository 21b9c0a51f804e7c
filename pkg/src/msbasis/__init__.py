"""Multiscale basis construction for 2D elliptic problems with rough
coefficients: offline per-edge oversampling and weighted SVD build a small
harmonic trial space; online solves reproduce fine-mesh solutions at
coarse cost, with an optional bubble correction."""

from .artifact import ArtifactFormatError, load_artifact, save_artifact
from .basis import (
    MsBasisFunction,
    OfflineArtifact,
    assemble_interpolation_basis,
    build_trial_space,
    extend_edge_basis,
    linear_interpolation_basis,
    make_cell_operators,
)
from .coefficient import (
    CoefficientField,
    Inclusion,
    constant_field,
    default_inclusions,
    high_contrast_field,
    multiscale_coefficient,
    multiscale_field,
    random_field,
)
from .config import (
    CoefficientSpec,
    ConfigError,
    ExperimentConfig,
    build_coefficient,
    compile_forcing,
    load_config,
    parse_config,
)
from .fem import (
    FineField,
    SolverError,
    SpdSolver,
    assemble_mass,
    assemble_stiffness,
    energy_norm,
    l2_norm,
    norm,
    solve_spd,
)
from .local import (
    EdgeFunction,
    LocalSplit,
    RegionOperator,
    bubble_solve,
    edge_trace,
    harmonic_extension,
    split_local,
)
from .mesh import Edge, Region, TwoLevelMesh, build_two_level_mesh, region_boundary_trace_nodes
from .oversampling import (
    EdgeBasisSet,
    OversamplingBundle,
    assemble_oversampling_operator,
    build_domain_space,
    build_edge_bundle,
    build_range_gram,
    linear_psi_traces,
    optimal_endpoint_traces,
    truncate_edge_basis,
    weighted_svd,
)
from .solve import (
    SolveReport,
    assemble_load,
    bubble_correction,
    error_report,
    field_on_omega,
    online_solve,
    reference_solve,
)
from .studies import (
    ConvergenceResult,
    SpectrumTable,
    basis_count_stats,
    convergence_study,
    lemma31_ratio,
    local_operator_svd,
)

__version__ = "0.1.0"
