"""Estimation of vertex offsets and phases from noisy edge differences.

The main entry points are re-exported here; the submodules hold the rest.
"""
from .abelian import (
    GroupElement,
    ProductData,
    ProductNoiseModel,
    fisher_report_product,
    group_compose,
    group_difference,
    group_inverse,
    ml_estimate_product,
)
from .circle import (
    AmplitudePhaseState,
    CriticalPointReport,
    PhaseAssignment,
    VonMisesModel,
    bessel_ratio,
    build_q_matrix,
    circular_error,
    critical_point_report,
    fisher_report_circle,
    global_eigen_estimate,
    hybrid_ml_refine,
    local_power_run,
    local_power_step,
    von_mises_sample,
)
from .errors import DisconnectedGraphError, EstimationError, GraphError, NetsyncError, NoiseModelError
from .gaussian import (
    DiagonalScalar,
    EstimateResult,
    FisherReport,
    FullScalar,
    FullVector,
    IidScalar,
    IidVector,
    fisher_report,
    mean_zero_gauge,
    ml_estimate_correlated,
    ml_estimate_iid,
    ml_estimate_vector,
)
from .graph import (
    Edge,
    Graph,
    IncidenceSet,
    build_incidence,
    cocycle_projector,
    cycle_basis,
    enumerate_spanning_trees,
    load_graph,
    save_graph,
    spanning_tree_count,
    weighted_tree_sum,
)
from .local_gaussian import JacobiState, convergence_diagnostics, jacobi_run, jacobi_step
from .sim import SimConfig, TrialRecord, generate_measurements, network_design_report, run_experiment

__all__ = [
    "AmplitudePhaseState",
    "bessel_ratio",
    "build_incidence",
    "build_q_matrix",
    "circular_error",
    "cocycle_projector",
    "convergence_diagnostics",
    "critical_point_report",
    "CriticalPointReport",
    "cycle_basis",
    "DiagonalScalar",
    "DisconnectedGraphError",
    "Edge",
    "enumerate_spanning_trees",
    "EstimateResult",
    "EstimationError",
    "fisher_report",
    "fisher_report_circle",
    "fisher_report_product",
    "FisherReport",
    "FullScalar",
    "FullVector",
    "generate_measurements",
    "global_eigen_estimate",
    "Graph",
    "GraphError",
    "group_compose",
    "group_difference",
    "group_inverse",
    "GroupElement",
    "hybrid_ml_refine",
    "IidScalar",
    "IidVector",
    "IncidenceSet",
    "jacobi_run",
    "jacobi_step",
    "JacobiState",
    "load_graph",
    "local_power_run",
    "local_power_step",
    "mean_zero_gauge",
    "ml_estimate_correlated",
    "ml_estimate_iid",
    "ml_estimate_product",
    "ml_estimate_vector",
    "NetsyncError",
    "network_design_report",
    "NoiseModelError",
    "PhaseAssignment",
    "ProductData",
    "ProductNoiseModel",
    "run_experiment",
    "save_graph",
    "SimConfig",
    "spanning_tree_count",
    "TrialRecord",
    "von_mises_sample",
    "VonMisesModel",
    "weighted_tree_sum",
]

__version__ = "0.1.0"
