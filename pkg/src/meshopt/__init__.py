"""Distributed optimization over simulated mesh networks.

Separable convex problems are solved by five per-robot iterative methods
(DGD-CTA, DGD-ATC, DIGing, NEXT-Q, C-ADMM) running inside a deterministic,
barrier-synchronous network simulator with optional message loss and packet
accounting. A golden-section tuner and a CLI experiment runner sit on top.
"""

from .algorithms import AlgorithmSpec, StepSchedule, make_schedule
from .graph import (
    GeometricGraphSpec,
    Graph,
    TopologySequence,
    complete_graph,
    cycle_graph,
    generate_geometric,
    is_b_connected,
    is_connected,
    is_strongly_connected,
    is_weakly_connected,
    path_graph,
    sample_topology,
)
from .problem import (
    FactoredLeastSquaresSpec,
    QuadraticLocalCost,
    SeparableProblem,
    TargetTrackingSpec,
    build_factored_ls,
    build_target_tracking,
    default_tracking_spec,
    lift_to_consensus,
    random_factored_ls,
    scalar_consensus,
    simulate_target_data,
)
from .simnet import (
    CompatibilityError,
    RunTrace,
    StopRule,
    account_packets,
    compute_mse,
    consensus_residual,
    run,
)
from .tuner import TuneSpec, grid_sweep, gss_tune
from .weights import (
    WeightMatrix,
    metropolis,
    uniform_column_stochastic,
    uniform_row_stochastic,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "AlgorithmSpec",
    "StepSchedule",
    "make_schedule",
    "Graph",
    "GeometricGraphSpec",
    "TopologySequence",
    "complete_graph",
    "cycle_graph",
    "path_graph",
    "generate_geometric",
    "is_connected",
    "is_strongly_connected",
    "is_weakly_connected",
    "is_b_connected",
    "sample_topology",
    "QuadraticLocalCost",
    "SeparableProblem",
    "TargetTrackingSpec",
    "FactoredLeastSquaresSpec",
    "default_tracking_spec",
    "simulate_target_data",
    "build_target_tracking",
    "random_factored_ls",
    "build_factored_ls",
    "scalar_consensus",
    "lift_to_consensus",
    "CompatibilityError",
    "RunTrace",
    "StopRule",
    "run",
    "compute_mse",
    "consensus_residual",
    "account_packets",
    "TuneSpec",
    "gss_tune",
    "grid_sweep",
    "WeightMatrix",
    "metropolis",
    "uniform_row_stochastic",
    "uniform_column_stochastic",
    "validate",
]
