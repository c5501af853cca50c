"""
Resilient consensus of networked Euler-Lagrange arms under Byzantine attacks.
Import the public API from the service modules.
"""

from .errors import (
    ConsensusSimError,
    GraphFormatError,
    InertiaSingularError,
    InfeasibleRobustnessError,
    InsufficientNeighborsError,
    InvalidArgumentError,
    ScenarioError,
    SimulationDivergedError,
    SizeLimitError,
)
from .services.adversary import ByzantineSpec, EvolutionMode, TransmissionMode, TransmissionPolicy
from .services.analysis import Metrics, compute_metrics, consensus_error_series, settling_time, trigger_statistics
from .services.arm import ArmParams, PlantState, Torque, dynamics_terms, forward_dynamics, integrate_plant_step, regression_matrix
from .services.graph import (
    Digraph,
    generate_r_robust_digraph,
    is_f_local_attack,
    is_f_total_attack,
    is_r_reachable,
    is_r_robust,
    max_robustness,
)
from .services.protocol import (
    Gains,
    ObserverMatrix,
    accept_neighbor_update,
    auxiliary_variable,
    avbrd_fuse,
    control_update,
    matrix_exponential,
    open_loop_estimate,
    trigger_check,
)
from .services.scenario_loader import ScenarioOverrides, load_scenario
from .services.simulation import Scenario, SimOutput, SimulationEngine, run_scenario, step_simulation

__all__ = [
    "ArmParams",
    "ByzantineSpec",
    "ConsensusSimError",
    "Digraph",
    "EvolutionMode",
    "Gains",
    "GraphFormatError",
    "InertiaSingularError",
    "InfeasibleRobustnessError",
    "InsufficientNeighborsError",
    "InvalidArgumentError",
    "Metrics",
    "ObserverMatrix",
    "PlantState",
    "Scenario",
    "ScenarioError",
    "ScenarioOverrides",
    "SimOutput",
    "SimulationDivergedError",
    "SimulationEngine",
    "SizeLimitError",
    "Torque",
    "TransmissionMode",
    "TransmissionPolicy",
    "accept_neighbor_update",
    "auxiliary_variable",
    "avbrd_fuse",
    "compute_metrics",
    "consensus_error_series",
    "control_update",
    "dynamics_terms",
    "forward_dynamics",
    "generate_r_robust_digraph",
    "integrate_plant_step",
    "is_f_local_attack",
    "is_f_total_attack",
    "is_r_reachable",
    "is_r_robust",
    "load_scenario",
    "matrix_exponential",
    "max_robustness",
    "open_loop_estimate",
    "regression_matrix",
    "run_scenario",
    "settling_time",
    "step_simulation",
    "trigger_check",
    "trigger_statistics",
]
