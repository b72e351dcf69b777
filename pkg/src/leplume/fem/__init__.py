"""Stabilized finite elements for transient advection-diffusion-reaction."""
from .elements import (
    ElementGeometry,
    ElementSystem,
    element_system,
    load_vectors,
    mass_matrices,
    operator_matrices,
    supg_tau,
)
from .gmres import GmresResult, gmres_solve
from .problem import ScalarField, SolverConfig, TransportProblem, gaussian_source
from .transport import (
    SimulationResult,
    StepStats,
    TransportOperator,
    apply_global_operator,
    integrate,
    locate,
    probe,
    simulate,
    step,
)

__all__ = [
    "ElementGeometry", "ElementSystem", "element_system", "load_vectors", "mass_matrices",
    "operator_matrices", "supg_tau", "GmresResult", "gmres_solve", "ScalarField",
    "SolverConfig", "TransportProblem", "gaussian_source", "SimulationResult", "StepStats",
    "TransportOperator", "apply_global_operator", "integrate", "locate", "probe", "simulate",
    "step",
]
