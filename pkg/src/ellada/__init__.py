"""Distributed nonconvex optimization with an extended augmented Lagrangian,
approximate inner solves and Anderson acceleration, plus a quadruple-tank
distributed MPC built on it."""

from .errors import ConfigError, DomainError, SolverError, StructureError
from .graph import (AgentSubproblem, Digraph, DistributedProblem, SelectorMatrix, assemble_coupling,
                    build_bipartite, validate_problem)
from .driver import (BarrierSchedule, SolveResult, SolverConfig, ToleranceSchedule, default_schedules, run,
                     run_ell, run_ella, run_ellada)
from .problems import decoupled_problem, load_problem, monolithic_qp_solution, random_qp_problem

__version__ = "0.1.0"

__all__ = [
    "AgentSubproblem", "BarrierSchedule", "ConfigError", "Digraph", "DistributedProblem", "DomainError",
    "SelectorMatrix", "SolveResult", "SolverConfig", "SolverError", "StructureError", "ToleranceSchedule",
    "assemble_coupling", "build_bipartite", "decoupled_problem", "default_schedules", "load_problem",
    "monolithic_qp_solution", "random_qp_problem", "run", "run_ell", "run_ella", "run_ellada", "validate_problem",
]
