"""Distributed anytime optimization over networks.

Agents coupled through separable constraints run fast saddle-point dynamics on
a constraint-mismatch reformulation while their decisions follow local safe
gradient flows, so every intermediate decision satisfies the original
constraints.
"""

__version__ = "0.1.0"

from .dynamics import AlgorithmParams, NetworkState, saddle_field, safe_gradient, spsgf_field
from .graph import Graph, lift_feasible_point, solve_laplacian
from .integrate import IntegratorConfig, Trajectory, integrate, step_halving_check
from .localqp import LocalQp, QpDegenerateError, QpInfeasibleError, solve_local_qp
from .problem import SeparableProblem, build_resource_allocation, eval_aggregate, is_feasible
from .simulate import ALGORITHMS, example_initial_state, simulate

__all__ = [
    "ALGORITHMS", "AlgorithmParams", "Graph", "IntegratorConfig", "LocalQp", "NetworkState", "QpDegenerateError",
    "QpInfeasibleError", "SeparableProblem", "Trajectory", "build_resource_allocation", "eval_aggregate",
    "integrate", "is_feasible", "lift_feasible_point", "example_initial_state", "saddle_field", "safe_gradient",
    "simulate", "solve_laplacian", "solve_local_qp", "spsgf_field", "step_halving_check",
]
