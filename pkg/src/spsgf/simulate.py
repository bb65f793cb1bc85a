"""Wiring between algorithms, vector fields, diagnostics and initial conditions."""

from __future__ import annotations

from functools import partial

import numpy as np

from .dynamics import (
    AlgorithmParams,
    NetworkState,
    centralized_sgf_state_field,
    sgf_solutions,
    sp_field,
    spcm_field,
    spsgf_field,
)
from .integrate import IntegratorConfig, Trajectory, integrate
from .problem import RESOURCE_INITIAL_X, SeparableProblem

ALGORITHMS = ("sp-sgf", "sp", "sp-cm", "centralized-sgf")


def make_field(problem: SeparableProblem, algorithm: str, params: AlgorithmParams):
    if algorithm == "sp-sgf":
        return partial(spsgf_field, problem, params)
    if algorithm == "sp-cm":
        return partial(spcm_field, problem, params)
    if algorithm == "sp":
        return partial(sp_field, problem)
    if algorithm == "centralized-sgf":
        return partial(centralized_sgf_state_field, problem, params.alpha)
    raise ValueError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")


def decision_block(algorithm: str) -> str:
    """State block that plays the role of the decision variable."""
    return "v" if algorithm == "sp-cm" else "x"


def make_monitor(problem: SeparableProblem, algorithm: str, params: AlgorithmParams, detailed: bool = False):
    """Diagnostics recorded per state: aggregate g, h, objective and ``snorm``.

    ``snorm`` is the norm of the decision variable's velocity, which for SP-SGF
    is ``||S_alpha(x, y, z)||``. With ``detailed`` the SP-SGF monitor also records
    local multipliers, active sets and the terms of the objective-descent bound.
    """
    block = decision_block(algorithm)

    def monitor(state: NetworkState, deriv: NetworkState) -> dict:
        X = getattr(state, block)
        dX = getattr(deriv, block)
        G, H = problem.ineq_values(X), problem.eq_values(X)
        rec = {
            "g": G.sum(axis=0),
            "h": H.sum(axis=0),
            "obj": float(problem.objective_values(X).sum()),
            "snorm": float(np.linalg.norm(dX)),
        }
        if detailed and algorithm == "sp-sgf":
            sol, g_hat, h_hat = sgf_solutions(problem, params.alpha, state.x, state.y, state.z)
            grad = problem.objective_gradients(state.x)
            rec["active"] = sol.active.copy()
            rec["phi"] = sol.ineq_multipliers
            rec["chi"] = sol.eq_multipliers
            rec["descent"] = float(np.sum(grad * dX))
            rec["descent_bound"] = float(
                -np.sum(dX * dX)
                + params.alpha * np.sum(sol.ineq_multipliers * g_hat)
                + params.alpha * np.sum(sol.eq_multipliers * h_hat)
            )
        return rec

    return monitor


def example_initial_state(problem: SeparableProblem, algorithm: str) -> NetworkState:
    """Reference initial conditions of the resource-allocation example.

    SP-SGF starts its virtual variables at zero; SP-CM starts its primal
    variable at the listed allocation; SP starts with zero multipliers.
    """
    x0 = np.array(RESOURCE_INITIAL_X)
    if problem.dims[:2] != x0.shape:
        raise ValueError("paper-example initial conditions need 13 agents with n = 2")
    if algorithm == "sp-sgf":
        return NetworkState.for_problem(problem, x0=x0, v0=np.zeros_like(x0), algorithm=algorithm)
    return NetworkState.for_problem(problem, x0=x0, algorithm=algorithm)


def simulate(problem: SeparableProblem, algorithm: str, params: AlgorithmParams, initial: NetworkState,
             cfg: IntegratorConfig, detailed: bool = False) -> Trajectory:
    field_fn = make_field(problem, algorithm, params)
    return integrate(field_fn, initial, cfg, make_monitor(problem, algorithm, params, detailed))
