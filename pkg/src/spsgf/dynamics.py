"""Vector fields: SP-SGF cascade and the baselines it is compared against.

All fields are pure maps from a :class:`NetworkState` to its time derivative,
returned as another :class:`NetworkState` with the same block shapes.

Block layout for the distributed algorithms (N agents, n, p, q):
``x, v`` are ``(N, n)``, ``y, lam`` are ``(N, p)``, ``z, mu`` are ``(N, q)``.
The centralized saddle-point baseline keeps ``x`` as ``(N, n)`` and aggregate
multipliers ``lam (p,)``, ``mu (q,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import mismatch
from .localqp import BatchSolution, LocalQp, QpInfeasibleError, solve_local_qp, solve_local_qp_batch
from .problem import SeparableProblem, aggregate_gradients, eval_aggregate

_EMPTY = np.zeros((0,))


def _empty():
    return _EMPTY


@dataclass(frozen=True, eq=False)
class NetworkState:
    x: np.ndarray = field(default_factory=_empty)
    v: np.ndarray = field(default_factory=_empty)
    y: np.ndarray = field(default_factory=_empty)
    z: np.ndarray = field(default_factory=_empty)
    lam: np.ndarray = field(default_factory=_empty)
    mu: np.ndarray = field(default_factory=_empty)

    BLOCKS = ("x", "v", "y", "z", "lam", "mu")

    def blocks(self):
        return tuple(getattr(self, name) for name in self.BLOCKS)

    def axpy(self, a: float, other: NetworkState) -> NetworkState:
        """``self + a * other``, blockwise."""
        return NetworkState(*(s + a * o for s, o in zip(self.blocks(), other.blocks())))

    def combine(self, coeffs, others) -> NetworkState:
        out = []
        for name in self.BLOCKS:
            acc = getattr(self, name).copy()
            for c, o in zip(coeffs, others):
                acc += c * getattr(o, name)
            out.append(acc)
        return NetworkState(*out)

    def clamp_multipliers(self) -> NetworkState:
        return NetworkState(self.x, self.v, self.y, self.z, np.maximum(self.lam, 0.0), self.mu)

    def copy(self) -> NetworkState:
        return NetworkState(*(b.copy() for b in self.blocks()))

    def is_finite(self) -> bool:
        # a sum is finite only if every term is (overflow also reports nonfinite)
        return math.isfinite(sum(float(b.sum()) for b in self.blocks()))

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(b * b)) for b in self.blocks())))

    def equals(self, other: NetworkState) -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.blocks(), other.blocks()))

    @classmethod
    def zeros_like(cls, other: NetworkState) -> NetworkState:
        return cls(*(np.zeros_like(b) for b in other.blocks()))

    @classmethod
    def for_problem(cls, problem: SeparableProblem, x0=None, v0=None, y0=None, z0=None, lam0=None, mu0=None,
                    algorithm: str = "sp-sgf") -> NetworkState:
        """Fully initialized state; unspecified blocks are zero, ``v`` copies ``x0``."""
        N, n, p, q = problem.dims

        def block(val, shape):
            if val is None:
                return np.zeros(shape)
            arr = np.array(val, dtype=float)
            if arr.size != int(np.prod(shape)):
                raise ValueError(f"initial block has {arr.size} entries, expected shape {shape}")
            return arr.reshape(shape)

        x = block(x0, (N, n))
        v = x.copy() if v0 is None else block(v0, (N, n))
        if algorithm == "sp":
            return cls(x=x, lam=block(lam0, (p,)), mu=block(mu0, (q,)))
        y, z = block(y0, (N, p)), block(z0, (N, q))
        lam, mu = block(lam0, (N, p)), block(mu0, (N, q))
        if algorithm == "sp-cm":
            return cls(x=np.zeros((N, 0)), v=v, y=y, z=z, lam=lam, mu=mu)
        if algorithm == "centralized-sgf":
            return cls(x=x)
        return cls(x=x, v=v, y=y, z=z, lam=lam, mu=mu)


@dataclass(frozen=True)
class AlgorithmParams:
    tau: float = 1.0
    epsilon: float = 1e-4
    alpha: float = 1.0

    def __post_init__(self):
        for name in ("tau", "epsilon", "alpha"):
            if not getattr(self, name) > 0:
                raise ValueError(f"params.{name} must be > 0")


def positive_projection(a, b):
    """``a`` where ``b > 0``, ``max(0, a)`` where ``b == 0``; elementwise."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(b < 0):
        raise ValueError("projection base must be nonnegative")
    out = np.where(b > 0, a, np.maximum(a, 0.0))
    return float(out) if out.ndim == 0 else out


def _project(a, b):
    # unchecked variant for the hot path; b >= 0 is maintained by the integrator
    return np.where(b > 0, a, np.maximum(a, 0.0))


def saddle_field(problem: SeparableProblem, params: AlgorithmParams, state: NetworkState, Ly=None, Lz=None):
    """Projected saddle-point blocks ``(dv, dy, dz, dlam, dmu)`` of the regularized reformulation.

    ``Ly``/``Lz`` may carry precomputed mismatches of ``y`` and ``z``.
    """
    v, y, z, lam, mu = state.v, state.y, state.z, state.lam, state.mu
    graph = problem.graph
    Ly = mismatch(graph, y) if Ly is None else Ly
    Lz = mismatch(graph, z) if Lz is None else Lz
    inv_tau = 1.0 / params.tau
    grad_v = problem.objective_gradients(v)
    if problem.num_ineq:
        grad_v = grad_v + (lam[:, None, :] @ problem.ineq_gradients(v))[:, 0, :]
    if problem.num_eq:
        grad_v = grad_v + (mu[:, None, :] @ problem.eq_gradients(v))[:, 0, :]
    dv = -grad_v * inv_tau
    dy = (-params.epsilon * y - mismatch(graph, lam)) * inv_tau
    dz = (-params.epsilon * z - mismatch(graph, mu)) * inv_tau
    dlam = _project(problem.ineq_values(v) + Ly, lam) * inv_tau
    dmu = (problem.eq_values(v) + Lz) * inv_tau
    return dv, dy, dz, dlam, dmu


def local_qp_data(problem: SeparableProblem, alpha: float, x, y, z, Ly=None, Lz=None):
    """Batched data of every agent's safe-gradient subproblem.

    Returns ``(grads, G, gb, E, eb, g_hat, h_hat)`` where ``g_hat``/``h_hat`` are the
    mismatch-shifted local constraint values.
    """
    graph = problem.graph
    g_hat = problem.ineq_values(x) + (mismatch(graph, y) if Ly is None else Ly)
    h_hat = problem.eq_values(x) + (mismatch(graph, z) if Lz is None else Lz)
    return (problem.objective_gradients(x), problem.ineq_gradients(x), -alpha * g_hat,
            problem.eq_gradients(x), -alpha * h_hat, g_hat, h_hat)


def local_qp(problem: SeparableProblem, alpha: float, i: int, x, y, z) -> LocalQp:
    """Agent i's subproblem assembled from its own and its neighbors' blocks."""
    x_i = np.asarray(x)[i]
    nb = sorted(problem.graph.neighbors(i))
    y, z = np.asarray(y), np.asarray(z)
    g_hat = np.array([f(x_i) for f in problem.agent_ineq(i)]).reshape(problem.num_ineq)
    h_hat = np.array([f(x_i) for f in problem.agent_eq(i)]).reshape(problem.num_eq)
    for j in nb:
        g_hat = g_hat + (y[i] - y[j])
        h_hat = h_hat + (z[i] - z[j])
    return LocalQp(
        problem.objectives[i].gradient(x_i),
        np.array([f.gradient(x_i) for f in problem.agent_ineq(i)]).reshape(problem.num_ineq, -1),
        -alpha * g_hat,
        np.array([f.gradient(x_i) for f in problem.agent_eq(i)]).reshape(problem.num_eq, -1),
        -alpha * h_hat,
    )


def sgf_solutions(problem: SeparableProblem, alpha: float, x, y, z,
                  Ly=None, Lz=None) -> tuple[BatchSolution, np.ndarray, np.ndarray]:
    """All agents' subproblem solutions plus the shifted constraint values."""
    grads, G, gb, E, eb, g_hat, h_hat = local_qp_data(problem, alpha, x, y, z, Ly, Lz)
    try:
        sol = solve_local_qp_batch(grads, G, gb, E, eb)
    except QpInfeasibleError:
        # locate the offending agent for the error report
        for i in range(problem.num_agents):
            try:
                solve_local_qp(LocalQp(grads[i], G[i], gb[i], E[i], eb[i]))
            except QpInfeasibleError as exc:
                raise QpInfeasibleError(f"agent {i}: {exc}", exc.constraints, agent=i) from exc
        raise
    return sol, g_hat, h_hat


def safe_gradient(problem: SeparableProblem, alpha: float, x, y, z) -> np.ndarray:
    """``S_alpha(x, y, z)`` stacked as ``(N, n)``."""
    return sgf_solutions(problem, alpha, x, y, z)[0].directions


def spsgf_field(problem: SeparableProblem, params: AlgorithmParams, state: NetworkState) -> NetworkState:
    Ly, Lz = mismatch(problem.graph, state.y), mismatch(problem.graph, state.z)
    dv, dy, dz, dlam, dmu = saddle_field(problem, params, state, Ly, Lz)
    dx = sgf_solutions(problem, params.alpha, state.x, state.y, state.z, Ly, Lz)[0].directions
    return NetworkState(dx, dv, dy, dz, dlam, dmu)


def spcm_field(problem: SeparableProblem, params: AlgorithmParams, state: NetworkState) -> NetworkState:
    dv, dy, dz, dlam, dmu = saddle_field(problem, params, state)
    return NetworkState(np.zeros_like(state.x), dv, dy, dz, dlam, dmu)


def sp_field(problem: SeparableProblem, state: NetworkState) -> NetworkState:
    """Projected saddle-point dynamics of the original (aggregate) problem."""
    x, lam, mu = state.x, state.lam, state.mu
    grad = problem.objective_gradients(x)
    if problem.num_ineq:
        grad = grad + np.einsum("k,ikn->in", lam, problem.ineq_gradients(x))
    if problem.num_eq:
        grad = grad + np.einsum("l,iln->in", mu, problem.eq_gradients(x))
    _, g, h = eval_aggregate(problem, x)
    return NetworkState(x=-grad, lam=_project(g, lam), mu=h)


def centralized_sgf_field(problem: SeparableProblem, alpha: float, x) -> np.ndarray:
    """Safe gradient flow of the aggregate problem, one QP over R^{Nn}."""
    X = problem.as_matrix(x)
    grad, Jg, Jh = aggregate_gradients(problem, X)
    _, g, h = eval_aggregate(problem, X)
    sol = solve_local_qp(LocalQp(grad, Jg, -alpha * g, Jh, -alpha * h), allow_degenerate=True)
    return sol.direction.reshape(X.shape)


def centralized_sgf_state_field(problem: SeparableProblem, alpha: float, state: NetworkState) -> NetworkState:
    return NetworkState(x=centralized_sgf_field(problem, alpha, state.x))


def per_agent_dimension(problem: SeparableProblem) -> int:
    """Scalar state size each agent carries under SP-SGF."""
    _, n, p, q = problem.dims
    return 2 * n + 2 * p + 2 * q


def agent_block(state: NetworkState, i: int) -> np.ndarray:
    """Agent i's slice of every distributed block, concatenated."""
    return np.concatenate([b[i].ravel() for b in state.blocks() if b.ndim == 2])


__all__ = [
    "AlgorithmParams", "NetworkState", "agent_block", "centralized_sgf_field", "centralized_sgf_state_field",
    "local_qp", "local_qp_data", "per_agent_dimension", "positive_projection", "safe_gradient",
    "saddle_field", "sgf_solutions", "sp_field", "spcm_field", "spsgf_field",
]
