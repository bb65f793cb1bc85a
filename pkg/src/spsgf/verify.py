"""Independent oracles and property checks.

The centralized oracle works on a dense nonlinear program assembled directly
from the problem's function evaluations: an SLSQP warm start is polished by
active-set Newton iterations on the KKT system until the residual certifies
the solution. Nothing here goes through the vector fields or the local QP
solvers, except the checks that are explicitly about them.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .dynamics import AlgorithmParams, NetworkState, safe_gradient
from .functions import FunctionStack, Quadratic
from .graph import lift_feasible_point
from .localqp import LocalQp, solve_local_qp
from .problem import SeparableProblem, eval_aggregate

log = logging.getLogger(__name__)

KKT_TOL = 1e-8
LICQ_ACTIVE_TOL = 1e-6


class OracleError(RuntimeError):
    """The centralized solver did not reach a certified KKT point."""

    def __init__(self, msg: str, history):
        super().__init__(f"{msg}; residual history {['%.3g' % r for r in history]}")
        self.history = list(history)


@dataclass
class OracleSolution:
    x_star: np.ndarray          # (N, n) optimizer of the original problem
    x_star_eps: np.ndarray      # (N, n) x-part of the regularized reformulation optimizer
    y_star_eps: np.ndarray      # (N, p)
    z_star_eps: np.ndarray      # (N, q)
    lam: np.ndarray             # aggregate inequality multipliers (p,)
    mu: np.ndarray              # aggregate equality multipliers (q,)
    kkt_residual: float
    epsilon: float = 0.0
    lam_local: np.ndarray | None = None   # (N, p) reformulation multipliers
    mu_local: np.ndarray | None = None    # (N, q)
    history: list = field(default_factory=list)

    def saddle_state(self) -> NetworkState:
        """Equilibrium of the SP-SGF cascade built from this solution."""
        lam = self.lam_local if self.lam_local is not None else np.zeros_like(self.y_star_eps)
        mu = self.mu_local if self.mu_local is not None else np.zeros_like(self.z_star_eps)
        return NetworkState(self.x_star_eps.copy(), self.x_star_eps.copy(), self.y_star_eps.copy(),
                            self.z_star_eps.copy(), lam.copy(), mu.copy())


class _Program:
    """Dense smooth program ``min F(w)`` s.t. ``cI(w) <= 0``, ``cE(w) = 0``."""

    def __init__(self, problem: SeparableProblem, epsilon: float = 0.0, reformulated: bool = False):
        self.P = problem
        self.eps = float(epsilon)
        self.reform = reformulated
        N, n, p, q = problem.dims
        self.N, self.n, self.p, self.q = N, n, p, q
        self.nx = N * n
        self.size = self.nx + (N * p + N * q if reformulated else 0)
        self.L = problem.graph.laplacian

    def split(self, w):
        N, n, p, q = self.N, self.n, self.p, self.q
        X = w[: self.nx].reshape(N, n)
        if not self.reform:
            return X, None, None
        y = w[self.nx: self.nx + N * p].reshape(N, p)
        z = w[self.nx + N * p:].reshape(N, q)
        return X, y, z

    def fun(self, w):
        X, y, z = self.split(w)
        val = float(self.P.objective_values(X).sum())
        if self.reform:
            val += 0.5 * self.eps * (float(np.sum(y * y)) + float(np.sum(z * z)))
        return val

    def grad(self, w):
        X, y, z = self.split(w)
        parts = [self.P.objective_gradients(X).ravel()]
        if self.reform:
            parts += [self.eps * y.ravel(), self.eps * z.ravel()]
        return np.concatenate(parts)

    def _jac(self, X, grads, extra):
        # grads: (N, m, n) summand gradients; extra: coupling block for the mismatch variables
        N, n = self.N, self.n
        m = grads.shape[1]
        if not self.reform:
            J = np.zeros((m, N * n))
            for i in range(N):
                J[:, i * n:(i + 1) * n] = grads[i]
            return J
        J = np.zeros((N * m, self.size))
        for i in range(N):
            J[i * m:(i + 1) * m, i * n:(i + 1) * n] = grads[i]
        J[:, extra[0]:extra[1]] = np.kron(self.L, np.eye(m))
        return J

    def ineq(self, w):
        X, y, _ = self.split(w)
        G = self.P.ineq_values(X)
        return G.sum(axis=0) if not self.reform else (G + self.L @ y).ravel()

    def ineq_jac(self, w):
        X = self.split(w)[0]
        return self._jac(X, self.P.ineq_gradients(X), (self.nx, self.nx + self.N * self.p))

    def eq(self, w):
        X, _, z = self.split(w)
        H = self.P.eq_values(X)
        return H.sum(axis=0) if not self.reform else (H + self.L @ z).ravel()

    def eq_jac(self, w):
        X = self.split(w)[0]
        return self._jac(X, self.P.eq_gradients(X), (self.nx + self.N * self.p, self.size))

    def lagrangian_hessian(self, w, lam):
        """Hessian of ``F + lam' cI`` (equalities are affine)."""
        X = self.split(w)[0]
        N, n, p = self.N, self.n, self.p
        H = np.zeros((self.size, self.size))
        lam = lam.reshape(N, p) if self.reform else np.broadcast_to(lam, (N, p))
        for i in range(N):
            blk = self.P.objectives[i].hessian(X[i])
            for k in range(p):
                if lam[i, k] != 0.0:
                    blk = blk + lam[i, k] * self.P.ineq_constraints[k][i].hessian(X[i])
            H[i * n:(i + 1) * n, i * n:(i + 1) * n] = blk
        if self.reform:
            H[self.nx:, self.nx:] += self.eps * np.eye(self.size - self.nx)
        return H

    def kkt(self, w, lam, nu):
        """Componentwise KKT residuals: stationarity, primal, dual, complementarity."""
        cI, cE = self.ineq(w), self.eq(w)
        r = self.grad(w)
        if cI.size:
            r = r + self.ineq_jac(w).T @ lam
        if cE.size:
            r = r + self.eq_jac(w).T @ nu
        return {
            "stationarity": float(np.max(np.abs(r), initial=0.0)),
            "primal": float(max(np.max(cI, initial=0.0), np.max(np.abs(cE), initial=0.0))),
            "dual": float(np.max(-lam, initial=0.0)),
            "complementarity": float(np.max(np.abs(lam * cI), initial=0.0)),
        }


def _warm_start(prog: _Program, w0: np.ndarray):
    cons = []
    if prog.p:
        cons.append({"type": "ineq", "fun": lambda w: -prog.ineq(w), "jac": lambda w: -prog.ineq_jac(w)})
    if prog.q:
        cons.append({"type": "eq", "fun": prog.eq, "jac": prog.eq_jac})
    res = minimize(prog.fun, w0, jac=prog.grad, method="SLSQP", constraints=cons,
                   options={"maxiter": 1000, "ftol": 1e-14})
    mI = prog.ineq(res.x).size
    mE = prog.eq(res.x).size
    # least-squares multiplier estimate on the nearly active set
    cI = prog.ineq(res.x)
    active = cI > -1e-6
    lam, nu = _multipliers(prog, res.x, active)
    lam = np.maximum(lam, 0.0)
    return res.x, lam if mI else np.zeros(0), nu if mE else np.zeros(0)


def _multipliers(prog: _Program, w, active):
    JI, JE = prog.ineq_jac(w), prog.eq_jac(w)
    A = np.vstack([JI[active], JE])
    lam = np.zeros(JI.shape[0])
    if A.shape[0] == 0:
        return lam, np.zeros(0)
    sol = np.linalg.lstsq(A.T, -prog.grad(w), rcond=None)[0]
    k = int(active.sum())
    lam[active] = sol[:k]
    return lam, sol[k:]


def _polish(prog: _Program, w, lam, nu, max_iter: int = 60, target: float = 1e-13):
    """Active-set Newton iterations on the KKT conditions."""
    history = []
    cI = prog.ineq(w)
    active = (cI > -1e-7) | (lam > 0)
    for _ in range(max_iter):
        res = prog.kkt(w, lam, nu)
        history.append(max(res.values()))
        if history[-1] < target:
            break
        JI, JE = prog.ineq_jac(w), prog.eq_jac(w)
        A = np.vstack([JI[active], JE])
        m = A.shape[0]
        H = prog.lagrangian_hessian(w, lam)
        mult = np.concatenate([lam[active], nu])
        rhs = -np.concatenate([prog.grad(w) + A.T @ mult, np.concatenate([prog.ineq(w)[active], prog.eq(w)])])
        K = np.block([[H, A.T], [A, np.zeros((m, m))]])
        step = np.linalg.lstsq(K, rhs, rcond=None)[0]
        w = w + step[: prog.size]
        mult = mult + step[prog.size:]
        k = int(active.sum())
        lam = np.zeros_like(lam)
        lam[active] = mult[:k]
        nu = mult[k:]
        # active-set corrections
        cI = prog.ineq(w)
        drop = active & (lam < 0)
        add = ~active & (cI > 0)
        if drop.any() or add.any():
            active = (active & ~drop) | add
            lam = np.maximum(lam, 0.0)
    res = prog.kkt(w, lam, nu)
    history.append(max(res.values()))
    return w, lam, nu, history


def _solve_program(prog: _Program, w0=None):
    w0 = np.zeros(prog.size) if w0 is None else np.asarray(w0, dtype=float)
    w, lam, nu = _warm_start(prog, w0)
    w, lam, nu, history = _polish(prog, w, lam, nu)
    if not history[-1] < KKT_TOL:
        raise OracleError("centralized solver did not certify a KKT point", history)
    return w, lam, nu, history


def solve_centralized(problem: SeparableProblem, epsilon: float = 0.0, on_reformulation: bool = False,
                      x0=None) -> OracleSolution:
    """Optimizer of the original problem and, optionally, of the regularized reformulation.

    Without ``on_reformulation`` the mismatch blocks are the minimum-norm lift
    of ``x_star``.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    N, n, p, q = problem.dims
    prog = _Program(problem)
    w0 = None if x0 is None else problem.as_matrix(x0).ravel()
    w, lam, nu, history = _solve_program(prog, w0)
    x_star = w.reshape(N, n)
    kkt = history[-1]
    if not on_reformulation or epsilon == 0.0:
        y, z = lift_feasible_point(problem, x_star, tol=1e-7)
        return OracleSolution(x_star, x_star.copy(), y, z, lam, nu, kkt, float(epsilon),
                              np.tile(lam, (N, 1)), np.tile(nu, (N, 1)), history)
    rprog = _Program(problem, epsilon, reformulated=True)
    y0, z0 = lift_feasible_point(problem, x_star, tol=1e-7)
    wr, lam_loc, mu_loc, rhist = _solve_program(rprog, np.concatenate([w, y0.ravel(), z0.ravel()]))
    X, y, z = rprog.split(wr)
    return OracleSolution(x_star, X.copy(), y.copy(), z.copy(), lam, nu, max(kkt, rhist[-1]), float(epsilon),
                          lam_loc.reshape(N, p), mu_loc.reshape(N, q), history + rhist)


def check_licq(problem: SeparableProblem, x, tol: float = LICQ_ACTIVE_TOL) -> bool:
    """Linear independence of active aggregate inequality and all equality gradients."""
    X = problem.as_matrix(x)
    _, g, _ = eval_aggregate(problem, X)
    N, n, p, q = problem.dims
    Jg = problem.ineq_gradients(X).transpose(1, 0, 2).reshape(p, N * n)
    Jh = problem.eq_gradients(X).transpose(1, 0, 2).reshape(q, N * n)
    A = np.vstack([Jg[np.abs(g) <= tol], Jh])
    if A.shape[0] == 0:
        return True
    if A.shape[0] > A.shape[1]:
        return False
    s = np.linalg.svd(A, compute_uv=False)
    return bool(s[-1] > 1e-10 * max(s[0], 1.0))


@dataclass
class AnytimeReport:
    max_ineq_violation: float
    max_eq_violation: float
    tol: float
    passed: bool
    first_violation_time: float | None = None

    def as_record(self) -> dict:
        return {"check": "anytime", "passed": self.passed, "max_ineq_violation": self.max_ineq_violation,
                "max_eq_violation": self.max_eq_violation, "tol": self.tol,
                "first_violation_time": self.first_violation_time}


def _decision_states(trajectory, block: str | None):
    if block is None:
        block = "v" if trajectory.states[0].x.size == 0 else "x"
    return [getattr(s, block) for s in trajectory.states]


def certify_anytime(trajectory, problem: SeparableProblem, tol: float, block: str | None = None) -> AnytimeReport:
    """Scan every recorded state for violations of the original constraints."""
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    worst_g = worst_h = 0.0
    first = None
    for t, X in zip(trajectory.times, _decision_states(trajectory, block)):
        _, g, h = eval_aggregate(problem, X)
        vg = float(np.max(g, initial=0.0))
        vh = float(np.max(np.abs(h), initial=0.0))
        vg = max(vg, 0.0)
        if first is None and (vg > tol or vh > tol):
            first = float(t)
        worst_g, worst_h = max(worst_g, vg), max(worst_h, vh)
    passed = worst_g <= tol and worst_h <= tol
    return AnytimeReport(worst_g, worst_h, float(tol), passed, first)


def check_equilibrium(problem: SeparableProblem, params: AlgorithmParams, oracle: OracleSolution) -> float:
    """``||S_alpha(x*, y*, z*)||`` at the regularized optimizer."""
    S = safe_gradient(problem, params.alpha, oracle.x_star_eps, oracle.y_star_eps, oracle.z_star_eps)
    return float(np.linalg.norm(S))


def _locally_feasible(problem, X, Ly, Lz, tol=0.0):
    G = problem.ineq_values(X) + Ly
    H = problem.eq_values(X) + Lz
    return bool(np.all(G <= tol) and np.all(np.abs(H) <= 1e-9))


def feasible_perturbations(problem: SeparableProblem, oracle: OracleSolution, count: int = 20,
                           radius: float = 0.1, seed: int = 0, max_tries: int = 10000):
    """Points at distance ``radius`` from ``x*`` satisfying every local constraint at ``(y*, z*)``.

    Random directions are projected per agent onto the tangent cone of the local
    constraints (equality null space, active inequalities nonincreasing); scaled
    points that turn out infeasible are rejected.
    """
    rng = np.random.default_rng(seed)
    X0 = oracle.x_star_eps
    L = problem.graph.laplacian
    Ly, Lz = L @ oracle.y_star_eps, L @ oracle.z_star_eps
    Gv = problem.ineq_values(X0) + Ly
    Gg, Eg = problem.ineq_gradients(X0), problem.eq_gradients(X0)
    N, n, p, q = problem.dims
    out = []
    for _ in range(max_tries):
        R = rng.normal(size=(N, n))
        D = np.empty_like(R)
        for i in range(N):
            act = Gv[i] > -1e-6
            qp = LocalQp(-R[i], Gg[i][act], np.zeros(int(act.sum())), Eg[i], np.zeros(q))
            D[i] = solve_local_qp(qp, allow_degenerate=True).direction
        nrm = np.linalg.norm(D)
        if nrm < 1e-12:
            continue
        Xt = X0 + radius * D / nrm
        if _locally_feasible(problem, Xt, Ly, Lz):
            out.append(Xt)
            if len(out) == count:
                return out
    raise RuntimeError(f"found only {len(out)} feasible perturbations in {max_tries} tries")


def perturbed_residuals(problem: SeparableProblem, params: AlgorithmParams, oracle: OracleSolution,
                        count: int = 20, radius: float = 0.1, seed: int = 0) -> np.ndarray:
    """``||S_alpha(x~, y*, z*)||`` at sampled feasible points ``radius`` away from the optimizer."""
    pts = feasible_perturbations(problem, oracle, count, radius, seed)
    return np.array([
        np.linalg.norm(safe_gradient(problem, params.alpha, X, oracle.y_star_eps, oracle.z_star_eps))
        for X in pts
    ])


def sensitivity_sweep(problem: SeparableProblem, eps_list) -> list[tuple[float, float]]:
    """``(eps, ||x*_eps - x*||)`` for each regularization weight."""
    eps_list = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps_list):
        raise ValueError("regularization weights must be positive")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("regularization weights must be decreasing")
    out = []
    for eps in eps_list:
        sol = solve_centralized(problem, eps, on_reformulation=True)
        out.append((eps, float(np.linalg.norm(sol.x_star_eps - sol.x_star))))
    return out


@dataclass
class ConvergenceReport:
    final_distance: float
    settle_time: float | None
    delta: float

    def as_record(self) -> dict:
        return {"check": "convergence", "passed": self.final_distance < self.delta,
                "final_distance": self.final_distance, "settle_time": self.settle_time, "delta": self.delta}


def distances(trajectory, target, block: str | None = None) -> np.ndarray:
    target = np.asarray(target, dtype=float)
    return np.array([np.linalg.norm(X - target.reshape(X.shape)) for X in _decision_states(trajectory, block)])


def convergence_report(trajectory, oracle: OracleSolution, delta: float = 1e-2,
                       block: str | None = None) -> ConvergenceReport:
    """Final distance to ``x*_eps`` and the first time after which it stays below ``delta``."""
    d = distances(trajectory, oracle.x_star_eps, block)
    above = np.flatnonzero(d >= delta)
    if above.size == 0:
        settle = float(trajectory.times[0])
    elif above[-1] == d.size - 1:
        settle = None
    else:
        settle = float(trajectory.times[above[-1] + 1])
    return ConvergenceReport(float(d[-1]), settle, float(delta))


def project_feasible(problem: SeparableProblem, point) -> np.ndarray:
    """Euclidean projection of ``point`` onto the feasible set, via the oracle."""
    P = problem.as_matrix(point)
    shifted = SeparableProblem(
        problem.graph,
        FunctionStack(tuple(Quadratic.isotropic(problem.agent_dim, 1.0, P[i]) for i in range(problem.num_agents))),
        problem.ineq_constraints, problem.eq_constraints, name=f"{problem.name}-projection",
    )
    return solve_centralized(shifted, x0=P).x_star


def random_feasible_start(problem: SeparableProblem, rng: np.random.Generator, scale: float = 0.5,
                          center=None) -> NetworkState:
    """SP-SGF initial state with ``x0`` feasible and ``(y0, z0)`` its lift."""
    N, n, _, _ = problem.dims
    c = np.zeros((N, n)) if center is None else problem.as_matrix(center)
    x0 = project_feasible(problem, c + scale * rng.normal(size=(N, n)))
    y0, z0 = lift_feasible_point(problem, x0, tol=1e-7)
    return NetworkState.for_problem(problem, x0=x0, y0=y0, z0=z0)


def anytime_tolerance(trajectory, problem: SeparableProblem, dt: float, factor: float = 10.0,
                      block: str | None = None) -> float:
    """``factor * dt * L`` with ``L`` the largest observed rate of change of the constraint values."""
    vals = []
    for X in _decision_states(trajectory, block):
        _, g, h = eval_aggregate(problem, X)
        vals.append(np.concatenate([g, h]))
    V = np.array(vals)
    if len(V) < 2 or V.shape[1] == 0:
        return factor * dt
    rate = np.abs(np.diff(V, axis=0)) / np.diff(trajectory.times)[:, None]
    return factor * dt * max(float(rate.max()), 1.0)


def feasibility_drift(trajectory, problem: SeparableProblem, block: str | None = None) -> float:
    """Largest violation of the original constraints over the recorded states."""
    rep = certify_anytime(trajectory, problem, math.inf, block)
    return max(rep.max_ineq_violation, rep.max_eq_violation)
