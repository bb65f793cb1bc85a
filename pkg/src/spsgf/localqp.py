"""Per-agent safe-gradient-flow subproblem.

Each agent solves::

    min_xi  0.5 ||xi + grad||^2
    s.t.    ineq_normals @ xi <= ineq_bounds
            eq_normals   @ xi == eq_bounds

``solve_local_qp`` handles one instance with a dual active-set method
(Goldfarb-Idnani with identity Hessian). ``solve_local_qp_batch`` handles all
agents at once by enumerating active sets in order of cardinality; the
simulator uses it because it vectorizes over agents.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np

FEAS_TOL = 1e-10
RANK_TOL = 1e-10


class QpError(ArithmeticError):
    pass


class QpInfeasibleError(QpError):
    """The linearized constraints admit no direction."""

    def __init__(self, msg, constraints=(), agent=None, time=None):
        super().__init__(msg)
        self.constraints = tuple(constraints)
        self.agent = agent
        self.time = time


class QpDegenerateError(QpError):
    """Active constraint normals are linearly dependent; multipliers are not unique."""


@dataclass(frozen=True)
class LocalQp:
    gradient: np.ndarray
    ineq_normals: np.ndarray
    ineq_bounds: np.ndarray
    eq_normals: np.ndarray = None
    eq_bounds: np.ndarray = None

    def __post_init__(self):
        c = np.asarray(self.gradient, dtype=float).reshape(-1)
        n = c.size
        G = np.asarray(self.ineq_normals, dtype=float).reshape(-1, n)
        b = np.asarray(self.ineq_bounds, dtype=float).reshape(-1)
        E = np.zeros((0, n)) if self.eq_normals is None else np.asarray(self.eq_normals, dtype=float).reshape(-1, n)
        d = np.zeros(0) if self.eq_bounds is None else np.asarray(self.eq_bounds, dtype=float).reshape(-1)
        if G.shape[0] != b.size or E.shape[0] != d.size:
            raise ValueError("constraint normals and bounds disagree in count")
        for name, val in zip(("gradient", "ineq_normals", "ineq_bounds", "eq_normals", "eq_bounds"), (c, G, b, E, d)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.gradient.size

    @property
    def p(self) -> int:
        return self.ineq_bounds.size

    @property
    def q(self) -> int:
        return self.eq_bounds.size


@dataclass(frozen=True)
class QpSolution:
    direction: np.ndarray
    ineq_multipliers: np.ndarray
    eq_multipliers: np.ndarray
    active_set: tuple = ()
    degenerate: bool = False
    iterations: int = field(default=0, compare=False)


def kkt_residuals(qp: LocalQp, sol: QpSolution) -> dict[str, float]:
    """Stationarity, primal, dual and complementarity residuals."""
    xi, phi, chi = sol.direction, sol.ineq_multipliers, sol.eq_multipliers
    stat = xi + qp.gradient + qp.ineq_normals.T @ phi + qp.eq_normals.T @ chi
    slack = qp.ineq_normals @ xi - qp.ineq_bounds
    return {
        "stationarity": float(np.abs(stat).max(initial=0.0)),
        "primal": float(max(np.max(slack, initial=0.0), np.abs(qp.eq_normals @ xi - qp.eq_bounds).max(initial=0.0))),
        "dual": float(max(0.0, -np.min(phi, initial=0.0))),
        "complementarity": float(np.abs(phi * slack).max(initial=0.0)),
    }


def kkt_residual(qp: LocalQp, sol: QpSolution) -> float:
    return max(kkt_residuals(qp, sol).values())


def _null_projection(N: np.ndarray, a: np.ndarray):
    """Split ``a`` into ``P a`` (null space of the rows of N) and ``r`` with ``N^T r = a - P a``."""
    if N.shape[0] == 0:
        return a.copy(), np.zeros(0)
    r, *_ = np.linalg.lstsq(N.T, a, rcond=None)
    return a - N.T @ r, r


def solve_local_qp(qp: LocalQp, allow_degenerate: bool = False, max_iter: int = 200) -> QpSolution:
    """Unique minimizer and multipliers of the local subproblem."""
    n, p, q = qp.n, qp.p, qp.q
    normals = np.vstack([qp.eq_normals, qp.ineq_normals])
    rhs = np.concatenate([qp.eq_bounds, qp.ineq_bounds])
    is_eq = np.arange(q + p) < q
    sign = np.ones(q + p)
    scale = 1.0 + np.abs(rhs) + np.linalg.norm(normals, axis=1) * (1.0 + np.linalg.norm(qp.gradient))
    tol = FEAS_TOL * scale

    xi = -qp.gradient.copy()
    active: list[int] = []
    u: list[float] = []
    it = 0

    def violation(j):
        return sign[j] * (normals[j] @ xi - rhs[j])

    while True:
        # pick the constraint to add: equalities first, then the most violated inequality
        cand = None
        for j in range(q):
            if j not in active and abs(normals[j] @ xi - rhs[j]) > tol[j]:
                cand = j
                break
        if cand is None and p:
            s = normals[q:] @ xi - rhs[q:]
            s[[j - q for j in active if j >= q]] = -np.inf
            k = int(np.argmax(s - tol[q:]))
            if s[k] > tol[q + k]:
                cand = q + k
        if cand is None:
            break
        if is_eq[cand] and normals[cand] @ xi - rhs[cand] < 0:
            sign[cand] = -1.0
        a_p = sign[cand] * normals[cand]
        u_p = 0.0
        while True:
            it += 1
            if it > max_iter:
                raise QpError(f"active-set iteration limit reached ({max_iter})")
            N = np.array([sign[j] * normals[j] for j in active]).reshape(len(active), n)
            z, r = _null_projection(N, a_p)
            zz = float(z @ z)
            # dual blocking step
            t1, block = np.inf, None
            for idx, j in enumerate(active):
                if not is_eq[j] and r[idx] > 1e-14:
                    ratio = u[idx] / r[idx]
                    if ratio < t1:
                        t1, block = ratio, idx
            s_p = violation(cand)
            if zz <= (RANK_TOL * np.linalg.norm(a_p)) ** 2:
                if block is None:
                    viol = [cand] + [j for j in active if abs(normals[j] @ xi - rhs[j]) <= tol[j]]
                    raise QpInfeasibleError(
                        "linearized constraints are inconsistent",
                        constraints=[("eq", j) if is_eq[j] else ("ineq", j - q) for j in viol],
                    )
                t2 = np.inf
            else:
                t2 = s_p / zz
            t = min(t1, t2)
            xi = xi - t * z
            u = [uj - t * rj for uj, rj in zip(u, r)]
            u_p += t
            if t == t2:
                active.append(cand)
                u.append(u_p)
                break
            del active[block]
            del u[block]

    # re-solve on the final working set to shed accumulated rounding
    if active:
        M = np.array([sign[j] * normals[j] for j in active])
        if rows_independent(M):
            r_act = np.array([sign[j] * rhs[j] for j in active])
            nu = np.linalg.solve(M @ M.T, -(M @ qp.gradient + r_act))
            if all(is_eq[j] or nu_j >= -1e-12 * (1 + abs(uj)) for j, nu_j, uj in zip(active, nu, u)):
                xi = -qp.gradient - M.T @ nu
                u = list(nu)

    phi = np.zeros(p)
    chi = np.zeros(q)
    for j, uj in zip(active, u):
        if is_eq[j]:
            chi[j] = sign[j] * uj
        else:
            phi[j - q] = max(uj, 0.0)

    # degeneracy: normals of constraints binding at the solution
    binding = [j for j in range(q + p) if is_eq[j] or abs(normals[j] @ xi - rhs[j]) <= 1e-8 * scale[j]]
    degenerate = False
    if binding:
        degenerate = not rows_independent(normals[binding])
    if degenerate and not allow_degenerate:
        raise QpDegenerateError(
            f"active constraint normals are rank deficient (binding {binding}); multipliers not unique"
        )
    active_ineq = tuple(sorted(j - q for j in active if not is_eq[j]))
    return QpSolution(xi, phi, chi, active_ineq, degenerate, it)


def solve_single_inequality(gradient, normal, bound) -> QpSolution:
    """Closed form for one inequality ``normal @ xi <= bound`` and no equalities."""
    c = np.asarray(gradient, dtype=float).reshape(-1)
    a = np.asarray(normal, dtype=float).reshape(-1)
    aa = float(a @ a)
    if aa == 0.0:
        raise ValueError("constraint normal must be nonzero")
    excess = float(-(a @ c) - bound)
    if excess <= 0.0:
        return QpSolution(-c, np.zeros(1), np.zeros(0), ())
    phi = excess / aa
    return QpSolution(-c - phi * a, np.array([phi]), np.zeros(0), (0,))


def check_local_li(problem, i: int, x_i) -> bool:
    """Whether agent i's constraint gradients at ``x_i`` are linearly independent."""
    rows = [f.gradient(x_i) for f in problem.agent_ineq(i)] + [f.gradient(x_i) for f in problem.agent_eq(i)]
    return rows_independent(np.array(rows).reshape(len(rows), problem.agent_dim))


def rows_independent(M: np.ndarray) -> bool:
    """Rank test on the row-normalized matrix, so row scaling does not matter."""
    m, n = M.shape
    if m == 0:
        return True
    if m > n:
        return False
    norms = np.linalg.norm(M, axis=1)
    if np.any(norms == 0.0):
        return False
    sv = np.linalg.svd(M / norms[:, None], compute_uv=False)
    return bool(sv[-1] > RANK_TOL * sv[0])


@lru_cache(maxsize=None)
def _subsets(p: int) -> tuple:
    return tuple(s for size in range(p + 1) for s in combinations(range(p), size))


def _small_solve(K: np.ndarray, b: np.ndarray, rtol: float = 1e-12):
    """Batched solve of small SPD Gram systems; returns ``(x, ok)``.

    ``ok`` is False where the rows behind the Gram matrix are numerically
    dependent. The test is invariant to row scaling, so a tiny but independent
    normal is still accepted. Rows flagged not ok carry meaningless values.
    """
    m = K.shape[-1]
    if m == 1:
        k = K[:, 0, 0]
        ok = k > 1e-300
        return b / np.where(ok, k, 1.0)[:, None], ok
    if m == 2:
        a, c, d = K[:, 0, 0], K[:, 0, 1], K[:, 1, 1]
        det = a * d - c * c
        ok = (a > 1e-300) & (d > 1e-300) & (det > rtol * a * d)
        det = np.where(ok, det, 1.0)
        x0 = (d * b[:, 0] - c * b[:, 1]) / det
        x1 = (a * b[:, 1] - c * b[:, 0]) / det
        return np.stack([x0, x1], axis=1), ok
    diag = np.sqrt(np.maximum(np.diagonal(K, axis1=1, axis2=2), 1e-300))
    Kn = K / diag[:, :, None] / diag[:, None, :]
    ok = np.linalg.eigvalsh(Kn)[:, 0] > rtol
    K = np.where(ok[:, None, None], K, np.eye(m))
    return np.linalg.solve(K, b[..., None])[..., 0], ok


@dataclass
class BatchSolution:
    directions: np.ndarray     # (B, n)
    ineq_multipliers: np.ndarray  # (B, p)
    eq_multipliers: np.ndarray    # (B, q)
    active: np.ndarray          # (B, p) boolean


@lru_cache(maxsize=None)
def _candidate_rows(p: int, q: int, n: int) -> tuple:
    """Row index sets (equalities first) of every admissible active set."""
    out = []
    for S in _subsets(p):
        R = tuple(range(q)) + tuple(q + k for k in S)
        if len(R) <= n:
            mask = np.zeros(q + p, dtype=bool)
            mask[list(R)] = True
            out.append((S, np.array(R, dtype=int), mask))
    return tuple(out)


def solve_local_qp_batch(grads, G, gb, E, eb, tol: float = 1e-10) -> BatchSolution:
    """Solve B independent local subproblems sharing (n, p, q).

    Shapes: ``grads (B, n)``, ``G (B, p, n)``, ``gb (B, p)``, ``E (B, q, n)``,
    ``eb (B, q)``. Candidate active sets are tried in order of cardinality and
    the first one satisfying the KKT conditions is kept. Instances the
    enumeration cannot settle (rank-deficient systems) go through
    ``solve_local_qp`` and raise its errors.
    """
    B, n = grads.shape
    p, q = gb.shape[1], eb.shape[1]
    M = np.concatenate([E, G], axis=1) if q and p else (G if p else E)
    r = np.concatenate([eb, gb], axis=1) if q and p else (gb if p else eb)
    K = M @ M.transpose(0, 2, 1)
    Mc = (M @ grads[..., None])[..., 0]
    base = -(Mc + r)
    # ineq slack at xi = -grads - M_R' nu is  -G grads - gb - K[:, ineq, R] nu
    slack0 = -Mc[:, q:] - gb
    slack_tol = tol * (1.0 + np.abs(gb))

    picks = []
    covered = np.zeros(B, dtype=bool)
    for S, R, mask in _candidate_rows(p, q, n):
        if R.size:
            nu, ok = _small_solve(K[:, R[:, None], R], base[:, R])
            slack = slack0 - (K[:, q:, R] @ nu[..., None])[..., 0]
            if S:
                lam = nu[:, q:]
                ok &= (lam >= -tol * (1.0 + np.abs(lam))).all(axis=1)
        else:
            nu, ok, slack = None, np.ones(B, dtype=bool), slack0
        if p:
            ok &= (slack <= slack_tol).all(axis=1)
        ok &= ~covered
        if ok.any():
            picks.append((S, mask, nu, ok))
            covered |= ok
            if covered.all():
                break

    nu_full = np.zeros((B, q + p))
    active = np.zeros((B, p), dtype=bool)
    for S, mask, nu, ok in picks:
        if nu is not None:
            nu_full[ok[:, None] & mask] = nu[ok].ravel()
        for k in S:
            active[ok, k] = True
    nu_full[:, q:] = np.maximum(nu_full[:, q:], 0.0)
    xi = -grads - (M.transpose(0, 2, 1) @ nu_full[..., None])[..., 0] if q + p else -grads.copy()
    phi = nu_full[:, q:]
    chi = nu_full[:, :q]
    for b in np.flatnonzero(~covered):
        sol = solve_local_qp(LocalQp(grads[b], G[b], gb[b], E[b], eb[b]))
        xi[b], phi[b], chi[b] = sol.direction, sol.ineq_multipliers, sol.eq_multipliers
        active[b] = False
        active[b, list(sol.active_set)] = True
    return BatchSolution(xi, phi, chi, active)
