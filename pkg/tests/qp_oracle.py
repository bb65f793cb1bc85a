"""Brute-force reference for the local QP and a random instance generator.

The reference enumerates every inequality active set, solves the
equality-constrained least-squares problem through its KKT matrix and keeps the
candidate satisfying all KKT conditions with the smallest objective. It shares
no code with the package solvers.
"""

from itertools import combinations

import numpy as np


def enumerate_qp(c, G, gb, E, eb, tol=1e-9):
    """Minimize 0.5 ||xi + c||^2 s.t. G xi <= gb, E xi = eb. Returns (xi, lam, mu)."""
    n = c.size
    p, q = G.shape[0], E.shape[0]
    best = None
    for k in range(p + 1):
        for S in combinations(range(p), k):
            A = np.vstack([E, G[list(S)]])
            b = np.concatenate([eb, gb[list(S)]])
            m = A.shape[0]
            if m > n or (m and np.linalg.matrix_rank(A) < m):
                continue
            K = np.block([[np.eye(n), A.T], [A, np.zeros((m, m))]])
            rhs = np.concatenate([-c, b])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            xi, nu = sol[:n], sol[n:]
            mu, lam_s = nu[:q], nu[q:]
            if p and np.any(G @ xi > gb + tol):
                continue
            if np.any(lam_s < -tol):
                continue
            lam = np.zeros(p)
            lam[list(S)] = lam_s
            obj = 0.5 * float(np.sum((xi + c) ** 2))
            if best is None or obj < best[0] - 1e-12:
                best = (obj, xi, lam, mu)
    if best is None:
        raise ValueError("no KKT point found")
    return best[1], best[2], best[3]


def well_conditioned(M, limit=1e2):
    """Every subset of at most n rows has condition number below ``limit``."""
    m, n = M.shape
    for k in range(1, min(m, n) + 1):
        for R in combinations(range(m), k):
            s = np.linalg.svd(M[list(R)], compute_uv=False)
            if s[-1] <= 0 or s[0] / s[-1] > limit:
                return False
    return True


def random_qp(rng, n_max=4, p_max=3, q_max=1):
    """Feasible, well-conditioned instance ``(c, G, gb, E, eb)``.

    Bounds are set from a random feasible point with a mix of zero and positive
    slacks, so constraints are active at the solution with fair probability.
    Instances with more than n rows through that point are redrawn.
    """
    while True:
        n = int(rng.integers(1, n_max + 1))
        p = int(rng.integers(0, p_max + 1))
        q = int(rng.integers(0, min(q_max, n) + 1))
        c = rng.normal(size=n) * 2.0
        G = rng.normal(size=(p, n))
        E = rng.normal(size=(q, n))
        M = np.vstack([E, G])
        if M.shape[0] and not well_conditioned(M):
            continue
        xi0 = rng.normal(size=n)
        slack = np.where(rng.random(p) < 0.5, 0.0, rng.exponential(size=p))
        # at most n rows may pass through xi0, otherwise the vertex is degenerate
        tight = np.flatnonzero(slack == 0.0)
        if tight.size + q > n:
            continue
        return c, G, G @ xi0 + slack, E, E @ xi0
