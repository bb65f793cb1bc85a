"""Undirected communication graphs, Laplacians and the feasible-point lift."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class LaplacianCompatibilityError(ValueError):
    """Right-hand side is not in the range of the Laplacian."""


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph on vertices ``0..num_vertices-1``."""

    num_vertices: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.num_vertices < 1:
            raise ValueError("graph needs at least one vertex")
        canon = set()
        for e in self.edges:
            i, j = (int(v) for v in e)
            if i == j:
                raise ValueError(f"self-loop at vertex {i}")
            if not (0 <= i < self.num_vertices and 0 <= j < self.num_vertices):
                raise ValueError(f"edge ({i}, {j}) out of range")
            canon.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(canon))

    @classmethod
    def from_edges(cls, num_vertices: int, edges) -> Graph:
        return cls(num_vertices, frozenset(tuple(e) for e in edges))

    @classmethod
    def line(cls, n: int) -> Graph:
        return cls.from_edges(n, [(i, i + 1) for i in range(n - 1)])

    @classmethod
    def cycle(cls, n: int) -> Graph:
        if n < 3:
            return cls.line(n)
        return cls.from_edges(n, [(i, (i + 1) % n) for i in range(n)])

    @classmethod
    def complete(cls, n: int) -> Graph:
        return cls.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])

    @classmethod
    def star(cls, n: int) -> Graph:
        return cls.from_edges(n, [(0, j) for j in range(1, n)])

    @classmethod
    def named(cls, name: str, n: int) -> Graph:
        try:
            builder = {"line": cls.line, "cycle": cls.cycle, "complete": cls.complete, "star": cls.star}[name]
        except KeyError:
            raise ValueError(f"unknown graph family {name!r}") from None
        return builder(n)

    @cached_property
    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.num_vertices, self.num_vertices))
        for i, j in self.edges:
            A[i, j] = A[j, i] = 1.0
        A.flags.writeable = False
        return A

    @cached_property
    def _neighbors(self) -> tuple:
        nbrs = [set() for _ in range(self.num_vertices)]
        for i, j in self.edges:
            nbrs[i].add(j)
            nbrs[j].add(i)
        return tuple(frozenset(s) for s in nbrs)

    def neighbors(self, i: int) -> frozenset:
        if not 0 <= i < self.num_vertices:
            raise IndexError(f"vertex {i} out of range for graph with {self.num_vertices} vertices")
        return self._neighbors[i]

    def degree(self, i: int) -> int:
        return len(self.neighbors(i))

    @cached_property
    def laplacian(self) -> np.ndarray:
        """``L = D - A``."""
        A = self.adjacency
        L = np.diag(A.sum(axis=1)) - A
        L.flags.writeable = False
        return L

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """``(N, max_degree)`` neighbor indices, padded with the vertex itself."""
        width = max((len(s) for s in self._neighbors), default=0)
        table = np.tile(np.arange(self.num_vertices)[:, None], (1, max(width, 1)))
        for i, nb in enumerate(self._neighbors):
            table[i, : len(nb)] = sorted(nb)
        table.flags.writeable = False
        return table

    @cached_property
    def is_connected(self) -> bool:
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for w in self._neighbors[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == self.num_vertices

    @cached_property
    def laplacian_pinv(self) -> np.ndarray:
        P = np.linalg.pinv(self.laplacian, hermitian=True)
        P.flags.writeable = False
        return P

    def to_spec(self) -> dict:
        return {"num_vertices": self.num_vertices, "edges": sorted(list(e) for e in self.edges)}


def neighbors(graph: Graph, i: int) -> frozenset:
    return graph.neighbors(i)


def laplacian(graph: Graph) -> np.ndarray:
    return np.array(graph.laplacian)


def solve_laplacian(graph: Graph, rhs, tol: float = 1e-9) -> np.ndarray:
    """Minimum-norm ``w`` with ``L w = rhs``.

    ``rhs`` may be a vector of length N or an ``(N, m)`` array solved column by
    column. Each column must sum to zero.
    """
    if not graph.is_connected:
        raise ValueError("solve_laplacian requires a connected graph")
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != graph.num_vertices:
        raise ValueError(f"rhs has {rhs.shape[0]} rows, graph has {graph.num_vertices} vertices")
    sums = rhs.sum(axis=0)
    scale = max(1.0, float(np.abs(rhs).max(initial=0.0)))
    if np.any(np.abs(sums) > tol * scale):
        raise LaplacianCompatibilityError(
            f"rhs must sum to zero to lie in the Laplacian range (column sums {np.atleast_1d(sums)})"
        )
    w = graph.laplacian_pinv @ rhs
    # drop any residual component along the kernel
    return w - w.mean(axis=0)


def mismatch(graph: Graph, y: np.ndarray) -> np.ndarray:
    """``sum_{j in N_i} (y_i - y_j)`` for every agent, i.e. ``L @ y``.

    Row i is accumulated from agent i's neighbors only, in ascending neighbor
    order, so the result does not depend on how agents are batched.
    """
    y = np.asarray(y, dtype=float)
    table = graph.neighbor_table
    # padding entries point at the agent itself and contribute exactly zero
    return (y[:, None, ...] - y[table]).sum(axis=1)


def lift_feasible_point(problem, x, tol: float = 1e-9):
    """Mismatch variables making ``x`` feasible for the local reformulation.

    Returns ``(y, z)`` with shapes ``(N, p)`` and ``(N, q)``.
    """
    from .problem import eval_agents, is_feasible

    if not is_feasible(problem, x, tol):
        raise ValueError("lift_feasible_point requires a feasible point of the original problem")
    G, H = eval_agents(problem, x)
    N = problem.num_agents
    graph = problem.graph
    # equal split of the aggregate slack over agents
    slack = -G.sum(axis=0, keepdims=True) / N
    v = G + slack
    y = solve_laplacian(graph, -v, tol=max(tol, 1e-9) * N) if problem.num_ineq else np.zeros((N, 0))
    w = H - H.sum(axis=0, keepdims=True) / N
    z = solve_laplacian(graph, -w, tol=max(tol, 1e-9) * N) if problem.num_eq else np.zeros((N, 0))
    return y, z
