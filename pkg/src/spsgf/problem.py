"""Separable network optimization problems and the built-in problem families.

A problem couples N agents with private decision vectors ``x_i`` in R^n through
aggregate constraints ``sum_i g_i^k(x_i) <= 0`` and ``sum_i h_i^l(x_i) = 0``
while minimizing ``sum_i f_i(x_i)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .functions import Affine, ExpAffine, FunctionStack, Quadratic, ScalarFunction, from_spec
from .graph import Graph

#: Weights of resource 1 in the 13-agent resource-allocation example.
RESOURCE_WEIGHTS = (1.0, 3.0, 2.0, 1.0, 1.0, 1.0, 2.0, 4.0, 1.0, 1.0, 0.5, 2.0, 1.0)

#: Reference initial allocation for the resource-allocation example.
RESOURCE_INITIAL_X = (
    (3.0, 5.0), (1.0, 4.0), (-1.0, 3.0), (-2.0, 2.0), (3.0, 1.0), (0.0, 10.0), (0.0, 9.0),
    (0.0, 8.0), (0.0, 7.0), (0.0, 6.0), (0.0, 5.0), (-2.0, 4.0), (4.0, 3.0),
)


@dataclass(frozen=True, eq=False)
class SeparableProblem:
    """``min sum_i f_i(x_i)`` subject to aggregate separable constraints.

    ``ineq_constraints[k]`` and ``eq_constraints[l]`` hold one summand per agent.
    """

    graph: Graph
    objectives: FunctionStack
    ineq_constraints: tuple[FunctionStack, ...] = ()
    eq_constraints: tuple[FunctionStack, ...] = ()
    name: str = "custom"
    spec: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        N = self.graph.num_vertices
        if not self.graph.is_connected:
            raise ValueError("communication graph must be connected")
        if len(self.objectives) != N:
            raise ValueError(f"{len(self.objectives)} objectives for {N} agents")
        n = self.objectives[0].dim
        for stack in (self.objectives, *self.ineq_constraints, *self.eq_constraints):
            if len(stack) != N:
                raise ValueError(f"constraint has {len(stack)} summands for {N} agents")
            if any(f.dim != n for f in stack.funcs):
                raise ValueError("all agent functions must share the agent dimension")
        for stack in self.eq_constraints:
            if not stack.all_affine:
                raise ValueError("equality summands must be affine")

    @property
    def num_agents(self) -> int:
        return self.graph.num_vertices

    @property
    def agent_dim(self) -> int:
        return self.objectives[0].dim

    @property
    def num_ineq(self) -> int:
        return len(self.ineq_constraints)

    @property
    def num_eq(self) -> int:
        return len(self.eq_constraints)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.num_agents, self.agent_dim, self.num_ineq, self.num_eq

    def agent_ineq(self, i: int) -> list[ScalarFunction]:
        return [stack[i] for stack in self.ineq_constraints]

    def agent_eq(self, i: int) -> list[ScalarFunction]:
        return [stack[i] for stack in self.eq_constraints]

    def as_matrix(self, x) -> np.ndarray:
        """Reshape a stacked vector of length N*n into ``(N, n)``."""
        X = np.asarray(x, dtype=float)
        N, n = self.num_agents, self.agent_dim
        if X.shape == (N, n):
            return X
        if X.size != N * n or X.ndim > 2:
            raise ValueError(f"decision vector has shape {X.shape}, expected {N * n} entries")
        return X.reshape(N, n)

    # bulk evaluation on (N, n) arrays
    def ineq_values(self, X) -> np.ndarray:
        if len(self.ineq_constraints) == 1:
            return self.ineq_constraints[0].values(X)[:, None]
        if not self.num_ineq:
            return np.zeros((X.shape[0], 0))
        return np.stack([s.values(X) for s in self.ineq_constraints], axis=1)

    def eq_values(self, X) -> np.ndarray:
        if len(self.eq_constraints) == 1:
            return self.eq_constraints[0].values(X)[:, None]
        if not self.num_eq:
            return np.zeros((X.shape[0], 0))
        return np.stack([s.values(X) for s in self.eq_constraints], axis=1)

    def ineq_gradients(self, X) -> np.ndarray:
        """``(N, p, n)`` array of summand gradients."""
        if len(self.ineq_constraints) == 1:
            return self.ineq_constraints[0].gradients(X)[:, None, :]
        if not self.num_ineq:
            return np.zeros((X.shape[0], 0, X.shape[1]))
        return np.stack([s.gradients(X) for s in self.ineq_constraints], axis=1)

    def eq_gradients(self, X) -> np.ndarray:
        if len(self.eq_constraints) == 1:
            return self.eq_constraints[0].gradients(X)[:, None, :]
        if not self.num_eq:
            return np.zeros((X.shape[0], 0, X.shape[1]))
        return np.stack([s.gradients(X) for s in self.eq_constraints], axis=1)

    def objective_gradients(self, X) -> np.ndarray:
        return self.objectives.gradients(X)

    def objective_values(self, X) -> np.ndarray:
        return self.objectives.values(X)


@dataclass(frozen=True, eq=False)
class RegularizedProblem:
    """Constraint-mismatch reformulation with ``eps/2 (||y||^2 + ||z||^2)`` added."""

    base: SeparableProblem
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def agent_objectives(self, x, y, z) -> np.ndarray:
        X = self.base.as_matrix(x)
        y = np.asarray(y, dtype=float).reshape(self.base.num_agents, -1)
        z = np.asarray(z, dtype=float).reshape(self.base.num_agents, -1)
        half_eps = 0.5 * self.epsilon
        return self.base.objective_values(X) + half_eps * (y**2).sum(axis=1) + half_eps * (z**2).sum(axis=1)

    def objective(self, x, y, z) -> float:
        return float(self.agent_objectives(x, y, z).sum())

    def local_constraints(self, x, y, z):
        """Per-agent reformulated constraint values ``(N, p)`` and ``(N, q)``."""
        base = self.base
        X = base.as_matrix(x)
        L = base.graph.laplacian
        y = np.asarray(y, dtype=float).reshape(base.num_agents, base.num_ineq)
        z = np.asarray(z, dtype=float).reshape(base.num_agents, base.num_eq)
        return base.ineq_values(X) + L @ y, base.eq_values(X) + L @ z


def eval_agents(problem: SeparableProblem, x):
    """Per-agent constraint summands, shapes ``(N, p)`` and ``(N, q)``."""
    X = problem.as_matrix(x)
    return problem.ineq_values(X), problem.eq_values(X)


def eval_aggregate(problem: SeparableProblem, x):
    """Return ``(f(x), g(x), h(x))`` with ``g`` in R^p and ``h`` in R^q."""
    X = problem.as_matrix(x)
    G, H = eval_agents(problem, X)
    return float(problem.objective_values(X).sum()), G.sum(axis=0), H.sum(axis=0)


def is_feasible(problem: SeparableProblem, x, tol: float = 1e-9) -> bool:
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    _, g, h = eval_aggregate(problem, x)
    return bool(np.all(g <= tol) and np.all(np.abs(h) <= tol))


def aggregate_gradients(problem: SeparableProblem, x):
    """Full gradients in R^{Nn}: objective, ``(p, Nn)`` and ``(q, Nn)``."""
    X = problem.as_matrix(x)
    N, n, p, q = problem.dims
    return (
        problem.objective_gradients(X).reshape(N * n),
        problem.ineq_gradients(X).transpose(1, 0, 2).reshape(p, N * n),
        problem.eq_gradients(X).transpose(1, 0, 2).reshape(q, N * n),
    )


def build_resource_allocation(weights=RESOURCE_WEIGHTS, budget: float = 5.0, capacity: float = 3.0,
                              graph: Graph | None = None) -> SeparableProblem:
    """Two-resource allocation over a line graph.

    Minimizes ``sum_i 0.5 ||x_i||^2`` subject to
    ``budget - sum_i w_i x_{i,1} = 0`` and ``-capacity + sum_i exp(-x_{i,2}) <= 0``.
    Constants are split evenly across agents.
    """
    w = np.asarray(weights, dtype=float)
    N = w.size
    graph = Graph.line(N) if graph is None else graph
    objectives = FunctionStack(tuple(Quadratic.isotropic(2) for _ in range(N)))
    h = FunctionStack(tuple(Affine([-wi, 0.0], budget / N) for wi in w))
    g = FunctionStack(tuple(ExpAffine([0.0, -1.0], 0.0, 1.0, -capacity / N) for _ in range(N)))
    spec = {"family": "resource_allocation", "weights": w.tolist(), "budget": budget, "capacity": capacity}
    return SeparableProblem(graph, objectives, (g,), (h,), name="resource_allocation", spec=spec)


def build_consensus_problem(local_objectives, local_ineq_sets, graph: Graph) -> SeparableProblem:
    """Agents hold copies of a shared variable that must agree over the graph.

    ``local_ineq_sets[i]`` lists agent i's private constraints ``gbar_i^m(x_i) <= 0``;
    each becomes its own aggregate constraint with zero summands elsewhere. The
    agreement ``(L kron I_n) x = 0`` contributes one equality per Laplacian row and
    coordinate, with agent j's summand ``L[r, j] * x_{j,d}``.
    """
    if not graph.is_connected:
        raise ValueError("consensus reformulation needs a connected graph")
    N = graph.num_vertices
    if len(local_objectives) != N or len(local_ineq_sets) != N:
        raise ValueError("need one objective and one constraint list per agent")
    n = local_objectives[0].dim
    L = graph.laplacian
    zero = Affine.zero(n)

    ineq = []
    for i, funcs in enumerate(local_ineq_sets):
        for fn in funcs:
            ineq.append(FunctionStack(tuple(fn if j == i else zero for j in range(N))))
    eq = []
    for r in range(N):
        for d in range(n):
            eq.append(FunctionStack(tuple(Affine(L[r, j] * np.eye(n)[d], 0.0) for j in range(N))))
    return SeparableProblem(graph, FunctionStack(tuple(local_objectives)), tuple(ineq), tuple(eq),
                            name="consensus")


def graph_from_spec(spec, num_vertices: int | None = None) -> Graph:
    if isinstance(spec, str):
        if num_vertices is None:
            raise ValueError("named graph needs a vertex count")
        return Graph.named(spec, num_vertices)
    spec = dict(spec)
    n = int(spec.get("num_vertices", num_vertices or 0))
    if "edges" in spec:
        return Graph.from_edges(n, spec["edges"])
    return Graph.named(spec["family"], n)


def problem_from_spec(spec: dict) -> SeparableProblem:
    """Build a problem from a declarative mapping.

    Either ``{"family": "resource_allocation", ...}`` or a generic description::

        {"agents": N, "dim": n, "graph": "line" | {...},
         "objectives": [fspec, ...],               # one per agent
         "ineq": [[fspec per agent], ...],         # one list per constraint
         "eq": [[fspec per agent], ...]}
    """
    spec = dict(spec)
    family = spec.get("family", "generic")
    if family == "resource_allocation":
        kwargs = {k: spec[k] for k in ("weights", "budget", "capacity") if k in spec}
        n_agents = len(kwargs.get("weights", RESOURCE_WEIGHTS))
        if "graph" in spec:
            kwargs["graph"] = graph_from_spec(spec["graph"], n_agents)
        return build_resource_allocation(**kwargs)
    if family == "consensus":
        N = int(spec["agents"])
        n = int(spec["dim"])
        graph = graph_from_spec(spec.get("graph", "line"), N)
        objectives = [from_spec(f, n) for f in spec["objectives"]]
        ineqs = [[from_spec(f, n) for f in fs] for fs in spec.get("ineq", [[] for _ in range(N)])]
        return build_consensus_problem(objectives, ineqs, graph)
    if family != "generic":
        raise ValueError(f"unknown problem family {family!r}")
    N = int(spec["agents"])
    n = int(spec["dim"])
    graph = graph_from_spec(spec.get("graph", "line"), N)

    def stack(fspecs):
        if len(fspecs) != N:
            raise ValueError(f"expected {N} function specs, got {len(fspecs)}")
        return FunctionStack(tuple(from_spec(f, n) for f in fspecs))

    return SeparableProblem(
        graph,
        stack(spec["objectives"]),
        tuple(stack(c) for c in spec.get("ineq", [])),
        tuple(stack(c) for c in spec.get("eq", [])),
        name=spec.get("name", "generic"),
        spec=spec,
    )
