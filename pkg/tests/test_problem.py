import numpy as np
import pytest

from spsgf.functions import Affine, FunctionStack, Quadratic
from spsgf.graph import Graph
from spsgf.problem import (
    RESOURCE_INITIAL_X,
    RESOURCE_WEIGHTS,
    RegularizedProblem,
    SeparableProblem,
    aggregate_gradients,
    build_consensus_problem,
    build_resource_allocation,
    eval_aggregate,
    is_feasible,
    problem_from_spec,
)


def test_resource_dimensions(resource):
    assert resource.dims == (13, 2, 1, 1)


def test_resource_constraint_values(resource):
    x = np.array(RESOURCE_INITIAL_X)
    w = np.array(RESOURCE_WEIGHTS)
    f, g, h = eval_aggregate(resource, x)
    assert f == pytest.approx(0.5 * float(np.sum(x * x)))
    assert g[0] == pytest.approx(-3.0 + np.exp(-x[:, 1]).sum())
    assert h[0] == pytest.approx(5.0 - w @ x[:, 0])


def test_reference_initial_point_is_feasible(resource):
    # budget: 3 + 3 - 2 - 2 + 3 + 0 + ... - 4 + 4 = 5, and sum exp(-x2) < 3
    assert is_feasible(resource, np.array(RESOURCE_INITIAL_X), 1e-12)


def test_feasibility_tolerance(resource, resource_optimum):
    assert is_feasible(resource, resource_optimum, 1e-9)
    shifted = resource_optimum.copy()
    shifted[0, 0] += 1e-3
    assert not is_feasible(resource, shifted, 1e-9)
    with pytest.raises(ValueError, match="nonnegative"):
        is_feasible(resource, resource_optimum, -1.0)


def test_flat_and_matrix_inputs_agree(resource):
    x = np.array(RESOURCE_INITIAL_X)
    assert eval_aggregate(resource, x.ravel())[0] == eval_aggregate(resource, x)[0]
    with pytest.raises(ValueError, match="26 entries"):
        resource.as_matrix(np.zeros(25))


def test_aggregate_gradients_shapes(resource):
    grad, Jg, Jh = aggregate_gradients(resource, np.array(RESOURCE_INITIAL_X))
    assert grad.shape == (26,) and Jg.shape == (1, 26) and Jh.shape == (1, 26)
    np.testing.assert_allclose(Jh[0, 0::2], -np.array(RESOURCE_WEIGHTS))


def test_regularized_local_constraints_sum_to_aggregate(resource):
    rng = np.random.default_rng(0)
    x, y, z = rng.normal(size=(13, 2)), rng.normal(size=(13, 1)), rng.normal(size=(13, 1))
    reg = RegularizedProblem(resource, 1e-3)
    G, H = reg.local_constraints(x, y, z)
    _, g, h = eval_aggregate(resource, x)
    np.testing.assert_allclose(G.sum(axis=0), g, atol=1e-12)
    np.testing.assert_allclose(H.sum(axis=0), h, atol=1e-12)
    assert reg.objective(x, y, z) == pytest.approx(
        0.5 * np.sum(x * x) + 0.5e-3 * (np.sum(y * y) + np.sum(z * z)))
    with pytest.raises(ValueError, match="positive"):
        RegularizedProblem(resource, 0.0)


def test_problem_validation():
    g = Graph.line(2)
    obj = FunctionStack((Quadratic.isotropic(1), Quadratic.isotropic(1)))
    with pytest.raises(ValueError, match="affine"):
        SeparableProblem(g, obj, eq_constraints=(obj,))
    with pytest.raises(ValueError, match="connected"):
        SeparableProblem(Graph.from_edges(2, []), obj)
    with pytest.raises(ValueError, match="summands"):
        SeparableProblem(g, obj, ineq_constraints=(FunctionStack((Affine([1.0], 0.0),)),))
    with pytest.raises(ValueError, match="agent dimension"):
        SeparableProblem(g, FunctionStack((Quadratic.isotropic(1), Quadratic.isotropic(2))))


def test_consensus_problem_equalities_encode_agreement():
    g = Graph.line(3)
    objs = [Quadratic.isotropic(2, 1.0, c) for c in ([0, 0], [1, 1], [2, 2])]
    P = build_consensus_problem(objs, [[], [], []], g)
    assert P.dims == (3, 2, 0, 6)
    same = np.tile([0.4, -0.2], (3, 1))
    assert is_feasible(P, same, 1e-12)
    assert not is_feasible(P, np.arange(6.0).reshape(3, 2), 1e-6)


def test_problem_from_spec_resource():
    P = problem_from_spec({"family": "resource_allocation", "graph": "cycle"})
    assert P.dims == (13, 2, 1, 1)
    assert len(P.graph.edges) == 13


def test_problem_from_spec_generic():
    spec = {
        "agents": 2, "dim": 1, "graph": {"edges": [[0, 1]]},
        "objectives": [{"family": "isotropic", "center": [1.0]}, {"family": "isotropic", "center": [-1.0]}],
        "ineq": [[{"family": "affine", "a": [1.0], "c": -0.5}, {"family": "zero"}]],
    }
    P = problem_from_spec(spec)
    assert P.dims == (2, 1, 1, 0)
    assert eval_aggregate(P, [[1.0], [0.0]])[1][0] == pytest.approx(0.5)
    with pytest.raises(ValueError, match="unknown problem family"):
        problem_from_spec({"family": "knapsack"})
    with pytest.raises(ValueError, match="expected 2 function specs"):
        problem_from_spec(dict(spec, objectives=spec["objectives"][:1]))


def test_build_resource_allocation_with_custom_weights():
    P = build_resource_allocation(weights=[1.0, 2.0], budget=1.0, capacity=1.0)
    _, g, h = eval_aggregate(P, [[1.0, 0.0], [0.0, 0.0]])
    assert h[0] == pytest.approx(0.0)
    assert g[0] == pytest.approx(1.0)
