import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spsgf.graph import Graph, LaplacianCompatibilityError, laplacian, lift_feasible_point, mismatch, solve_laplacian
from spsgf.problem import RegularizedProblem, is_feasible
from spsgf.verify import project_feasible


@st.composite
def connected_graphs(draw, max_n=9):
    n = draw(st.integers(1, max_n))
    # random spanning tree plus extra edges
    edges = [(draw(st.integers(0, i - 1)), i) for i in range(1, n)]
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=n))
    edges += [(i, j) for i, j in extra if i != j]
    return Graph.from_edges(n, edges)


def test_line_graph_structure():
    g = Graph.line(5)
    assert g.neighbors(0) == {1}
    assert g.neighbors(2) == {1, 3}
    L = laplacian(g)
    np.testing.assert_array_equal(np.diag(L), [1, 2, 2, 2, 1])
    assert g.is_connected


def test_named_families():
    assert len(Graph.named("cycle", 5).edges) == 5
    assert len(Graph.named("complete", 5).edges) == 10
    assert Graph.named("star", 5).degree(0) == 4
    with pytest.raises(ValueError, match="unknown graph family"):
        Graph.named("torus", 4)


def test_invalid_graphs():
    with pytest.raises(ValueError, match="self-loop"):
        Graph.from_edges(3, [(1, 1)])
    with pytest.raises(ValueError, match="out of range"):
        Graph.from_edges(3, [(0, 3)])
    with pytest.raises(IndexError):
        Graph.line(3).neighbors(3)
    assert not Graph.from_edges(4, [(0, 1), (2, 3)]).is_connected


@given(connected_graphs())
def test_laplacian_properties(g):
    L = g.laplacian
    np.testing.assert_array_equal(L, L.T)
    np.testing.assert_array_equal(L.sum(axis=1), 0.0)
    ev = np.linalg.eigvalsh(L)
    assert ev[0] > -1e-12
    if g.num_vertices > 1:
        assert ev[1] > 1e-9  # connected: one-dimensional kernel


@given(connected_graphs(), st.data())
def test_telescoping_identity_exact(g, data):
    # dyadic values keep every sum exact, so the cancellation must be exact too
    ints = data.draw(st.lists(st.integers(-2**20, 2**20), min_size=2 * g.num_vertices,
                              max_size=2 * g.num_vertices))
    y = np.array(ints, dtype=float).reshape(g.num_vertices, 2) / 1024.0
    assert np.all(mismatch(g, y).sum(axis=0) == 0.0)
    np.testing.assert_array_equal(mismatch(g, y), g.laplacian @ y)


@given(connected_graphs(), st.data())
def test_mismatch_matches_laplacian(g, data):
    y = np.array(data.draw(st.lists(st.floats(-10, 10), min_size=g.num_vertices, max_size=g.num_vertices)))
    np.testing.assert_allclose(mismatch(g, y[:, None])[:, 0], g.laplacian @ y, atol=1e-12)


@given(connected_graphs(), st.data())
def test_solve_laplacian_inverts_on_range(g, data):
    v = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=g.num_vertices, max_size=g.num_vertices)))
    v = v - v.mean()
    w = solve_laplacian(g, v)
    np.testing.assert_allclose(g.laplacian @ w, v, atol=1e-9)
    assert abs(w.sum()) < 1e-9


def test_solve_laplacian_rejects_rhs_outside_range():
    with pytest.raises(LaplacianCompatibilityError, match="sum to zero"):
        solve_laplacian(Graph.line(4), np.ones(4))


def test_lift_requires_feasible_point(resource):
    with pytest.raises(ValueError, match="feasible"):
        lift_feasible_point(resource, np.zeros((13, 2)))


def test_lift_gives_locally_feasible_point(resource):
    rng = np.random.default_rng(3)
    reg = RegularizedProblem(resource, 1e-4)
    for _ in range(5):
        x = project_feasible(resource, 2 * rng.normal(size=(13, 2)))
        assert is_feasible(resource, x, 1e-9)
        y, z = lift_feasible_point(resource, x)
        G, H = reg.local_constraints(x, y, z)
        assert G.max() <= 1e-9
        assert np.abs(H).max() <= 1e-9
