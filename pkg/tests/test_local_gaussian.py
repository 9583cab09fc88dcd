import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import connected_graphs
from netsync.errors import DisconnectedGraphError, GraphError
from netsync.gaussian import ml_estimate_iid
from netsync.graph import (
    Graph,
    build_incidence,
    path_graph,
    random_connected_graph,
    star_graph,
    triangle,
)
from netsync.local_gaussian import (
    JacobiState,
    convergence_diagnostics,
    jacobi_run,
    jacobi_step,
    signed_edge_sums,
)

K2 = Graph(["v1", "v2"], [("v1", "v2")])


class TestStep:
    def test_two_node_oscillation(self):
        s1 = jacobi_step(K2, [1.0], JacobiState(np.zeros(2)))
        np.testing.assert_allclose(s1.x, [-1, 1])
        s2 = jacobi_step(K2, [1.0], s1)
        np.testing.assert_allclose(s2.x, [0, 0])
        # period-2 orbit: its average is the mean-zero solution
        np.testing.assert_allclose((s1.x + s2.x) / 2, [-0.5, 0.5])

    def test_two_node_damped(self):
        res = jacobi_run(K2, [1.0], tol=1e-12)
        assert res.converged
        assert res.diagnostics["damping"] == 0.5
        np.testing.assert_allclose(res.vertex_values("mean-zero"), [-0.5, 0.5], atol=1e-12)

    def test_fixed_point(self):
        g = triangle()
        x = np.array([0.0, 1.0, 2.5])
        r = build_incidence(g).D.T @ x
        s = jacobi_step(g, r, JacobiState(x))
        np.testing.assert_allclose(s.x, x)
        assert s.last_delta == 0

    def test_isolated_vertex(self):
        g = Graph(["a", "b", "c"], [("a", "b")])
        with pytest.raises(GraphError):
            jacobi_step(g, [1.0], JacobiState(np.zeros(3)))

    @given(connected_graphs(max_n=8, max_extra=5, parallel=True), st.integers(0, 2**31))
    def test_locality(self, g, seed):
        """A vertex's update depends only on its own neighbours' values."""
        rng = np.random.default_rng(seed)
        r = rng.normal(size=g.m)
        x = rng.normal(size=g.n)
        base = jacobi_step(g, r, JacobiState(x)).x
        v = int(rng.integers(g.n))
        bumped = x.copy()
        bumped[v] += 1.0
        moved = np.abs(jacobi_step(g, r, JacobiState(bumped)).x - base) > 0
        nbrs = {u for _, u, _ in g.incident[v]}
        assert set(np.flatnonzero(moved)) <= nbrs


class TestRun:
    def test_triangle(self):
        res = jacobi_run(triangle(), np.ones(3), tol=1e-10)
        assert res.converged
        np.testing.assert_allclose(res.omega_hat, [2 / 3, 2 / 3, 4 / 3], atol=1e-9)
        assert res.diagnostics["normal_eq_residual"] < 1e-9

    def test_tree(self):
        g = path_graph(6)
        r = np.random.default_rng(0).normal(size=5)
        res = jacobi_run(g, r, tol=1e-12)
        np.testing.assert_allclose(res.omega_hat, r, atol=1e-10)

    def test_random_50(self):
        rng = np.random.default_rng(50)
        g = random_connected_graph(rng, 50, 40)
        inc = build_incidence(g)
        x = rng.uniform(0, 10, 49)
        r = inc.D_W.T @ x + 0.1 * rng.normal(size=g.m)
        res = jacobi_run(g, r, tol=1e-12, max_iter=200_000)
        direct = ml_estimate_iid(g, inc, r)
        assert res.converged
        assert np.max(np.abs(res.x_hat - direct.x_hat)) < 1e-8

    def test_max_iter_flags(self):
        res = jacobi_run(path_graph(30), np.ones(29), tol=1e-14, max_iter=3)
        assert not res.converged
        assert res.iterations == 3

    def test_errors(self):
        with pytest.raises(ValueError):
            jacobi_run(triangle(), np.ones(3), tol=0)
        with pytest.raises(DisconnectedGraphError):
            jacobi_run(Graph(["a", "b", "c"], [("a", "b")]), [1.0])

    @given(connected_graphs(max_n=10, max_extra=6, parallel=True), st.integers(0, 2**31))
    def test_matches_direct(self, g, seed):
        r = np.random.default_rng(seed).normal(size=g.m)
        tol = 1e-11
        res = jacobi_run(g, r, tol=tol, max_iter=500_000)
        direct = ml_estimate_iid(g, build_incidence(g), r)
        assert res.converged
        L = build_incidence(g).L
        x = res.vertex_values()
        Dr = signed_edge_sums(g, r)
        assert np.max(np.abs(L @ x - Dr)) <= 1e-6 * (1 + np.max(np.abs(Dr)))
        assert np.max(np.abs(res.omega_hat - direct.omega_hat)) <= 10 * tol

    @given(connected_graphs(max_n=8, max_extra=5), st.integers(0, 2**31))
    def test_vector_is_coordinatewise(self, g, seed):
        r = np.random.default_rng(seed).normal(size=(g.m, 2))
        vec = jacobi_run(g, r, tol=1e-10, max_iter=100_000)
        for c in range(2):
            sc = jacobi_run(g, r[:, c], tol=1e-10, max_iter=100_000)
            np.testing.assert_allclose(vec.x_hat[:, c], sc.x_hat, atol=1e-8)


class TestDiagnostics:
    def test_k2(self):
        d = convergence_diagnostics(K2)
        assert d.spectral_radius == pytest.approx(1.0)
        assert d.bipartite_hazard

    def test_triangle(self):
        d = convergence_diagnostics(triangle())
        assert d.spectral_radius == pytest.approx(1.0)
        np.testing.assert_allclose(np.sort(d.eigenvalues), [-0.5, -0.5, 1.0], atol=1e-12)
        assert not d.bipartite_hazard

    def test_star(self):
        d = convergence_diagnostics(star_graph(4))
        assert d.bipartite_hazard
        assert min(d.eigenvalues) == pytest.approx(-1.0)

    @given(connected_graphs(min_n=3, max_n=9, max_extra=6))
    def test_hazard_iff_bipartite(self, g):
        d = convergence_diagnostics(g)
        assert 0 < d.spectral_radius <= 1 + 1e-12
        assert d.bipartite_hazard == g.is_bipartite()
        inc = build_incidence(g)
        ev = np.sort(np.linalg.eigvals(np.linalg.solve(inc.N, inc.A)).real)
        np.testing.assert_allclose(np.sort(d.eigenvalues), ev, atol=1e-9)
