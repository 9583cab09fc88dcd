import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import cauchy_binet_oracle, connected_graphs, random_spd
from netsync.errors import DisconnectedGraphError, NoiseModelError
from netsync.gaussian import (
    DiagonalScalar,
    FullScalar,
    FullVector,
    IidScalar,
    IidVector,
    alpha_sign,
    cauchy_binet_det,
    edge_covariance,
    fisher_report,
    mean_zero_gauge,
    ml_estimate_correlated,
    ml_estimate_iid,
    ml_estimate_vector,
    offsets_from_tree,
    tree_coordinates,
)
from netsync.graph import (
    Graph,
    build_incidence,
    complete_graph,
    cocycle_projector,
    cycle_basis,
    enumerate_spanning_trees,
    path_graph,
    spanning_tree_count,
    triangle,
)

TRI = triangle()
TRI_INC = build_incidence(TRI)


def weighted_ls_oracle(graph, r, R):
    """Generalized least squares over vertex offsets by whitening and lstsq."""
    inc = build_incidence(graph)
    Lc = np.linalg.cholesky(R)
    A = np.linalg.solve(Lc, inc.D_W.T)
    b = np.linalg.solve(Lc, r)
    return np.linalg.lstsq(A, b, rcond=None)[0]


class TestIid:
    def test_single_edge(self):
        g = Graph(["v1", "v2"], [("v1", "v2")])
        res = ml_estimate_iid(g, build_incidence(g), [0.7])
        np.testing.assert_allclose(res.vertex_values(), [0, 0.7])
        np.testing.assert_allclose(res.residual, 0, atol=1e-15)

    def test_consistent_triangle(self):
        res = ml_estimate_iid(TRI, TRI_INC, [1, 1, 2])
        np.testing.assert_allclose(res.vertex_values(), [0, 1, 2], atol=1e-12)
        np.testing.assert_allclose(res.residual, 0, atol=1e-12)

    def test_triangle_misfit(self):
        r = np.array([1.0, 1.0, 1.0])
        z = np.array([1.0, 1.0, -1.0])
        oracle = (np.eye(3) - np.outer(z, z) / 3) @ r
        res = ml_estimate_iid(TRI, TRI_INC, r)
        np.testing.assert_allclose(res.omega_hat, oracle, atol=1e-12)
        np.testing.assert_allclose(res.omega_hat, [2 / 3, 2 / 3, 4 / 3], atol=1e-12)
        np.testing.assert_allclose(res.vertex_values(), [0, 2 / 3, 4 / 3], atol=1e-12)

    def test_disconnected(self):
        g = Graph(["a", "b", "c"], [("a", "b")])
        with pytest.raises(DisconnectedGraphError):
            ml_estimate_iid(g, build_incidence(g), [1.0])

    def test_bad_sigma(self):
        with pytest.raises(NoiseModelError):
            ml_estimate_iid(TRI, TRI_INC, [1, 1, 1], sigma2=0.0)

    @given(connected_graphs(max_n=10, max_extra=8, parallel=True), st.integers(0, 2**31))
    def test_properties(self, g, seed):
        rng = np.random.default_rng(seed)
        inc = build_incidence(g)
        r = rng.normal(size=g.m)
        res = ml_estimate_iid(g, inc, r)
        # Kirchhoff current law on the residual
        assert np.max(np.abs(inc.D @ res.residual)) < 1e-9
        np.testing.assert_allclose(res.omega_hat, inc.D_W.T @ res.x_hat, atol=1e-12)
        for z in cycle_basis(g).basis:
            assert abs(z @ res.omega_hat) < 1e-9
        # idempotence
        again = ml_estimate_iid(g, inc, res.omega_hat)
        np.testing.assert_allclose(again.omega_hat, res.omega_hat, atol=1e-9)
        # orthogonality against any cocycle
        omega = inc.D_W.T @ rng.normal(size=g.n - 1)
        assert abs(res.residual @ (res.omega_hat - omega)) < 1e-9 * (1 + np.abs(r).sum() ** 2)
        np.testing.assert_allclose(res.omega_hat, cocycle_projector(inc) @ r, atol=1e-9)

    @given(connected_graphs(max_n=10, max_extra=8, parallel=True), st.integers(0, 2**31))
    def test_zero_noise_recovery(self, g, seed):
        rng = np.random.default_rng(seed)
        inc = build_incidence(g)
        x = rng.normal(size=g.n - 1)
        r = inc.D_W.T @ x
        np.testing.assert_allclose(ml_estimate_iid(g, inc, r).x_hat, x, atol=1e-10)
        R = random_spd(rng, g.m)
        np.testing.assert_allclose(ml_estimate_correlated(g, inc, r, R).x_hat, x, atol=1e-10)

    def test_monte_carlo_unbiased(self):
        rng = np.random.default_rng(11)
        x = np.array([0.4, -1.2])
        sigma = 0.3
        trials = 10_000
        r = (TRI_INC.D_W.T @ x)[:, None] + sigma * rng.normal(size=(3, trials))
        xh = ml_estimate_iid(TRI, TRI_INC, r, sigma**2).x_hat
        se = xh.std(axis=1, ddof=1) / np.sqrt(trials)
        assert np.all(np.abs(xh.mean(axis=1) - x) < 4 * se)


class TestCorrelated:
    def test_reduces_to_iid(self):
        r = np.array([0.3, -1.0, 2.0])
        a = ml_estimate_correlated(TRI, TRI_INC, r, 2.5 * np.eye(3))
        b = ml_estimate_iid(TRI, TRI_INC, r)
        np.testing.assert_allclose(a.x_hat, b.x_hat, atol=1e-12)

    def test_misfit_allocated_by_variance(self):
        r = np.ones(3)
        R = np.diag([1.0, 1.0, 4.0])
        res = ml_estimate_correlated(TRI, TRI_INC, r, R)
        np.testing.assert_allclose(res.x_hat, weighted_ls_oracle(TRI, r, R), atol=1e-12)
        np.testing.assert_allclose(res.omega_hat, [5 / 6, 5 / 6, 5 / 3], atol=1e-12)

    def test_tree_returns_data(self):
        g = path_graph(5)
        rng = np.random.default_rng(3)
        r = rng.normal(size=4)
        res = ml_estimate_correlated(g, build_incidence(g), r, random_spd(rng, 4))
        np.testing.assert_allclose(res.omega_hat, r, atol=1e-12)

    def test_non_spd(self):
        with pytest.raises(NoiseModelError):
            ml_estimate_correlated(TRI, TRI_INC, np.ones(3), np.diag([1.0, -1.0, 1.0]))

    @given(connected_graphs(max_n=8, max_extra=6, parallel=True), st.integers(0, 2**31))
    def test_weighted_kirchhoff(self, g, seed):
        rng = np.random.default_rng(seed)
        inc = build_incidence(g)
        R = random_spd(rng, g.m)
        r = rng.normal(size=g.m)
        res = ml_estimate_correlated(g, inc, r, R)
        assert np.max(np.abs(inc.D @ np.linalg.solve(R, res.residual))) < 1e-9
        np.testing.assert_allclose(res.x_hat, weighted_ls_oracle(g, r, R), atol=1e-8)


class TestVector:
    def test_diagonal_decouples(self):
        rng = np.random.default_rng(5)
        r = rng.normal(size=(3, 2))
        res = ml_estimate_vector(TRI, TRI_INC, r, IidVector(np.diag([0.5, 2.0])))
        for c in range(2):
            np.testing.assert_allclose(res.x_hat[:, c], ml_estimate_iid(TRI, TRI_INC, r[:, c]).x_hat, atol=1e-12)

    def test_consistent_recovery(self):
        x = np.array([[1.0, -2.0], [0.5, 3.0]])
        r = TRI_INC.D_W.T @ x
        for noise in (IidVector(np.eye(2)), FullVector(random_spd(np.random.default_rng(1), 6), 2)):
            res = ml_estimate_vector(TRI, TRI_INC, r, noise)
            np.testing.assert_allclose(res.x_hat, x, atol=1e-12)
            np.testing.assert_allclose(res.residual, 0, atol=1e-12)

    def test_full_vector_normal_equations(self):
        rng = np.random.default_rng(2)
        per_edge = np.array([[1.0, 0.5], [0.5, 1.0]])
        R = np.kron(per_edge, np.diag([1.0, 2.0, 0.5]))
        r = rng.normal(size=(3, 2))
        res = ml_estimate_vector(TRI, TRI_INC, r, FullVector(R, 2))
        B = np.kron(np.eye(2), TRI_INC.D_W.T)
        Lc = np.linalg.cholesky(R)
        oracle = np.linalg.lstsq(np.linalg.solve(Lc, B), np.linalg.solve(Lc, r.T.ravel()), rcond=None)[0]
        np.testing.assert_allclose(res.x_hat.T.ravel(), oracle, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ml_estimate_vector(TRI, TRI_INC, np.zeros((3, 3)), IidVector(np.eye(2)))
        with pytest.raises(NoiseModelError):
            ml_estimate_vector(TRI, TRI_INC, np.zeros((3, 2)), FullVector(np.eye(8), 2))

    @given(connected_graphs(max_n=7, max_extra=5), st.integers(0, 2**31))
    def test_coordinatewise_equals_tensor(self, g, seed):
        rng = np.random.default_rng(seed)
        inc = build_incidence(g)
        r = rng.normal(size=(g.m, 3))
        vec = ml_estimate_vector(g, inc, r, IidVector(random_spd(rng, 3)))
        cols = np.column_stack([ml_estimate_iid(g, inc, r[:, c]).x_hat for c in range(3)])
        np.testing.assert_allclose(vec.x_hat, cols, atol=1e-10)


class TestFisher:
    def test_triangle_iid(self):
        rep = fisher_report(TRI, TRI_INC, IidScalar(1.0))
        assert rep.det_direct == pytest.approx(3.0)
        assert rep.det_tree_formula == pytest.approx(3.0)
        assert rep.cross_checked

    def test_k4(self):
        g = complete_graph(4)
        assert fisher_report(g, build_incidence(g), IidScalar(1.0)).det_direct == pytest.approx(16.0)

    def test_triangle_diagonal(self):
        s = np.array([0.5, 2.0, 3.0])
        rep = fisher_report(TRI, TRI_INC, DiagonalScalar(s))
        want = 1 / (s[0] * s[1]) + 1 / (s[0] * s[2]) + 1 / (s[1] * s[2])
        assert rep.det_direct == pytest.approx(want, rel=1e-12)
        assert rep.det_tree_formula == pytest.approx(want, rel=1e-12)

    def test_covariance_is_inverse(self):
        rep = fisher_report(TRI, TRI_INC, IidScalar(0.09))
        np.testing.assert_allclose(rep.estimator_covariance, 0.09 * np.linalg.inv(TRI_INC.L_W), atol=1e-12)

    @given(connected_graphs(max_n=8, max_extra=6), st.floats(0.01, 10.0))
    def test_iid_formula_and_trace_identity(self, g, sigma2):
        inc = build_incidence(g)
        rep = fisher_report(g, inc, IidScalar(sigma2))
        t = spanning_tree_count(g)
        assert rep.det_direct == pytest.approx(sigma2 ** (-(g.n - 1)) * t, rel=1e-9)
        assert rep.det_tree_formula == pytest.approx(rep.det_direct, rel=1e-8)
        C = edge_covariance(inc, rep)
        assert np.trace(C) == pytest.approx(sigma2 * (g.n - 1), rel=1e-9)

    @given(connected_graphs(max_n=6, max_extra=4, parallel=True), st.integers(0, 2**31))
    def test_cauchy_binet_full(self, g, seed):
        rng = np.random.default_rng(seed)
        inc = build_incidence(g)
        R = random_spd(rng, g.m)
        rep = fisher_report(g, inc, FullScalar(R))
        oracle = cauchy_binet_oracle(g, np.linalg.inv(R))
        assert rep.cross_checked
        assert rep.det_direct == pytest.approx(oracle, rel=1e-7)
        assert rep.det_tree_formula == pytest.approx(oracle, rel=1e-7)

    @given(connected_graphs(max_n=6, max_extra=4), st.integers(0, 2**31))
    def test_iid_vector(self, g, seed):
        rng = np.random.default_rng(seed)
        R = random_spd(rng, 2)
        rep = fisher_report(g, build_incidence(g), IidVector(R))
        t = spanning_tree_count(g)
        want = t**2 / np.linalg.det(R) ** (g.n - 1)
        assert rep.det_direct == pytest.approx(want, rel=1e-9)
        assert rep.det_tree_formula == pytest.approx(want, rel=1e-9)

    def test_full_vector_multi_tree(self):
        rng = np.random.default_rng(9)
        R = random_spd(rng, 6)
        rep = fisher_report(TRI, TRI_INC, FullVector(R, 2))
        oracle = cauchy_binet_oracle(TRI, np.linalg.inv(R), d=2)
        assert rep.cross_checked
        assert rep.det_direct == pytest.approx(oracle, rel=1e-7)
        assert rep.det_tree_formula == pytest.approx(oracle, rel=1e-7)

    def test_cauchy_binet_helper_on_ring(self):
        g = Graph(["a", "b", "c", "d"], [("a", "b"), ("b", "c"), ("c", "d"), ("d", "a"), ("a", "c")])
        inc = build_incidence(g)
        P = np.linalg.inv(random_spd(np.random.default_rng(4), g.m))
        got = cauchy_binet_det(inc, enumerate_spanning_trees(g), P)
        assert got == pytest.approx(np.linalg.det(inc.D_W @ P @ inc.D_W.T), rel=1e-9)


class TestSigns:
    def test_same_tree(self):
        for S in enumerate_spanning_trees(TRI):
            assert alpha_sign(TRI_INC, S, S) == 1

    def test_triangle_pair(self):
        S, Sp = (0, 1), (0, 2)
        want = np.linalg.det(TRI_INC.D_W[:, S] @ TRI_INC.D_W[:, Sp].T)
        assert alpha_sign(TRI_INC, S, Sp) == round(want)
        assert alpha_sign(TRI_INC, S, Sp) in (-1, 1)

    @given(connected_graphs(max_n=6, max_extra=3, parallel=True))
    def test_reference_independent(self, g):
        trees = enumerate_spanning_trees(g)[:6]
        incs = [build_incidence(g, v) for v in g.vertices]
        for S, Sp in itertools.product(trees, repeat=2):
            vals = {alpha_sign(inc, S, Sp) for inc in incs}
            assert len(vals) == 1

    def test_not_a_tree(self):
        from netsync.errors import GraphError

        with pytest.raises(GraphError):
            alpha_sign(TRI_INC, (0, 1), (0, 0))

    def test_tree_coordinates_roundtrip(self):
        x = np.array([0.25, -1.5])
        for S in enumerate_spanning_trees(TRI):
            nu = tree_coordinates(TRI_INC, S, x)
            np.testing.assert_allclose(offsets_from_tree(TRI_INC, S, nu), x, atol=1e-12)


class TestMeanZeroGauge:
    def test_recovers_centred_truth(self):
        inc = build_incidence(TRI)
        x0 = np.array([1.0, -0.25, -0.75])
        np.testing.assert_allclose(mean_zero_gauge(TRI, inc.D.T @ x0), x0, atol=1e-12)

    def test_shift_of_reference_gauge(self):
        xr = ml_estimate_iid(TRI, TRI_INC, np.ones(3)).vertex_values()
        np.testing.assert_allclose(mean_zero_gauge(TRI, np.ones(3)), xr - xr.mean(), atol=1e-12)

    def test_mu_independent(self):
        outs = [mean_zero_gauge(TRI, [0.2, 1.0, -0.4], mu) for mu in (0.1, 1.0, 10.0)]
        np.testing.assert_allclose(outs[0], outs[1], atol=1e-9)
        np.testing.assert_allclose(outs[0], outs[2], atol=1e-9)

    def test_mu_positive(self):
        with pytest.raises(ValueError):
            mean_zero_gauge(TRI, np.ones(3), 0.0)

    @given(connected_graphs(max_n=9, max_extra=6, parallel=True), st.integers(0, 2**31))
    def test_properties(self, g, seed):
        r = np.random.default_rng(seed).normal(size=g.m)
        x = mean_zero_gauge(g, r)
        inc = build_incidence(g)
        assert abs(x.sum()) < 1e-9
        np.testing.assert_allclose(inc.D.T @ x, ml_estimate_iid(g, inc, r).omega_hat, atol=1e-9)
