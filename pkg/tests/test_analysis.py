import numpy as np
import pytest

from encaffine import (
    InsufficientSamples,
    MeasurementSet,
    build_reset_tree,
    centered_truth,
    centralized_estimator_cov,
    centralized_solution,
    hard_reset_cov,
    incidence_matrix,
    laplacian,
    monte_carlo_reset_moments,
    pseudoinverse,
    random_graph,
)


class TestCenteredTruth:
    def test_constant_vector_centers_to_zero(self):
        np.testing.assert_array_equal(centered_truth([1.0, 1.0, 1.0]), np.zeros(3))

    def test_mean_free_vector_unchanged(self):
        np.testing.assert_array_equal(centered_truth([2.0, 0.0, -2.0]), [2.0, 0.0, -2.0])

    def test_matches_projector_product(self):
        g = random_graph(9, 0.5, rng=1)
        L = laplacian(incidence_matrix(g), g.sigma)
        Lp = pseudoinverse(L)
        x = np.random.default_rng(2).uniform(-4, 4, 9)
        np.testing.assert_allclose(centered_truth(x), Lp @ L @ x, atol=1e-12)


class TestCentralizedCov:
    def test_two_node(self, single_edge_graph):
        L = laplacian(incidence_matrix(single_edge_graph), single_edge_graph.sigma)
        cov = centralized_estimator_cov(pseudoinverse(L))
        np.testing.assert_allclose(cov, [[0.25, -0.25], [-0.25, 0.25]], atol=1e-14)

    def test_algebraic_identity(self):
        # L_pinv B Sigma^-1 Sigma (L_pinv B Sigma^-1)^T collapses to L_pinv
        g = random_graph(10, 0.5, rng=3)
        B = incidence_matrix(g)
        L = laplacian(B, g.sigma)
        Lp = pseudoinverse(L)
        M = Lp @ (B / g.sigma**2)
        np.testing.assert_allclose(M @ np.diag(g.sigma**2) @ M.T, Lp, atol=1e-10)

    def test_monte_carlo_match(self):
        g = random_graph(8, 0.6, rng=4)
        rep = monte_carlo_reset_moments(g, np.zeros(8), "centralized", n_samples=10_000, seed=5)
        assert rep.rel_frob_cov_err < 0.10


class TestHardResetCov:
    def test_single_edge_hand_value(self, single_edge_graph):
        B = incidence_matrix(single_edge_graph)
        L = laplacian(B, single_edge_graph.sigma)
        Lp = pseudoinverse(L)
        P = build_reset_tree(single_edge_graph).path_matrix
        cov = hard_reset_cov(L, Lp, P, np.diag(single_edge_graph.sigma**2))
        # J P^T Sigma P J with J = [[.5,-.5],[-.5,.5]], P^T Sigma P = [[0,0],[0,1]]
        np.testing.assert_allclose(cov, [[0.25, -0.25], [-0.25, 0.25]], atol=1e-14)

    def test_dense_product_oracle(self):
        g = random_graph(11, 0.4, rng=6)
        B = incidence_matrix(g)
        L = laplacian(B, g.sigma)
        Lp = pseudoinverse(L)
        P = build_reset_tree(g).path_matrix
        Sigma = np.diag(g.sigma**2)
        cov = hard_reset_cov(L, Lp, P, Sigma)
        J = Lp @ L
        np.testing.assert_allclose(cov, J @ P.T @ Sigma @ P @ J.T, atol=1e-12)
        np.testing.assert_allclose(cov, cov.T, atol=1e-12)
        assert np.min(np.linalg.eigvalsh(cov)) > -1e-10

    def test_annihilates_ones(self):
        g = random_graph(9, 0.5, rng=7)
        B = incidence_matrix(g)
        L = laplacian(B, g.sigma)
        cov = hard_reset_cov(L, pseudoinverse(L), build_reset_tree(g).path_matrix, np.diag(g.sigma**2))
        np.testing.assert_allclose(cov @ np.ones(9), 0.0, atol=1e-10)

    def test_monte_carlo_match(self):
        g = random_graph(8, 0.6, rng=8)
        rep = monte_carlo_reset_moments(g, np.arange(8.0), "hard", n_samples=10_000, seed=9)
        assert rep.rel_frob_cov_err < 0.10


class TestMonteCarloMoments:
    def test_unbiased_means_all_estimators(self):
        g = random_graph(10, 0.5, rng=10)
        x = np.random.default_rng(11).uniform(-10, 10, 10)
        B = incidence_matrix(g)
        L = laplacian(B, g.sigma)
        Lp = pseudoinverse(L)
        P = build_reset_tree(g).path_matrix
        stds = [
            np.sqrt(np.max(np.diag(centralized_estimator_cov(Lp)))),
            np.sqrt(np.max(np.diag(hard_reset_cov(L, Lp, P, np.diag(g.sigma**2))))),
        ]
        tol = 4 * max(stds) / np.sqrt(10_000)
        for kind in ("centralized", "hard", "soft"):
            rep = monte_carlo_reset_moments(g, x, kind, w=0.0, n_samples=10_000, seed=12)
            assert rep.max_abs_mean_err <= tol, kind
            np.testing.assert_allclose(rep.theoretical_mean, centered_truth(x))

    def test_error_shrinks_with_samples(self):
        g = random_graph(8, 0.6, rng=13)
        x = np.arange(8.0)
        errs = [
            monte_carlo_reset_moments(g, x, "hard", n_samples=n, seed=14).max_abs_mean_err
            for n in (100, 10_000)
        ]
        assert errs[1] < errs[0]

    def test_zero_noise_degenerate(self):
        g = random_graph(6, 0.7, rng=15, sigma_set=(1e-12,))
        x = np.arange(6.0)
        rep = monte_carlo_reset_moments(g, x, "hard", n_samples=100, seed=16)
        assert rep.max_abs_mean_err < 1e-9
        assert np.max(np.abs(rep.empirical_cov)) < 1e-18

    def test_insufficient_samples(self):
        g = random_graph(5, 0.8, rng=17)
        with pytest.raises(InsufficientSamples):
            monte_carlo_reset_moments(g, np.zeros(5), "hard", n_samples=1)

    def test_soft_reset_has_no_closed_form_cov(self):
        g = random_graph(6, 0.6, rng=18)
        rep = monte_carlo_reset_moments(g, np.zeros(6), "soft", n_samples=100, seed=19)
        assert rep.theoretical_cov is None and rep.rel_frob_cov_err is None

    def test_report_serialization(self):
        import io, json

        g = random_graph(5, 0.8, rng=20)
        rep = monte_carlo_reset_moments(g, np.zeros(5), "centralized", n_samples=500, seed=21)
        payload = json.loads(rep.to_json())
        assert payload["kind"] == "centralized"
        buf = io.StringIO()
        rep.cov_to_csv(buf)
        assert len(buf.getvalue().splitlines()) == 5

    def test_soft_reset_uses_optimal_leader_entry(self):
        # with zero noise the soft reset must return exactly the centered truth
        g = random_graph(7, 0.6, rng=22, sigma_set=(1e-12,))
        x = np.random.default_rng(23).uniform(-5, 5, 7)
        rep = monte_carlo_reset_moments(g, x, "soft", n_samples=50, seed=24)
        np.testing.assert_allclose(rep.empirical_mean, centered_truth(x), atol=1e-8)
