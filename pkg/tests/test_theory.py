import math

import numpy as np
import pytest

from maw import theory
from maw.errors import DomainError, ShapeError


# ------------------------------------------------------------ distances


def test_wp_equal_cov_values():
    assert theory.wp_equal_cov([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert theory.wp_equal_cov([1.0, 0.0], [0.0, 0.0]) == pytest.approx(1.0)


def test_wp_equal_cov_monte_carlo_cross_check():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((200, 2)) + np.array([1.0, 0.0])
    b = rng.standard_normal((200, 2))
    est = theory.empirical_w1(a, b)
    assert est == pytest.approx(1.0, rel=0.10)


def test_w2_identical_is_zero():
    s = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert theory.w2_gaussian([0.5, -1.0], s, [0.5, -1.0], s) == pytest.approx(0.0, abs=1e-7)


def test_w2_hand_values():
    mu = np.zeros(2)
    assert theory.w2_gaussian(mu, np.diag([4.0, 4.0]), mu, np.eye(2)) == pytest.approx(
        np.sqrt(2.0)
    )
    assert theory.w2_gaussian(mu, np.diag([4.0, 1.0]), mu, np.diag([1.0, 9.0])) == pytest.approx(
        np.sqrt(5.0)
    )


def test_w2_rejects_asymmetric():
    with pytest.raises(DomainError):
        theory.w2_gaussian(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2), np.eye(2))


def test_w2_symmetry_and_triangle():
    rng = np.random.default_rng(1)
    for _ in range(10):
        k = int(rng.integers(2, 5))
        mus = [rng.standard_normal(k) for _ in range(3)]
        sigmas = []
        for _ in range(3):
            b = rng.standard_normal((k, k))
            sigmas.append(b @ b.T + 0.3 * np.eye(k))
        ab = theory.w2_gaussian(mus[0], sigmas[0], mus[1], sigmas[1])
        ba = theory.w2_gaussian(mus[1], sigmas[1], mus[0], sigmas[0])
        assert abs(ab - ba) <= 1e-10
        bc = theory.w2_gaussian(mus[1], sigmas[1], mus[2], sigmas[2])
        ac = theory.w2_gaussian(mus[0], sigmas[0], mus[2], sigmas[2])
        assert ac <= ab + bc + 1e-8


def test_w2_equals_wp_for_shared_covariance():
    rng = np.random.default_rng(2)
    for _ in range(10):
        k = int(rng.integers(2, 5))
        b = rng.standard_normal((k, k))
        sigma = b @ b.T + 0.3 * np.eye(k)
        mu1, mu0 = rng.standard_normal(k), rng.standard_normal(k)
        w2 = theory.w2_gaussian(mu1, sigma, mu0, sigma)
        assert abs(w2 - theory.wp_equal_cov(mu1, mu0)) <= 1e-10


def test_kl_values():
    mu = np.zeros(2)
    assert theory.kl_gaussian(mu, np.eye(2), mu, np.eye(2)) == pytest.approx(0.0, abs=1e-12)
    # N(0, 2I) vs N(0, I): (log(1/4) - 2 + 4) / 2 = 1 - ln 2
    assert theory.kl_gaussian(mu, 2.0 * np.eye(2), mu, np.eye(2)) == pytest.approx(
        1.0 - math.log(2.0), abs=1e-12
    )


def test_kl_rank_deficient_is_infinite():
    mu = np.zeros(2)
    assert math.isinf(theory.kl_gaussian(mu, np.diag([1.0, 0.0]), mu, np.eye(2)))


def test_kl_rejects_singular_reference():
    mu = np.zeros(2)
    with pytest.raises(DomainError):
        theory.kl_gaussian(mu, np.eye(2), mu, np.diag([1.0, 0.0]))


def test_kl_nonnegative_random():
    rng = np.random.default_rng(3)
    for _ in range(10):
        k = int(rng.integers(2, 5))
        b1, b0 = rng.standard_normal((k, k)), rng.standard_normal((k, k))
        s1 = b1 @ b1.T + 0.3 * np.eye(k)
        s0 = b0 @ b0.T + 0.3 * np.eye(k)
        val = theory.kl_gaussian(rng.standard_normal(k), s1, rng.standard_normal(k), s0)
        assert val >= -1e-10
        assert theory.kl_gaussian(rng.standard_normal(k), s1, rng.standard_normal(k), s1) >= -1e-10


# ------------------------------------------------------------ shared covariance


def test_shared_cov_wp_solution():
    problem = theory.TheoryProblem(k=2, epsilon=1.0, eta=5.0 / 6.0, regularizer="wp")
    sol = theory.solve_shared_cov(problem)
    assert np.allclose(sol.mu1, 0.0)
    assert sol.objective == pytest.approx(1.0 / 6.0)
    assert sol.separation_residual(1.0) <= 1e-8


def test_shared_cov_kl_solution():
    problem = theory.TheoryProblem(k=2, epsilon=1.0, eta=5.0 / 6.0, regularizer="kl")
    sol = theory.solve_shared_cov(problem)
    assert np.linalg.norm(sol.mu1) == pytest.approx(1.0 / 6.0)
    assert np.linalg.norm(sol.mu2) == pytest.approx(5.0 / 6.0)
    combo = problem.eta * sol.mu1 + (1 - problem.eta) * sol.mu2
    assert np.allclose(combo, problem.mu0, atol=1e-12)


def test_eta_at_half_rejected():
    with pytest.raises(DomainError):
        theory.TheoryProblem(k=2, epsilon=1.0, eta=0.5, regularizer="wp")


def test_shared_cov_kl_matches_grid_oracle():
    problem = theory.TheoryProblem(k=3, epsilon=1.0, eta=5.0 / 6.0, regularizer="kl")
    oracle = theory.brute_force_minimizer(problem)
    analytic = theory.solve_shared_cov(problem)
    assert oracle.objective == pytest.approx(analytic.objective, abs=1e-8)
    assert np.linalg.norm(oracle.mu1 - problem.mu0) == pytest.approx(1.0 / 6.0, abs=1e-6)


def test_shared_cov_wp_oracle_with_nonzero_mu0():
    mu0 = np.array([0.7, -0.4])
    problem = theory.TheoryProblem(k=2, epsilon=1.5, eta=0.75, regularizer="wp", mu0=mu0)
    oracle = theory.brute_force_minimizer(problem)
    assert np.linalg.norm(oracle.mu1 - mu0) <= 1e-3 * 1.5
    assert oracle.objective == pytest.approx(0.25 * 1.5, abs=1e-4)


# ------------------------------------------------------------ low-rank W2


def test_colinearity_objective_hand_values():
    assert theory.colinearity_objective(1.0, 2, 1, 1.0, 0.9) == pytest.approx(1.62, abs=1e-12)
    assert theory.colinearity_objective(0.5, 2, 1, 1.0, 0.9) == pytest.approx(1.25, abs=1e-12)
    with pytest.raises(DomainError):
        theory.colinearity_objective(0.0, 2, 1, 1.0, 0.9)


def test_colinearity_profile_grid_minimum():
    k, kappa, eps, eta = 2, 1, 1.0, 0.9
    ustar = theory.colinearity_minimizer(k, kappa, eps, eta)
    grid = np.concatenate([
        np.logspace(-2, 2, 5000), -np.logspace(-2, 2, 5000),
    ])
    best = min(theory.colinearity_objective(float(u), k, kappa, eps, eta) for u in grid)
    fstar = theory.colinearity_objective(ustar, k, kappa, eps, eta)
    assert fstar <= best + 1e-6


def test_low_rank_minimizer_canonical_instance():
    sol = theory.low_rank_w2_minimizer(2, 1, 1.0, 0.9)
    assert theory.regime_threshold(2, 1, 1.0) == pytest.approx(2.0 / 3.0)
    assert sol.u == pytest.approx(0.5, abs=1e-12)
    assert np.linalg.norm(sol.mu1) == pytest.approx(0.5)
    assert np.linalg.norm(sol.mu2) == pytest.approx(0.5)
    assert np.allclose(sol.sigma2, np.diag([1.0, 4.0]))
    assert np.allclose(sol.sigma1, np.diag([1.0, 0.0]))
    # colinearity identity 0 = u mu2 + (1 - u) mu1
    assert np.allclose(sol.u * sol.mu2 + (1 - sol.u) * sol.mu1, 0.0, atol=1e-12)
    assert sol.separation_residual(1.0) <= 1e-8


def test_low_rank_minimizer_out_of_regime():
    with pytest.raises(DomainError):
        theory.low_rank_w2_minimizer(2, 1, 1.0, 0.6)  # threshold is 2/3
    with pytest.raises(DomainError):
        theory.low_rank_w2_minimizer(2, 2, 1.0, 0.9)


def test_colinearity_minimizer_high_eta_limit():
    # frozen from the formula: ((1 * 0.001) / (1 * 0.998))^(1/3)
    expected = (0.001 / 0.998) ** (1.0 / 3.0)
    assert expected == pytest.approx(0.100067, abs=1e-6)
    assert theory.colinearity_minimizer(2, 1, 1.0, 0.999) == pytest.approx(expected, rel=1e-12)
    us = [theory.colinearity_minimizer(2, 1, 1.0, e) for e in (0.7, 0.9, 0.99, 0.999)]
    assert all(b < a for a, b in zip(us, us[1:]))  # u* -> 0 as eta -> 1


def test_low_rank_oracle_matches_analytic():
    problem = theory.TheoryProblem(
        k=2, epsilon=1.0, eta=0.9, regularizer="w2",
        constraint="low-rank-inlier", kappa=1,
    )
    oracle = theory.brute_force_minimizer(problem)
    assert oracle.u == pytest.approx(0.5, abs=1e-3)
    analytic = theory.low_rank_w2_minimizer(2, 1, 1.0, 0.9)
    assert oracle.objective == pytest.approx(analytic.objective, abs=1e-6)


def test_low_rank_oracle_rejects_ill_posed_combinations():
    problem = theory.TheoryProblem(
        k=2, epsilon=1.0, eta=0.9, regularizer="kl",
        constraint="low-rank-inlier", kappa=1,
    )
    with pytest.raises(DomainError):
        theory.brute_force_minimizer(problem)
    with pytest.raises(DomainError):
        theory.TheoryProblem(k=2, epsilon=0.0, eta=0.9, regularizer="w2")


# ------------------------------------------------------------ empirical W1


def test_empirical_w1_examples():
    assert theory.empirical_w1([0.0, 1.0], [0.0, 1.0]) == 0.0
    assert theory.empirical_w1([0.0, 1.0], [2.0, 3.0]) == pytest.approx(2.0)
    assert theory.empirical_w1([0.0, 1.0], [1.0, 0.0]) == 0.0
    with pytest.raises(ShapeError):
        theory.empirical_w1([0.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(DomainError):
        theory.empirical_w1(np.zeros((600, 2)), np.zeros((600, 2)))


def test_empirical_w1_decreases_with_sample_size():
    vals = {}
    for n in (64, 256):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((n, 2))
        b = rng.standard_normal((n, 2))
        vals[n] = theory.empirical_w1(a, b)
    assert 0.0 < vals[256] < vals[64]


# ------------------------------------------------------------ report sections


def test_report_sections_small():
    low = theory.verify_low_rank_w2(seed=1, extra_instances=1)
    assert low["pass"]
    kl = theory.verify_kl_rank_deficiency(seed=1, per_dim=3)
    assert kl["pass"]
    mc = theory.verify_w1_mean_shift(seed=1, n=128, n_sigmas=1)
    assert mc["pass"]
