#!/usr/bin/env python3
"""Tour of the Gaussian-distance geometry behind the detector.

Shows why a Wasserstein penalty keeps the heavy mixture mode glued to the
prior while a KL penalty drags it toward the mixture barycenter, and what
happens when the inlier covariance is forced to low rank.
"""

import numpy as np

from maw import theory

eta = 5.0 / 6.0  # weight of the inlier mode
eps = 1.0        # enforced separation between the two mode means

print("=== shared covariance: W_p vs KL minimizers ===")
for reg in ("wp", "kl"):
    problem = theory.TheoryProblem(k=2, epsilon=eps, eta=eta, regularizer=reg)
    analytic = theory.solve_shared_cov(problem)
    oracle = theory.brute_force_minimizer(problem)
    print(f"\nregularizer = {reg}")
    print(f"  analytic mu1 = {np.round(analytic.mu1, 6)}  mu2 = {np.round(analytic.mu2, 6)}")
    print(f"  oracle   mu1 = {np.round(oracle.mu1, 6)}  mu2 = {np.round(oracle.mu2, 6)}")
    print(f"  objective: analytic {analytic.objective:.6f} vs oracle {oracle.objective:.6f}")
    if reg == "wp":
        print("  -> the inlier mean sits exactly on the prior mean: the heavy")
        print("     mode absorbs none of the separation constraint.")
    else:
        combo = eta * oracle.mu1 + (1 - eta) * oracle.mu2
        print(f"  -> eta*mu1 + (1-eta)*mu2 = {np.round(combo, 6)}: the prior mean is")
        print("     only recovered as a weighted average; both modes drift.")

print("\n=== KL cannot score a rank-deficient covariance at all ===")
val = theory.kl_gaussian(np.zeros(2), np.diag([1.0, 0.0]), np.zeros(2), np.eye(2))
print(f"KL(N(0, diag(1,0)) || N(0, I)) = {val}")

print("\n=== low-rank inlier mode under the 2-Wasserstein penalty ===")
k, kappa = 2, 1
for eta_lr in (0.7, 0.9, 0.99):
    threshold = theory.regime_threshold(k, kappa, eps)
    if eta_lr <= threshold:
        print(f"eta = {eta_lr}: below the regime threshold {threshold:.3f}, skipped")
        continue
    sol = theory.low_rank_w2_minimizer(k, kappa, eps, eta_lr)
    print(f"eta = {eta_lr}: u* = {sol.u:.4f}  ||mu1|| = {np.linalg.norm(sol.mu1):.4f}  "
          f"sigma2 tail = {sol.sigma2[-1, -1]:.2f}")
print("as eta -> 1 the colinearity parameter u* -> 0: the inlier mode converges")
print("onto the prior and the coupled outlier variance blows up.")

print("\n=== the scalar objective profile f(u) ===")
for u in (0.25, 0.5, 1.0, 2.0):
    f = theory.colinearity_objective(u, 2, 1, 1.0, 0.9)
    print(f"  f({u:>4}) = {f:.4f}")
ustar = theory.colinearity_minimizer(2, 1, 1.0, 0.9)
print(f"  minimizer u* = {ustar} with sqrt(f(u*)) = "
      f"{np.sqrt(theory.colinearity_objective(ustar, 2, 1, 1.0, 0.9)):.6f}")

print("\n=== empirical W1 sanity: a pure mean shift ===")
rng = np.random.default_rng(0)
for shift in (0.5, 1.0, 2.0):
    a = rng.standard_normal((256, 2)) + np.array([shift, 0.0])
    b = rng.standard_normal((256, 2))
    print(f"  shift {shift}: exact-assignment estimate {theory.empirical_w1(a, b):.4f}")
print("the exact optimal-assignment distance tracks the planted shift.")
