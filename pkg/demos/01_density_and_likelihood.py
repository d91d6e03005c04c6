"""Factored Gaussian densities: the q x q route vs a dense inverse.

Component covariances are Lambda Lambda' + Psi with a p x q loading matrix
and a diagonal noise term, so every density evaluation can be routed
through a small q x q system.  This script builds a random component in
p = 1000 dimensions, evaluates the log-density of a batch of points, and
cross-checks a handful of them against a dense Cholesky in a lower
dimension where materializing the p x p covariance is still reasonable.
"""

import numpy as np

from lpbic import log_density_woodbury

rng = np.random.default_rng(0)

# big-p evaluation: never forms a 1000 x 1000 matrix
p, q = 1000, 3
lam = rng.normal(0, 1, (p, q))
psi = rng.uniform(0.5, 2.0, p)
mu = rng.normal(0, 1, p)
x = rng.normal(0, 1, p)
print(f"log density in p={p}: {log_density_woodbury(x, mu, lam, psi):.4f}")

# cross-check against the dense route in small p
p = 15
lam = rng.normal(0, 1, (p, 2))
psi = rng.uniform(0.5, 2.0, p)
mu = rng.normal(0, 1, p)

worst = 0.0
for _ in range(5):
    x = rng.normal(0, 2, p)
    fast = log_density_woodbury(x, mu, lam, psi)
    sigma = lam @ lam.T + np.diag(psi)
    chol = np.linalg.cholesky(sigma)
    sol = np.linalg.solve(chol, x - mu)
    dense = -0.5 * (p * np.log(2 * np.pi) + 2 * np.log(np.diag(chol)).sum() + sol @ sol)
    worst = max(worst, abs(fast - dense))
    print(f"  factored {fast:12.6f}   dense {dense:12.6f}")
print(f"largest |difference|: {worst:.2e}")
