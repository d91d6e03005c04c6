"""Shared fixtures-in-code: random valid parameters and dense oracles.

The dense routines here deliberately materialize p x p covariances; they
exist only as independent checks of the factored implementations.
"""

import numpy as np

from lpbic import MixtureParams


def random_params(rng, code="UUU", G=2, p=5, q=2, mean_scale=2.0):
    """Valid random parameters matching the storage layout of ``code``."""
    pi = rng.dirichlet(np.full(G, 5.0))
    mu = rng.normal(0.0, mean_scale, (G, p))
    if code[0] == "C":
        loadings = rng.normal(0.0, 1.0, (p, q))
    else:
        loadings = rng.normal(0.0, 1.0, (G, p, q))
    shared, iso = code[1] == "C", code[2] == "C"
    if shared and iso:
        noise = float(rng.uniform(0.3, 2.0))
    elif shared:
        noise = rng.uniform(0.3, 2.0, p)
    elif iso:
        noise = rng.uniform(0.3, 2.0, G)
    else:
        noise = rng.uniform(0.3, 2.0, (G, p))
    return MixtureParams(code, pi, mu, loadings, noise)


def dense_covariance(params, g):
    lam = params.loading(g)
    return lam @ lam.T + np.diag(params.noise_vector(g))


def dense_log_density(x, mu, lam, psi):
    """Gaussian log-density via a dense Cholesky of the full covariance."""
    sigma = lam @ lam.T + np.diag(psi)
    L = np.linalg.cholesky(sigma)
    sol = np.linalg.solve(L, x - mu)
    p = x.shape[0]
    return -0.5 * (p * np.log(2.0 * np.pi) + 2.0 * np.log(np.diag(L)).sum() + sol @ sol)


def naive_log_likelihood(X, params):
    """Double-loop mixture log-likelihood with raw probability sums."""
    total = 0.0
    for x in X:
        acc = 0.0
        for g in range(params.G):
            acc += params.pi[g] * np.exp(
                dense_log_density(x, params.mu[g], params.loading(g), params.noise_vector(g))
            )
        total += np.log(acc)
    return total


def naive_responsibilities(X, params):
    """Bayes rule with raw densities; fine for small, well-scaled fixtures."""
    out = np.zeros((X.shape[0], params.G))
    for i, x in enumerate(X):
        for g in range(params.G):
            out[i, g] = params.pi[g] * np.exp(
                dense_log_density(x, params.mu[g], params.loading(g), params.noise_vector(g))
            )
        out[i] /= out[i].sum()
    return out


def exact_moment_data(mu, sigma):
    """Rows whose sample mean is exactly ``mu`` and sample covariance
    (about ``mu``, dividing by n) exactly ``sigma``: symmetric sigma points."""
    p = mu.shape[0]
    vals, vecs = np.linalg.eigh(sigma)
    root = vecs * np.sqrt(np.maximum(vals, 0.0))
    rows = [mu + np.sqrt(p) * root[:, k] for k in range(p)]
    rows += [mu - np.sqrt(p) * root[:, k] for k in range(p)]
    return np.stack(rows)
