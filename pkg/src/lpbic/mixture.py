"""Domain types and stable density evaluation for factor-analytic Gaussian
mixtures.

Component covariances have the low-rank-plus-diagonal form
``Sigma_g = Lambda_g Lambda_g' + Psi_g`` with ``Lambda_g`` a ``p x q`` loading
matrix and ``Psi_g`` diagonal.  Every density computation is routed through
the ``q x q`` matrix ``I_q + Lambda' Psi^-1 Lambda`` (matrix-inversion lemma),
so no ``p x p`` matrix is ever formed, inverted, or decomposed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

__all__ = [
    "COVARIANCE_CODES",
    "DataMatrix",
    "ModelDescriptor",
    "MixtureParams",
    "Responsibilities",
    "log_density_woodbury",
    "component_log_densities",
    "log_likelihood",
    "penalty_value",
    "responsibilities",
]

# Three-letter constraint codes: position 1 = loadings shared across groups,
# position 2 = noise shared across groups, position 3 = noise isotropic
# within a group ("C" = constrained, "U" = unconstrained).
COVARIANCE_CODES = ("CCC", "CCU", "CUC", "CUU", "UCC", "UCU", "UUC", "UUU")

LOG_2PI = np.log(2.0 * np.pi)


def _frozen_array(x, dtype=np.float64) -> np.ndarray:
    out = np.array(x, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DataMatrix:
    """An ``n x p`` matrix of observations, validated once at construction."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValueError(f"data must be 2-D, got shape {vals.shape}")
        n, p = vals.shape
        if n < 2 or p < 1:
            raise ValueError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if not np.all(np.isfinite(vals)):
            bad = np.argwhere(~np.isfinite(vals))[0]
            raise ValueError(f"non-finite entry at row {bad[0]}, column {bad[1]}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @staticmethod
    def ensure(data) -> "DataMatrix":
        return data if isinstance(data, DataMatrix) else DataMatrix(data)


@dataclass(frozen=True, order=True)
class ModelDescriptor:
    """One cell of the search grid: covariance code plus (G, q)."""

    code: str
    G: int
    q: int

    def __post_init__(self):
        if self.code not in COVARIANCE_CODES:
            raise ValueError(f"unknown covariance code {self.code!r}")
        if self.G < 1:
            raise ValueError(f"G must be >= 1, got {self.G}")
        if self.q < 1:
            raise ValueError(f"q must be >= 1, got {self.q}")

    @property
    def loadings_shared(self) -> bool:
        return self.code[0] == "C"

    @property
    def noise_shared(self) -> bool:
        return self.code[1] == "C"

    @property
    def noise_isotropic(self) -> bool:
        return self.code[2] == "C"


@dataclass(frozen=True)
class MixtureParams:
    """All free parameters of a factor-analytic Gaussian mixture.

    Storage mirrors the constraint code so equality constraints cannot
    drift: a shared loading matrix is stored exactly once (``(p, q)``
    instead of ``(G, p, q)``), and noise is stored as

    * a single float        when shared and isotropic   (code ``*CC``),
    * a ``(p,)`` vector     when shared, non-isotropic  (``*CU``),
    * a ``(G,)`` vector     when per-group isotropic    (``*UC``),
    * a ``(G, p)`` matrix   when fully unconstrained    (``*UU``).

    Instances are immutable; all operations on them are pure functions.
    """

    code: str
    pi: np.ndarray
    mu: np.ndarray
    loadings: np.ndarray
    noise: float | np.ndarray

    def __post_init__(self):
        if self.code not in COVARIANCE_CODES:
            raise ValueError(f"unknown covariance code {self.code!r}")
        pi = _frozen_array(self.pi)
        mu = _frozen_array(self.mu)
        loadings = _frozen_array(self.loadings)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "loadings", loadings)

        G = pi.shape[0]
        if mu.ndim != 2 or mu.shape[0] != G:
            raise ValueError(f"mu must be (G, p) with G={G}, got {mu.shape}")
        p = mu.shape[1]
        if np.any(pi <= 0.0):
            raise ValueError("mixing proportions must be strictly positive")
        if abs(float(pi.sum()) - 1.0) > 1e-12:
            raise ValueError(f"mixing proportions sum to {pi.sum()!r}, not 1")

        shared_load = self.code[0] == "C"
        if shared_load:
            if loadings.ndim != 2 or loadings.shape[0] != p:
                raise ValueError(
                    f"shared loadings must be (p, q), got {loadings.shape}"
                )
        else:
            if loadings.ndim != 3 or loadings.shape[:2] != (G, p):
                raise ValueError(
                    f"per-group loadings must be (G, p, q), got {loadings.shape}"
                )
        q = loadings.shape[-1]
        if not 1 <= q < p:
            raise ValueError(f"need 1 <= q < p, got q={q}, p={p}")

        shared_noise = self.code[1] == "C"
        isotropic = self.code[2] == "C"
        if shared_noise and isotropic:
            noise = float(self.noise)
            if noise <= 0.0:
                raise ValueError("noise variance must be strictly positive")
        else:
            noise = _frozen_array(self.noise)
            want = {
                (True, False): (p,),
                (False, True): (G,),
                (False, False): (G, p),
            }[(shared_noise, isotropic)]
            if noise.shape != want:
                raise ValueError(
                    f"noise for code {self.code} must have shape {want}, "
                    f"got {noise.shape}"
                )
            if np.any(noise <= 0.0):
                raise ValueError("noise variances must be strictly positive")
        object.__setattr__(self, "noise", noise)

    @property
    def G(self) -> int:
        return self.pi.shape[0]

    @property
    def p(self) -> int:
        return self.mu.shape[1]

    @property
    def q(self) -> int:
        return self.loadings.shape[-1]

    def descriptor(self) -> ModelDescriptor:
        return ModelDescriptor(self.code, self.G, self.q)

    def loading(self, g: int) -> np.ndarray:
        """Loading matrix of group ``g`` (the shared object under C codes)."""
        return self.loadings if self.code[0] == "C" else self.loadings[g]

    def noise_vector(self, g: int) -> np.ndarray:
        """Noise variances of group ``g`` as a ``(p,)`` vector."""
        shared, iso = self.code[1] == "C", self.code[2] == "C"
        if shared and iso:
            return np.full(self.p, self.noise)
        if shared:
            return self.noise
        if iso:
            return np.full(self.p, self.noise[g])
        return self.noise[g]

    def sigma_row_sums(self, g: int) -> np.ndarray:
        """Row sums of ``Sigma_g``, computed as ``Lambda (Lambda' 1) + psi``."""
        lam = self.loading(g)
        return lam @ lam.sum(axis=0) + self.noise_vector(g)

    def sigma_diag(self, g: int) -> np.ndarray:
        """Diagonal of ``Sigma_g``: ``sum_k lambda_jk^2 + psi_j``."""
        lam = self.loading(g)
        return (lam * lam).sum(axis=1) + self.noise_vector(g)

    def nonzero_mean_counts(self) -> np.ndarray:
        """Number of nonzero mean coordinates per group (bit-exact zeros)."""
        return np.count_nonzero(self.mu, axis=1)


@dataclass(frozen=True)
class Responsibilities:
    """Posterior component-membership probabilities, one row per observation."""

    z: np.ndarray

    def __post_init__(self):
        z = _frozen_array(self.z)
        if z.ndim != 2:
            raise ValueError(f"responsibilities must be 2-D, got {z.shape}")
        if np.any(z < 0.0) or np.any(z > 1.0):
            raise ValueError("responsibilities must lie in [0, 1]")
        if np.max(np.abs(z.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("responsibility rows must sum to 1")
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def G(self) -> int:
        return self.z.shape[1]

    def hard_labels(self) -> np.ndarray:
        """Zero-based maximum-a-posteriori labels."""
        return np.argmax(self.z, axis=1)


def _inner_cholesky(lam: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Cholesky factor of ``I_q + Lambda' Psi^-1 Lambda``."""
    q = lam.shape[1]
    inner = np.eye(q) + lam.T @ (lam / psi[:, None])
    try:
        return np.linalg.cholesky(inner)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"singular {q}x{q} inner system for factored covariance "
            f"(min psi = {psi.min():.3e}): {exc}"
        ) from exc


def _log_density_rows(
    X: np.ndarray, mu: np.ndarray, lam: np.ndarray, psi: np.ndarray
) -> np.ndarray:
    """Log N(x | mu, Lambda Lambda' + Psi) for every row of ``X``."""
    p = X.shape[1]
    L = _inner_cholesky(lam, psi)
    R = X - mu
    Rp = R / psi
    # quadratic form via the inversion lemma: r'Psi^-1 r - w'w,
    # with w solving  L w = Lambda' Psi^-1 r
    T = Rp @ lam
    W = solve_triangular(L, T.T, lower=True).T
    quad = np.einsum("ij,ij->i", R, Rp) - np.einsum("ij,ij->i", W, W)
    logdet = np.log(psi).sum() + 2.0 * np.log(np.diag(L)).sum()
    return -0.5 * (p * LOG_2PI + logdet + quad)


def log_density_woodbury(
    x: np.ndarray, mu: np.ndarray, lam: np.ndarray, psi: np.ndarray
) -> float:
    """Log-density of one observation under a single factored Gaussian.

    ``x`` and ``mu`` are ``(p,)``, ``lam`` is ``(p, q)``, ``psi`` is the
    ``(p,)`` diagonal of the noise term.  The ``p x p`` covariance is never
    materialized.
    """
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    if x.ndim != 1 or x.shape != mu.shape:
        raise ValueError(f"x and mu must be matching vectors, got {x.shape} vs {mu.shape}")
    if lam.ndim != 2 or lam.shape[0] != x.shape[0]:
        raise ValueError(f"loadings must be (p, q) with p={x.shape[0]}, got {lam.shape}")
    if psi.shape != x.shape:
        raise ValueError(f"psi must be (p,), got {psi.shape}")
    if np.any(psi <= 0.0):
        raise ValueError("psi entries must be strictly positive")
    return float(_log_density_rows(x[None, :], mu, lam, psi)[0])


def component_log_densities(data, params: MixtureParams) -> np.ndarray:
    """``(n, G)`` matrix of per-component Gaussian log-densities."""
    data = DataMatrix.ensure(data)
    if params.p != data.p:
        raise ValueError(f"params have p={params.p} but data has p={data.p}")
    X = data.values
    out = np.empty((data.n, params.G))
    for g in range(params.G):
        out[:, g] = _log_density_rows(
            X, params.mu[g], params.loading(g), params.noise_vector(g)
        )
    return out


def log_likelihood(data, params: MixtureParams) -> float:
    """Observed-data log-likelihood, aggregated with log-sum-exp."""
    dens = component_log_densities(data, params)
    return float(logsumexp(dens + np.log(params.pi), axis=1).sum())


def penalty_value(params: MixtureParams, lambda_n: float, n: int) -> float:
    """Mixing-weighted L1 penalty on the component means.

    Returns ``n * lambda_n * sum_g pi_g sum_j |mu_gj|``; the penalized
    log-likelihood is the plain log-likelihood minus this value.
    """
    if lambda_n < 0.0:
        raise ValueError(f"lambda_n must be nonnegative, got {lambda_n}")
    return float(n * lambda_n * (params.pi @ np.abs(params.mu).sum(axis=1)))


def responsibilities(data, params: MixtureParams) -> Responsibilities:
    """Posterior membership probabilities (Bayes rule on the log scale)."""
    dens = component_log_densities(data, params) + np.log(params.pi)
    z = np.exp(dens - logsumexp(dens, axis=1, keepdims=True))
    # guard against rows that summed to slightly over 1 after exponentiation
    z /= z.sum(axis=1, keepdims=True)
    return Responsibilities(z)
