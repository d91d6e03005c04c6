"""Two-stage alternating ECM fitting with an L1-shrunken mean update.

Each cycle alternates two conditional maximizations around fresh E-steps:

* stage 1 updates the mixing proportions and the component means, the means
  through a soft-threshold (shrink toward zero and clip) step whose per
  coordinate shrinkage is ``lambda_n`` times the row sum of the current
  component covariance;
* stage 2 updates the factor loadings and diagonal noise under the active
  constraint code, using only ``n x p`` factored statistics (the weighted
  scatter matrix is never materialized).

Convergence is declared through Aitken acceleration of the penalized
log-likelihood sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateComponentError, FitFailureError
from .mixture import (
    DataMatrix,
    MixtureParams,
    ModelDescriptor,
    Responsibilities,
    component_log_densities,
    penalty_value,
)

__all__ = [
    "DEFAULT_SEED",
    "PenaltyConfig",
    "FitConfig",
    "FitResult",
    "resolve_lambda",
    "update_pi",
    "update_pi_penalized",
    "soft_threshold",
    "update_mu_soft_threshold",
    "update_covariance_stage2",
    "fit",
    "derive_seed",
]

# Documented default: all randomness flows from an explicit seed, never from
# wall-clock time, so repeated runs are bit-identical.
DEFAULT_SEED = 42

# A start is abandoned when a component keeps less than 1/(10n) of the mass
# or a noise variance collapses below this floor.
NOISE_FLOOR = 1e-10


def _min_component_mass(q: int) -> float:
    # a q-factor analyzer with fewer than q + 2 (effective) observations can
    # absorb its scatter entirely into the loadings, sending the noise term
    # toward zero and the likelihood toward a spurious spike; such
    # micro-components are treated as degenerate
    return q + 2.0


@dataclass(frozen=True)
class PenaltyConfig:
    """Tuning-parameter policy plus the per-coordinate shrinkage scale.

    ``shrink_scale`` sets what multiplies ``lambda_n`` in the mean update:

    * ``"diagonal"`` (default): the coordinate variance ``(Sigma_g)_jj``.
      This is the exact coordinate-wise penalized update when the component
      covariance is treated as diagonal, and it keeps the shrinkage at the
      per-coordinate scale even when a component transiently absorbs
      between-group spread (whose covariance row sums grow with p and would
      otherwise zero every mean at once).
    * ``"row_sums"``: the covariance row sum ``(Sigma_g 1)_j``, i.e. the
      uniform-sign stationarity condition taken literally.
    """

    policy: str = "fixed"
    value: float = 0.0
    shrink_scale: str = "diagonal"

    def __post_init__(self):
        if self.policy not in ("fixed", "reciprocal_p"):
            raise ValueError(f"unknown penalty policy {self.policy!r}")
        if self.policy == "fixed" and self.value < 0.0:
            raise ValueError(f"lambda_n must be nonnegative, got {self.value}")
        if self.shrink_scale not in ("diagonal", "row_sums"):
            raise ValueError(f"unknown shrink_scale {self.shrink_scale!r}")

    @classmethod
    def fixed(cls, value: float, shrink_scale: str = "diagonal") -> "PenaltyConfig":
        return cls("fixed", float(value), shrink_scale)

    @classmethod
    def reciprocal_p(cls, shrink_scale: str = "diagonal") -> "PenaltyConfig":
        return cls("reciprocal_p", 0.0, shrink_scale)


def resolve_lambda(penalty: PenaltyConfig, p: int) -> float:
    """Concrete tuning parameter for a dataset with ``p`` variables."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if penalty.policy == "reciprocal_p":
        return 1.0 / p
    return penalty.value


@dataclass(frozen=True)
class FitConfig:
    """Iteration control, multi-start policy, and the RNG seed."""

    max_iterations: int = 1000
    tolerance: float = 1e-5
    n_starts: int = 20
    seed: int = DEFAULT_SEED
    init: str = "random_soft"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.tolerance <= 0.0:
            raise ValueError("tolerance must be positive")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if self.init not in ("random_soft", "kmeans"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass(frozen=True)
class FitResult:
    """Converged parameters plus the per-iteration objective trace."""

    params: MixtureParams
    z: Responsibilities
    loglik: float
    penalized_loglik: float
    iterations: int
    converged: bool
    nonzero_mean_counts: np.ndarray
    trace: np.ndarray


def derive_seed(base: int, *key: int) -> int:
    """Deterministic child seed for stream (base, key...); parallel-safe."""
    ss = np.random.SeedSequence(base, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def update_pi(z: Responsibilities) -> np.ndarray:
    """Mixing-proportion update: column means of the responsibilities.

    Components whose mass falls below ``1/(10n)`` are left in place here;
    the fit loop treats them as degenerate and abandons the start.
    """
    pi = z.z.mean(axis=0)
    return pi / pi.sum()


def degenerate_components(pi: np.ndarray, n: int) -> np.ndarray:
    """Indices of components flagged for degeneracy handling."""
    return np.flatnonzero(pi < 1.0 / (10.0 * n))


def update_pi_penalized(
    z: Responsibilities, lambda_n: float, mean_abs_sums: np.ndarray
) -> np.ndarray:
    """Mixing proportions maximizing the penalized objective exactly.

    The penalty weighs each proportion by ``a_g = n lambda_n sum_j |mu_gj|``,
    so the simplex-constrained maximizer is ``pi_g = w_g / (c + a_g)`` with
    ``w_g`` the responsibility masses and ``c`` the unique root of
    ``sum_g w_g / (c + a_g) = 1``.  At ``lambda_n = 0`` this is exactly the
    plain column-mean update.
    """
    w = z.z.sum(axis=0)
    n = z.n
    a = n * lambda_n * np.asarray(mean_abs_sums, dtype=float)
    if lambda_n == 0.0 or not np.any(a):
        return w / w.sum()
    # f(c) = sum w/(c+a) - 1 is decreasing and convex on (-min a, inf);
    # safeguarded Newton with a bisection bracket
    lo = float(-a.min())          # f -> +inf at the pole
    hi = float(w.sum())           # f(hi) <= 0
    c = hi
    for _ in range(200):
        denom = c + a
        f = float((w / denom).sum()) - 1.0
        if abs(f) < 1e-14:
            break
        if f > 0.0:
            lo = c
        else:
            hi = c
        slope = float(-(w / denom**2).sum())
        step = c - f / slope
        c = step if lo < step < hi else 0.5 * (lo + hi)
    pi = w / (c + a)
    return pi / pi.sum()


def soft_threshold(x, amount):
    """Shrink toward zero by ``amount`` and clip: ``sign(x) [|x| - amount]+``.

    The positive-part clip produces bit-exact zeros, which is what the
    nonzero-parameter counting relies on.
    """
    return np.sign(x) * np.maximum(np.abs(x) - amount, 0.0)


def update_mu_soft_threshold(
    data,
    z: Responsibilities,
    current: MixtureParams,
    lambda_n: float,
    shrink_scale: str = "diagonal",
) -> np.ndarray:
    """Shrunken mean update.

    Starting from the unpenalized weighted means ``mu_tilde``, each
    coordinate is shrunk toward zero by ``lambda_n`` times a per-coordinate
    covariance scale and clipped at zero (producing bit-exact zeros);
    coordinates whose scale is not positive are left at ``mu_tilde``.  The
    scale is the covariance diagonal ``(Sigma_g)_jj`` by default, or the row
    sum ``(Sigma_g 1)_j`` under ``shrink_scale="row_sums"``; both come from
    the factored form, never from a materialized covariance.
    """
    if lambda_n < 0.0:
        raise ValueError(f"lambda_n must be nonnegative, got {lambda_n}")
    if shrink_scale not in ("diagonal", "row_sums"):
        raise ValueError(f"unknown shrink_scale {shrink_scale!r}")
    data = DataMatrix.ensure(data)
    X = data.values
    Z = z.z
    w = Z.sum(axis=0)
    for g, wg in enumerate(w):
        if wg <= 0.0:
            raise DegenerateComponentError(g, "zero responsibility mass")
    mu_tilde = (Z.T @ X) / w[:, None]
    if lambda_n == 0.0:
        return mu_tilde
    mu_hat = np.empty_like(mu_tilde)
    for g in range(mu_tilde.shape[0]):
        if shrink_scale == "diagonal":
            scale = current.sigma_diag(g)
        else:
            scale = current.sigma_row_sums(g)
        shrunk = soft_threshold(mu_tilde[g], lambda_n * scale)
        mu_hat[g] = np.where(scale > 0.0, shrunk, mu_tilde[g])
    return mu_hat


def _regression_matrix(lam: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """``beta = Lambda' Sigma^-1`` via the small-matrix route
    ``(I + Lambda' Psi^-1 Lambda)^-1 Lambda' Psi^-1``; shape ``(q, p)``."""
    A = lam / psi[:, None]
    inner = np.eye(lam.shape[1]) + lam.T @ A
    return np.linalg.solve(inner, A.T)


def update_covariance_stage2(
    data,
    z: Responsibilities,
    mu: np.ndarray,
    model: ModelDescriptor,
    current: MixtureParams,
) -> tuple[np.ndarray, float | np.ndarray]:
    """Conditional maximization for loadings and noise under a constraint code.

    With per-group weighted scatter ``S_g`` (taken about the stage-1 means)
    and ``beta_g = Lambda_g' Sigma_g^-1`` at the current parameters, the
    unconstrained update is

    ``Lambda_g = S_g beta_g' (I - beta_g Lambda_g + beta_g S_g beta_g')^-1``

    followed by the diagonal residual for the noise.  Shared-loading codes
    pool the same statistics across groups with mass/noise weights; isotropic
    codes average the residual diagonal; shared-noise codes pool it with the
    group masses.  Everything is computed from ``n x p`` factors, so memory
    stays ``O(np + pq)``.
    """
    data = DataMatrix.ensure(data)
    X = data.values
    Z = z.z
    G, q, p = model.G, model.q, data.p
    w = Z.sum(axis=0)
    for g, wg in enumerate(w):
        if wg <= 0.0:
            raise DegenerateComponentError(g, "zero responsibility mass")
    nu = w / w.sum()

    eye_q = np.eye(q)
    P = np.empty((G, p, q))      # S_g beta_g'
    theta = np.empty((G, q, q))  # I - beta Lambda + beta S beta'
    diag_s = np.empty((G, p))
    for g in range(G):
        lam_g = current.loading(g)
        psi_g = current.noise_vector(g)
        beta = _regression_matrix(lam_g, psi_g)
        C = np.sqrt(Z[:, g])[:, None] * (X - mu[g])
        CB = C @ beta.T
        P[g] = (C.T @ CB) / w[g]
        theta[g] = eye_q - beta @ lam_g + (CB.T @ CB) / w[g]
        diag_s[g] = (C * C).sum(axis=0) / w[g]

    if model.loadings_shared:
        # per-coordinate pooling weights nu_g / psi_gj; the noise cancels
        # when it is shared, so one formula covers all four C** codes
        psi_rows = np.stack([current.noise_vector(g) for g in range(G)])
        wts = nu[:, None] / psi_rows
        num = np.einsum("gj,gjk->jk", wts, P)
        den = np.einsum("gj,gab->jab", wts, theta)
        lam_new = np.linalg.solve(den.transpose(0, 2, 1), num[:, :, None])[:, :, 0]
        loadings = lam_new
        lam_for = lambda g: lam_new
    else:
        stacked = np.empty((G, p, q))
        for g in range(G):
            stacked[g] = np.linalg.solve(theta[g].T, P[g].T).T
        loadings = stacked
        lam_for = lambda g: stacked[g]

    resid = np.empty((G, p))
    for g in range(G):
        lg = lam_for(g)
        resid[g] = (
            diag_s[g]
            - 2.0 * (lg * P[g]).sum(axis=1)
            + ((lg @ theta[g]) * lg).sum(axis=1)
        )

    shared, iso = model.noise_shared, model.noise_isotropic
    if shared and iso:
        noise = float((nu @ resid).mean())
    elif shared:
        noise = nu @ resid
    elif iso:
        noise = resid.mean(axis=1)
    else:
        noise = resid
    return loadings, noise


def _factor_init_from_scatter(Cw: np.ndarray, p: int, q: int) -> np.ndarray:
    """Moment-based loading start from a factored scatter ``S = Cw' Cw``."""
    _, s, vt = np.linalg.svd(Cw, full_matrices=False)
    eig = s * s
    r = min(q, eig.size)
    resid = max((eig.sum() - eig[:r].sum()) / max(p - r, 1), 1e-10)
    scale = np.sqrt(np.maximum(eig[:r] - resid, 1e-10))
    lam = np.zeros((p, q))
    lam[:, :r] = vt[:r].T * scale
    return lam


def _initial_params(data: DataMatrix, z: np.ndarray, model: ModelDescriptor) -> MixtureParams:
    """Moment-matching parameters from an initial responsibility matrix."""
    X = data.values
    n, p = X.shape
    G, q = model.G, model.q
    w = z.sum(axis=0)
    for g, wg in enumerate(w):
        if wg <= 0.0:
            raise DegenerateComponentError(g, "empty initial component")
    nu = w / w.sum()
    pi = nu / nu.sum()
    mu = (z.T @ X) / w[:, None]

    Cw = [np.sqrt(z[:, g] / w[g])[:, None] * (X - mu[g]) for g in range(G)]
    diag_s = np.stack([(c * c).sum(axis=0) for c in Cw])

    if model.loadings_shared:
        pooled = np.vstack([np.sqrt(nu[g]) * Cw[g] for g in range(G)])
        lam = _factor_init_from_scatter(pooled, p, q)
        loadings = lam
        lam_sq = (lam * lam).sum(axis=1)
        lam_sq_rows = np.broadcast_to(lam_sq, (G, p))
    else:
        mats = [_factor_init_from_scatter(Cw[g], p, q) for g in range(G)]
        loadings = np.stack(mats)
        lam_sq_rows = np.stack([(m * m).sum(axis=1) for m in mats])

    floor = max(1e-4 * float(diag_s.mean()), 1e-8)
    psi_rows = np.maximum(diag_s - lam_sq_rows, floor)

    shared, iso = model.noise_shared, model.noise_isotropic
    if shared and iso:
        noise = float((nu @ psi_rows).mean())
    elif shared:
        noise = nu @ psi_rows
    elif iso:
        noise = psi_rows.mean(axis=1)
    else:
        noise = psi_rows
    return MixtureParams(model.code, pi, mu, loadings, noise)


def _kmeans_labels(
    X: np.ndarray, G: int, rng: np.random.Generator, min_size: int
) -> np.ndarray:
    """Plain Lloyd iterations with distance-weighted seeding.

    Clusters smaller than ``min_size`` grow by taking their nearest points
    from clusters with surplus: distance-weighted seeding likes outliers,
    and a hard init with a handful of points invites the spiked-likelihood
    degeneracy.
    """
    n = X.shape[0]
    sq = (X * X).sum(axis=1)
    centers = [X[rng.integers(n)]]
    for _ in range(G - 1):
        d2 = np.min(
            np.stack([sq - 2.0 * (X @ c) + (c @ c) for c in centers]), axis=0
        )
        d2 = np.maximum(d2, 0.0)
        total = d2.sum()
        probs = d2 / total if total > 0 else np.full(n, 1.0 / n)
        centers.append(X[rng.choice(n, p=probs)])
    C = np.stack(centers)
    labels = np.full(n, -1, dtype=int)
    for _sweep in range(50):
        d2 = sq[:, None] - 2.0 * (X @ C.T) + (C * C).sum(axis=1)[None, :]
        new_labels = np.argmin(d2, axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for g in range(G):
            members = labels == g
            if members.any():
                C[g] = X[members].mean(axis=0)
            else:
                C[g] = X[np.argmax(d2.min(axis=1))]

    counts = np.bincount(labels, minlength=G)
    if n < G * min_size:
        raise DegenerateComponentError(
            int(np.argmin(counts)), f"cannot seed {G} clusters of >= {min_size} points"
        )
    d2 = sq[:, None] - 2.0 * (X @ C.T) + (C * C).sum(axis=1)[None, :]
    while counts.min() < min_size:
        # an undersized cluster takes its nearest points from clusters
        # that can spare them
        g = int(np.argmin(counts))
        order = np.argsort(d2[:, g])
        for i in order:
            if labels[i] == g or counts[labels[i]] <= min_size:
                continue
            counts[labels[i]] -= 1
            labels[i] = g
            counts[g] += 1
            if counts[g] >= min_size:
                break
    return labels


def _initial_z(
    data: DataMatrix, G: int, q: int, init: str, rng: np.random.Generator
) -> np.ndarray:
    if init == "kmeans":
        labels = _kmeans_labels(data.values, G, rng, min_size=int(_min_component_mass(q)))
        z = np.zeros((data.n, G))
        z[np.arange(data.n), labels] = 1.0
        return z
    return rng.dirichlet(np.ones(G), size=data.n)


def _posteriors(logw: np.ndarray) -> tuple[np.ndarray, float]:
    """Row-softmax of weighted log-densities plus the total log-likelihood."""
    m = np.max(logw, axis=1, keepdims=True)
    e = np.exp(logw - m)
    s = e.sum(axis=1, keepdims=True)
    z = e / s
    return z, float((m + np.log(s)).sum())


def _weighted_dens(data: DataMatrix, params: MixtureParams) -> np.ndarray:
    return component_log_densities(data, params) + np.log(params.pi)


def _aitken_converged(trace: list[float], tol: float) -> bool:
    """Stop when the Aitken asymptotic estimate is within ``tol`` of the
    current value (signed comparison, ratio must be < 1)."""
    if len(trace) < 3:
        return False
    l1, l2, l3 = trace[-3], trace[-2], trace[-1]
    d1, d2 = l2 - l1, l3 - l2
    if abs(d1) < 1e-13 * (abs(l2) + 1.0):
        return abs(d2) < 1e-13 * (abs(l3) + 1.0)
    a = d2 / d1
    if a >= 1.0:
        return False
    l_inf = l2 + d2 / (1.0 - a)
    return (l_inf - l3) < tol


def _min_noise(noise) -> float:
    return float(noise) if np.isscalar(noise) else float(np.min(noise))


def _run_aecm(
    data: DataMatrix,
    model: ModelDescriptor,
    lambda_n: float,
    config: FitConfig,
    z0: np.ndarray,
    shrink_scale: str = "diagonal",
) -> FitResult:
    n = data.n
    params = _initial_params(data, z0, model)
    logw = _weighted_dens(data, params)
    z, ll = _posteriors(logw)
    trace = [ll - penalty_value(params, lambda_n, n)]

    converged = False
    iterations = 0
    mass_floor = _min_component_mass(model.q)
    for it in range(1, config.max_iterations + 1):
        resp = Responsibilities(z)
        counts = z.sum(axis=0)
        if counts.min() < mass_floor:
            g = int(np.argmin(counts))
            raise DegenerateComponentError(
                g, f"effective mass {counts[g]:.2f} below q + 2 = {mass_floor:.0f}"
            )
        mu_new = update_mu_soft_threshold(data, resp, params, lambda_n, shrink_scale)
        # the exact simplex maximizer given the fresh means; identical to
        # update_pi when lambda_n = 0
        pi_new = update_pi_penalized(resp, lambda_n, np.abs(mu_new).sum(axis=1))
        bad = degenerate_components(pi_new, n)
        if bad.size:
            raise DegenerateComponentError(
                int(bad[0]), f"mass {pi_new[bad[0]]:.3e} below 1/(10n)"
            )
        params_mid = MixtureParams(
            model.code, pi_new, mu_new, params.loadings, params.noise
        )

        # fresh E-step before the covariance stage; the same density pass
        # safeguards stage 1: the thresholded update solves the penalized
        # problem coordinate-wise, which near a stationary point can dip the
        # true objective by the cross-coordinate coupling it ignores, so a
        # dipping mean update is retreated and only the proportions move
        logw_mid = _weighted_dens(data, params_mid)
        z2, ll_mid = _posteriors(logw_mid)
        if ll_mid - penalty_value(params_mid, lambda_n, n) < trace[-1]:
            pi_new = update_pi_penalized(
                resp, lambda_n, np.abs(params.mu).sum(axis=1)
            )
            params_mid = MixtureParams(
                model.code, pi_new, params.mu, params.loadings, params.noise
            )
            z2, _ = _posteriors(_weighted_dens(data, params_mid))
        loadings, noise = update_covariance_stage2(
            data, Responsibilities(z2), params_mid.mu, model, params_mid
        )
        if _min_noise(noise) < NOISE_FLOOR:
            raise DegenerateComponentError(-1, "noise variance collapsed")
        params = MixtureParams(model.code, pi_new, params_mid.mu, loadings, noise)

        logw = _weighted_dens(data, params)
        z, ll = _posteriors(logw)
        pen = ll - penalty_value(params, lambda_n, n)
        if not np.isfinite(pen):
            raise DegenerateComponentError(-1, "non-finite penalized objective")
        trace.append(pen)
        iterations = it
        if _aitken_converged(trace, config.tolerance):
            converged = True
            break

    return FitResult(
        params=params,
        z=Responsibilities(z),
        loglik=ll,
        penalized_loglik=trace[-1],
        iterations=iterations,
        converged=converged,
        nonzero_mean_counts=params.nonzero_mean_counts(),
        trace=np.asarray(trace),
    )


def fit(
    data,
    model: ModelDescriptor,
    penalty: PenaltyConfig,
    config: FitConfig = FitConfig(),
) -> FitResult:
    """Best-of-``n_starts`` penalized AECM fit of one grid cell.

    Deterministic given ``config.seed``: start ``s`` draws from the RNG
    stream ``(seed, s)``.  Starts that hit a degenerate component or a
    numerical failure are abandoned; if every start fails, the error carries
    the per-start diagnostics.
    """
    data = DataMatrix.ensure(data)
    if model.q >= data.p:
        raise ValueError(f"need q < p, got q={model.q}, p={data.p}")
    if model.G > data.n:
        raise ValueError(f"need G <= n, got G={model.G}, n={data.n}")
    lambda_n = resolve_lambda(penalty, data.p)

    best: FitResult | None = None
    diagnostics: list[tuple[int, str]] = []
    for start in range(config.n_starts):
        rng = np.random.default_rng(
            np.random.SeedSequence(config.seed, spawn_key=(start,))
        )
        try:
            z0 = _initial_z(data, model.G, model.q, config.init, rng)
            result = _run_aecm(data, model, lambda_n, config, z0, penalty.shrink_scale)
        except (DegenerateComponentError, np.linalg.LinAlgError) as exc:
            diagnostics.append((start, str(exc)))
            continue
        if best is None or result.penalized_loglik > best.penalized_loglik:
            best = result
    if best is None:
        raise FitFailureError(diagnostics)
    return best
