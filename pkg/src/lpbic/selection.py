"""Parameter counting, information criteria, and the grid-search driver.

Two criteria are computed from every converged fit, both on a larger-is-
better scale:

* ``bic``:    ``2 log L - rho log n`` with ``rho`` the free-parameter count;
* ``lpbic``:  ``2 log L - rho_tilde log n - lasso_term`` where ``rho_tilde``
  counts only parameters estimated as nonzero (shrunken mean coordinates
  drop out) and ``lasso_term`` charges each surviving mean coordinate by
  its magnitude plus the ratio of its variance to its magnitude, so
  components whose means are small relative to their spread pay heavily.
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import json
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Callable, Iterable, Sequence

import numpy as np

from ._version import __version__
from .aecm import FitConfig, FitResult, PenaltyConfig, derive_seed, fit, resolve_lambda
from .errors import FitFailureError, SearchFailureError
from .mixture import COVARIANCE_CODES, DataMatrix, ModelDescriptor

__all__ = [
    "CriterionValue",
    "SelectionRow",
    "SelectionTable",
    "count_free_parameters",
    "compute_bic",
    "lasso_penalty_term",
    "compute_lpbic",
    "model_grid",
    "grid_search",
]


def count_free_parameters(model: ModelDescriptor, p: int) -> int:
    """Free-parameter count ``rho`` for one covariance code at dimension ``p``.

    Mixing proportions contribute ``G - 1`` and means ``G p``.  Each distinct
    loading matrix contributes ``p q - q(q-1)/2`` (rotational freedom
    removed); each distinct noise term contributes 1 if isotropic else
    ``p``.
    """
    G, q = model.G, model.q
    if not 1 <= q < p:
        raise ValueError(f"need 1 <= q < p, got q={q}, p={p}")
    load_block = p * q - q * (q - 1) // 2
    loadings = load_block * (1 if model.loadings_shared else G)
    per_noise = 1 if model.noise_isotropic else p
    noise = per_noise * (1 if model.noise_shared else G)
    return (G - 1) + G * p + loadings + noise


def compute_bic(loglik: float, rho: int, n: int) -> float:
    """``2 loglik - rho log n``; larger is better."""
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    return 2.0 * loglik - rho * np.log(n)


@dataclass(frozen=True)
class CriterionValue:
    """Both criteria for one fitted cell, plus their bookkeeping."""

    bic: float
    lpbic: float
    rho: int
    rho_tilde: int
    lasso_term: float
    warnings: tuple[str, ...] = ()


def lasso_penalty_term(
    mu: np.ndarray, sigma_diag: np.ndarray, lambda_n: float, n: int
) -> float:
    """Third summand of the penalized criterion.

    ``(2 n lambda_n / G) * sum_g sum_j [ |mu_gj| + sigma_gjj / |mu_gj|
    - sign(mu_gj) ]`` with the inner sum running over nonzero mean
    coordinates only, so the reciprocal never divides by zero.
    """
    mu = np.asarray(mu, dtype=float)
    sigma_diag = np.asarray(sigma_diag, dtype=float)
    G = mu.shape[0]
    total = 0.0
    for g in range(G):
        keep = mu[g] != 0.0
        m = mu[g][keep]
        s = sigma_diag[g][keep]
        total += float(np.sum(np.abs(m) + s / np.abs(m) - np.sign(m)))
    return (2.0 * n * lambda_n / G) * total


def compute_lpbic(
    result: FitResult, model: ModelDescriptor, lambda_n: float, n: int
) -> CriterionValue:
    """Criteria for one fit; `lpbic` collapses to `bic` when ``lambda_n = 0``
    and nothing was shrunk to zero."""
    if lambda_n < 0.0:
        raise ValueError(f"lambda_n must be nonnegative, got {lambda_n}")
    params = result.params
    p = params.p
    rho = count_free_parameters(model, p)
    nonzero = int(result.nonzero_mean_counts.sum())
    # only mean coordinates can be estimated as exactly zero; everything
    # else is always counted
    rho_tilde = rho - model.G * p + nonzero

    warnings: tuple[str, ...] = ()
    if lambda_n > 0.0:
        sigma_diag = np.stack([params.sigma_diag(g) for g in range(model.G)])
        lasso = lasso_penalty_term(params.mu, sigma_diag, lambda_n, n)
        tiny = (params.mu != 0.0) & (np.abs(params.mu) < 1e-12)
        if tiny.any():
            g, j = np.argwhere(tiny)[0]
            warnings = (
                f"nonzero mean coordinate |mu[{g},{j}]| < 1e-12; "
                "reciprocal penalty term is ill-conditioned",
            )
    else:
        lasso = 0.0

    bic = compute_bic(result.loglik, rho, n)
    lpbic = 2.0 * result.loglik - rho_tilde * np.log(n) - lasso
    return CriterionValue(
        bic=float(bic),
        lpbic=float(lpbic),
        rho=rho,
        rho_tilde=rho_tilde,
        lasso_term=float(lasso),
        warnings=warnings,
    )


@dataclass(frozen=True)
class SelectionRow:
    """One grid cell: model, fit summary, criteria, or a failure reason."""

    model: ModelDescriptor
    criteria: CriterionValue | None = None
    loglik: float | None = None
    penalized_loglik: float | None = None
    iterations: int = 0
    converged: bool = False
    ari: float | None = None
    failure: str | None = None


@dataclass(frozen=True)
class SelectionTable:
    """All grid rows plus the argmax row index under each criterion."""

    rows: tuple[SelectionRow, ...]
    best_by_bic: int | None
    best_by_lpbic: int | None
    meta: dict

    def best_row(self, criterion: str) -> SelectionRow | None:
        idx = self.best_by_bic if criterion == "bic" else self.best_by_lpbic
        return None if idx is None else self.rows[idx]

    def to_json_dict(self) -> dict:
        rows = []
        for row in self.rows:
            c = row.criteria
            rows.append(
                {
                    "code": row.model.code,
                    "G": row.model.G,
                    "q": row.model.q,
                    "loglik": row.loglik,
                    "penalized_loglik": row.penalized_loglik,
                    "rho": None if c is None else c.rho,
                    "rho_tilde": None if c is None else c.rho_tilde,
                    "bic": None if c is None else c.bic,
                    "lpbic": None if c is None else c.lpbic,
                    "lasso_term": None if c is None else c.lasso_term,
                    "warnings": [] if c is None else list(c.warnings),
                    "converged": row.converged,
                    "iterations": row.iterations,
                    "ari": row.ari,
                    "failure": row.failure,
                }
            )
        return {
            "meta": dict(self.meta),
            "rows": rows,
            "best_by_bic": self.best_by_bic,
            "best_by_lpbic": self.best_by_lpbic,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    def to_csv(self) -> str:
        with_ari = any(row.ari is not None for row in self.rows)
        header = [
            "code", "G", "q", "loglik", "rho", "rho_tilde",
            "bic", "lpbic", "converged", "iterations",
        ] + (["ari"] if with_ari else [])
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in self.rows:
            c = row.criteria
            record = [
                row.model.code,
                row.model.G,
                row.model.q,
                _fmt(row.loglik),
                "" if c is None else c.rho,
                "" if c is None else c.rho_tilde,
                "" if c is None else _fmt(c.bic),
                "" if c is None else _fmt(c.lpbic),
                row.converged,
                row.iterations,
            ]
            if with_ari:
                record.append(_fmt(row.ari))
            writer.writerow(record)
        return buf.getvalue()


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def model_grid(
    G_values: Iterable[int],
    q_values: Iterable[int],
    codes: Sequence[str] = COVARIANCE_CODES,
) -> list[ModelDescriptor]:
    """Cartesian grid in deterministic (G, q, code) order."""
    return [
        ModelDescriptor(code, G, q)
        for G in sorted(set(G_values))
        for q in sorted(set(q_values))
        for code in codes
    ]


def _better(candidate: SelectionRow, value: float, incumbent: SelectionRow, best: float) -> bool:
    if value != best:
        return value > best
    # deterministic tie-break: prefer parsimony, then lexicographic code
    a = (candidate.model.G, candidate.model.q, candidate.model.code)
    b = (incumbent.model.G, incumbent.model.q, incumbent.model.code)
    return a < b


def _argbest(rows: Sequence[SelectionRow], attr: str) -> int | None:
    best_i: int | None = None
    for i, row in enumerate(rows):
        if row.failure is not None or not row.converged or row.criteria is None:
            continue
        value = getattr(row.criteria, attr)
        if best_i is None or _better(
            row, value, rows[best_i], getattr(rows[best_i].criteria, attr)
        ):
            best_i = i
    return best_i


def _fit_cell(args) -> tuple[int, FitResult | None, str | None]:
    index, values, model, penalty, config = args
    try:
        result = fit(DataMatrix(values), model, penalty, config)
    except FitFailureError as exc:
        return index, None, str(exc)
    return index, result, None


def grid_search(
    data,
    grid: Iterable[ModelDescriptor],
    penalty: PenaltyConfig,
    config: FitConfig = FitConfig(),
    labels: np.ndarray | None = None,
    threads: int | None = None,
    progress: Callable[[int, ModelDescriptor, bool], None] | None = None,
) -> SelectionTable:
    """Fit every grid cell and rank the converged cells by both criteria.

    Cell ``i`` runs on the derived RNG stream ``(config.seed, i)``, so the
    result does not depend on evaluation order and may be computed with
    ``threads`` worker processes.  Failed cells are kept in the table with
    their failure reason but never participate in the argmax.  When
    ``labels`` is given, each converged row also records the agreement of
    its maximum-a-posteriori partition with those labels.
    """
    from .evaluation import adjusted_rand_index  # local import: avoids cycle

    data = DataMatrix.ensure(data)
    cells = list(grid)
    if not cells:
        raise ValueError("empty model grid")
    for cell in cells:
        if cell.q >= data.p or cell.G > data.n:
            raise ValueError(f"grid cell {cell} invalid for n={data.n}, p={data.p}")
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (data.n,):
            raise ValueError(f"labels must have shape ({data.n},), got {labels.shape}")

    lambda_n = resolve_lambda(penalty, data.p)
    tasks = [
        (i, data.values, cell, penalty, replace(config, seed=derive_seed(config.seed, i)))
        for i, cell in enumerate(cells)
    ]

    outcomes: list[tuple[FitResult | None, str | None]] = [(None, None)] * len(cells)
    if threads is not None and threads > 1 and len(cells) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            for index, result, failure in pool.map(_fit_cell, tasks):
                outcomes[index] = (result, failure)
                if progress is not None:
                    progress(index, cells[index], failure is None)
    else:
        for task in tasks:
            index, result, failure = _fit_cell(task)
            outcomes[index] = (result, failure)
            if progress is not None:
                progress(index, cells[index], failure is None)

    rows = []
    for cell, (result, failure) in zip(cells, outcomes):
        if result is None:
            rows.append(SelectionRow(model=cell, failure=failure))
            continue
        criteria = compute_lpbic(result, cell, lambda_n, data.n)
        ari = None
        if labels is not None:
            ari = adjusted_rand_index(labels, result.z.hard_labels())
        rows.append(
            SelectionRow(
                model=cell,
                criteria=criteria,
                loglik=result.loglik,
                penalized_loglik=result.penalized_loglik,
                iterations=result.iterations,
                converged=result.converged,
                ari=ari,
            )
        )
    if all(row.failure is not None for row in rows):
        raise SearchFailureError(
            f"all {len(rows)} grid cells failed; first: {rows[0].failure}"
        )

    meta = {
        "version": __version__,
        "seed": config.seed,
        "lambda_policy": penalty.policy,
        "lambda_n": lambda_n,
        "n": data.n,
        "p": data.p,
        "n_starts": config.n_starts,
        "init": config.init,
        "grid": [f"{c.code},G={c.G},q={c.q}" for c in cells],
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    return SelectionTable(
        rows=tuple(rows),
        best_by_bic=_argbest(rows, "bic"),
        best_by_lpbic=_argbest(rows, "lpbic"),
        meta=meta,
    )
