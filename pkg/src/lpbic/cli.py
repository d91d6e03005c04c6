"""Command-line interface: simulate, fit, search, replicate, ari.

Exit codes are stable for scripting: 0 on success, 2 for input problems
(unreadable/malformed files, invalid flag combinations, unwritable output
paths), 3 for computational failures (no grid cell converged, every start
degenerate).  All randomness flows from ``--seed``; when the flag is absent
the ``LPBIC_SEED`` environment variable is consulted, then the documented
default of 42.  Progress goes to stderr; stdout stays machine-parsable.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from ._version import __version__
from .aecm import DEFAULT_SEED, FitConfig, PenaltyConfig, fit, resolve_lambda
from .errors import FitFailureError, LpbicError, SearchFailureError
from .evaluation import SimSpec, adjusted_rand_index, replicate_experiment, simulate
from .mixture import COVARIANCE_CODES, DataMatrix, ModelDescriptor
from .selection import SelectionTable, compute_lpbic, grid_search, model_grid


class InputError(LpbicError):
    """A problem with user-supplied files or flags (exit code 2)."""


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("LPBIC_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise InputError(f"LPBIC_SEED must be an integer, got {env!r}") from exc
    return DEFAULT_SEED


def _parse_penalty(text: str, shrink: str = "diagonal") -> PenaltyConfig:
    scale = {"diagonal": "diagonal", "row-sums": "row_sums"}[shrink]
    if text == "recip-p":
        return PenaltyConfig.reciprocal_p(shrink_scale=scale)
    try:
        value = float(text)
    except ValueError as exc:
        raise InputError(f"--lambda must be a number or 'recip-p', got {text!r}") from exc
    if value < 0:
        raise InputError(f"--lambda must be nonnegative, got {value}")
    return PenaltyConfig.fixed(value, shrink_scale=scale)


def _parse_int_list(text: str, flag: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError as exc:
        raise InputError(f"{flag} expects comma-separated integers, got {text!r}") from exc


def _parse_codes(text: str) -> tuple[str, ...]:
    codes = tuple(part.strip().upper() for part in text.split(","))
    for code in codes:
        if code not in COVARIANCE_CODES:
            raise InputError(
                f"unknown model code {code!r}; choose from {','.join(COVARIANCE_CODES)}"
            )
    return codes


def read_matrix_csv(path: str) -> np.ndarray:
    """Numeric CSV reader with single-header auto-detection.

    The first row is treated as a header when any of its cells fails to
    parse as a number.  Any later unparsable or non-finite cell aborts with
    its 1-based (row, column) file position.
    """
    try:
        with open(path, newline="") as handle:
            raw = [(i + 1, row) for i, row in enumerate(csv.reader(handle)) if row]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if not raw:
        raise InputError(f"{path}: no data rows")

    start = 0
    try:
        [float(cell) for cell in raw[0][1]]
    except ValueError:
        start = 1
    if start == len(raw):
        raise InputError(f"{path}: no data rows after header")

    width = len(raw[start][1])
    out = np.empty((len(raw) - start, width))
    for r, (line_no, row) in enumerate(raw[start:]):
        if len(row) != width:
            raise InputError(
                f"{path}: row {line_no} has {len(row)} cells, expected {width}"
            )
        for c, cell in enumerate(row):
            try:
                value = float(cell)
            except ValueError as exc:
                raise InputError(
                    f"{path}: bad cell at row {line_no}, column {c + 1}: {cell!r}"
                ) from exc
            if not np.isfinite(value):
                raise InputError(
                    f"{path}: non-finite cell at row {line_no}, column {c + 1}: {cell!r}"
                )
            out[r, c] = value
    return out


def read_labels_csv(path: str) -> np.ndarray:
    try:
        with open(path) as handle:
            lines = [(i + 1, line.strip()) for i, line in enumerate(handle)]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    lines = [(no, text) for no, text in lines if text]
    if not lines:
        raise InputError(f"{path}: no labels")
    labels = np.empty(len(lines), dtype=np.int64)
    for i, (line_no, text) in enumerate(lines):
        try:
            labels[i] = int(text)
        except ValueError as exc:
            raise InputError(f"{path}: bad label at row {line_no}: {text!r}") from exc
    return labels


def _write_text(path: str, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


def _write_matrix_csv(path: str, values: np.ndarray) -> None:
    lines = [",".join(repr(float(v)) for v in row) for row in values]
    _write_text(path, "\n".join(lines) + "\n")


def _fit_config(args) -> FitConfig:
    return FitConfig(
        max_iterations=args.max_iter,
        tolerance=args.tol,
        n_starts=args.starts,
        seed=_resolve_seed(args.seed),
        init=args.init,
    )


def _grid_from_args(args) -> list[ModelDescriptor]:
    if args.g_min > args.g_max or args.q_min > args.q_max:
        raise InputError("need --g-min <= --g-max and --q-min <= --q-max")
    return model_grid(
        range(args.g_min, args.g_max + 1),
        range(args.q_min, args.q_max + 1),
        _parse_codes(args.models),
    )


def _load_data_and_labels(args) -> tuple[DataMatrix, np.ndarray | None]:
    try:
        data = DataMatrix(read_matrix_csv(args.data))
    except ValueError as exc:
        raise InputError(f"{args.data}: {exc}") from exc
    labels = None
    if args.labels is not None:
        labels = read_labels_csv(args.labels)
        if labels.size != data.n:
            raise InputError(
                f"{args.labels}: {labels.size} labels for {data.n} observations"
            )
    return data, labels


def cmd_simulate(args) -> int:
    sizes = _parse_int_list(args.sizes, "--sizes")
    means = tuple(float(x) for x in args.means.split(","))
    kinds = tuple(part.strip() for part in args.kinds.split(","))
    try:
        spec = SimSpec(
            p=args.p,
            group_sizes=sizes,
            means=means,
            covariance_kinds=kinds,
            seed=_resolve_seed(args.seed),
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    data, labels = simulate(spec)
    _write_matrix_csv(args.out, data.values)
    if args.labels is not None:
        _write_text(args.labels, "\n".join(str(v) for v in labels) + "\n")
    print(f"wrote {data.n}x{data.p} data to {args.out}")
    return 0


def _summary_line(name: str, table: SelectionTable, criterion: str) -> str:
    row = table.best_row(criterion)
    if row is None:
        return f"{name} best: none (no converged cells)"
    value = getattr(row.criteria, criterion)
    text = (
        f"{name} best: code={row.model.code} G={row.model.G} q={row.model.q} "
        f"{criterion}={value:.3f}"
    )
    if row.ari is not None:
        text += f" ari={row.ari:.4f}"
    return text


def cmd_search(args) -> int:
    data, labels = _load_data_and_labels(args)
    grid = _grid_from_args(args)
    config = _fit_config(args)
    penalty = _parse_penalty(args.lambda_, args.shrink)
    for cell in grid:
        if cell.q >= data.p or cell.G > data.n:
            raise InputError(
                f"grid cell {cell.code},G={cell.G},q={cell.q} invalid for "
                f"n={data.n}, p={data.p}"
            )

    total = len(grid)

    def progress(i: int, cell: ModelDescriptor, ok: bool) -> None:
        state = "ok" if ok else "failed"
        print(
            f"[{i + 1}/{total}] {cell.code} G={cell.G} q={cell.q} {state}",
            file=sys.stderr,
        )

    table = grid_search(
        data, grid, penalty, config,
        labels=labels, threads=args.threads, progress=progress,
    )

    if args.out is not None:
        if args.format == "csv":
            _write_text(args.out, table.to_csv())
        else:
            _write_text(args.out, table.to_json())
    if args.csv is not None:
        _write_text(args.csv, table.to_csv())

    print(_summary_line("BIC  ", table, "bic"))
    print(_summary_line("LPBIC", table, "lpbic"))
    if table.best_by_bic is None and table.best_by_lpbic is None:
        return 3
    return 0


def cmd_fit(args) -> int:
    data, labels = _load_data_and_labels(args)
    try:
        model = ModelDescriptor(args.model.upper(), args.g, args.q)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if model.q >= data.p or model.G > data.n:
        raise InputError(f"model invalid for n={data.n}, p={data.p}")
    config = _fit_config(args)
    penalty = _parse_penalty(args.lambda_, args.shrink)
    result = fit(data, model, penalty, config)
    lambda_n = resolve_lambda(penalty, data.p)
    criteria = compute_lpbic(result, model, lambda_n, data.n)
    ari = None
    if labels is not None:
        ari = adjusted_rand_index(labels, result.z.hard_labels())

    payload = {
        "model": {"code": model.code, "G": model.G, "q": model.q},
        "n": data.n,
        "p": data.p,
        "lambda_n": lambda_n,
        "loglik": result.loglik,
        "penalized_loglik": result.penalized_loglik,
        "iterations": result.iterations,
        "converged": result.converged,
        "nonzero_mean_counts": result.nonzero_mean_counts.tolist(),
        "pi": result.params.pi.tolist(),
        "bic": criteria.bic,
        "lpbic": criteria.lpbic,
        "rho": criteria.rho,
        "rho_tilde": criteria.rho_tilde,
        "lasso_term": criteria.lasso_term,
        "ari": ari,
        "trace": result.trace.tolist(),
    }
    if args.out is not None:
        _write_text(args.out, json.dumps(payload, indent=2))
    print(
        f"fit {model.code} G={model.G} q={model.q}: loglik={result.loglik:.3f} "
        f"bic={criteria.bic:.3f} lpbic={criteria.lpbic:.3f} "
        f"converged={result.converged}" + ("" if ari is None else f" ari={ari:.4f}")
    )
    return 0


def cmd_replicate(args) -> int:
    sizes = _parse_int_list(args.sizes, "--sizes")
    try:
        spec = SimSpec(p=args.p, group_sizes=sizes, seed=_resolve_seed(args.seed))
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    grid = _grid_from_args(args)
    config = _fit_config(args)
    penalty = _parse_penalty(args.lambda_, args.shrink)

    def progress(record) -> None:
        print(f"replication {record.rep + 1}/{args.reps} done", file=sys.stderr)

    report = replicate_experiment(
        spec, grid, args.reps, penalty, config,
        threads=args.threads, progress=progress,
    )
    if args.out is not None:
        _write_text(args.out, report.to_csv())
    bic_counts = report.g_counts("bic")
    lpbic_counts = report.g_counts("lpbic")
    print(f"BIC   G counts: {json.dumps(bic_counts, sort_keys=True)}")
    print(f"LPBIC G counts: {json.dumps(lpbic_counts, sort_keys=True)}")
    print(f"LPBIC ari strictly higher in {report.ari_wins()}/{args.reps} replications")
    return 0


def cmd_ari(args) -> int:
    a = read_labels_csv(args.first)
    b = read_labels_csv(args.second)
    if a.size != b.size:
        raise InputError(f"label files differ in length: {a.size} vs {b.size}")
    try:
        value = adjusted_rand_index(a, b)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    print(f"{value:.4f}")
    return 0


def _add_fit_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lambda", dest="lambda_", default="recip-p",
                        help="penalty: a nonnegative number or 'recip-p' (default)")
    parser.add_argument("--starts", type=int, default=20, help="random starts (default 20)")
    parser.add_argument("--seed", type=int, default=None,
                        help=f"RNG seed (default: $LPBIC_SEED or {DEFAULT_SEED})")
    parser.add_argument("--tol", type=float, default=1e-5, help="Aitken tolerance")
    parser.add_argument("--max-iter", type=int, default=1000, help="iteration cap")
    parser.add_argument("--init", choices=["random_soft", "kmeans"],
                        default="random_soft", help="start strategy")
    parser.add_argument("--shrink", choices=["diagonal", "row-sums"], default="diagonal",
                        help="per-coordinate shrinkage scale (default diagonal)")


def _add_grid_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--g-min", type=int, default=1)
    parser.add_argument("--g-max", type=int, default=4)
    parser.add_argument("--q-min", type=int, default=1)
    parser.add_argument("--q-max", type=int, default=3)
    parser.add_argument("--models", default=",".join(COVARIANCE_CODES),
                        help="comma-separated covariance codes (default: all 8)")
    parser.add_argument("--threads", type=int, default=os.cpu_count(),
                        help="worker processes for the grid (default: all cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lpbic",
        description="Penalized factor-analytic Gaussian mixtures with "
                    "BIC and LASSO-penalized BIC model selection.",
    )
    parser.add_argument("--version", action="version", version=f"lpbic {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="write a synthetic three-group dataset")
    p_sim.add_argument("--p", type=int, required=True, help="number of variables")
    p_sim.add_argument("--sizes", default="40,30,30", help="group sizes (default 40,30,30)")
    p_sim.add_argument("--means", default="-5.5,2,3", help="per-group mean levels")
    p_sim.add_argument("--kinds", default="isotropic,diagonal,full",
                       help="per-group covariance kinds")
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--out", required=True, help="data CSV path")
    p_sim.add_argument("--labels", default=None, help="labels CSV path")
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="fit one model cell")
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--labels", default=None)
    p_fit.add_argument("--model", required=True, help="covariance code, e.g. UUU")
    p_fit.add_argument("--g", type=int, required=True)
    p_fit.add_argument("--q", type=int, required=True)
    p_fit.add_argument("--out", default=None, help="JSON output path")
    _add_fit_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_search = sub.add_parser("search", help="grid search over codes, G and q")
    p_search.add_argument("--data", required=True)
    p_search.add_argument("--labels", default=None)
    p_search.add_argument("--out", default=None, help="table output path")
    p_search.add_argument("--csv", default=None, help="additional CSV output path")
    p_search.add_argument("--format", choices=["json", "csv"], default="json",
                          help="format written to --out (default json)")
    _add_grid_flags(p_search)
    _add_fit_flags(p_search)
    p_search.set_defaults(func=cmd_search)

    p_rep = sub.add_parser("replicate", help="repeat simulate-and-select")
    p_rep.add_argument("--p", type=int, required=True)
    p_rep.add_argument("--sizes", default="40,30,30")
    p_rep.add_argument("--reps", type=int, required=True)
    p_rep.add_argument("--out", default=None, help="report CSV path")
    _add_grid_flags(p_rep)
    _add_fit_flags(p_rep)
    p_rep.set_defaults(func=cmd_replicate)

    p_ari = sub.add_parser("ari", help="agreement of two label files")
    p_ari.add_argument("first")
    p_ari.add_argument("second")
    p_ari.set_defaults(func=cmd_ari)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SearchFailureError, FitFailureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
