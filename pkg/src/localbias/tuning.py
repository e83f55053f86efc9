"""Grid search over the bias weight (lambda) and severity weight (gamma)."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .audit import AuditReport, BiasThresholds, audit_clusters, normalized_inertia, sig6
from .cohort import Cohort
from .engine import ClusteringResult, Hyperparams, fit

DEFAULT_LAMBDAS = tuple(float(v) for v in range(-100, 1, 10))
DEFAULT_GAMMAS = tuple(float(v) for v in range(0, 101, 10))
TABLE_COLUMNS = ("lambda", "gamma", "scr", "sir", "avg_abs_bias", "max_abs_bias", "normalized_inertia", "objective")


@dataclass(frozen=True)
class GridSpec:
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    gammas: tuple[float, ...] = DEFAULT_GAMMAS
    base: Hyperparams = Hyperparams()

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        object.__setattr__(self, "gammas", tuple(float(v) for v in self.gammas))
        if not self.lambdas or not self.gammas:
            raise ValueError("grid must have at least one lambda and one gamma")
        if any(v > 0 for v in self.lambdas):
            raise ValueError("grid lambdas must be <= 0")
        if any(v < 0 for v in self.gammas):
            raise ValueError("grid gammas must be >= 0")

    def cells(self) -> list[tuple[float, float]]:
        """Canonical order: lambda ascending, then gamma ascending; duplicates dropped."""
        return [(lam, gam) for lam in sorted(set(self.lambdas)) for gam in sorted(set(self.gammas))]


@dataclass
class GridCell:
    lam: float
    gamma: float
    result: ClusteringResult
    report: AuditReport

    def row(self) -> dict:
        r = self.report
        return {
            "lambda": self.lam,
            "gamma": self.gamma,
            "scr": r.scr,
            "sir": r.sir,
            "avg_abs_bias": r.avg_abs_bias,
            "max_abs_bias": r.max_abs_bias,
            "normalized_inertia": r.normalized_inertia,
            "objective": self.result.objective,
        }


@dataclass
class GridResult:
    best: Hyperparams
    report: AuditReport
    result: ClusteringResult
    cells: list[GridCell]
    no_flagged: bool

    def table(self) -> list[dict]:
        return [c.row() for c in self.cells]


def load_grid(path) -> GridSpec:
    """Read ``{"lambdas": [...], "gammas": [...]}`` from a JSON file."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read grid file {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ValueError(f"grid file {path}: expected a JSON object")
    unknown = set(doc) - {"lambdas", "gammas"}
    if unknown:
        raise ValueError(f"grid file {path}: unknown keys {sorted(unknown)}")
    try:
        lambdas = [float(v) for v in doc.get("lambdas", DEFAULT_LAMBDAS)]
        gammas = [float(v) for v in doc.get("gammas", DEFAULT_GAMMAS)]
    except (TypeError, ValueError):
        raise ValueError(f"grid file {path}: lambdas and gammas must be lists of numbers") from None
    return GridSpec(tuple(lambdas), tuple(gammas))


def _fit_cell(cohort: Cohort, h: Hyperparams) -> ClusteringResult:
    return fit(cohort, h)


def _selection_key(cell: GridCell, no_flagged: bool):
    r = cell.report
    primary = r.max_cluster_gap if no_flagged else r.avg_abs_bias
    # larger is better for every component
    return (primary, r.sir, -r.normalized_inertia, -abs(cell.lam), -cell.gamma)


def grid_search(
    cohort: Cohort,
    grid: GridSpec,
    thresholds: BiasThresholds = BiasThresholds(),
    baseline: ClusteringResult | None = None,
    n_jobs: int = 1,
) -> GridResult:
    """Fit every (lambda, gamma) pair and keep the one exposing the largest local biases.

    Cells are ranked by the mean bias score of flagged clusters, then higher SIR,
    lower normalized inertia, smaller |lambda| and smaller gamma.  If no cell
    flags anything, the largest unflagged cluster gap decides instead and the
    result is marked ``no_flagged``.
    """
    base = grid.base
    if baseline is None:
        baseline = fit(cohort, replace(base, lam=0.0, gamma=0.0))
    pairs = grid.cells()
    params = [replace(base, lam=lam, gamma=gam) for lam, gam in pairs]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_fit_cell, [cohort] * len(params), params))
    else:
        results = [_fit_cell(cohort, h) for h in params]

    cells = []
    for (lam, gam), res in zip(pairs, results):
        report = audit_clusters(res, cohort, thresholds)
        report.normalized_inertia = normalized_inertia(res, baseline)
        cells.append(GridCell(lam, gam, res, report))

    no_flagged = not any(c.report.n_flagged for c in cells)
    candidates = cells if no_flagged else [c for c in cells if c.report.n_flagged]
    winner = candidates[0]
    for cell in candidates[1:]:
        if _selection_key(cell, no_flagged) > _selection_key(winner, no_flagged):
            winner = cell
    return GridResult(winner.result.hyperparams, winner.report, winner.result, cells, no_flagged)


def table_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    for row in rows:
        writer.writerow([f"{sig6(row[c]):.6g}" for c in TABLE_COLUMNS])
    return buf.getvalue()


def winner_is_maximal(result: GridResult) -> bool:
    """Post-hoc check that no cell beats the winner on the selection metric."""
    metric = "max_cluster_gap" if result.no_flagged else "avg_abs_bias"
    pool = result.cells if result.no_flagged else [c for c in result.cells if c.report.n_flagged]
    best = getattr(result.report, metric)
    return all(getattr(c.report, metric) <= best for c in pool) and np.isfinite(best)
