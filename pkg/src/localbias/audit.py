"""Bias flagging, cluster metrics (SCR, SIR, |Bias|, inertia) and report rendering."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .cohort import Cohort
from .engine import ClusteringResult, Hyperparams

METHODS = ("kmeans", "logan", "slogan")
DEFAULT_ACC_GAP = 0.10
DEFAULT_SEVERITY_GAP = 0.8
# guards threshold comparisons against rounding in differences like 0.6 - 0.5
_EPS = 1e-12


@dataclass(frozen=True)
class BiasThresholds:
    acc_gap_min: float = DEFAULT_ACC_GAP
    severity_gap_max: float = DEFAULT_SEVERITY_GAP

    def __post_init__(self):
        if not 0.0 <= self.acc_gap_min <= 1.0:
            raise ValueError(f"acc_gap_min must lie in [0, 1], got {self.acc_gap_min}")
        if not (math.isfinite(self.severity_gap_max) and self.severity_gap_max >= 0):
            raise ValueError(f"severity_gap_max must be >= 0, got {self.severity_gap_max}")


@dataclass
class ClusterAudit:
    cluster_id: int
    size: int
    n_a: int
    n_b: int
    acc_a: Optional[float]
    acc_b: Optional[float]
    bias_score: Optional[float]
    severity_gap: Optional[float]
    flagged: bool


@dataclass
class CharacteristicDelta:
    attribute: str
    value: str
    p_most: float
    p_least: float
    # None means the least-biased cluster has none of this value (division by zero)
    delta: Optional[float]


@dataclass
class AuditReport:
    method: str
    clusters: list[ClusterAudit]
    scr: float
    sir: float
    avg_abs_bias: float
    max_abs_bias: float
    global_acc_a: float
    global_acc_b: float
    global_bias: float
    hyperparams: Hyperparams
    thresholds: BiasThresholds
    normalized_inertia: Optional[float] = None
    inertia: Optional[float] = None
    objective: Optional[float] = None
    characterization: list[CharacteristicDelta] = field(default_factory=list)

    @property
    def flagged(self) -> list[ClusterAudit]:
        return [c for c in self.clusters if c.flagged]

    @property
    def n_flagged(self) -> int:
        return sum(c.flagged for c in self.clusters)

    @property
    def max_cluster_gap(self) -> float:
        """Largest bias score over all clusters, flagged or not."""
        scores = [c.bias_score for c in self.clusters if c.bias_score is not None]
        return max(scores) if scores else 0.0


def bootstrap_thresholds(cohort: Cohort, reps: int = 1000, seed: int = 0) -> BiasThresholds:
    """Null-distribution thresholds: mean + 3 std of gaps between random pseudo-groups.

    Each replicate resamples n instances with replacement and splits them at
    random into pseudo-groups with the original |A| and |B| sizes, ignoring
    the true labels.
    """
    n = cohort.n
    if n < 4:
        raise ValueError(f"bootstrap needs at least 4 instances, got {n}")
    if reps < 2:
        raise ValueError("reps must be >= 2")
    n_a = int(cohort.is_a.sum())
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(reps, n))
    idx = rng.permuted(idx, axis=1)
    correct = cohort.correct.astype(np.float64)[idx]
    sev = cohort.severity[idx]
    acc_gap = np.abs(correct[:, :n_a].mean(axis=1) - correct[:, n_a:].mean(axis=1))
    sev_gap = np.abs(sev[:, :n_a].mean(axis=1) - sev[:, n_a:].mean(axis=1))
    acc = float(acc_gap.mean() + 3 * acc_gap.std(ddof=1))
    sev_max = float(sev_gap.mean() + 3 * sev_gap.std(ddof=1))
    # constant inputs give float dust instead of an exact zero
    acc = 0.0 if acc < _EPS else min(acc, 1.0)
    sev_max = 0.0 if sev_max < _EPS * max(1.0, float(cohort.severity.max())) else sev_max
    return BiasThresholds(acc, sev_max)


def _cluster_audit(j, members, is_a, correct, sev, thresholds) -> ClusterAudit:
    in_a = members & is_a
    in_b = members & ~is_a
    n_a, n_b = int(in_a.sum()), int(in_b.sum())
    acc_a = float(correct[in_a].mean()) if n_a else None
    acc_b = float(correct[in_b].mean()) if n_b else None
    bias = sev_gap = None
    flagged = False
    if n_a and n_b:
        bias = abs(acc_a - acc_b)
        sev_gap = abs(float(sev[in_a].mean()) - float(sev[in_b].mean()))
        flagged = (
            bias >= thresholds.acc_gap_min - _EPS
            and sev_gap <= thresholds.severity_gap_max + _EPS
        )
    return ClusterAudit(j, n_a + n_b, n_a, n_b, acc_a, acc_b, bias, sev_gap, flagged)


def method_of(h: Hyperparams) -> str:
    if h.gamma != 0:
        return "slogan"
    if h.lam != 0:
        return "logan"
    return "kmeans"


def audit_clusters(
    result: ClusteringResult, cohort: Cohort, thresholds: BiasThresholds = BiasThresholds(), method: str | None = None
) -> AuditReport:
    """Per-cluster accuracy/severity statistics, bias flags and summary rates.

    ``normalized_inertia`` is left unset; see :func:`normalized_inertia`.
    """
    a = np.asarray(result.assignment)
    if a.shape != (cohort.n,):
        raise ValueError("result was not fitted on this cohort")
    is_a = cohort.is_a
    correct = cohort.correct.astype(np.float64)
    sev = cohort.severity
    k = result.k
    clusters = [_cluster_audit(j, a == j, is_a, correct, sev, thresholds) for j in range(k)]
    flagged = [c for c in clusters if c.flagged]
    scores = [c.bias_score for c in flagged]
    acc_a = float(correct[is_a].mean())
    acc_b = float(correct[~is_a].mean())
    return AuditReport(
        method=method or method_of(result.hyperparams),
        clusters=clusters,
        scr=len(flagged) / k,
        sir=sum(c.size for c in flagged) / cohort.n,
        avg_abs_bias=float(np.mean(scores)) if scores else 0.0,
        max_abs_bias=float(max(scores)) if scores else 0.0,
        global_acc_a=acc_a,
        global_acc_b=acc_b,
        global_bias=abs(acc_a - acc_b),
        hyperparams=result.hyperparams,
        thresholds=thresholds,
        inertia=result.l_c,
        objective=result.objective,
    )


def normalized_inertia(result: ClusteringResult, baseline: ClusteringResult) -> float:
    """Inertia relative to a same-k K-Means baseline (baseline itself gives 1.0)."""
    if result.k != baseline.k:
        raise ValueError(f"cluster counts differ: {result.k} vs baseline {baseline.k}")
    if baseline.l_c <= 0:
        raise ValueError("baseline inertia is zero; normalized inertia is undefined")
    if result is baseline:
        return 1.0
    return result.l_c / baseline.l_c


def _rank_key(c: ClusterAudit):
    return (c.bias_score, c.size, -c.cluster_id)


def most_least_biased(report: AuditReport) -> tuple[ClusterAudit, ClusterAudit]:
    scored = [c for c in report.clusters if c.bias_score is not None]
    if len(scored) < 2:
        raise ValueError("characterization needs at least 2 clusters with a defined bias score")
    most = max(scored, key=_rank_key)
    rest = [c for c in scored if c is not most]
    least = min(rest, key=lambda c: (c.bias_score, -c.size, c.cluster_id))
    return most, least


def characterize(result: ClusteringResult, cohort: Cohort, report: AuditReport) -> list[CharacteristicDelta]:
    """Relative prevalence difference (%) of each attribute value, most vs least biased cluster.

    ``delta`` is None when the value is absent from the least-biased cluster but
    present in the most-biased one; values absent from both are omitted.
    """
    most, least = most_least_biased(report)
    a = np.asarray(result.assignment)
    in_most = a == most.cluster_id
    in_least = a == least.cluster_id
    out = []
    for name in sorted(cohort.attribute_schema):
        values = np.array(cohort.attribute_values(name), dtype=object)
        for v in sorted({x for x in values if x is not None}):
            has = values == v
            p_most = float(has[in_most].mean())
            p_least = float(has[in_least].mean())
            if p_most == 0 and p_least == 0:
                continue
            delta = None if p_least == 0 else 100.0 * (p_most - p_least) / p_least
            out.append(CharacteristicDelta(name, v, p_most, p_least, delta))
    return out


# ---------------------------------------------------------------------------
# rendering


def sig6(x):
    if x is None:
        return None
    if isinstance(x, (bool, int)) and not isinstance(x, float):
        return x
    x = float(x)
    if x == 0 or not math.isfinite(x):
        return x
    return float(f"{x:.6g}")


def _round_tree(obj):
    if isinstance(obj, dict):
        return {k: _round_tree(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_round_tree(v) for v in obj]
    if isinstance(obj, float):
        return sig6(obj)
    return obj


def report_to_dict(report: AuditReport) -> dict:
    doc = {
        "method": report.method,
        "hyperparams": report.hyperparams.to_dict(),
        "thresholds": {
            "acc_gap_min": report.thresholds.acc_gap_min,
            "severity_gap_max": report.thresholds.severity_gap_max,
        },
        "scr": report.scr,
        "sir": report.sir,
        "avg_abs_bias": report.avg_abs_bias,
        "max_abs_bias": report.max_abs_bias,
        "normalized_inertia": report.normalized_inertia,
        "inertia": report.inertia,
        "objective": report.objective,
        "global_acc_a": report.global_acc_a,
        "global_acc_b": report.global_acc_b,
        "global_bias": report.global_bias,
        "n_flagged": report.n_flagged,
        "clusters": [
            {
                "cluster_id": c.cluster_id,
                "size": c.size,
                "n_a": c.n_a,
                "n_b": c.n_b,
                "acc_a": c.acc_a,
                "acc_b": c.acc_b,
                "bias_score": c.bias_score,
                "severity_gap": c.severity_gap,
                "flagged": c.flagged,
            }
            for c in report.clusters
        ],
        "characterization": [
            {"attribute": d.attribute, "value": d.value, "p_most": d.p_most, "p_least": d.p_least, "delta": d.delta}
            for d in report.characterization
        ],
    }
    return _round_tree(doc)


def report_to_json(report: AuditReport) -> str:
    return json.dumps(report_to_dict(report), indent=2) + "\n"


def pct(x) -> str:
    """Fraction -> percentage text; the fraction is rounded to 6 significant digits first."""
    if x is None:
        return "N/A"
    return f"{sig6(x) * 100:.6g}"


def num(x) -> str:
    return "N/A" if x is None else f"{sig6(x):.6g}"


def report_to_markdown(report: AuditReport) -> str:
    h = report.hyperparams
    t = report.thresholds
    lines = [
        f"# Local bias audit ({report.method})",
        "",
        f"k={h.k}, lambda={h.lam:g}, gamma={h.gamma:g}, seed={h.seed}, restarts={h.restarts}; "
        f"flag when accuracy gap >= {pct(t.acc_gap_min)}% and severity gap <= {num(t.severity_gap_max)}",
        "",
        "| Method | Inertia | SCR | SIR | Avg \\|Bias\\| | Max \\|Bias\\| |",
        "|---|---|---|---|---|---|",
        f"| {report.method} | {num(report.normalized_inertia)} | {pct(report.scr)} | {pct(report.sir)} "
        f"| {pct(report.avg_abs_bias)} | {pct(report.max_abs_bias)} |",
        "",
        "## Clusters (%)",
        "",
        "| Cluster | Size | Acc-A | Acc-B | \\|Bias\\| | Severity gap | Flagged |",
        "|---|---|---|---|---|---|---|",
    ]
    for c in report.clusters:
        lines.append(
            f"| {c.cluster_id} | {c.size} | {pct(c.acc_a)} | {pct(c.acc_b)} | {pct(c.bias_score)} "
            f"| {num(c.severity_gap)} | {'yes' if c.flagged else 'no'} |"
        )
    lines.append(
        f"| Global | {sum(c.size for c in report.clusters)} | {pct(report.global_acc_a)} "
        f"| {pct(report.global_acc_b)} | {pct(report.global_bias)} | | |"
    )
    if report.characterization:
        lines += ["", "## Most vs least biased cluster", "", "| Attribute | Value | Delta (%) |", "|---|---|---|"]
        for d in report.characterization:
            lines.append(f"| {d.attribute} | {d.value} | {num(d.delta)} |")
    return "\n".join(lines) + "\n"


def clusters_to_csv(report: AuditReport) -> str:
    """Per-cluster accuracy pairs for bar plots; the global row comes last."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["cluster", "size", "acc_a", "acc_b", "bias_score", "severity_gap", "flagged"])

    def cell(x):
        return "" if x is None else f"{sig6(x):.6g}"

    for c in report.clusters:
        writer.writerow(
            [c.cluster_id, c.size, cell(c.acc_a), cell(c.acc_b), cell(c.bias_score), cell(c.severity_gap), int(c.flagged)]
        )
    writer.writerow(
        ["global", sum(c.size for c in report.clusters), cell(report.global_acc_a), cell(report.global_acc_b),
         cell(report.global_bias), "", ""]
    )
    return buf.getvalue()


def with_inertia(report: AuditReport, result: ClusteringResult, baseline: ClusteringResult) -> AuditReport:
    return replace(report, normalized_inertia=normalized_inertia(result, baseline))
