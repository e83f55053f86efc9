"""Command-line front end: ``localbias {audit,tune,synth,compare}``.

Exit codes: 0 success, 2 the audit ran but flagged no cluster, 1 error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

from . import __version__
from .audit import (
    METHODS,
    AuditReport,
    BiasThresholds,
    audit_clusters,
    bootstrap_thresholds,
    characterize,
    clusters_to_csv,
    normalized_inertia,
    num,
    pct,
    report_to_dict,
    report_to_json,
    report_to_markdown,
)
from .cohort import FORMATS, Cohort, CohortError, load_cohort, relabel_groups, write_cohort
from .engine import Hyperparams, fit
from .synth import TRUTH_ATTRIBUTE, demo_spec, generate, load_spec
from .tuning import GridSpec, grid_search, load_grid, table_to_csv

OUT_ENV = "LOCALBIAS_OUT"
DEFAULT_OUT = "localbias-out"
EXIT_OK, EXIT_ERROR, EXIT_NOTHING_FLAGGED = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    input: str
    format: Optional[str]
    attribute: Optional[str]
    a_values: tuple[str, ...]
    method: str
    k: int
    lam: float
    gamma: float
    seed: int
    restarts: int
    max_iter: int
    thresholds: str
    out: str

    def __post_init__(self):
        if self.method not in METHODS:
            raise UsageError(f"unknown method {self.method!r}; expected one of {METHODS}")
        # kmeans ignores both weights, logan the severity weight
        if self.method == "kmeans":
            object.__setattr__(self, "lam", 0.0)
            object.__setattr__(self, "gamma", 0.0)
        elif self.method == "logan":
            object.__setattr__(self, "gamma", 0.0)

    def hyperparams(self, method: str | None = None) -> Hyperparams:
        cfg = self if method is None else replace(self, method=method)
        return Hyperparams(k=cfg.k, lam=cfg.lam, gamma=cfg.gamma, max_iter=cfg.max_iter, seed=cfg.seed, restarts=cfg.restarts)


def parse_thresholds(text: str, cohort: Cohort, seed: int) -> BiasThresholds:
    text = text.strip()
    if text.startswith("bootstrap"):
        reps = 1000
        if text != "bootstrap":
            head, _, tail = text.partition(":")
            if head != "bootstrap" or not tail.isdigit():
                raise UsageError(f"bad --thresholds {text!r}; use bootstrap[:reps] or acc:sev")
            reps = int(tail)
        return bootstrap_thresholds(cohort, reps=reps, seed=seed)
    try:
        acc, sev = (float(p) for p in text.split(":"))
    except ValueError:
        raise UsageError(f"bad --thresholds {text!r}; use bootstrap[:reps] or acc:sev") from None
    try:
        return BiasThresholds(acc, sev)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _manifest(command: str, config: dict, inputs: dict) -> str:
    doc = {
        "tool": "localbias",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {name: {"path": str(p), "sha256": _digest(p)} for name, p in inputs.items()},
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _write_outputs(out: str, files: dict[str, str]):
    """Write all outputs at once, after every computation has succeeded."""
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (outdir / name).write_text(text, encoding="utf-8")


def _load(cfg: RunConfig) -> Cohort:
    cohort = load_cohort(cfg.input, cfg.format)
    if cfg.attribute:
        if not cfg.a_values:
            raise UsageError("--attribute requires --a-values")
        cohort = relabel_groups(cohort, cfg.attribute, cfg.a_values)
    elif cfg.a_values:
        raise UsageError("--a-values requires --attribute")
    return cohort


def run_audit(cohort: Cohort, h: Hyperparams, thresholds: BiasThresholds, method: str, baseline=None) -> AuditReport:
    """Fit, audit and characterize one method against a same-seed K-Means baseline."""
    result = fit(cohort, h)
    if baseline is None:
        baseline = result if method == "kmeans" else fit(cohort, replace(h, lam=0.0, gamma=0.0))
    report = audit_clusters(result, cohort, thresholds, method=method)
    report.normalized_inertia = normalized_inertia(result, baseline)
    if sum(c.bias_score is not None for c in report.clusters) >= 2:
        report.characterization = characterize(result, cohort, report)
    return report


def _report_files(report: AuditReport, stem: str = "report") -> dict[str, str]:
    return {
        f"{stem}.json": report_to_json(report),
        f"{stem}.md": report_to_markdown(report),
        "clusters.csv": clusters_to_csv(report),
    }


def cmd_audit(cfg: RunConfig) -> int:
    cohort = _load(cfg)
    thresholds = parse_thresholds(cfg.thresholds, cohort, cfg.seed)
    report = run_audit(cohort, cfg.hyperparams(), thresholds, cfg.method)
    files = _report_files(report)
    files["manifest.json"] = _manifest("audit", _config_dict(cfg), {"input": cfg.input})
    _write_outputs(cfg.out, files)
    print(f"{report.n_flagged}/{len(report.clusters)} clusters flagged; outputs in {cfg.out}")
    return EXIT_OK if report.n_flagged else EXIT_NOTHING_FLAGGED


def cmd_tune(cfg: RunConfig, grid_path: str | None, n_jobs: int = 1) -> int:
    cohort = _load(cfg)
    grid = load_grid(grid_path) if grid_path else GridSpec()
    grid = replace(grid, base=replace(cfg.hyperparams(), lam=0.0, gamma=0.0))
    thresholds = parse_thresholds(cfg.thresholds, cohort, cfg.seed)
    found = grid_search(cohort, grid, thresholds, n_jobs=n_jobs)
    report = found.report
    if sum(c.bias_score is not None for c in report.clusters) >= 2:
        report.characterization = characterize(found.result, cohort, report)
    files = {"grid.csv": table_to_csv(found.table())}
    files.update(_report_files(report, "best-report"))
    inputs = {"input": cfg.input}
    if grid_path:
        inputs["grid"] = grid_path
    config = _config_dict(cfg)
    config["grid"] = {"lambdas": list(grid.lambdas), "gammas": list(grid.gammas)}
    files["manifest.json"] = _manifest("tune", config, inputs)
    _write_outputs(cfg.out, files)
    note = " (no cell flagged any cluster)" if found.no_flagged else ""
    print(f"best lambda={found.best.lam:g} gamma={found.best.gamma:g}{note}; outputs in {cfg.out}")
    return EXIT_NOTHING_FLAGGED if found.no_flagged else EXIT_OK


def cmd_synth(spec_path: str, seed: int, out: str, fmt: str | None, n: int | None) -> int:
    spec = demo_spec() if spec_path == "demo" else load_spec(spec_path)
    if n is not None:
        spec = replace(spec, n=n)
    cohort, truth = generate(spec, seed)
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_cohort(cohort, out_path, fmt, extra_attributes={TRUTH_ATTRIBUTE: truth})
    print(f"wrote {cohort.n} instances to {out_path}")
    return EXIT_OK


def compare_markdown(reports: dict[str, AuditReport]) -> str:
    names = list(reports)
    header = "| Metric | " + " | ".join(names) + " |"
    rule = "|---" * (len(names) + 1) + "|"
    rows = [
        ("Inertia", lambda r: num(r.normalized_inertia)),
        ("SCR", lambda r: pct(r.scr)),
        ("SIR", lambda r: pct(r.sir)),
        ("\\|Bias\\|", lambda r: pct(r.avg_abs_bias)),
        ("Max \\|Bias\\|", lambda r: pct(r.max_abs_bias)),
    ]
    lines = [header, rule]
    for label, get in rows:
        lines.append(f"| {label} | " + " | ".join(get(reports[m]) for m in names) + " |")
    first = next(iter(reports.values()))
    lines += ["", f"Global bias: {pct(first.global_bias)}% (Acc-A {pct(first.global_acc_a)}%, Acc-B {pct(first.global_acc_b)}%)"]
    return "SCR, SIR and |Bias| in %.\n\n" + "\n".join(lines) + "\n"


def cmd_compare(cfg: RunConfig, methods: list[str]) -> int:
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; expected a subset of {METHODS}")
    if not methods:
        raise UsageError("--methods must name at least one method")
    cohort = _load(cfg)
    thresholds = parse_thresholds(cfg.thresholds, cohort, cfg.seed)
    base_h = replace(cfg.hyperparams(), lam=0.0, gamma=0.0)
    baseline = fit(cohort, base_h)
    reports = {}
    for m in methods:
        h = replace(cfg, method=m).hyperparams()
        reports[m] = run_audit(cohort, h, thresholds, m, baseline=baseline)
    files = {
        "compare.md": compare_markdown(reports),
        "compare.json": json.dumps({m: report_to_dict(r) for m, r in reports.items()}, indent=2) + "\n",
    }
    config = _config_dict(cfg)
    config["methods"] = methods
    files["manifest.json"] = _manifest("compare", config, {"input": cfg.input})
    _write_outputs(cfg.out, files)
    print(f"compared {', '.join(methods)}; outputs in {cfg.out}")
    return EXIT_OK


def _config_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["lambda"] = d.pop("lam")
    d["a_values"] = list(d["a_values"])
    return d


def _add_run_flags(p: argparse.ArgumentParser, *, method: bool = True):
    p.add_argument("--input", required=True, help="cohort file (CSV or JSON lines)")
    p.add_argument("--format", choices=FORMATS, help="input format (default: from file extension)")
    p.add_argument("--attribute", help="re-derive groups from this attribute (one-vs-rest)")
    p.add_argument("--a-values", default="", help="comma-separated attribute values forming group A")
    if method:
        p.add_argument("--method", choices=METHODS, default="slogan")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--lambda", dest="lam", type=float, default=-30.0, help="bias weight (<= 0)")
    p.add_argument("--gamma", type=float, default=50.0, help="severity weight (>= 0)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--max-iter", type=int, default=300)
    p.add_argument("--thresholds", default="0.1:0.8", help="'acc:sev' pair or 'bootstrap[:reps]'")
    p.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="localbias", description="Detect local group biases by constrained clustering.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("audit", help="fit one method and write report.json / report.md / clusters.csv")
    _add_run_flags(p)

    p = sub.add_parser("tune", help="grid search lambda/gamma; writes grid.csv and best-report.json")
    _add_run_flags(p, method=False)
    p.add_argument("--grid", help='JSON file {"lambdas": [...], "gammas": [...]} (default: -100..0 x 0..100 step 10)')
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes for grid cells")

    p = sub.add_parser("synth", help="generate a synthetic cohort with planted biases")
    p.add_argument("--spec", default="demo", help="synthetic spec JSON, or 'demo' for the shipped demo")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=None, help="override the spec's instance count")
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--out", required=True, help="cohort file to write")

    p = sub.add_parser("compare", help="kmeans / logan / slogan side by side")
    _add_run_flags(p, method=False)
    p.add_argument("--methods", default=",".join(METHODS), help="comma-separated subset of methods")
    return parser


def _run_config(args, method: str) -> RunConfig:
    return RunConfig(
        input=args.input,
        format=args.format,
        attribute=args.attribute,
        a_values=tuple(v.strip() for v in args.a_values.split(",") if v.strip()),
        method=method,
        k=args.k,
        lam=args.lam,
        gamma=args.gamma,
        seed=args.seed,
        restarts=args.restarts,
        max_iter=args.max_iter,
        thresholds=args.thresholds,
        out=args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(args.spec, args.seed, args.out, args.format, args.n)
        if args.command == "audit":
            return cmd_audit(_run_config(args, args.method))
        if args.command == "tune":
            return cmd_tune(_run_config(args, "slogan"), args.grid, args.jobs)
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        return cmd_compare(_run_config(args, "slogan"), methods)
    except (CohortError, UsageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
