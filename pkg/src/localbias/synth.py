"""Synthetic cohorts with planted biased subpopulations.

Each mixture component is an isotropic Gaussian blob with its own per-group
accuracy and severity distribution, so a component with ``acc_a != acc_b`` is
a known local bias that an audit should recover.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .cohort import Cohort

TRUTH_ATTRIBUTE = "truth_component"


@dataclass(frozen=True)
class Component:
    weight: float
    mean: tuple[float, ...]
    spread: float
    acc_a: float
    acc_b: float
    sev_mean_a: float
    sev_mean_b: float
    sev_std: float
    frac_a: float

    def validate(self, dim: int, idx: int):
        where = f"component {idx}"
        if not self.weight > 0:
            raise ValueError(f"{where}: weight must be positive")
        if len(self.mean) != dim:
            raise ValueError(f"{where}: mean has {len(self.mean)} entries, expected {dim}")
        if not self.spread > 0:
            raise ValueError(f"{where}: spread must be positive")
        for name in ("acc_a", "acc_b"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{where}: {name} must lie in [0, 1]")
        if self.sev_mean_a < 0 or self.sev_mean_b < 0:
            raise ValueError(f"{where}: severity means must be non-negative")
        if not self.sev_std > 0:
            raise ValueError(f"{where}: sev_std must be positive")
        if not 0.0 < self.frac_a < 1.0:
            raise ValueError(f"{where}: frac_a must lie in (0, 1)")


@dataclass(frozen=True)
class SyntheticSpec:
    components: tuple[Component, ...]
    n: int
    dim: int
    # attribute name -> one {value: probability} table per component
    attribute_decor: Mapping[str, Sequence[Mapping[str, float]]] = field(default_factory=dict)
    planted: Optional[int] = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if not self.components:
            raise ValueError("at least one component is required")
        for i, comp in enumerate(self.components):
            comp.validate(self.dim, i)
        for name, tables in self.attribute_decor.items():
            if len(tables) != len(self.components):
                raise ValueError(f"attribute {name!r}: need one distribution per component")
            for t in tables:
                if not t or any(p < 0 for p in t.values()) or sum(t.values()) <= 0:
                    raise ValueError(f"attribute {name!r}: invalid distribution {dict(t)}")
        if self.planted is not None and not 0 <= self.planted < len(self.components):
            raise ValueError("planted component index out of range")

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSpec":
        try:
            comps = tuple(
                Component(
                    weight=float(c["weight"]),
                    mean=tuple(float(v) for v in c["mean"]),
                    spread=float(c["spread"]),
                    acc_a=float(c["acc_a"]),
                    acc_b=float(c["acc_b"]),
                    sev_mean_a=float(c["sev_mean_a"]),
                    sev_mean_b=float(c["sev_mean_b"]),
                    sev_std=float(c["sev_std"]),
                    frac_a=float(c["frac_a"]),
                )
                for c in doc["components"]
            )
            return cls(
                components=comps,
                n=int(doc["n"]),
                dim=int(doc["dim"]),
                attribute_decor={k: [dict(t) for t in v] for k, v in doc.get("attribute_decor", {}).items()},
                planted=doc.get("planted"),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"invalid synthetic spec: {exc!r}") from None


def load_spec(path) -> SyntheticSpec:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read synthetic spec {path}: {exc}") from None
    return SyntheticSpec.from_dict(doc)


def demo_spec(n: int | None = None) -> SyntheticSpec:
    """Shipped four-component demo with one planted accuracy gap (component 0)."""
    doc = json.loads(resources.files("localbias").joinpath("data/demo_spec.json").read_text(encoding="utf-8"))
    if n is not None:
        doc["n"] = n
    return SyntheticSpec.from_dict(doc)


def generate(spec: SyntheticSpec, seed: int = 0) -> tuple[Cohort, np.ndarray]:
    """Sample a cohort; returns it with the true component label of every instance."""
    rng = np.random.default_rng(seed)
    comps = spec.components
    weights = np.array([c.weight for c in comps])
    weights = weights / weights.sum()
    labels = rng.choice(len(comps), size=spec.n, p=weights)

    means = np.array([c.mean for c in comps])
    spreads = np.array([c.spread for c in comps])
    X = means[labels] + spreads[labels, None] * rng.standard_normal((spec.n, spec.dim))

    is_a = rng.random(spec.n) < np.array([c.frac_a for c in comps])[labels]
    acc = np.where(is_a, [comps[l].acc_a for l in labels], [comps[l].acc_b for l in labels])
    correct = rng.random(spec.n) < acc

    sev_mean = np.where(is_a, [comps[l].sev_mean_a for l in labels], [comps[l].sev_mean_b for l in labels])
    sev_std = np.array([c.sev_std for c in comps])[labels]
    severity = np.maximum(0.0, sev_mean + sev_std * rng.standard_normal(spec.n))

    attributes = [{} for _ in range(spec.n)]
    for name in sorted(spec.attribute_decor):
        tables = spec.attribute_decor[name]
        draws = rng.random(spec.n)
        for i, lab in enumerate(labels):
            table = tables[lab]
            values = sorted(table)
            p = np.array([table[v] for v in values], dtype=float)
            cdf = np.cumsum(p / p.sum())
            attributes[i][name] = values[min(int(np.searchsorted(cdf, draws[i], side="right")), len(values) - 1)]

    ids = [f"s{i:06d}" for i in range(spec.n)]
    cohort = Cohort.from_arrays(X, is_a, correct, severity, attributes, ids)
    return cohort, labels


def recall_score(flagged_clusters, assignment, truth, planted: int) -> tuple[float, float]:
    """Share of planted instances caught by flagged clusters, and the planted share of flagged instances.

    Precision is 0 when nothing is flagged.
    """
    assignment = np.asarray(assignment)
    truth = np.asarray(truth)
    planted_mask = truth == planted
    n_planted = int(planted_mask.sum())
    if n_planted == 0:
        raise ValueError(f"no instances belong to planted component {planted}")
    in_flagged = np.isin(assignment, np.asarray(list(flagged_clusters), dtype=np.int64))
    hit = int((in_flagged & planted_mask).sum())
    n_flagged = int(in_flagged.sum())
    return hit / n_planted, (hit / n_flagged if n_flagged else 0.0)
