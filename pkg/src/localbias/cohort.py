"""Audited dataset: instances with embeddings, group tags, correctness and severity."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

GROUP_A = "A"
GROUP_B = "B"
FORMATS = ("csv", "jsonl")

_REQUIRED = ("id", "group", "correct", "severity")


class CohortError(ValueError):
    """Raised for malformed cohort files or invariant violations."""


@dataclass(frozen=True)
class Instance:
    id: str
    embedding: tuple[float, ...]
    group: str
    correct: bool
    severity: float
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.group not in (GROUP_A, GROUP_B):
            raise CohortError(f"instance {self.id!r}: group must be 'A' or 'B', got {self.group!r}")
        if not all(math.isfinite(v) for v in self.embedding):
            raise CohortError(f"instance {self.id!r}: embedding has non-finite entries")
        if not math.isfinite(self.severity) or self.severity < 0:
            raise CohortError(f"instance {self.id!r}: severity must be finite and >= 0")


@dataclass(frozen=True)
class Cohort:
    """Validated, immutable collection of instances.

    Numeric views (``X``, ``is_a``, ``correct``, ``severity``) are built lazily
    and are read-only, so a cohort can be shared between concurrent fits.
    """

    instances: tuple[Instance, ...]
    dim: int
    attribute_schema: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        object.__setattr__(self, "attribute_schema", frozenset(self.attribute_schema))
        if self.dim < 1:
            raise CohortError("embedding dimension must be positive")
        seen = set()
        n_a = 0
        for pos, inst in enumerate(self.instances, start=1):
            if len(inst.embedding) != self.dim:
                raise CohortError(
                    f"row {pos} ({inst.id!r}): embedding has {len(inst.embedding)} entries, expected {self.dim}"
                )
            if inst.id in seen:
                raise CohortError(f"row {pos}: duplicate id {inst.id!r}")
            seen.add(inst.id)
            extra = set(inst.attributes) - self.attribute_schema
            if extra:
                raise CohortError(f"row {pos} ({inst.id!r}): attributes {sorted(extra)} not in schema")
            n_a += inst.group == GROUP_A
        if n_a == 0 or n_a == len(self.instances):
            missing = GROUP_A if n_a == 0 else GROUP_B
            raise CohortError(f"group {missing} is empty; both groups are required for an audit")

    def __len__(self):
        return len(self.instances)

    @property
    def n(self) -> int:
        return len(self.instances)

    @cached_property
    def X(self) -> np.ndarray:
        return _frozen(np.array([inst.embedding for inst in self.instances], dtype=np.float64))

    @cached_property
    def is_a(self) -> np.ndarray:
        return _frozen(np.array([inst.group == GROUP_A for inst in self.instances], dtype=bool))

    @cached_property
    def correct(self) -> np.ndarray:
        return _frozen(np.array([inst.correct for inst in self.instances], dtype=bool))

    @cached_property
    def severity(self) -> np.ndarray:
        return _frozen(np.array([inst.severity for inst in self.instances], dtype=np.float64))

    def attribute_values(self, name: str) -> list[str | None]:
        return [inst.attributes.get(name) for inst in self.instances]

    @classmethod
    def from_arrays(cls, X, is_a, correct, severity, attributes=None, ids=None) -> "Cohort":
        """Build a cohort straight from arrays (synthetic data, tests)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise CohortError("embeddings must be a 2-d array")
        n = X.shape[0]
        attributes = attributes or [{} for _ in range(n)]
        ids = ids if ids is not None else [f"i{i:06d}" for i in range(n)]
        schema = set()
        instances = []
        for i in range(n):
            attrs = {str(k): _fold(v) for k, v in attributes[i].items()}
            schema.update(attrs)
            instances.append(
                Instance(
                    id=str(ids[i]),
                    embedding=tuple(float(v) for v in X[i]),
                    group=GROUP_A if is_a[i] else GROUP_B,
                    correct=bool(correct[i]),
                    severity=float(severity[i]),
                    attributes=attrs,
                )
            )
        return cls(tuple(instances), X.shape[1], frozenset(schema))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _fold(value) -> str:
    return str(value).strip().casefold()


def _parse_bool(raw: str, where: str) -> bool:
    raw = raw.strip()
    if raw in ("0", "1"):
        return raw == "1"
    raise CohortError(f"{where}: correct must be 0 or 1, got {raw!r}")


def _parse_float(raw, where: str, what: str) -> float:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise CohortError(f"{where}: {what} is not a number: {raw!r}") from None
    if not math.isfinite(value):
        raise CohortError(f"{where}: {what} is not finite")
    return value


def _parse_group(raw, where: str) -> str:
    group = str(raw).strip().upper()
    if group not in (GROUP_A, GROUP_B):
        raise CohortError(f"{where}: group must be A or B, got {raw!r}")
    return group


def _build(rows: list[tuple[str, dict]], dim: int, schema: set[str]) -> Cohort:
    instances = []
    ids = {}
    for where, row in rows:
        if row["id"] in ids:
            raise CohortError(f"{where}: duplicate id {row['id']!r} (first seen at {ids[row['id']]})")
        ids[row["id"]] = where
        try:
            instances.append(Instance(**row))
        except CohortError as exc:
            raise CohortError(f"{where}: {exc}") from None
    return Cohort(tuple(instances), dim, frozenset(schema))


def _load_csv(path: Path) -> Cohort:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CohortError(f"{path}: empty file") from None
        for col in _REQUIRED:
            if col not in header:
                raise CohortError(f"{path}: missing required column {col!r}")
        emb_cols = [h for h in header if h.startswith("emb_")]
        dim = len(emb_cols)
        if dim == 0:
            raise CohortError(f"{path}: no embedding columns (emb_0, emb_1, ...)")
        expected = [f"emb_{j}" for j in range(dim)]
        if sorted(emb_cols, key=lambda c: int(c[4:]) if c[4:].isdigit() else -1) != expected:
            raise CohortError(f"{path}: embedding columns must be emb_0..emb_{dim - 1}")
        emb_idx = [header.index(c) for c in expected]
        attr_idx = {h[5:]: i for i, h in enumerate(header) if h.startswith("attr_")}
        col = {name: header.index(name) for name in _REQUIRED}

        rows = []
        for rownum, record in enumerate(reader, start=1):
            where = f"row {rownum} (line {reader.line_num})"
            if not record or all(not cell.strip() for cell in record):
                continue
            if len(record) != len(header):
                raise CohortError(
                    f"{where}: expected {len(header)} fields ({dim} embedding entries), got {len(record)}; "
                    "embedding dimension mismatch"
                )
            embedding = tuple(_parse_float(record[i], where, header[i]) for i in emb_idx)
            attrs = {name: _fold(record[i]) for name, i in attr_idx.items() if record[i].strip() != ""}
            rows.append(
                (
                    where,
                    dict(
                        id=record[col["id"]].strip(),
                        embedding=embedding,
                        group=_parse_group(record[col["group"]], where),
                        correct=_parse_bool(record[col["correct"]], where),
                        severity=_parse_float(record[col["severity"]], where, "severity"),
                        attributes=attrs,
                    ),
                )
            )
    return _build(rows, dim, set(attr_idx))


def _load_jsonl(path: Path) -> Cohort:
    rows = []
    schema: set[str] = set()
    dim = None
    with path.open(encoding="utf-8") as fh:
        rownum = 0
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rownum += 1
            where = f"row {rownum} (line {lineno})"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CohortError(f"{where}: invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise CohortError(f"{where}: expected a JSON object")
            for key in (*_REQUIRED, "embedding"):
                if key not in obj:
                    raise CohortError(f"{where}: missing required key {key!r}")
            emb = obj["embedding"]
            if not isinstance(emb, list) or not emb:
                raise CohortError(f"{where}: embedding must be a non-empty array")
            if dim is None:
                dim = len(emb)
            elif len(emb) != dim:
                raise CohortError(f"{where}: embedding has {len(emb)} entries, expected {dim}; dimension mismatch")
            correct = obj["correct"]
            if isinstance(correct, bool):
                correct = int(correct)
            attrs_raw = obj.get("attributes") or {}
            if not isinstance(attrs_raw, dict):
                raise CohortError(f"{where}: attributes must be an object")
            attrs = {str(k): _fold(v) for k, v in attrs_raw.items() if v is not None}
            schema.update(attrs)
            rows.append(
                (
                    where,
                    dict(
                        id=str(obj["id"]),
                        embedding=tuple(_parse_float(v, where, "embedding entry") for v in emb),
                        group=_parse_group(obj["group"], where),
                        correct=_parse_bool(str(correct), where),
                        severity=_parse_float(obj["severity"], where, "severity"),
                        attributes=attrs,
                    ),
                )
            )
    if dim is None:
        raise CohortError(f"{path}: no instances")
    return _build(rows, dim, schema)


def infer_format(path) -> str:
    suffix = Path(path).suffix.lower()
    return "jsonl" if suffix in (".jsonl", ".json", ".ndjson") else "csv"


def load_cohort(path, format: str | None = None) -> Cohort:
    """Load and validate a cohort file; instance order follows the file."""
    path = Path(path)
    format = format or infer_format(path)
    if format not in FORMATS:
        raise CohortError(f"unknown format {format!r}; expected one of {FORMATS}")
    if not path.is_file():
        raise CohortError(f"{path}: no such file")
    if format == "csv":
        return _load_csv(path)
    return _load_jsonl(path)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_cohort(cohort: Cohort, path, format: str | None = None, extra_attributes: Mapping[str, Iterable] | None = None):
    """Serialize ``cohort`` so that :func:`load_cohort` reads it back unchanged.

    ``extra_attributes`` adds per-instance attribute columns (e.g. ground-truth labels).
    """
    path = Path(path)
    format = format or infer_format(path)
    extras = {name: [str(v) for v in values] for name, values in (extra_attributes or {}).items()}
    for name, values in extras.items():
        if len(values) != cohort.n:
            raise CohortError(f"extra attribute {name!r} has {len(values)} values for {cohort.n} instances")
    attr_names = sorted(set(cohort.attribute_schema) | set(extras))

    def attrs_of(i, inst):
        out = dict(inst.attributes)
        for name, values in extras.items():
            out[name] = values[i]
        return out

    if format == "csv":
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["id", "group", "correct", "severity"]
                + [f"emb_{j}" for j in range(cohort.dim)]
                + [f"attr_{a}" for a in attr_names]
            )
            for i, inst in enumerate(cohort.instances):
                attrs = attrs_of(i, inst)
                writer.writerow(
                    [inst.id, inst.group, int(inst.correct), _fmt(inst.severity)]
                    + [_fmt(v) for v in inst.embedding]
                    + [attrs.get(a, "") for a in attr_names]
                )
    elif format == "jsonl":
        with path.open("w", encoding="utf-8") as fh:
            for i, inst in enumerate(cohort.instances):
                obj = {
                    "id": inst.id,
                    "group": inst.group,
                    "correct": int(inst.correct),
                    "severity": float(inst.severity),
                    "embedding": [float(v) for v in inst.embedding],
                    "attributes": dict(sorted(attrs_of(i, inst).items())),
                }
                fh.write(json.dumps(obj) + "\n")
    else:
        raise CohortError(f"unknown format {format!r}; expected one of {FORMATS}")


def relabel_groups(cohort: Cohort, attribute: str, a_values: Iterable[str]) -> Cohort:
    """One-vs-rest split: instances whose ``attribute`` is in ``a_values`` become group A."""
    if attribute not in cohort.attribute_schema:
        raise CohortError(f"unknown attribute {attribute!r}; known: {sorted(cohort.attribute_schema)}")
    wanted = {_fold(v) for v in a_values}
    instances = tuple(
        replace(inst, group=GROUP_A if inst.attributes.get(attribute) in wanted else GROUP_B)
        for inst in cohort.instances
    )
    return Cohort(instances, cohort.dim, cohort.attribute_schema)
