"""Marked point patterns, clinical covariates and cohort ingestion."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PolygonalWindow, intersect_windows, ripley_rasson_window

__all__ = [
    "STAGES",
    "SchemaError",
    "EmptyPatternError",
    "MarkSet",
    "MarkedPointPattern",
    "ClinicalCovariates",
    "Cohort",
    "load_pattern",
    "save_pattern",
    "load_covariates",
    "load_manifest",
    "restrict",
    "min_cross_nn_distance",
]

STAGES = ("IA", "IB", "IIA", "IIB", "IIIA", "IIIB", "IV")


class SchemaError(ValueError):
    pass


class EmptyPatternError(ValueError):
    pass


@dataclass(frozen=True)
class MarkSet:
    """Ordered, distinct type labels.  The order indexes every parameter matrix."""

    labels: tuple[str, ...]

    def __init__(self, labels: Sequence[str]):
        labels = tuple(str(lab) for lab in labels)
        if not labels:
            raise ValueError("mark set must be nonempty")
        if len(set(labels)) != len(labels):
            raise ValueError(f"mark labels must be unique: {labels}")
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __getitem__(self, k):
        return self.labels[k]

    def index(self, label) -> int:
        """Mark index of ``label`` (an int is passed through after a range check)."""
        if isinstance(label, (int, np.integer)):
            if not 0 <= label < len(self.labels):
                raise SchemaError(f"mark index {label} out of range")
            return int(label)
        try:
            return self.labels.index(label)
        except ValueError:
            raise SchemaError(f"unknown phenotype label {label!r}; expected one of {self.labels}") from None


@dataclass(frozen=True, eq=False)
class MarkedPointPattern:
    """Locations with type labels observed in a polygonal window."""

    coords: np.ndarray
    marks: np.ndarray
    window: PolygonalWindow
    mark_set: MarkSet
    id: str = ""

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        marks = np.asarray(self.marks, dtype=np.int64).reshape(-1)
        if len(coords) != len(marks):
            raise ValueError("coords and marks differ in length")
        if not np.all(np.isfinite(coords)):
            raise ValueError("coordinates must be finite")
        if len(marks) and (marks.min() < 0 or marks.max() >= len(self.mark_set)):
            raise SchemaError("mark index out of range for the mark set")
        if len(coords) and not np.all(self.window.contains(coords)):
            raise ValueError(f"pattern {self.id!r} has points outside its window")
        coords.setflags(write=False)
        marks.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "marks", marks)

    def __len__(self):
        return len(self.marks)

    @property
    def n_marks(self):
        return len(self.mark_set)

    def counts(self):
        return np.bincount(self.marks, minlength=self.n_marks)

    def of_mark(self, mark):
        return self.coords[self.marks == self.mark_set.index(mark)]

    def with_window(self, window):
        return MarkedPointPattern(self.coords, self.marks, window, self.mark_set, self.id)


@dataclass(frozen=True)
class ClinicalCovariates:
    """Per-patient design covariates.

    ``encode`` gives treatment contrasts for stage (IA is the baseline),
    0/1 for the binary factors and the raw numbers for age and survival days.
    """

    gender: int
    age_at_diagnosis: float
    stage: str
    mhcii_status: int
    survival_days: float
    death: int
    recurrence_or_death: int
    adjuvant_therapy: int

    def __post_init__(self):
        if self.stage not in STAGES:
            raise SchemaError(f"stage {self.stage!r} not in {STAGES}")
        if not self.age_at_diagnosis > 0:
            raise SchemaError("age must be positive")
        if self.survival_days < 0:
            raise SchemaError("survival days must be non-negative")
        for name in ("gender", "mhcii_status", "death", "recurrence_or_death", "adjuvant_therapy"):
            if getattr(self, name) not in (0, 1):
                raise SchemaError(f"{name} must be 0 or 1")

    def encode(self) -> dict[str, float]:
        out = {"gender": float(self.gender), "age": float(self.age_at_diagnosis)}
        for s in STAGES[1:]:
            out[f"stage{s}"] = float(self.stage == s)
        out.update(
            mhcii=float(self.mhcii_status),
            survival_days=float(self.survival_days),
            death=float(self.death),
            recurrence_or_death=float(self.recurrence_or_death),
            adjuvant_therapy=float(self.adjuvant_therapy),
        )
        return out


def encode_covariates(cov) -> dict[str, float]:
    """Numeric covariate vector for a patient: clinical record, plain mapping or None."""
    if cov is None:
        return {}
    if isinstance(cov, ClinicalCovariates):
        return cov.encode()
    return {str(k): float(v) for k, v in dict(cov).items()}


@dataclass
class Cohort:
    """Replicated marked point patterns sharing one mark set."""

    mark_set: MarkSet
    patterns: list[MarkedPointPattern]
    covariates: list[ClinicalCovariates | Mapping[str, float] | None] = field(default_factory=list)
    window: PolygonalWindow | None = None

    def __post_init__(self):
        if not self.covariates:
            self.covariates = [None] * len(self.patterns)
        if len(self.covariates) != len(self.patterns):
            raise ValueError("one covariate record per pattern is required")
        ids = [p.id for p in self.patterns]
        if len(set(ids)) != len(ids):
            raise ValueError("patient ids must be unique")
        for p in self.patterns:
            if p.mark_set != self.mark_set:
                raise SchemaError(f"pattern {p.id!r} uses a different mark set")

    def __len__(self):
        return len(self.patterns)

    def __iter__(self):
        return iter(zip(self.patterns, self.covariates))

    @property
    def ids(self):
        return [p.id for p in self.patterns]

    def common_window(self):
        """Intersection of the patients' windows (cached on first use)."""
        if self.window is None:
            self.window = intersect_windows([p.window for p in self.patterns])
        return self.window

    def restricted(self):
        """Every pattern restricted to the common window."""
        w = self.common_window()
        pats = [restrict(p, w) for p in self.patterns]
        return Cohort(self.mark_set, pats, list(self.covariates), w)


def _read_rows(source):
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            text = fh.read()
    elif hasattr(source, "read"):
        text = source.read()
    else:
        return source
    lines = [ln for ln in io.StringIO(text) if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def load_pattern(source, mark_set: MarkSet, window: PolygonalWindow | None = None, id: str = ""):
    """Read a cell table with columns ``x, y, phenotype``.

    ``source`` is a path, an open text file, or an iterable of row mappings.
    Lines starting with ``#`` are provenance comments and are skipped.  The
    window defaults to the Ripley-Rasson estimate from the points.
    """
    rows = list(_read_rows(source))
    if not rows:
        raise EmptyPatternError(f"cell table for {id!r} is empty")
    missing = {"x", "y", "phenotype"} - set(rows[0])
    if missing:
        raise SchemaError(f"cell table lacks columns {sorted(missing)}")
    try:
        coords = np.array([[float(r["x"]), float(r["y"])] for r in rows])
    except (TypeError, ValueError):
        raise SchemaError(f"cell table for {id!r} has non-numeric coordinates") from None
    marks = np.array([mark_set.index(r["phenotype"]) for r in rows])
    if window is None:
        window = ripley_rasson_window(coords)
    return MarkedPointPattern(coords, marks, window, mark_set, id)


def save_pattern(pattern: MarkedPointPattern, target, header: str | None = None):
    """Write ``pattern`` as an ``x,y,phenotype`` CSV; floats use round-trip repr."""
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    buf.write("x,y,phenotype\n")
    labels = pattern.mark_set.labels
    for (x, y), m in zip(pattern.coords.tolist(), pattern.marks.tolist()):
        buf.write(f"{x!r},{y!r},{labels[m]}\n")
    text = buf.getvalue()
    if hasattr(target, "write"):
        target.write(text)
    else:
        Path(target).write_text(text, encoding="utf-8")
    return text


_COVARIATE_COLUMNS = (
    "patient_id", "gender", "age", "stage", "mhcii", "survival_days",
    "death", "recurrence_or_death", "adjuvant_therapy",
)


_BINARY_WORDS = {
    "1": 1, "0": 0, "true": 1, "false": 0, "yes": 1, "no": 0,
    "male": 1, "masculine": 1, "m": 1, "female": 0, "feminine": 0, "f": 0,
    "low": 1, "high": 0,
}


def _binary(value, column):
    """0/1 from a number or a word; gender codes male as 1 and MHCII codes low as 1."""
    key = str(value).strip().lower()
    try:
        return _BINARY_WORDS[key]
    except KeyError:
        raise SchemaError(f"column {column!r}: cannot read {value!r} as binary") from None


def _number(value, column):
    try:
        return float(value)
    except ValueError:
        raise SchemaError(f"column {column!r}: {value!r} is not a number") from None


def load_covariates(source) -> dict[str, ClinicalCovariates]:
    rows = list(_read_rows(source))
    if not rows:
        return {}
    missing = set(_COVARIATE_COLUMNS) - set(rows[0])
    if missing:
        raise SchemaError(f"covariate table lacks columns {sorted(missing)}")
    out = {}
    for r in rows:
        out[r["patient_id"]] = ClinicalCovariates(
            gender=_binary(r["gender"], "gender"),
            age_at_diagnosis=_number(r["age"], "age"),
            stage=r["stage"].strip(),
            mhcii_status=_binary(r["mhcii"], "mhcii"),
            survival_days=_number(r["survival_days"], "survival_days"),
            death=_binary(r["death"], "death"),
            recurrence_or_death=_binary(r["recurrence_or_death"], "recurrence_or_death"),
            adjuvant_therapy=_binary(r["adjuvant_therapy"], "adjuvant_therapy"),
        )
    return out


def load_manifest(path) -> Cohort:
    """Load a cohort from a JSON manifest.

    The manifest has ``marks`` (ordered labels), ``patients`` (objects with
    ``id``, ``cells`` and optionally ``covariates_row`` and ``window``), and
    optionally ``covariates`` (path to the covariate CSV) and ``window``
    (a common window object).  Relative paths resolve against the manifest.
    """
    path = Path(path)
    spec = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent
    marks = MarkSet(spec["marks"])
    covs = {}
    if spec.get("covariates"):
        cov_path = base / spec["covariates"]
        if not cov_path.exists():
            raise SchemaError(f"covariate file {cov_path} not found")
        covs = load_covariates(cov_path)
    patterns, records = [], []
    for entry in spec["patients"]:
        pid = str(entry["id"])
        window = PolygonalWindow.from_dict(entry["window"]) if entry.get("window") else None
        patterns.append(load_pattern(base / entry["cells"], marks, window=window, id=pid))
        if covs:
            key = str(entry.get("covariates_row", pid))
            if key not in covs:
                raise SchemaError(f"no covariate row for patient {pid!r}")
            records.append(covs[key])
        else:
            records.append(None)
    common = PolygonalWindow.from_dict(spec["window"]) if spec.get("window") else None
    return Cohort(marks, patterns, records, common)


def restrict(pattern: MarkedPointPattern, window: PolygonalWindow) -> MarkedPointPattern:
    """Keep the points inside ``window`` and attach it as the new window."""
    intersect_windows([pattern.window, window])  # raises EmptyWindowError on no overlap
    keep = window.contains(pattern.coords) if len(pattern) else np.zeros(0, bool)
    return MarkedPointPattern(pattern.coords[keep], pattern.marks[keep], window, pattern.mark_set, pattern.id)


def min_cross_nn_distance(pattern: MarkedPointPattern, i, j) -> float:
    """Smallest distance between a type-``i`` and a distinct type-``j`` point.

    Returns NaN when the distance is undefined (too few points).
    """
    i = pattern.mark_set.index(i)
    j = pattern.mark_set.index(j)
    a = pattern.coords[pattern.marks == i]
    b = pattern.coords[pattern.marks == j]
    if i == j:
        if len(a) < 2:
            return math.nan
        d, _ = cKDTree(a).query(a, k=2)
        return float(d[:, 1].min())
    if len(a) == 0 or len(b) == 0:
        return math.nan
    small, large = (a, b) if len(a) <= len(b) else (b, a)
    d, _ = cKDTree(large).query(small, k=1)
    return float(d.min())
