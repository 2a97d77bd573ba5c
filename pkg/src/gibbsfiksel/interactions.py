"""Multitype pair potentials and the interaction statistics of the log-linear model.

Conventions for interval ends:

* Fiksel: ``-inf`` on ``[0, h)``, ``c exp(-gamma r)`` on ``[h, R)``, 0 beyond.
* Strauss: ``log gamma`` on ``r <= R``.
* Hardcore: ``-inf`` on ``r <= R``.
* Strauss-hardcore: ``-inf`` on ``[0, h)``, ``log gamma`` on ``[h, R]``.

Hardcore tests inside the statistics allow ``BOUNDARY_TOL`` of slack so that
a hardcore estimated as an observed distance never excludes the pair that
produced it.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .geometry import BOUNDARY_TOL
from .patterns import min_cross_nn_distance

__all__ = [
    "HARDCORE_TOL",
    "InteractionKind",
    "InteractionSpec",
    "HardcoreError",
    "fiksel_phi",
    "table2_phi",
    "estimate_hardcore",
    "pair_terms",
    "NeighbourTable",
    "sufficient_statistics",
]

HARDCORE_TOL = BOUNDARY_TOL


class HardcoreError(ValueError):
    pass


class InteractionKind(str, enum.Enum):
    FIKSEL = "fiksel"
    FIKSEL_WITHIN = "fiksel_within"
    STRAUSS = "strauss"
    HARDCORE = "hardcore"
    STRAUSS_HARDCORE = "strauss_hardcore"
    NONE = "none"

    @property
    def code(self):
        return list(InteractionKind).index(self)


_NEEDS = {
    InteractionKind.FIKSEL: ("hardcore", "interaction_range", "rate"),
    InteractionKind.FIKSEL_WITHIN: ("hardcore", "interaction_range", "rate"),
    InteractionKind.STRAUSS: ("interaction_range",),
    InteractionKind.HARDCORE: ("interaction_range",),
    InteractionKind.STRAUSS_HARDCORE: ("hardcore", "interaction_range"),
    InteractionKind.NONE: (),
}

_PREFIX = {
    InteractionKind.FIKSEL: "fiksel",
    InteractionKind.FIKSEL_WITHIN: "fiksel",
    InteractionKind.STRAUSS: "strauss",
    InteractionKind.STRAUSS_HARDCORE: "strauss",
}


def _as_matrix(value, m, name):
    if value is None:
        return None
    a = np.array(value, dtype=float)
    if a.ndim == 0:
        a = np.full((m, m), float(a))
    if a.shape != (m, m):
        raise ValueError(f"{name} must be a scalar or a {m}x{m} matrix")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if np.any(~np.isfinite(a)):
        raise ValueError(f"{name} has missing or infinite entries")
    a = 0.5 * (a + a.T)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class InteractionSpec:
    """A multitype pair potential with its irregular parameter matrices.

    Strength coefficients are regular parameters and are not stored here;
    ``pairs`` lists the unordered mark pairs that carry one.
    """

    kind: InteractionKind
    n_marks: int
    hardcore: np.ndarray | None = None
    interaction_range: np.ndarray | None = None
    rate: np.ndarray | None = None
    pairs: tuple = field(init=False)
    column_of: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        kind = InteractionKind(self.kind)
        object.__setattr__(self, "kind", kind)
        m = int(self.n_marks)
        for name in ("hardcore", "interaction_range", "rate"):
            mat = _as_matrix(getattr(self, name), m, name)
            if name in _NEEDS[kind] and mat is None:
                raise ValueError(f"{kind.value} interaction requires {name}")
            if name not in _NEEDS[kind]:
                mat = None
            object.__setattr__(self, name, mat)
        h, r = self.hardcore, self.interaction_range
        if h is not None and np.any(h < 0):
            raise ValueError("hardcore distances must be non-negative")
        if r is not None and np.any(r < 0):
            raise ValueError("interaction ranges must be non-negative")
        if h is not None and r is not None and np.any(r <= h):
            raise ValueError("interaction range must exceed the hardcore distance")
        if kind in (InteractionKind.FIKSEL, InteractionKind.STRAUSS, InteractionKind.STRAUSS_HARDCORE):
            pairs = tuple((i, j) for i in range(m) for j in range(i, m))
        elif kind is InteractionKind.FIKSEL_WITHIN:
            pairs = tuple((i, i) for i in range(m))
        else:
            pairs = ()
        col = -np.ones((m, m), dtype=np.int64)
        for k, (i, j) in enumerate(pairs):
            col[i, j] = col[j, i] = k
        col.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "column_of", col)

    @classmethod
    def none(cls, n_marks):
        return cls(InteractionKind.NONE, n_marks)

    @property
    def n_coef(self):
        return len(self.pairs)

    @property
    def reach(self):
        """Largest distance at which any pair can matter."""
        vals = [0.0]
        for mat in (self.hardcore, self.interaction_range):
            if mat is not None:
                vals.append(float(mat.max()))
        return max(vals)

    def coef_names(self, labels):
        prefix = _PREFIX.get(self.kind, "")
        return [f"{prefix}[{labels[i]}:{labels[j]}]" for i, j in self.pairs]

    def with_params(self, **kw):
        return replace(self, **kw)

    def with_shared_hardcore(self):
        """All hardcore entries replaced by the smallest one."""
        if self.hardcore is None:
            return self
        return self.with_params(hardcore=float(self.hardcore.min()))

    def set_pair(self, i, j, **values):
        """Copy with entry ``(i, j)`` (and ``(j, i)``) of the named matrices changed."""
        kw = {}
        for name, v in values.items():
            mat = np.array(getattr(self, name))
            mat[i, j] = mat[j, i] = v
            kw[name] = mat
        return self.with_params(**kw)

    def strength_matrix(self, coef):
        """Expand a strength vector (aligned with ``pairs``) to an M x M matrix."""
        coef = np.asarray(coef, dtype=float)
        if coef.shape != (self.n_coef,):
            raise ValueError(f"expected {self.n_coef} strength coefficients")
        out = np.zeros((self.n_marks, self.n_marks))
        for k, (i, j) in enumerate(self.pairs):
            out[i, j] = out[j, i] = coef[k]
        return out

    def to_dict(self, labels=None):
        d = {"kind": self.kind.value, "n_marks": self.n_marks}
        if labels is not None:
            d["marks"] = list(labels)
        for name in ("hardcore", "interaction_range", "rate"):
            mat = getattr(self, name)
            if mat is not None:
                d[name] = mat.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            InteractionKind(d["kind"]),
            int(d["n_marks"]),
            d.get("hardcore"),
            d.get("interaction_range"),
            d.get("rate"),
        )


def fiksel_phi(i, j, r, hardcore, strength, rate, interaction_range):
    """Multitype Fiksel pair potential for marks ``i, j`` at distance ``r``."""
    r = np.asarray(r, dtype=float)
    h = np.asarray(hardcore, dtype=float)[i, j]
    c = np.asarray(strength, dtype=float)[i, j]
    g = np.asarray(rate, dtype=float)[i, j]
    big_r = np.asarray(interaction_range, dtype=float)[i, j]
    out = np.where(r < h, -np.inf, np.where(r < big_r, c * np.exp(-g * r), 0.0))
    return out[()] if out.ndim == 0 else out


def table2_phi(kind, i, j, r, interaction_range, gamma=None, hardcore=None):
    """Strauss, hardcore and Strauss-hardcore pair potentials."""
    kind = InteractionKind(kind)
    r = np.asarray(r, dtype=float)
    big_r = np.asarray(interaction_range, dtype=float)[i, j]
    if kind is InteractionKind.STRAUSS:
        out = np.where(r <= big_r, np.log(np.asarray(gamma, dtype=float)[i, j]), 0.0)
    elif kind is InteractionKind.HARDCORE:
        out = np.where(r <= big_r, -np.inf, 0.0)
    elif kind is InteractionKind.STRAUSS_HARDCORE:
        h = np.asarray(hardcore, dtype=float)[i, j]
        lg = np.log(np.asarray(gamma, dtype=float)[i, j])
        out = np.where(r < h, -np.inf, np.where(r <= big_r, lg, 0.0))
    else:
        raise ValueError(f"{kind.value} is not one of the alternative potentials")
    return out[()] if out.ndim == 0 else out


def estimate_hardcore(cohort):
    """Smallest observed cross-type nearest-neighbour distance over all patients.

    Pairs never observable in any patient are NaN (with a warning).  A zero
    distance, i.e. duplicated points, raises ``HardcoreError`` naming the
    patient.
    """
    m = len(cohort.mark_set)
    h = np.full((m, m), np.inf)
    for pattern in cohort.patterns:
        for i in range(m):
            for j in range(i, m):
                d = min_cross_nn_distance(pattern, i, j)
                if math.isnan(d):
                    continue
                if d == 0:
                    raise HardcoreError(
                        f"patient {pattern.id!r} has coincident points of types "
                        f"{cohort.mark_set[i]!r} and {cohort.mark_set[j]!r}"
                    )
                h[i, j] = h[j, i] = min(h[i, j], d)
    missing = ~np.isfinite(h)
    if missing.any():
        names = sorted({(cohort.mark_set[i], cohort.mark_set[j]) for i, j in zip(*np.nonzero(missing)) if i <= j})
        warnings.warn(f"hardcore undefined for pairs {names}", stacklevel=2)
        h[missing] = np.nan
    return h


def pair_terms(spec, d, mark_q, mark_x):
    """Per-pair statistic contributions.

    Returns ``(column, value, hard)``: the coefficient column each pair feeds
    (-1 for none), its additive contribution to that column, and whether it
    violates a hardcore.
    """
    kind = spec.kind
    d = np.asarray(d, dtype=float)
    n = len(d)
    col = spec.column_of[mark_q, mark_x] if spec.n_coef else -np.ones(n, dtype=np.int64)
    hard = np.zeros(n, dtype=bool)
    value = np.zeros(n)
    if kind in (InteractionKind.FIKSEL, InteractionKind.FIKSEL_WITHIN):
        hard = d < spec.hardcore[mark_q, mark_x] - HARDCORE_TOL
        active = ~hard & (d < spec.interaction_range[mark_q, mark_x])
        value = np.where(active, np.exp(-spec.rate[mark_q, mark_x] * d), 0.0)
    elif kind is InteractionKind.STRAUSS:
        value = (d <= spec.interaction_range[mark_q, mark_x]).astype(float)
    elif kind is InteractionKind.HARDCORE:
        hard = d <= spec.interaction_range[mark_q, mark_x] - HARDCORE_TOL
    elif kind is InteractionKind.STRAUSS_HARDCORE:
        hard = d < spec.hardcore[mark_q, mark_x] - HARDCORE_TOL
        value = (~hard & (d <= spec.interaction_range[mark_q, mark_x])).astype(float)
    value = np.where(col >= 0, value, 0.0)
    return col, value, hard


class NeighbourTable:
    """All (query point, data point) pairs closer than ``reach``.

    Built once per pattern and quadrature; statistics for any spec whose
    reach does not exceed the table's are then pure array reductions.
    ``self_index`` gives, for each query point, the pattern index it
    coincides with (-1 for dummy points); that pair is left out.
    """

    def __init__(self, query_coords, query_marks, pattern, reach, self_index=None):
        self.query_coords = np.asarray(query_coords, dtype=float).reshape(-1, 2)
        self.query_marks = np.asarray(query_marks, dtype=np.int64)
        self.n_query = len(self.query_coords)
        self.reach = float(reach)
        if self_index is None:
            self_index = -np.ones(self.n_query, dtype=np.int64)
        if len(pattern) and self.n_query and self.reach > 0:
            found = cKDTree(self.query_coords).sparse_distance_matrix(
                cKDTree(pattern.coords), self.reach, output_type="ndarray"
            )
            qi = found["i"].astype(np.int64)
            xi = found["j"].astype(np.int64)
            keep = xi != np.asarray(self_index)[qi]
            self.qi, self.xi, self.d = qi[keep], xi[keep], found["v"][keep]
        else:
            self.qi = self.xi = np.zeros(0, dtype=np.int64)
            self.d = np.zeros(0)
        self.mark_x = pattern.marks[self.xi] if len(self.xi) else np.zeros(0, dtype=np.int64)
        self.mark_q = self.query_marks[self.qi]

    def statistics(self, spec):
        """Statistic matrix ``(n_query, spec.n_coef)`` and hardcore flags."""
        if spec.reach > self.reach * (1 + 1e-12):
            raise ValueError(f"spec reach {spec.reach} exceeds neighbour table reach {self.reach}")
        p = spec.n_coef
        if spec.kind is InteractionKind.NONE or len(self.d) == 0:
            return np.zeros((self.n_query, p)), np.zeros(self.n_query, dtype=bool)
        col, value, hard = pair_terms(spec, self.d, self.mark_q, self.mark_x)
        flags = np.bincount(self.qi[hard], minlength=self.n_query) > 0
        if p == 0:
            return np.zeros((self.n_query, 0)), flags
        sel = col >= 0
        flat = np.bincount(self.qi[sel] * p + col[sel], weights=value[sel], minlength=self.n_query * p)
        return flat.reshape(self.n_query, p), flags


def sufficient_statistics(u, m, pattern, spec):
    """Interaction statistics of a marked location against a pattern.

    If ``(u, m)`` coincides with a data point, that one point is left out.
    Returns ``(vector, hardcore_flag)``.
    """
    u = np.asarray(u, dtype=float).reshape(1, 2)
    m = pattern.mark_set.index(m)
    same = np.flatnonzero((pattern.coords[:, 0] == u[0, 0]) & (pattern.coords[:, 1] == u[0, 1]) & (pattern.marks == m))
    self_index = np.array([same[0] if len(same) else -1])
    table = NeighbourTable(u, np.array([m]), pattern, spec.reach, self_index)
    s, flag = table.statistics(spec)
    return s[0], bool(flag[0])
