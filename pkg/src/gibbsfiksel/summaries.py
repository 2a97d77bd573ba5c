"""Inhomogeneous multitype K and L functions with translation edge correction."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .intensity import OFFSET_FLOOR

__all__ = [
    "SummaryFunction",
    "default_rgrid",
    "k_inhom_cross",
    "l_from_k",
    "pool_functions",
    "choose_max_range",
    "write_summaries_csv",
]


@dataclass(frozen=True, eq=False)
class SummaryFunction:
    r: np.ndarray
    values: np.ndarray
    pair: tuple
    kind: str = "K"
    pooled: bool = False
    empty: bool = False
    patient: str = ""


def default_rgrid(window, steps=512):
    """``steps`` equal steps from 0 to a quarter of the window diameter."""
    return np.linspace(0.0, window.diameter / 4, steps + 1)


def _translation_weights(window, dxy):
    area = window.area
    cov = window.set_covariance(dxy[:, 0], dxy[:, 1])
    return area / np.maximum(cov, 1e-12 * area)


def k_inhom_cross(pattern, i, j, bi, bj, rgrid, window=None):
    """Inhomogeneous cross-type K function.

    ``bi`` and ``bj`` are intensity surfaces (or callables mapping an
    ``(n, 2)`` array to intensities).  Each ordered pair within ``r``
    contributes ``1 / (b_i(u) b_j(v))`` times the translation correction
    ``|W| / |W ∩ (W + u - v)|``; the sum is divided by ``|W|``.
    """
    window = window or pattern.window
    rgrid = np.asarray(rgrid, dtype=float)
    if rgrid[0] < 0 or np.any(np.diff(rgrid) <= 0):
        raise ValueError("r grid must be non-negative and strictly increasing")
    if rgrid[-1] > window.diameter / 4 * (1 + 1e-9):
        raise ValueError("r grid exceeds a quarter of the window diameter")
    i = pattern.mark_set.index(i)
    j = pattern.mark_set.index(j)
    a = pattern.coords[pattern.marks == i]
    b = pattern.coords[pattern.marks == j]
    if len(a) == 0 or len(b) == 0 or (i == j and len(a) < 2):
        warnings.warn(f"pattern {pattern.id!r} lacks points for pair {(i, j)}; K set to zero", stacklevel=2)
        return SummaryFunction(rgrid, np.zeros_like(rgrid), (i, j), "K", False, True, pattern.id)

    def lookup(f, pts):
        vals = f.at(pts) if hasattr(f, "at") else np.asarray(f(pts), dtype=float)
        return np.maximum(vals, OFFSET_FLOOR)

    la = lookup(bi, a)
    lb = lookup(bj, b)
    found = cKDTree(a).sparse_distance_matrix(cKDTree(b), rgrid[-1], output_type="ndarray")
    ia, ib, d = found["i"], found["j"], found["v"]
    if i == j:
        keep = ia != ib
        ia, ib, d = ia[keep], ib[keep], d[keep]
    w = _translation_weights(window, a[ia] - b[ib]) / (la[ia] * lb[ib])
    order = np.argsort(d, kind="stable")
    cum = np.concatenate([[0.0], np.cumsum(w[order])])
    k = cum[np.searchsorted(d[order], rgrid, side="right")] / window.area
    return SummaryFunction(rgrid, k, (i, j), "K", False, False, pattern.id)


def l_from_k(k):
    """``L(r) = sqrt(K(r) / pi)``."""
    if np.any(k.values < 0):
        raise ValueError("K values must be non-negative")
    return SummaryFunction(k.r, np.sqrt(k.values / np.pi), k.pair, "L", k.pooled, k.empty, k.patient)


def pool_functions(per_patient):
    """Pointwise mean across patients, skipping those flagged empty."""
    funcs = list(per_patient)
    if not funcs:
        raise ValueError("nothing to pool")
    r = funcs[0].r
    for f in funcs[1:]:
        if f.r.shape != r.shape or not np.array_equal(f.r, r):
            raise ValueError("summary functions use different r grids")
    used = [f for f in funcs if not f.empty]
    if not used:
        raise ValueError(f"every patient is empty for pair {funcs[0].pair}")
    mean = np.mean([f.values for f in used], axis=0)
    return SummaryFunction(r, mean, funcs[0].pair, funcs[0].kind, True, False, "pooled")


def choose_max_range(pooled_l, window_steps=5, threshold=0.01):
    """Start of the final stretch where the pooled ``|L(r) - r|`` curve is flat.

    The slope of ``|L(r) - r|`` over a trailing window of ``window_steps``
    grid steps is computed at each ``r``; the answer is the smallest ``r``
    after which every slope stays below ``threshold``.  A visual choice is
    usually better; this only gives a reproducible default.
    """
    r = pooled_l.r
    dev = np.abs(pooled_l.values - r)
    if len(r) <= window_steps:
        return float(r[-1])
    slope = np.abs(dev[window_steps:] - dev[:-window_steps]) / (r[window_steps:] - r[:-window_steps])
    steep = np.flatnonzero(slope >= threshold)
    if len(steep) == 0:
        return float(r[window_steps])
    last = steep[-1] + window_steps
    return float(r[min(last + 1, len(r) - 1)])


def write_summaries_csv(path, functions, labels, header=None):
    """Rows ``(patient, pair, r, K, L)``; ``functions`` are K functions."""
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["patient", "pair", "r", "K", "L", "empty"])
        for k in functions:
            l = l_from_k(k)
            pair = f"{labels[k.pair[0]]}:{labels[k.pair[1]]}"
            for r, kv, lv in zip(k.r, k.values, l.values):
                w.writerow([k.patient, pair, repr(float(r)), repr(float(kv)), repr(float(lv)), int(k.empty)])
