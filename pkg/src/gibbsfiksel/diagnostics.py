"""Residual measures of fitted Gibbs models and RMSE model comparison.

Integrals use the fit's own quadrature (dummy tiles over the eroded window),
and only data points inside the eroded window are counted, so the total over
a patient equals the sum over any tiling of it.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .fitting import FitConfig, fit_cohort
from .interactions import InteractionKind, InteractionSpec

__all__ = [
    "KINDS",
    "DegenerateModelError",
    "ResidualTotal",
    "ModelChoice",
    "residual_total",
    "residual_field",
    "residual_totals",
    "rmse",
    "model_menu",
    "fit_menu",
    "comparison_table",
    "write_totals_csv",
    "write_comparison_csv",
]

KINDS = ("raw", "pearson", "inverse")


class DegenerateModelError(ValueError):
    pass


@dataclass(frozen=True)
class ResidualTotal:
    patient: str
    mark: str
    kind: str
    value: float


def _contributions(model, pattern, mark, kind):
    """Per-quadrature-point residual increments for one mark: data minus integral parts."""
    if kind not in KINDS:
        raise ValueError(f"unknown residual kind {kind!r}")
    m = pattern.mark_set.index(mark)
    pd_, lam = model.quadrature_intensity(pattern)
    q = pd_.quad
    sel = q.marks == m
    lam, w, data, tile = lam[sel], q.weights[sel], q.is_data[sel], q.tile[sel]
    coords = q.coords[sel]
    pos = lam > 0
    if kind == "raw":
        contrib = data.astype(float) - w * lam
    else:
        if np.any(data & ~pos):
            raise DegenerateModelError(
                f"fitted intensity is zero at an observed point of patient {pattern.id!r}, mark {mark!r}"
            )
        if kind == "pearson":
            safe = np.where(pos, lam, 1.0)
            contrib = np.where(data, safe ** -0.5, 0.0) - w * np.sqrt(lam)
        else:
            safe = np.where(pos, lam, 1.0)
            contrib = np.where(data & pos, 1.0 / safe, 0.0) - w * pos
    return coords, tile, contrib


def residual_total(model, pattern, mark, kind="raw"):
    """Residual measure of the whole integration domain for one patient and mark."""
    _, _, contrib = _contributions(model, pattern, mark, kind)
    label = pattern.mark_set[pattern.mark_set.index(mark)]
    return ResidualTotal(pattern.id, label, kind, float(contrib.sum()))


def residual_field(model, pattern, mark, kind="raw", grid=None):
    """Residual measure of each tile of ``grid`` (default: the fit's dummy grid), row-major."""
    coords, tile, contrib = _contributions(model, pattern, mark, kind)
    if grid is None:
        grid = model.patient_data(pattern).quad.grid
    else:
        tile = grid.cell_index(coords)
        if np.any(tile < 0):
            raise ValueError("grid does not cover the integration domain")
    return np.bincount(tile, weights=contrib, minlength=grid.nx * grid.ny).reshape(grid.ny, grid.nx)


def residual_totals(model, cohort, kinds=KINDS):
    out = []
    for pattern in cohort.patterns:
        for mark in pattern.mark_set:
            for kind in kinds:
                out.append(residual_total(model, pattern, mark, kind))
    return out


def rmse(totals):
    """``sqrt(mean_k (sum_m R_m^k)^2)`` over patients, from one model's totals of one kind."""
    per_patient = {}
    for t in totals:
        per_patient[t.patient] = per_patient.get(t.patient, 0.0) + t.value
    vals = np.array(list(per_patient.values()))
    return float(np.sqrt(np.mean(vals**2)))


@dataclass(frozen=True)
class ModelChoice:
    label: str
    spec: InteractionSpec
    use_offset: bool
    use_covariates: bool
    interaction: str


def model_menu(hardcore, interaction_range, rate, n_marks=None):
    """The eight comparison models, all built from one set of irregular parameters.

    ``hardcore``, ``interaction_range`` and ``rate`` are M x M matrices (or
    scalars with ``n_marks`` given).  The hardcore-only model uses the
    hardcore matrix as its exclusion radius.
    """
    h = np.asarray(hardcore, dtype=float)
    m = n_marks if n_marks is not None else h.shape[0]
    fik = InteractionSpec(InteractionKind.FIKSEL, m, hardcore, interaction_range, rate)
    within = InteractionSpec(InteractionKind.FIKSEL_WITHIN, m, hardcore, interaction_range, rate)
    strauss = InteractionSpec(InteractionKind.STRAUSS, m, interaction_range=interaction_range)
    hard = InteractionSpec(InteractionKind.HARDCORE, m, interaction_range=hardcore)
    sh = InteractionSpec(InteractionKind.STRAUSS_HARDCORE, m, hardcore, interaction_range)
    none = InteractionSpec.none(m)
    return [
        ModelChoice("Fiksel 1", fik, True, True, "Multi Fiksel"),
        ModelChoice("Fiksel 2", fik, False, False, "Multi Fiksel"),
        ModelChoice("Fiksel 3", fik, False, True, "Multi Fiksel"),
        ModelChoice("Fiksel 4", within, True, True, "Multi Fiksel (no crossed)"),
        ModelChoice("Strauss", strauss, True, True, "Multi Strauss"),
        ModelChoice("Hardcore", hard, True, True, "Multi Hardcore"),
        ModelChoice("Str Hardcore", sh, True, True, "Multi Strauss Hardcore"),
        ModelChoice("Poisson", none, True, True, "None (Poisson model)"),
    ]


def fit_menu(cohort, menu, config=None):
    """Fit every menu entry.  All fits share one border (the largest reach) so residuals compare."""
    config = config or FitConfig()
    border = config.border if config.border is not None else max(c.spec.reach for c in menu)
    fits = []
    for choice in menu:
        cfg = FitConfig(**{
            **config.__dict__,
            "border": border,
            "use_offset": choice.use_offset and config.use_offset,
            "covariates": config.covariates if choice.use_covariates else None,
        })
        fits.append((choice, fit_cohort(cohort, choice.spec, cfg, label=choice.label)))
    return fits


def comparison_table(fits, cohort):
    """One row per model with RMSE for each residual kind."""
    rows = []
    for choice, model in fits:
        row = {
            "model": choice.label,
            "interaction": choice.interaction,
            "offset": "Yes" if choice.use_offset else "No",
            "covariates": "Yes" if choice.use_covariates else "No",
        }
        for kind in KINDS:
            row[f"rmse_{kind}"] = rmse(residual_totals(model, cohort, (kind,)))
        rows.append(row)
    return rows


def write_totals_csv(path, totals, model_label="", header=None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["model", "patient", "mark", "kind", "value"])
        for t in totals:
            w.writerow([model_label, t.patient, t.mark, t.kind, repr(t.value)])


def write_comparison_csv(path, rows, header=None):
    cols = ["model", "interaction", "offset", "covariates", "rmse_raw", "rmse_pearson", "rmse_inverse"]
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] if not isinstance(r[c], float) else repr(r[c]) for c in cols])
