"""Maximum pseudolikelihood fitting through the Berman-Turner quadrature device.

The log pseudolikelihood is approximated by a quadrature sum that has the
form of a weighted Poisson log-likelihood, so fitting reduces to a Poisson
GLM with log link, prior weights equal to the quadrature weights and
responses ``z / w``.  Replicated patterns are pooled by concatenating their
quadrature rows; all patients share one coefficient vector.

p-values are Wald statistics from the Poisson surrogate.  With millions of
quadrature rows nearly every coefficient comes out "significant", so read
them as a ranking device rather than as calibrated tests.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.stats import norm

from . import __version__
from .geometry import PolygonalWindow, erode_border, tile_grid
from .intensity import OFFSET_FLOOR, IntensitySurface, mark_intensities, total_intensity
from .interactions import InteractionKind, InteractionSpec, NeighbourTable
from .patterns import MarkSet, encode_covariates

__all__ = [
    "FitError",
    "SingularDesignError",
    "NonConvergenceError",
    "InconsistentHardcoreError",
    "FitConfig",
    "QuadratureScheme",
    "make_quadrature",
    "default_dummy_side",
    "PatientData",
    "prepare_patient",
    "prepare_cohort",
    "build_rows",
    "GLMFit",
    "irls_fit",
    "poisson_objective",
    "FittedModel",
    "fit_prepared",
    "fit_cohort",
    "ProfileResult",
    "profile_pl",
    "conditional_intensity_surface",
]

log = logging.getLogger(__name__)


class FitError(RuntimeError):
    pass


class SingularDesignError(FitError):
    def __init__(self, aliased):
        self.aliased = list(aliased)
        super().__init__(f"design matrix is rank deficient; aliased columns: {self.aliased}")


class NonConvergenceError(FitError):
    def __init__(self, message, trace):
        self.trace = list(trace)
        super().__init__(f"{message}; deviance trace: {self.trace[-5:]}")


class InconsistentHardcoreError(FitError):
    pass


@dataclass
class FitConfig:
    """Settings shared by every fit of one analysis.

    ``covariates`` is ``"all"`` (every encoded covariate found in the cohort),
    ``None`` (no covariates) or a list of encoded covariate names.
    ``dummy`` is the side of the dummy grid; ``None`` picks
    ``max(64, ceil(sqrt(4 * n_max)))`` where ``n_max`` is the largest
    per-mark data count of the patient.
    """

    dummy: int | None = None
    border: float | None = None
    use_offset: bool = True
    covariates: str | Sequence[str] | None = "all"
    offset_grid: int = 128
    bandwidth: float | None = None
    threads: int = 1
    max_iter: int = 100
    tol: float = 1e-8

    def to_dict(self):
        d = asdict(self)
        if d["covariates"] is not None and not isinstance(d["covariates"], str):
            d["covariates"] = list(d["covariates"])
        return d


def default_dummy_side(pattern):
    nmax = int(pattern.counts().max()) if len(pattern) else 0
    return max(64, math.ceil(math.sqrt(4 * nmax)))


@dataclass(frozen=True, eq=False)
class QuadratureScheme:
    """Marked quadrature points: dummies at tile points for every mark plus the data."""

    coords: np.ndarray
    marks: np.ndarray
    weights: np.ndarray
    is_data: np.ndarray
    data_index: np.ndarray
    tile: np.ndarray
    grid: object
    n_marks: int

    def __len__(self):
        return len(self.weights)

    @property
    def z(self):
        return self.is_data.astype(float)

    @property
    def response(self):
        return self.z / self.weights


def _nearest_positive_tile(grid, pts):
    good = np.flatnonzero(grid.areas > 0)
    d2 = ((grid.points[good][None, :, :] - pts[:, None, :]) ** 2).sum(-1)
    return good[d2.argmin(1)]


def make_quadrature(pattern, window_eroded, grid=None, dummy=None):
    """Berman-Turner quadrature over ``window_eroded`` x marks.

    Every positive-area tile holds one dummy point per mark.  A data point of
    mark ``m`` shares its tile's area with the mark-``m`` dummy and any other
    mark-``m`` data points there: each gets ``area / count`` (counting weights).
    Data points outside the eroded window are not quadrature points.
    """
    if grid is None:
        side = dummy or default_dummy_side(pattern)
        grid = tile_grid(window_eroded, side, side)
    m_count = pattern.n_marks
    tiles = np.flatnonzero(grid.areas > 0)
    nt = len(tiles)
    d_coords = np.tile(grid.points[tiles], (m_count, 1))
    d_marks = np.repeat(np.arange(m_count), nt)
    d_tile = np.tile(tiles, m_count)

    inside = window_eroded.contains(pattern.coords) if len(pattern) else np.zeros(0, bool)
    idx = np.flatnonzero(inside)
    x_coords = pattern.coords[idx]
    x_marks = pattern.marks[idx]
    x_tile = grid.cell_index(x_coords) if len(idx) else np.zeros(0, dtype=int)
    bad = (x_tile < 0) | (grid.areas[np.clip(x_tile, 0, None)] <= 0)
    if bad.any():
        x_tile[bad] = _nearest_positive_tile(grid, x_coords[bad])

    coords = np.vstack([d_coords, x_coords])
    marks = np.concatenate([d_marks, x_marks]).astype(np.int64)
    tile = np.concatenate([d_tile, x_tile]).astype(np.int64)
    is_data = np.concatenate([np.zeros(len(d_marks), bool), np.ones(len(idx), bool)])
    data_index = np.concatenate([-np.ones(len(d_marks), dtype=np.int64), idx])
    key = tile * m_count + marks
    counts = np.bincount(key, minlength=grid.nx * grid.ny * m_count)
    weights = grid.areas[tile] / counts[key]
    return QuadratureScheme(coords, marks, weights, is_data, data_index, tile, grid, m_count)


@dataclass(eq=False)
class PatientData:
    """Everything about one patient that does not depend on the irregular parameters."""

    pattern: object
    covariates: dict
    window: PolygonalWindow
    eroded: PolygonalWindow
    quad: QuadratureScheme
    table: NeighbourTable
    offset: np.ndarray
    offset_surface: IntensitySurface | None
    border: float = 0.0

    @property
    def id(self):
        return self.pattern.id


def offset_surface(pattern, window, config):
    grid = tile_grid(window, config.offset_grid, config.offset_grid)
    return total_intensity(mark_intensities(pattern, grid, config.bandwidth))


def prepare_patient(pattern, covariates, window, reach, border, config):
    eroded = erode_border(window, border)
    quad = make_quadrature(pattern, eroded, dummy=config.dummy)
    table = NeighbourTable(quad.coords, quad.marks, pattern, reach, quad.data_index)
    surface = None
    offset = np.zeros(len(quad))
    if config.use_offset:
        surface = offset_surface(pattern, window, config)
        offset = np.log(np.maximum(surface.at(quad.coords), OFFSET_FLOOR))
    return PatientData(pattern, encode_covariates(covariates), window, eroded, quad, table, offset, surface, border)


def prepare_cohort(cohort, reach, border, config):
    """Quadrature, neighbour tables and offsets for every patient (order preserved)."""
    def one(item):
        pattern, cov = item
        window = cohort.window if cohort.window is not None else pattern.window
        return prepare_patient(pattern, cov, window, reach, border, config)

    items = list(cohort)
    if config.threads and config.threads > 1:
        with ThreadPoolExecutor(config.threads) as ex:
            return list(ex.map(one, items))
    return [one(it) for it in items]


def covariate_names(prepared, config):
    if config.covariates is None:
        return []
    if isinstance(config.covariates, str):
        if config.covariates != "all":
            raise ValueError("covariates must be 'all', None or a list of names")
        names = []
        for pd_ in prepared:
            names.extend(k for k in pd_.covariates if k not in names)
        # Columns that never vary across patients only duplicate the intercepts.
        varying = [n for n in names if len({pd_.covariates.get(n) for pd_ in prepared}) > 1]
        if len(varying) < len(names):
            log.info("covariates constant over the cohort left out: %s", sorted(set(names) - set(varying)))
        return varying
    return list(config.covariates)


def build_rows(patient, spec, cov_names, labels):
    """Design block for one patient.

    Returns ``(X, y, w, offset, keep, names)``; rows with the hardcore flag
    set are dropped via ``keep``.  A data row with the flag set means the
    hardcore contradicts the data and raises ``InconsistentHardcoreError``.
    """
    quad = patient.quad
    n, m_count = len(quad), quad.n_marks
    intercepts = np.zeros((n, m_count))
    intercepts[np.arange(n), quad.marks] = 1.0
    missing = [c for c in cov_names if c not in patient.covariates]
    if missing:
        raise FitError(f"patient {patient.id!r} lacks covariates {missing}")
    cov = np.tile([patient.covariates[c] for c in cov_names], (n, 1)) if cov_names else np.zeros((n, 0))
    stats, flags = patient.table.statistics(spec)
    if np.any(flags & quad.is_data):
        k = int(np.flatnonzero(flags & quad.is_data)[0])
        raise InconsistentHardcoreError(
            f"patient {patient.id!r}: data point {int(quad.data_index[k])} violates the hardcore"
        )
    X = np.hstack([intercepts, cov, stats])
    names = [f"mark[{lab}]" for lab in labels] + list(cov_names) + spec.coef_names(labels)
    return X, quad.response, quad.weights, patient.offset, ~flags, names


@dataclass
class GLMFit:
    names: list
    coef: np.ndarray
    cov: np.ndarray
    se: np.ndarray
    zstat: np.ndarray
    pvalue: np.ndarray
    deviance: float
    logpl: float
    n_iter: int
    trace: list


def _check_rank(X, names):
    if X.shape[1] == 0:
        return
    norms = np.sqrt((X**2).sum(0))
    zero = norms == 0
    if zero.any():
        raise SingularDesignError([names[k] for k in np.flatnonzero(zero)])
    _, r, piv = scipy.linalg.qr(X / norms, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > 1e-7 * diag[0]))
    if rank < X.shape[1]:
        raise SingularDesignError(sorted(names[k] for k in piv[rank:]))


def _deviance(y, mu, w):
    pos = y > 0
    t = np.empty_like(mu)
    t[pos] = y[pos] * np.log(y[pos] / mu[pos])
    t[~pos] = 0.0
    return 2.0 * np.sum(w * (t - (y - mu)))


def poisson_objective(coef, X, y, w, offset=None):
    """Quadrature log pseudolikelihood ``sum w (y log lam - lam)`` at ``coef``."""
    eta = X @ np.asarray(coef) + (0.0 if offset is None else offset)
    lam = np.exp(eta)
    return float(np.sum(w * (y * eta - lam)))


def irls_fit(X, y, w, offset=None, names=None, max_iter=100, tol=1e-8):
    """Weighted Poisson regression with log link by iteratively reweighted least squares.

    Converges when the relative deviance change drops below ``tol``.  Step
    halving guards against deviance increases.  The reported ``logpl`` is
    the saturated log-likelihood minus half the deviance, which equals the
    quadrature objective at the returned coefficients.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    n, p = X.shape
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    names = list(names) if names is not None else [f"x{k}" for k in range(p)]
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(off)) and np.all(w > 0)):
        raise FitError("design entries must be finite and weights positive")
    _check_rank(X, names)

    ybar = np.sum(w * y) / np.sum(w)
    mu = 0.5 * (y + ybar)
    eta = np.log(mu)
    dev = _deviance(y, mu, w)
    beta = None
    trace = [dev]
    for it in range(1, max_iter + 1):
        W = w * mu
        work = eta - off + (y - mu) / mu
        sw = np.sqrt(W)
        new, *_ = np.linalg.lstsq(X * sw[:, None], work * sw, rcond=None)
        for _ in range(40):
            eta_new = X @ new + off
            mu_new = np.exp(np.clip(eta_new, -700, 700))
            dev_new = _deviance(y, mu_new, w)
            if np.isfinite(dev_new) and (beta is None or dev_new <= dev + 1e-10 * abs(dev)):
                break
            if beta is None:
                raise NonConvergenceError("initial IRLS step gave a non-finite deviance", trace)
            new = 0.5 * (new + beta)
        else:
            raise NonConvergenceError("step halving failed to reduce the deviance", trace)
        beta, eta, mu = new, eta_new, mu_new
        trace.append(dev_new)
        done = abs(dev_new - dev) / (abs(dev_new) + 0.1) < tol
        dev = dev_new
        if done:
            break
    else:
        raise NonConvergenceError(f"no convergence in {max_iter} iterations", trace)

    info = X.T @ (X * (w * mu)[:, None])
    cov = np.linalg.inv(info)
    se = np.sqrt(np.diag(cov))
    zstat = beta / se
    pos = y > 0
    saturated = np.sum(w[pos] * (y[pos] * np.log(y[pos]) - y[pos]))
    return GLMFit(
        names=names,
        coef=beta,
        cov=cov,
        se=se,
        zstat=zstat,
        pvalue=2 * norm.sf(np.abs(zstat)),
        deviance=float(dev),
        logpl=float(saturated - 0.5 * dev),
        n_iter=it,
        trace=trace,
    )


@dataclass(eq=False)
class FittedModel:
    """Result of a pooled pseudolikelihood fit."""

    mark_set: MarkSet
    spec: InteractionSpec
    names: list
    coef: np.ndarray
    se: np.ndarray
    pvalue: np.ndarray
    cov: np.ndarray
    logpl: float
    config: FitConfig
    border: float
    covariate_names: list
    n_rows: int
    dropped_dummies: int
    patient_covariates: dict
    label: str = ""
    patients: dict = field(default_factory=dict, repr=False)

    @property
    def intercepts(self):
        return self.coef[: len(self.mark_set)]

    @property
    def covariate_coef(self):
        m = len(self.mark_set)
        return self.coef[m: m + len(self.covariate_names)]

    @property
    def strengths(self):
        return self.coef[len(self.coef) - self.spec.n_coef:]

    @property
    def strength_se(self):
        return self.se[len(self.se) - self.spec.n_coef:]

    def coefficient(self, name):
        return float(self.coef[self.names.index(name)])

    def coefficient_table(self):
        return [
            {"name": n, "estimate": float(b), "exp_estimate": float(np.exp(b)), "std_error": float(s), "p_value": float(p)}
            for n, b, s, p in zip(self.names, self.coef, self.se, self.pvalue)
        ]

    def write_coefficients_csv(self, path, header=None):
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(["coefficient", "estimate", "exp_estimate", "std_error", "p_value"])
            for row in self.coefficient_table():
                w.writerow([row["name"], repr(row["estimate"]), repr(row["exp_estimate"]),
                            repr(row["std_error"]), repr(row["p_value"])])

    def to_dict(self):
        return {
            "label": self.label,
            "marks": list(self.mark_set.labels),
            "interaction": self.spec.to_dict(self.mark_set.labels),
            "coefficients": self.coefficient_table(),
            "covariance": self.cov.tolist(),
            "logpl": self.logpl,
            "border": self.border,
            "covariate_names": list(self.covariate_names),
            "n_rows": self.n_rows,
            "dropped_dummies": self.dropped_dummies,
            "patient_covariates": self.patient_covariates,
            "config": self.config.to_dict(),
            "version": __version__,
        }

    def to_json(self, path=None, **extra):
        d = self.to_dict()
        d.update(extra)
        text = json.dumps(d, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d):
        table = d["coefficients"]
        return cls(
            mark_set=MarkSet(d["marks"]),
            spec=InteractionSpec.from_dict(d["interaction"]),
            names=[r["name"] for r in table],
            coef=np.array([r["estimate"] for r in table]),
            se=np.array([r["std_error"] for r in table]),
            pvalue=np.array([r["p_value"] for r in table]),
            cov=np.array(d["covariance"]),
            logpl=float(d["logpl"]),
            config=FitConfig(**d["config"]),
            border=float(d["border"]),
            covariate_names=list(d["covariate_names"]),
            n_rows=int(d["n_rows"]),
            dropped_dummies=int(d["dropped_dummies"]),
            patient_covariates=d["patient_covariates"],
            label=d.get("label", ""),
        )

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def patient_data(self, pattern, window=None):
        """Quadrature and offset for ``pattern``, rebuilt from the fit settings if needed."""
        pd_ = self.patients.get(pattern.id)
        if pd_ is not None and pd_.pattern is pattern:
            return pd_
        cov = self.patient_covariates.get(pattern.id, {})
        window = window or pattern.window
        pd_ = prepare_patient(pattern, cov, window, self.spec.reach, self.border, self.config)
        self.patients[pattern.id] = pd_
        return pd_

    def conditional_intensity(self, pattern, coords, marks, exclude=None):
        """Fitted Papangelou conditional intensity at arbitrary marked locations.

        ``exclude`` gives, per location, a pattern index to leave out (use
        it for data points); -1 or ``None`` keeps every point.
        """
        coords = np.asarray(coords, dtype=float).reshape(-1, 2)
        marks = np.broadcast_to(np.asarray(marks, dtype=np.int64), (len(coords),))
        pd_ = self.patient_data(pattern)
        table = NeighbourTable(coords, marks, pattern, self.spec.reach, exclude)
        stats, flags = table.statistics(self.spec)
        log_lam = self.intercepts[marks] + stats @ self.strengths
        if self.covariate_names:
            z = np.array([pd_.covariates[c] for c in self.covariate_names])
            log_lam = log_lam + z @ self.covariate_coef
        if pd_.offset_surface is not None:
            log_lam = log_lam + np.log(np.maximum(pd_.offset_surface.at(coords), OFFSET_FLOOR))
        return np.where(flags, 0.0, np.exp(log_lam))

    def quadrature_intensity(self, pattern):
        """Fitted intensity at each quadrature point of ``pattern`` (dropped rows get 0)."""
        pd_ = self.patient_data(pattern)
        X, _, _, off, keep, _ = build_rows(pd_, self.spec, self.covariate_names, self.mark_set.labels)
        return pd_, np.where(keep, np.exp(X @ self.coef + off), 0.0)


def fit_prepared(prepared, spec, config, mark_set, label=""):
    """Pooled fit over already-prepared patients."""
    cov_names = covariate_names(prepared, config)
    blocks = [build_rows(pd_, spec, cov_names, mark_set.labels) for pd_ in prepared]
    keep = np.concatenate([b[4] for b in blocks])
    X = np.vstack([b[0] for b in blocks])[keep]
    y = np.concatenate([b[1] for b in blocks])[keep]
    w = np.concatenate([b[2] for b in blocks])[keep]
    off = np.concatenate([b[3] for b in blocks])[keep]
    names = blocks[0][5]
    data_counts = np.bincount(
        np.concatenate([pd_.quad.marks[pd_.quad.is_data] for pd_ in prepared]), minlength=len(mark_set)
    )
    if np.any(data_counts == 0):
        empty = [mark_set[k] for k in np.flatnonzero(data_counts == 0)]
        raise FitError(f"marks {empty} have no data points inside the integration domain")
    glm = irls_fit(X, y, w, off, names, max_iter=config.max_iter, tol=config.tol)
    return FittedModel(
        mark_set=mark_set,
        spec=spec,
        names=names,
        coef=glm.coef,
        se=glm.se,
        pvalue=glm.pvalue,
        cov=glm.cov,
        logpl=glm.logpl,
        config=config,
        border=float(prepared[0].border),
        covariate_names=cov_names,
        n_rows=int(keep.sum()),
        dropped_dummies=int((~keep).sum()),
        patient_covariates={pd_.id: pd_.covariates for pd_ in prepared},
        label=label,
        patients={pd_.id: pd_ for pd_ in prepared},
    )


def fit_cohort(cohort, spec, config=None, label=""):
    """Fit one coefficient vector to all patients of ``cohort``.

    The border margin defaults to the model's reach (largest interaction
    range or hardcore distance).
    """
    config = config or FitConfig()
    border = spec.reach if config.border is None else config.border
    prepared = prepare_cohort(cohort, spec.reach, border, config)
    return fit_prepared(prepared, spec, config, cohort.mark_set, label)


@dataclass
class ProfileResult:
    spec: InteractionSpec
    ppl: float
    trace: list  # (pair, R, gamma, ppl) for every evaluation, in order
    sweeps: int


def profile_pl(cohort, spec_template, r_grid, gamma_grid=None, config=None):
    """Maximise the profile pseudolikelihood over interaction ranges and rates.

    Coordinate ascent over unordered mark pairs: each pair in turn is set to
    the best point of the ``(R, gamma)`` grid with the other pairs held
    fixed, until a sweep changes nothing or five sweeps have run.  This finds
    a coordinatewise maximum, not necessarily the global one.  Fits that
    fail score ``-inf``.
    """
    config = config or FitConfig()
    r_grid = sorted(float(r) for r in r_grid)
    if not r_grid:
        raise ValueError("empty range grid")
    uses_rate = spec_template.rate is not None
    gamma_grid = [float(g) for g in (gamma_grid if gamma_grid is not None else [0.0])] if uses_rate else [None]
    if not gamma_grid:
        raise ValueError("empty rate grid")
    hmax = float(spec_template.hardcore.max()) if spec_template.hardcore is not None else 0.0
    reach = max(max(r_grid), hmax)
    border = reach if config.border is None else config.border
    prepared = prepare_cohort(cohort, reach, border, config)

    m = spec_template.n_marks
    rng_mat = np.array(spec_template.interaction_range) if spec_template.interaction_range is not None else None
    if rng_mat is None or not np.all(np.isin(rng_mat, r_grid)):
        rng_mat = np.full((m, m), r_grid[len(r_grid) // 2])
    rate_mat = None
    if uses_rate:
        rate_mat = np.array(spec_template.rate)
        if not np.all(np.isin(rate_mat, gamma_grid)):
            rate_mat = np.full((m, m), gamma_grid[len(gamma_grid) // 2])

    cache = {}
    trace = []

    def evaluate(rm, gm):
        key = (rm.tobytes(), gm.tobytes() if gm is not None else b"")
        if key in cache:
            return cache[key]
        try:
            kw = {"interaction_range": rm}
            if gm is not None:
                kw["rate"] = gm
            spec = spec_template.with_params(**kw)
            val = fit_prepared(prepared, spec, config, cohort.mark_set).logpl
        except (FitError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("profile point failed (%s); scored -inf", exc)
            val = -math.inf
        cache[key] = val
        return val

    best = evaluate(rng_mat, rate_mat)
    sweeps = 0
    pairs = spec_template.pairs or tuple((i, j) for i in range(m) for j in range(i, m))
    for sweeps in range(1, 6):
        changed = False
        for i, j in pairs:
            cur = (rng_mat[i, j], rate_mat[i, j] if rate_mat is not None else None)
            pick, pick_val = cur, best
            for r, g in itertools.product(r_grid, gamma_grid):
                rm = rng_mat.copy()
                rm[i, j] = rm[j, i] = r
                gm = None
                if rate_mat is not None:
                    gm = rate_mat.copy()
                    gm[i, j] = gm[j, i] = g
                val = evaluate(rm, gm)
                trace.append(((i, j), r, g, val))
                if val > pick_val:
                    pick, pick_val = (r, g), val
            if pick != cur:
                changed = True
                rng_mat[i, j] = rng_mat[j, i] = pick[0]
                if rate_mat is not None:
                    rate_mat[i, j] = rate_mat[j, i] = pick[1]
                best = pick_val
        if not changed:
            break
    if best == -math.inf:
        raise FitError("every profile grid point failed to fit")
    kw = {"interaction_range": rng_mat}
    if rate_mat is not None:
        kw["rate"] = rate_mat
    return ProfileResult(spec_template.with_params(**kw), best, trace, sweeps)


def conditional_intensity_surface(model, pattern, mark, grid):
    """Fitted conditional intensity of ``mark`` at the tile centres of ``grid``."""
    m = pattern.mark_set.index(mark)
    vals = model.conditional_intensity(pattern, grid.centers, m)
    vals = np.where(grid.areas > 0, vals, 0.0)
    return IntensitySurface(grid, vals, pattern.mark_set[m])
