"""Metropolis-Hastings birth-death-shift simulation of multitype Gibbs models.

Random numbers come from a numpy ``Generator`` in fixed-size blocks, so a
chain is reproducible from its seed regardless of how ``advance`` calls are
chunked.  Births propose a uniform location in the window's bounding box
(locations outside the window are rejected outright), so the acceptance
ratios use the bounding-box area.  The sampler treats the model as living on
the window only: there are no points outside it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .geometry import PolygonalWindow
from .intensity import IntensitySurface
from .interactions import HARDCORE_TOL, InteractionKind, InteractionSpec, sufficient_statistics
from .patterns import Cohort, MarkedPointPattern, MarkSet, encode_covariates

__all__ = [
    "UnstableModelError",
    "SimulationConfig",
    "GibbsModel",
    "stability_bound",
    "papangelou_ratio",
    "MetropolisHastingsChain",
    "mh_sample",
    "simulate_cohort",
    "poisson_pattern",
    "model_from_fit",
    "spawn_seeds",
]

_BLOCK = 1 << 15


class UnstableModelError(ValueError):
    pass


@dataclass
class SimulationConfig:
    """Chain settings.  ``shift_scale`` defaults to 2% of the window diameter."""

    steps: int = 200_000
    burn_in: int = 100_000
    p_birth: float = 0.4
    p_death: float = 0.4
    p_shift: float = 0.2
    shift_scale: float | None = None
    seed: int = 0
    trace_every: int = 1000
    max_points: int = 2_000_000

    def __post_init__(self):
        probs = (self.p_birth, self.p_death, self.p_shift)
        if min(probs) < 0 or abs(sum(probs) - 1) > 1e-12:
            raise ValueError("proposal probabilities must be non-negative and sum to 1")
        if self.p_birth <= 0 or self.p_death <= 0:
            raise ValueError("birth and death proposals need positive probability")
        if self.steps <= self.burn_in:
            raise ValueError("steps must exceed burn-in")


@dataclass
class GibbsModel:
    """A fully specified multitype pairwise-interaction model.

    ``trend`` is a constant, one constant per mark, or one
    ``IntensitySurface`` per mark (all on one grid).  ``strengths`` are the
    interaction coefficients aligned with ``spec.pairs``.
    ``covariate_effects`` multiply the trend by ``exp(sum beta * z)`` for a
    patient with covariates ``z``.
    """

    mark_set: MarkSet
    window: PolygonalWindow
    trend: float | Sequence
    spec: InteractionSpec
    strengths: Sequence[float] = ()
    covariate_effects: dict = field(default_factory=dict)

    def __post_init__(self):
        self.strengths = np.asarray(self.strengths, dtype=float).reshape(-1)
        if len(self.strengths) != self.spec.n_coef:
            raise ValueError(f"expected {self.spec.n_coef} strengths, got {len(self.strengths)}")

    def log_trend_grid(self, shift=0.0):
        """``(log_trend[M, ny, nx], x0, y0, dx, dy)`` for the compiled sampler."""
        m = len(self.mark_set)
        tr = self.trend
        if isinstance(tr, (int, float, np.floating)):
            tr = [float(tr)] * m
        tr = list(tr)
        if len(tr) != m:
            raise ValueError("one trend per mark is required")
        if all(isinstance(t, IntensitySurface) for t in tr):
            g = tr[0].grid
            with np.errstate(divide="ignore"):
                vals = np.stack([np.log(t.values.reshape(g.ny, g.nx)) for t in tr])
            return vals + shift, g.x0, g.y0, g.dx, g.dy
        vals = np.array([float(t) for t in tr])
        if np.any(vals < 0):
            raise ValueError("trend must be non-negative")
        xmin, ymin, xmax, ymax = self.window.bounds
        with np.errstate(divide="ignore"):
            lt = np.log(vals).reshape(m, 1, 1)
        return lt + shift, xmin, ymin, max(xmax - xmin, 1e-300) * 2, max(ymax - ymin, 1e-300) * 2

    def trend_at(self, xy, m, shift=0.0):
        lt, x0, y0, dx, dy = self.log_trend_grid(shift)
        xy = np.atleast_2d(xy)
        ix = np.clip(((xy[:, 0] - x0) / dx).astype(int), 0, lt.shape[2] - 1)
        iy = np.clip(((xy[:, 1] - y0) / dy).astype(int), 0, lt.shape[1] - 1)
        return np.exp(lt[m, iy, ix])


def _kind_arrays(spec, strengths):
    m = spec.n_marks
    zero = np.zeros((m, m))
    h = spec.hardcore if spec.hardcore is not None else zero
    r = spec.interaction_range if spec.interaction_range is not None else zero
    g = spec.rate if spec.rate is not None else zero
    c = spec.strength_matrix(strengths) if spec.n_coef else zero
    return spec.kind.code, np.array(h, float), np.array(r, float), np.array(g, float), np.array(c, float)


def stability_bound(spec, strengths):
    """Upper bound on the interaction part of ``log lambda`` for each mark.

    Positive strengths are bounded using hardcore packing: at most
    ``((R + h_jj/2) / (h_jj/2))^2`` points of type ``j`` fit within ``R``
    when they are ``h_jj`` apart.  Raises ``UnstableModelError`` when a
    positive strength meets a type with no hardcore.
    """
    kind, h, r, g, c = _kind_arrays(spec, strengths)
    m = spec.n_marks
    bound = np.zeros(m)
    hc = h if spec.hardcore is not None else (r if spec.kind is InteractionKind.HARDCORE else np.zeros((m, m)))
    for i in range(m):
        for j in range(m):
            if c[i, j] <= 0:
                continue
            if hc[j, j] <= 0:
                raise UnstableModelError(
                    f"positive strength {c[i, j]:.4g} for marks ({i}, {j}) with no hardcore among "
                    f"type {j} points; conditional intensity is unbounded"
                )
            half = hc[j, j] / 2
            count = ((r[i, j] + half) / half) ** 2
            if spec.kind in (InteractionKind.FIKSEL, InteractionKind.FIKSEL_WITHIN):
                lo = h[i, j]
                per = c[i, j] * max(math.exp(-g[i, j] * lo), math.exp(-g[i, j] * r[i, j]))
            else:
                per = c[i, j]
            bound[i] += per * count
    return bound


def papangelou_ratio(candidate, pattern, trend, spec, coefficients):
    """Conditional intensity ``lambda((u, m) | X)`` using the fitting statistics.

    ``trend`` is a constant, a per-mark sequence of constants or a per-mark
    sequence of ``IntensitySurface``.
    """
    u, m = candidate
    m = pattern.mark_set.index(m)
    if isinstance(trend, (int, float, np.floating)):
        b = float(trend)
    else:
        t = list(trend)[m]
        b = float(t.at(np.asarray(u))[0]) if isinstance(t, IntensitySurface) else float(t)
    s, flag = sufficient_statistics(u, m, pattern, spec)
    if flag or b == 0:
        return 0.0
    return b * math.exp(float(s @ np.asarray(coefficients, dtype=float))) if spec.n_coef else b


@njit(cache=True)
def _pair_term(kind, d, h, r, g):
    # returns (value, hard); kind codes follow InteractionKind order
    if kind == 0 or kind == 1:
        if d < h - HARDCORE_TOL:
            return 0.0, True
        if d < r:
            return math.exp(-g * d), False
        return 0.0, False
    if kind == 2:
        return (1.0 if d <= r else 0.0), False
    if kind == 3:
        return 0.0, d <= r - HARDCORE_TOL
    if kind == 4:
        if d < h - HARDCORE_TOL:
            return 0.0, True
        return (1.0 if d <= r else 0.0), False
    return 0.0, False


@njit(cache=True)
def _log_lambda(x, y, m, xs, ys, ms, n, skip, kind, H, R, G, C, lt, tx0, ty0, tdx, tdy):
    ix = int((x - tx0) / tdx)
    iy = int((y - ty0) / tdy)
    ix = min(max(ix, 0), lt.shape[2] - 1)
    iy = min(max(iy, 0), lt.shape[1] - 1)
    total = lt[m, iy, ix]
    if kind == 5:
        return total
    for k in range(n):
        if k == skip:
            continue
        mk = ms[k]
        d = math.sqrt((xs[k] - x) ** 2 + (ys[k] - y) ** 2)
        val, hard = _pair_term(kind, d, H[m, mk], R[m, mk], G[m, mk])
        if hard:
            return -np.inf
        total += C[m, mk] * val
    return total


@njit(cache=True)
def _inside(x, y, vx, vy, starts):
    inside = False
    for r in range(len(starts) - 1):
        a, b = starts[r], starts[r + 1]
        j = b - 1
        for i in range(a, b):
            if (vy[i] > y) != (vy[j] > y):
                xc = vx[i] + (y - vy[i]) * (vx[j] - vx[i]) / (vy[j] - vy[i])
                if x < xc:
                    inside = not inside
            j = i
    return inside


@njit(cache=True)
def _run(U, Z, xs, ys, ms, n, kind, H, R, G, C, lt, tx0, ty0, tdx, tdy,
         pb, pd, area, n_marks, sigma, sites, vx, vy, starts, bx0, by0, bx1, by1):
    """Advance the chain by ``len(U)`` steps; stops early if capacity is reached.

    Returns ``(n, steps_done, log_density_change)``.
    """
    cap = len(xs)
    n_sites = sites.shape[0]
    log_pb_pd = math.log(pb / pd)
    log_am = math.log(area * n_marks)
    change = 0.0
    for s in range(U.shape[0]):
        u0 = U[s, 0]
        if u0 < pb:
            if n >= cap:
                return n, s, change
            m = min(int(U[s, 1] * n_marks), n_marks - 1)
            if n_sites > 0:
                k = min(int(U[s, 2] * n_sites), n_sites - 1)
                x, y = sites[k, 0], sites[k, 1]
            else:
                x = bx0 + U[s, 2] * (bx1 - bx0)
                y = by0 + U[s, 3] * (by1 - by0)
                if not _inside(x, y, vx, vy, starts):
                    continue
            ll = _log_lambda(x, y, m, xs, ys, ms, n, -1, kind, H, R, G, C, lt, tx0, ty0, tdx, tdy)
            if ll == -np.inf:
                continue
            log_ratio = ll + log_am - math.log(n + 1) - log_pb_pd
            if math.log(U[s, 4]) < log_ratio:
                xs[n], ys[n], ms[n] = x, y, m
                n += 1
                change += ll
        elif u0 < pb + pd:
            if n == 0:
                continue
            i = min(int(U[s, 1] * n), n - 1)
            ll = _log_lambda(xs[i], ys[i], ms[i], xs, ys, ms, n, i, kind, H, R, G, C, lt, tx0, ty0, tdx, tdy)
            log_ratio = math.log(n) + log_pb_pd - ll - log_am
            if math.log(U[s, 4]) < log_ratio:
                change -= ll
                n -= 1
                xs[i], ys[i], ms[i] = xs[n], ys[n], ms[n]
        else:
            if n == 0:
                continue
            i = min(int(U[s, 1] * n), n - 1)
            if n_sites > 0:
                k = min(int(U[s, 5] * n_sites), n_sites - 1)
                x, y = sites[k, 0], sites[k, 1]
            else:
                x = xs[i] + sigma * Z[s, 0]
                y = ys[i] + sigma * Z[s, 1]
                if not _inside(x, y, vx, vy, starts):
                    continue
            m = ms[i]
            new = _log_lambda(x, y, m, xs, ys, ms, n, i, kind, H, R, G, C, lt, tx0, ty0, tdx, tdy)
            if new == -np.inf:
                continue
            old = _log_lambda(xs[i], ys[i], m, xs, ys, ms, n, i, kind, H, R, G, C, lt, tx0, ty0, tdx, tdy)
            if math.log(U[s, 4]) < new - old:
                xs[i], ys[i] = x, y
                change += new - old
    return n, U.shape[0], change


@njit(cache=True)
def _same_type_pairs(xs, ys, ms, n, r):
    count = 0
    for a in range(n):
        for b in range(a + 1, n):
            if ms[a] == ms[b] and (xs[a] - xs[b]) ** 2 + (ys[a] - ys[b]) ** 2 <= r * r:
                count += 1
    return count


def _window_arrays(window):
    rings = window.rings
    vx = np.concatenate([r[:, 0] for r in rings])
    vy = np.concatenate([r[:, 1] for r in rings])
    starts = np.cumsum([0] + [len(r) for r in rings]).astype(np.int64)
    return vx, vy, starts


class MetropolisHastingsChain:
    """A resumable birth-death-shift chain for one ``GibbsModel``.

    ``sites`` switches the state space to a finite set of candidate
    locations (counting measure); births and shifts then pick a site
    uniformly.  This exists for exact small-case checks.
    """

    def __init__(self, model, config=None, initial=None, sites=None, trend_shift=0.0):
        self.model = model
        self.config = config or SimulationConfig()
        stability_bound(model.spec, model.strengths)
        self.rng = np.random.default_rng(self.config.seed)
        self._buf_u = np.empty((0, 6))
        self._buf_z = np.empty((0, 2))
        self._pos = 0
        m = model.spec.n_marks
        if m != len(model.mark_set):
            raise ValueError("spec and mark set disagree on the number of marks")
        self.kind, self.H, self.R, self.G, self.C = _kind_arrays(model.spec, model.strengths)
        self.lt, self.tx0, self.ty0, self.tdx, self.tdy = model.log_trend_grid(trend_shift)
        self.lt = np.ascontiguousarray(self.lt, dtype=float)
        self.vx, self.vy, self.starts = _window_arrays(model.window)
        self.bx0, self.by0, self.bx1, self.by1 = model.window.bounds
        self.sites = np.zeros((0, 2)) if sites is None else np.asarray(sites, dtype=float).reshape(-1, 2)
        if len(self.sites):
            self.area = float(len(self.sites))
        else:
            self.area = (self.bx1 - self.bx0) * (self.by1 - self.by0)
        self.sigma = self.config.shift_scale or 0.02 * model.window.diameter
        cap = 1024
        self.xs = np.zeros(cap)
        self.ys = np.zeros(cap)
        self.ms = np.zeros(cap, dtype=np.int64)
        self.n = 0
        if initial is not None:
            self._set_state(np.asarray(initial.coords), np.asarray(initial.marks))
        self.step = 0
        self.trace = []
        self._change = 0.0

    def _set_state(self, coords, marks):
        k = len(marks)
        while len(self.xs) < k:
            self._grow()
        self.xs[:k], self.ys[:k], self.ms[:k] = coords[:, 0], coords[:, 1], marks
        self.n = k

    def _grow(self):
        cap = len(self.xs) * 2
        if cap > 2 * self.config.max_points:
            raise UnstableModelError(f"chain exceeded {self.config.max_points} points")
        for name in ("xs", "ys", "ms"):
            old = getattr(self, name)
            new = np.zeros(cap, dtype=old.dtype)
            new[: len(old)] = old
            setattr(self, name, new)

    def _refill(self):
        self._buf_u = self.rng.random((_BLOCK, 6))
        self._buf_z = self.rng.standard_normal((_BLOCK, 2))
        self._pos = 0

    def _advance_raw(self, steps):
        left = steps
        while left > 0:
            if self._pos >= len(self._buf_u):
                self._refill()
            k = min(left, len(self._buf_u) - self._pos)
            U = self._buf_u[self._pos: self._pos + k]
            Z = self._buf_z[self._pos: self._pos + k]
            n, done, change = _run(
                U, Z, self.xs, self.ys, self.ms, self.n, self.kind, self.H, self.R, self.G, self.C,
                self.lt, self.tx0, self.ty0, self.tdx, self.tdy,
                self.config.p_birth, self.config.p_death, self.area, len(self.model.mark_set), self.sigma,
                self.sites, self.vx, self.vy, self.starts, self.bx0, self.by0, self.bx1, self.by1,
            )
            self.n = int(n)
            self._change += change
            self._pos += done
            left -= done
            self.step += done
            if done < k:
                if self.n > self.config.max_points:
                    raise UnstableModelError(f"chain exceeded {self.config.max_points} points")
                self._grow()

    def advance(self, steps, record=True):
        """Run ``steps`` more transitions, appending a trace entry every ``trace_every`` steps."""
        every = self.config.trace_every
        left = steps
        while left > 0:
            k = min(left, every - self.step % every) if every else left
            self._advance_raw(k)
            left -= k
            if record and every and self.step % every == 0:
                reach = self.model.spec.reach or 0.0
                pairs = int(_same_type_pairs(self.xs, self.ys, self.ms, self.n, reach)) if reach > 0 else 0
                self.trace.append({"step": self.step, "n": self.n, "log_density_change": self._change,
                                   "same_type_pairs": pairs})
                self._change = 0.0
        return self

    @property
    def coords(self):
        return np.column_stack([self.xs[: self.n], self.ys[: self.n]])

    @property
    def marks(self):
        return self.ms[: self.n].copy()

    def pattern(self, id=""):
        return MarkedPointPattern(self.coords, self.marks, self.model.window, self.model.mark_set, id)

    def log_papangelou(self, xy, m, skip=-1):
        """Compiled ``log lambda((xy, m) | state)``; used to cross-check the fitting statistics."""
        return float(_log_lambda(float(xy[0]), float(xy[1]), int(m), self.xs, self.ys, self.ms, self.n, skip,
                                 self.kind, self.H, self.R, self.G, self.C, self.lt,
                                 self.tx0, self.ty0, self.tdx, self.tdy))

    def write_trace(self, path):
        with open(path, "w") as fh:
            json.dump(self.trace, fh, indent=1)


def mh_sample(window, mark_set, trend, spec, coefficients, config=None, initial=None, id="", return_chain=False):
    """Run a birth-death-shift chain for ``config.steps`` steps and return the final state."""
    model = GibbsModel(mark_set, window, trend, spec, coefficients)
    chain = MetropolisHastingsChain(model, config, initial)
    chain.advance(chain.config.steps)
    pattern = chain.pattern(id)
    return (pattern, chain) if return_chain else pattern


def spawn_seeds(root, k):
    """Independent child seeds derived from ``root`` (SeedSequence spawning)."""
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(root).spawn(k)]


def simulate_cohort(g, covariate_generator: Callable | None, model: GibbsModel, config=None, id_prefix="sim"):
    """``g`` independent patterns; covariates scale the trend log-linearly.

    ``covariate_generator(rng, k)`` returns the covariates of patient ``k``
    (a ``ClinicalCovariates`` or a mapping); it draws from its own stream, so
    the chains' seeds do not depend on it.
    """
    if g < 1:
        raise ValueError("need at least one patient")
    config = config or SimulationConfig()
    seeds = spawn_seeds(config.seed, g + 1)
    cov_rng = np.random.default_rng(seeds[-1])
    patterns, covs = [], []
    for k in range(g):
        cov = covariate_generator(cov_rng, k) if covariate_generator else None
        z = encode_covariates(cov)
        shift = sum(float(b) * z.get(name, 0.0) for name, b in model.covariate_effects.items())
        cfg = SimulationConfig(**{**config.__dict__, "seed": seeds[k]})
        chain = MetropolisHastingsChain(model, cfg, trend_shift=shift)
        chain.advance(cfg.steps, record=False)
        patterns.append(chain.pattern(f"{id_prefix}{k:03d}"))
        covs.append(cov)
    return Cohort(model.mark_set, patterns, covs, model.window)


def poisson_pattern(window, mark_set, intensity, rng, id=""):
    """Homogeneous multitype Poisson pattern; ``intensity`` is per mark (scalar broadcasts)."""
    lam = np.broadcast_to(np.asarray(intensity, dtype=float), (len(mark_set),))
    counts = rng.poisson(lam * window.area)
    coords = window.sample_uniform(int(counts.sum()), rng)
    marks = np.repeat(np.arange(len(mark_set)), counts)
    return MarkedPointPattern(coords, marks, window, mark_set, id)


def model_from_fit(fitted, pattern, window=None):
    """The fitted model for one patient as a simulable ``GibbsModel``.

    The trend is ``exp(offset + intercept_m + beta . z)`` on the offset grid
    (or a constant per mark when the fit has no offset).
    """
    pd_ = fitted.patient_data(pattern, window)
    base = fitted.intercepts.copy()
    if fitted.covariate_names:
        z = np.array([pd_.covariates[c] for c in fitted.covariate_names])
        base = base + z @ fitted.covariate_coef
    if pd_.offset_surface is not None:
        surf = pd_.offset_surface
        trend = [IntensitySurface(surf.grid, surf.values * math.exp(b), lab) for b, lab in zip(base, fitted.mark_set)]
    else:
        trend = [math.exp(b) for b in base]
    return GibbsModel(fitted.mark_set, window or pd_.window, trend, fitted.spec, fitted.strengths)
