"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -s`` to see the lines as
they are produced; they are also repeated in the terminal summary.
"""
import math
import time

import numpy as np
import pytest

from conftest import record
from gibbsfiksel.diagnostics import fit_menu, model_menu, residual_total, residual_totals, rmse
from gibbsfiksel.fitting import FitConfig, fit_cohort, make_quadrature, profile_pl
from gibbsfiksel.geometry import PolygonalWindow, erode_border, tile_grid
from gibbsfiksel.intensity import mark_intensities
from gibbsfiksel.interactions import InteractionKind, InteractionSpec, estimate_hardcore, fiksel_phi
from gibbsfiksel.patterns import Cohort, MarkedPointPattern, MarkSet
from gibbsfiksel.simulation import (
    GibbsModel,
    MetropolisHastingsChain,
    SimulationConfig,
    mh_sample,
    poisson_pattern,
    simulate_cohort,
)
from gibbsfiksel.summaries import default_rgrid, k_inhom_cross, l_from_k, pool_functions

pytestmark = pytest.mark.slow

PLAIN = FitConfig(use_offset=False, covariates=None)
LONG = dict(steps=200_000, burn_in=100_000)

# two-type Fiksel cohort with attraction within types and none across
FIKSEL2 = InteractionSpec(InteractionKind.FIKSEL, 2, hardcore=0.5, interaction_range=5.0, rate=0.1)
FIKSEL2_COEF = np.array([0.8, 0.0, 0.8])
FIKSEL2_WINDOW = PolygonalWindow.rectangle(0, 0, 150, 150)
FIKSEL2_TREND = [0.0012, 0.0012]
TWO = MarkSet(["A", "B"])


def star_polygon(seed):
    """Random simple polygon, star-shaped about the origin.

    One vertex per equal angular sector keeps every angular gap below a half
    turn, so the origin sees the whole boundary and the ring cannot cross itself.
    """
    r = np.random.default_rng(seed)
    n = int(r.integers(4, 14))
    ang = (np.arange(n) + r.uniform(0.05, 0.95, n)) * 2 * np.pi / n
    rad = r.uniform(0.5, 3.0, n)
    return np.column_stack([rad * np.cos(ang), rad * np.sin(ang)]) * r.uniform(1, 50)


@pytest.fixture(scope="module")
def fiksel_cohorts():
    """Twenty independent 20-patient cohorts and the time it took to simulate them."""
    model = GibbsModel(TWO, FIKSEL2_WINDOW, FIKSEL2_TREND, FIKSEL2, FIKSEL2_COEF)
    t0 = time.perf_counter()
    cohorts = [simulate_cohort(20, None, model, SimulationConfig(seed=1000 + e, **LONG)) for e in range(20)]
    return cohorts, time.perf_counter() - t0


def test_criterion_01_poisson_recovery():
    ms = MarkSet(["a"])
    w = PolygonalWindow.rectangle(0, 0, 1, 1)
    lam = 200.0
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    est = []
    for k in range(100):
        p = poisson_pattern(w, ms, lam, rng, f"p{k}")
        est.append(fit_cohort(Cohort(ms, [p]), InteractionSpec.none(1), PLAIN).intercepts[0])
    elapsed = time.perf_counter() - t0
    err = abs(np.mean(est) - math.log(lam))
    ok = err < 0.02 and elapsed < 60
    record(1, ok, f"|mean intercept - log 200| = {err:.4f} (< 0.02), {elapsed:.1f} s (< 60 s)")
    assert ok


def _direct_logpl(fit, pattern):
    """Sum of log intensities at data points minus the quadrature integral, by brute force."""
    spec = fit.spec
    pd_ = fit.patient_data(pattern)
    q = pd_.quad
    total = 0.0
    for u, m, w, is_data, idx in zip(q.coords, q.marks, q.weights, q.is_data, q.data_index):
        d = np.hypot(*(pattern.coords - u).T)
        others = np.ones(len(d), bool)
        if is_data:
            others[idx] = False
        s = np.zeros(spec.n_coef)
        forbidden = False
        for dist, mx in zip(d[others], pattern.marks[others]):
            col = spec.column_of[m, mx]
            if spec.kind is InteractionKind.STRAUSS:
                if dist <= spec.interaction_range[m, mx]:
                    s[col] += 1
            elif spec.kind is InteractionKind.FIKSEL:
                if dist < spec.hardcore[m, mx]:
                    forbidden = True
                elif dist < spec.interaction_range[m, mx]:
                    s[col] += math.exp(-spec.rate[m, mx] * dist)
        if forbidden:
            assert not is_data
            continue
        log_lam = fit.intercepts[m] + s @ fit.strengths
        total += (log_lam if is_data else 0.0) - w * math.exp(log_lam)
    return total


def test_criterion_02_objective_equivalence():
    worst = 0.0
    for seed in range(20):
        r = np.random.default_rng(200 + seed)
        w = PolygonalWindow.rectangle(0, 0, r.uniform(6, 12), r.uniform(6, 12))
        n_pat = int(r.integers(1, 4))
        pats = [poisson_pattern(w, TWO, r.uniform(0.3, 1.5, 2), r, f"p{k}") for k in range(n_pat)]
        kind = ["strauss", "fiksel", "none"][seed % 3]
        if kind == "strauss":
            spec = InteractionSpec("strauss", 2, interaction_range=r.uniform(0.5, 1.5))
        elif kind == "fiksel":
            spec = InteractionSpec("fiksel", 2, hardcore=1e-3, interaction_range=r.uniform(0.8, 1.5),
                                   rate=r.uniform(0.1, 1.0))
        else:
            spec = InteractionSpec.none(2)
        fit = fit_cohort(Cohort(TWO, pats), spec,
                         FitConfig(use_offset=False, covariates=None, dummy=int(r.integers(12, 40))))
        direct = sum(_direct_logpl(fit, p) for p in pats)
        worst = max(worst, abs(direct - fit.logpl) / abs(direct))
    ok = worst <= 1e-6
    record(2, ok, f"max relative gap direct vs solver objective {worst:.2e} over 20 designs (<= 1e-6)")
    assert ok


def test_criterion_03_fiksel_recovery(fiksel_cohorts):
    cohorts, sim_time = fiksel_cohorts
    t0 = time.perf_counter()
    hits, worst = 0, 0.0
    for coh in cohorts:
        fit = fit_cohort(coh, FIKSEL2, PLAIN)
        z = (fit.strengths - FIKSEL2_COEF) / fit.strength_se
        hits += bool(np.all(np.abs(z) < 3))
        worst = max(worst, float(np.abs(z).max()))
    elapsed = sim_time + time.perf_counter() - t0
    ok = hits >= 18 and elapsed < 600
    record(3, ok, f"{hits}/20 experiments with all strengths within 3 SE (>= 18), max |z| {worst:.2f}, "
                  f"{elapsed:.0f} s (< 600 s)")
    assert ok


def test_criterion_04_profile_recovery():
    ms = MarkSet(["a"])
    spec = InteractionSpec(InteractionKind.FIKSEL, 1, hardcore=0.5, interaction_range=5.0, rate=0.1)
    w = PolygonalWindow.rectangle(0, 0, 60, 60)
    model = GibbsModel(ms, w, [1.0], spec, [-0.5])
    picks = []
    for e in range(10):
        coh = simulate_cohort(10, None, model, SimulationConfig(seed=2000 + e, **LONG))
        res = profile_pl(coh, spec, [3, 4, 5, 6, 7], [0.1], PLAIN)
        picks.append(float(res.spec.interaction_range[0, 0]))
    hits = sum(p == 5.0 for p in picks)
    ok = hits >= 8
    record(4, ok, f"R = 5 selected in {hits}/10 runs (>= 8); picks {picks}")
    assert ok


def test_criterion_05_hardcore_estimator():
    ms = MarkSet(["a"])
    spec = InteractionSpec(InteractionKind.HARDCORE, 1, interaction_range=0.5)
    w = PolygonalWindow.rectangle(0, 0, 20, 20)
    est, sizes = [], []
    for e in range(10):
        p = mh_sample(w, ms, 1.5, spec, [], SimulationConfig(seed=3000 + e, **LONG))
        sizes.append(len(p))
        est.append(float(estimate_hardcore(Cohort(ms, [p]))[0, 0]))
    est = np.array(est)
    inside = int(np.sum((est >= 0.5) & (est <= 0.55)))
    ok = inside >= 9 and np.all(est >= 0.5) and 250 <= np.mean(sizes) <= 350
    record(5, ok, f"h-hat in [0.5, 0.55] for {inside}/10 (>= 9), min {est.min():.4f} (>= 0.5), "
                  f"mean n {np.mean(sizes):.0f}")
    assert ok


def _toy_target(spec, coef, beta):
    """Enumerated Gibbs distribution on three sites with two types (one point per site)."""
    import itertools

    slots = [(s, m) for s in range(3) for m in range(2)]
    strength = spec.strength_matrix(coef)
    logw = {}
    for bits in itertools.product([0, 1], repeat=6):
        occ = [slots[k] for k in range(6) if bits[k]]
        if any(a[0] == b[0] for a, b in itertools.combinations(occ, 2)):
            continue  # two points on one site violate the hardcore
        lw = sum(math.log(beta[m]) for _, m in occ)
        for (s1, m1), (s2, m2) in itertools.combinations(occ, 2):
            d = abs(s1 - s2)
            if d < spec.interaction_range[m1, m2]:
                lw += strength[m1, m2] * math.exp(-spec.rate[m1, m2] * d)
        logw[frozenset(occ)] = lw
    z = np.logaddexp.reduce(list(logw.values()))
    return {k: math.exp(v - z) for k, v in logw.items()}


def test_criterion_06_sampler_correctness():
    w = PolygonalWindow.rectangle(0, 0, 3, 1)
    sites = np.array([[0.5, 0.5], [1.5, 0.5], [2.5, 0.5]])
    spec = InteractionSpec(InteractionKind.FIKSEL, 2, hardcore=0.1, interaction_range=1.5, rate=0.2)
    coef, beta = np.array([0.5, -0.7, 0.3]), np.array([0.8, 0.5])
    target = _toy_target(spec, coef, beta)
    chain = MetropolisHastingsChain(GibbsModel(TWO, w, list(beta), spec, coef),
                                    SimulationConfig(steps=2, burn_in=1, seed=7), sites=sites)
    chain.advance(1000, record=False)
    counts, n = {}, 200_000
    for _ in range(n):
        chain.advance(5, record=False)
        key = frozenset((int(round(x - 0.5)), int(m)) for (x, _), m in zip(chain.coords, chain.marks))
        counts[key] = counts.get(key, 0) + 1
    tv = 0.5 * sum(abs(counts.get(k, 0) / n - p) for k, p in target.items())
    tv += 0.5 * sum(v / n for k, v in counts.items() if k not in target)

    ms = MarkSet(["a"])
    sq = PolygonalWindow.rectangle(0, 0, 10, 10)
    sizes = np.array([len(mh_sample(sq, ms, 0.5, InteractionSpec.none(1), [],
                                    SimulationConfig(steps=10_000, burn_in=5_000, seed=4000 + s)))
                      for s in range(500)])
    se = sizes.std(ddof=1) / math.sqrt(len(sizes))
    gap = abs(sizes.mean() - 50.0)
    ok = tv < 0.02 and gap < 3 * se
    record(6, ok, f"toy TV {tv:.4f} (< 0.02); Poisson mean count {sizes.mean():.2f} vs 50, "
                  f"gap {gap / se:.2f} MC SE (< 3)")
    assert ok


def _pooled_l_deviation(cohort_patterns, grid, r):
    """Largest |L(r) - r| over every mark pair of the pooled inhomogeneous L."""
    per_pair = {pair: [] for pair in [(0, 0), (0, 1), (1, 1)]}
    for p in cohort_patterns:
        surfaces = mark_intensities(p, grid)
        for i, j in per_pair:
            per_pair[(i, j)].append(k_inhom_cross(p, i, j, surfaces[i], surfaces[j], r))
    dev = [np.abs(l_from_k(pool_functions(ks)).values - r) for ks in per_pair.values()]
    return float(np.max(dev))


def test_criterion_07_summary_calibration():
    w = PolygonalWindow.rectangle(0, 0, 1, 1)
    grid = tile_grid(w, 64)
    r = default_rgrid(w)
    rng = np.random.default_rng(707)

    def cohort_stat():
        return _pooled_l_deviation([poisson_pattern(w, TWO, [100, 100], rng) for _ in range(20)], grid, r)

    observed = cohort_stat()
    envelope = [cohort_stat() for _ in range(99)]
    rank = 1 + sum(e >= observed for e in envelope)
    ok = observed <= max(envelope)
    record(7, ok, f"max |L - r| {observed:.4f} inside global envelope up to {max(envelope):.4f} "
                  f"(rank {rank} of 100, {len(r)} r values)")
    assert ok


def test_criterion_08_residuals(fiksel_cohorts):
    cohorts, _ = fiksel_cohorts
    coh = cohorts[0]
    cfg = FitConfig(use_offset=False, covariates=None, border=5.0)
    true_fit = fit_cohort(coh, FIKSEL2, cfg)
    poisson_fit = fit_cohort(coh, InteractionSpec.none(2), cfg)
    rmse_fiksel = rmse(residual_totals(true_fit, coh, ("raw",)))
    rmse_poisson = rmse(residual_totals(poisson_fit, coh, ("raw",)))

    fitted = GibbsModel(TWO, FIKSEL2_WINDOW, list(np.exp(true_fit.intercepts)), FIKSEL2, true_fit.strengths)
    totals = []
    for e in range(100):
        sim = simulate_cohort(5, None, fitted, SimulationConfig(seed=5000 + e, **LONG))
        held_out, rest = sim.patterns[0], sim.patterns[1:]
        fit = fit_cohort(Cohort(TWO, rest), FIKSEL2, cfg)
        totals.append(sum(residual_total(fit, held_out, m, "raw").value for m in TWO))
    totals = np.array(totals)
    se = totals.std(ddof=1) / math.sqrt(len(totals))
    ok = abs(totals.mean()) < 2 * se and rmse_poisson > rmse_fiksel
    record(8, ok, f"mean held-out raw total {totals.mean():.3f} (MC SE {se:.3f}, within 2 SE); "
                  f"raw RMSE Poisson {rmse_poisson:.3f} > Fiksel {rmse_fiksel:.3f}")
    assert ok


def test_criterion_09_spot_checks(tmp_path):
    phi = float(fiksel_phi(0, 0, [10.0], np.array([[0.498]]), np.array([[1.3052]]), np.array([[0.110]]),
                           np.array([[27.11]]))[0])
    rounded = round(math.exp(-5.459), 4)

    # all eight comparison models from one set of irregular parameters, fitted to one cohort
    rng = np.random.default_rng(909)
    w = PolygonalWindow.rectangle(0, 0, 30, 30)
    pats = [poisson_pattern(w, TWO, [0.3, 0.2], rng, f"p{k}") for k in range(4)]
    covs = [{"age": 50.0 + 7 * k} for k in range(4)]
    cohort = Cohort(TWO, pats, covs)
    h = estimate_hardcore(cohort)
    menu = model_menu(h, np.full((2, 2), 2.0), np.full((2, 2), 0.3))
    fits = fit_menu(cohort, menu, FitConfig(offset_grid=32))
    labels = [c.label for c, _ in fits]
    expected = ["Fiksel 1", "Fiksel 2", "Fiksel 3", "Fiksel 4", "Strauss", "Hardcore", "Str Hardcore", "Poisson"]
    ok = abs(phi - 0.43446) <= 1e-4 and rounded == 0.0043 and labels == expected
    ok = ok and all(np.isfinite(f.logpl) for _, f in fits)
    record(9, ok, f"phi(10) = {phi:.5f} (0.43446 +- 1e-4); exp(-5.459) -> {rounded}; "
                  f"{len(fits)} menu models fitted")
    assert ok


def test_criterion_10_conservation():
    worst_tiles, worst_weights = 0.0, 0.0
    for seed in range(50):
        wnd = PolygonalWindow.from_rings([star_polygon(seed)])
        r = np.random.default_rng(seed)
        g = tile_grid(wnd, int(r.integers(3, 40)), int(r.integers(3, 40)))
        worst_tiles = max(worst_tiles, abs(g.areas.sum() - wnd.area) / wnd.area)
        pts = wnd.sample_uniform(int(r.integers(5, 60)), r)
        p = MarkedPointPattern(pts, r.integers(0, 2, len(pts)), wnd, TWO)
        dom = erode_border(wnd, 0.0)
        q = make_quadrature(p, dom, dummy=int(r.integers(5, 40)))
        for m in range(2):
            worst_weights = max(worst_weights, abs(q.weights[q.marks == m].sum() - dom.area) / dom.area)
    ok = worst_tiles <= 1e-6 and worst_weights <= 1e-6
    record(10, ok, f"max relative error tiles {worst_tiles:.1e}, quadrature weights {worst_weights:.1e} "
                   f"over 50 polygons (<= 1e-6)")
    assert ok
