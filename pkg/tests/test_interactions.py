import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gibbsfiksel.geometry import PolygonalWindow
from gibbsfiksel.interactions import (
    HardcoreError,
    InteractionKind,
    InteractionSpec,
    NeighbourTable,
    estimate_hardcore,
    fiksel_phi,
    sufficient_statistics,
    table2_phi,
)
from gibbsfiksel.patterns import Cohort, MarkedPointPattern, MarkSet

KINDS_WITH_PAIRS = [InteractionKind.FIKSEL, InteractionKind.FIKSEL_WITHIN, InteractionKind.STRAUSS,
                    InteractionKind.STRAUSS_HARDCORE, InteractionKind.HARDCORE]


def make_spec(kind, m=2):
    h = np.array([[0.3, 0.2], [0.2, 0.4]])[:m, :m]
    r = np.array([[2.0, 1.5], [1.5, 2.5]])[:m, :m]
    g = np.array([[0.5, 0.2], [0.2, 1.0]])[:m, :m]
    return InteractionSpec(kind, m, hardcore=h, interaction_range=r, rate=g)


def brute_statistics(u, mu, coords, marks, spec, skip=-1):
    """Direct double loop over the potential definitions."""
    s = np.zeros(spec.n_coef)
    hard = False
    for k, (x, mx) in enumerate(zip(coords, marks)):
        if k == skip:
            continue
        d = float(np.hypot(*(np.asarray(u) - x)))
        kind = spec.kind
        if kind in (InteractionKind.FIKSEL, InteractionKind.FIKSEL_WITHIN):
            h, r, g = spec.hardcore[mu, mx], spec.interaction_range[mu, mx], spec.rate[mu, mx]
            if d < h:
                hard = True
            elif d < r and spec.column_of[mu, mx] >= 0:
                s[spec.column_of[mu, mx]] += np.exp(-g * d)
        elif kind is InteractionKind.STRAUSS:
            if d <= spec.interaction_range[mu, mx]:
                s[spec.column_of[mu, mx]] += 1
        elif kind is InteractionKind.HARDCORE:
            hard |= d <= spec.interaction_range[mu, mx]
        elif kind is InteractionKind.STRAUSS_HARDCORE:
            if d < spec.hardcore[mu, mx]:
                hard = True
            elif d <= spec.interaction_range[mu, mx]:
                s[spec.column_of[mu, mx]] += 1
    return s, hard


def test_fiksel_phi_pieces():
    h = np.array([[0.5]])
    c = np.array([[2.0]])
    g = np.array([[0.3]])
    r = np.array([[4.0]])
    out = fiksel_phi(0, 0, [0.2, 0.5, 1.0, 3.99, 4.0, 9.0], h, c, g, r)
    assert out[0] == -np.inf
    np.testing.assert_allclose(out[1:4], 2.0 * np.exp(-0.3 * np.array([0.5, 1.0, 3.99])))
    assert out[4] == 0.0 and out[5] == 0.0


def test_table2_potentials():
    r = np.array([[2.0]])
    gam = np.array([[0.5]])
    np.testing.assert_allclose(table2_phi("strauss", 0, 0, [1.0, 2.0, 2.1], r, gamma=gam), [np.log(0.5)] * 2 + [0.0])
    out = table2_phi("hardcore", 0, 0, [1.0, 2.0, 2.1], r)
    assert list(out) == [-np.inf, -np.inf, 0.0]
    out = table2_phi("strauss_hardcore", 0, 0, [0.1, 1.0, 2.5], r, gamma=gam, hardcore=np.array([[0.5]]))
    assert out[0] == -np.inf and out[1] == pytest.approx(np.log(0.5)) and out[2] == 0.0


def test_spec_validation():
    with pytest.raises(ValueError):
        InteractionSpec("fiksel", 2, hardcore=[[0.1, 0.2], [0.3, 0.1]], interaction_range=1.0, rate=0.1)
    with pytest.raises(ValueError):
        InteractionSpec("fiksel", 1, hardcore=1.0, interaction_range=1.0, rate=0.1)
    with pytest.raises(ValueError):
        InteractionSpec("strauss", 1)
    with pytest.raises(ValueError):
        InteractionSpec("fiksel", 2, hardcore=[[np.nan, 0.1], [0.1, 0.1]], interaction_range=1.0, rate=0.1)


def test_pairs_and_names():
    labels = ["T", "B", "M"]
    full = make_spec(InteractionKind.FIKSEL, 2)
    assert full.pairs == ((0, 0), (0, 1), (1, 1))
    assert full.coef_names(labels) == ["fiksel[T:T]", "fiksel[T:B]", "fiksel[B:B]"]
    within = InteractionSpec("fiksel_within", 3, hardcore=0.1, interaction_range=1.0, rate=0.1)
    assert within.pairs == ((0, 0), (1, 1), (2, 2))
    assert within.column_of[0, 1] == -1
    assert InteractionSpec.none(3).n_coef == 0
    assert full.reach == 2.5


def test_strength_matrix_and_dict_round_trip():
    spec = make_spec(InteractionKind.FIKSEL)
    np.testing.assert_allclose(spec.strength_matrix([1, 2, 3]), [[1, 2], [2, 3]])
    back = InteractionSpec.from_dict(spec.to_dict(["a", "b"]))
    assert back.kind is spec.kind
    np.testing.assert_array_equal(back.rate, spec.rate)
    changed = spec.set_pair(0, 1, interaction_range=2.2)
    assert changed.interaction_range[1, 0] == 2.2 and spec.interaction_range[1, 0] == 1.5


@pytest.mark.parametrize("kind", KINDS_WITH_PAIRS)
@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_neighbour_statistics_match_brute_force(kind, seed):
    rng = np.random.default_rng(seed)
    ms = MarkSet(["a", "b"])
    w = PolygonalWindow.rectangle(0, 0, 6, 6)
    n = int(rng.integers(0, 30))
    p = MarkedPointPattern(w.sample_uniform(n, rng), rng.integers(0, 2, n), w, ms)
    spec = make_spec(kind)
    q = w.sample_uniform(15, rng)
    qm = rng.integers(0, 2, 15)
    stats, flags = NeighbourTable(q, qm, p, spec.reach).statistics(spec)
    for k in range(15):
        s, hard = brute_statistics(q[k], qm[k], p.coords, p.marks, spec)
        np.testing.assert_allclose(stats[k], s, atol=1e-12)
        assert flags[k] == hard


def test_sufficient_statistics_excludes_the_point_itself():
    ms = MarkSet(["a", "b"])
    w = PolygonalWindow.rectangle(0, 0, 10, 10)
    p = MarkedPointPattern([[1, 1], [2, 1], [1, 1]], [0, 0, 1], w, ms)
    spec = InteractionSpec("strauss", 2, interaction_range=1.5)
    s, hard = sufficient_statistics([1, 1], 0, p, spec)
    # neighbours: (2,1) same type and the coincident type-b point
    np.testing.assert_allclose(s, [1, 1, 0])
    assert not hard
    sh = InteractionSpec("strauss_hardcore", 2, hardcore=0.5, interaction_range=1.5)
    _, hard = sufficient_statistics([1, 1], 0, p, sh)
    assert hard


def test_hardcore_boundary_is_allowed():
    ms = MarkSet(["a"])
    w = PolygonalWindow.rectangle(0, 0, 10, 10)
    p = MarkedPointPattern([[1, 1]], [0], w, ms)
    spec = InteractionSpec("fiksel", 1, hardcore=0.5, interaction_range=2.0, rate=0.0)
    s, hard = sufficient_statistics([1.5, 1], 0, p, spec)
    assert not hard and s[0] == pytest.approx(1.0)
    _, hard = sufficient_statistics([1.49, 1], 0, p, spec)
    assert hard


def test_estimate_hardcore_is_minimum_over_patients():
    ms = MarkSet(["a", "b"])
    w = PolygonalWindow.rectangle(0, 0, 10, 10)
    p1 = MarkedPointPattern([[1, 1], [1, 2], [4, 4]], [0, 0, 1], w, ms, "1")
    p2 = MarkedPointPattern([[5, 5], [5.5, 5], [8, 8]], [0, 1, 1], w, ms, "2")
    h = estimate_hardcore(Cohort(ms, [p1, p2]))
    assert h[0, 0] == pytest.approx(1.0)
    assert h[0, 1] == pytest.approx(0.5)
    assert h[1, 1] == pytest.approx(np.hypot(2.5, 3))
    only_a = MarkedPointPattern([[1, 1]], [0], w, ms, "3")
    with pytest.warns(UserWarning):
        h = estimate_hardcore(Cohort(ms, [only_a]))
    assert np.isnan(h).all()
    dup = MarkedPointPattern([[1, 1], [1, 1]], [0, 1], w, ms, "4")
    with pytest.raises(HardcoreError):
        estimate_hardcore(Cohort(ms, [dup]))


def test_negative_decay_rates_match_brute_force():
    # a negative rate makes the potential grow towards the range cutoff
    rng = np.random.default_rng(4)
    ms = MarkSet(["a", "b"])
    w = PolygonalWindow.rectangle(0, 0, 6, 6)
    p = MarkedPointPattern(w.sample_uniform(40, rng), rng.integers(0, 2, 40), w, ms)
    spec = InteractionSpec("fiksel", 2, hardcore=0.05, interaction_range=2.0, rate=[[-0.3, -0.1], [-0.1, -0.5]])
    q = w.sample_uniform(20, rng)
    qm = rng.integers(0, 2, 20)
    stats, _ = NeighbourTable(q, qm, p, spec.reach).statistics(spec)
    for k in range(20):
        np.testing.assert_allclose(stats[k], brute_statistics(q[k], qm[k], p.coords, p.marks, spec)[0], atol=1e-12)
    assert fiksel_phi(0, 0, [1.0], spec.hardcore, np.ones((2, 2)), spec.rate, spec.interaction_range)[0] == \
        pytest.approx(np.exp(0.3))
