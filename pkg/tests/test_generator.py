from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from erosion import generator as gen
from erosion.analytics import kappa
from erosion.generator import PwLinear, ThetaFamily, WeakOrdering
from erosion.npoint import erosion_theta_family, general_theta_family


def _blocks(cell):
    return [set(b) for b in cell.ordered_blocks]


def test_cell_of_examples():
    assert _blocks(gen.cell_of([1.0, 2.0, 3.0])) == [{0}, {1}, {2}]
    assert _blocks(gen.cell_of([0.0, 0.0, 0.0])) == [{0, 1, 2}]
    tol = 1e-6
    assert _blocks(gen.cell_of([1.0, 1.0 + tol / 2, 5.0], tol)) == [{0, 1}, {2}]
    assert _blocks(gen.cell_of([3.0, 1.0, 2.0])) == [{1}, {2}, {0}]
    with pytest.raises(ValueError):
        gen.cell_of([0.0, math.nan])


def test_weak_ordering_validation():
    with pytest.raises(ValueError):
        WeakOrdering((frozenset([0]), frozenset([0, 1])))
    with pytest.raises(ValueError):
        WeakOrdering((frozenset(), frozenset([0])))
    assert len(gen.all_weak_orderings(3)) == 13
    assert len(list(WeakOrdering((frozenset([0, 1, 2]),)).refinements())) == 6


def test_vectors_V_examples():
    one = gen.vectors_V([0.0])
    assert sorted(v.tolist() for _, _, v in one) == [[-1.0], [1.0]]
    two = sorted(v.tolist() for _, _, v in gen.vectors_V([0.0, 0.0]))
    assert two == [[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]
    three = gen.vectors_V([0.0, 0.0, 5.0])
    assert len(three) == 6
    assert sum(1 for i, j, _ in three if (i | j) == {0, 1}) == 4


@given(st.lists(st.integers(-3, 3), min_size=1, max_size=6))
def test_vectors_V_size(xs):
    x = np.array(xs, dtype=float)
    _, counts = np.unique(x, return_counts=True)
    vecs = gen.vectors_V(x)
    assert len(vecs) == sum(2**int(c) for c in counts)
    for i_set, j_set, v in vecs:
        assert not (i_set & j_set)
        assert np.all(v[list(i_set)] == 1) and np.all(v[list(j_set)] == -1)
        assert np.count_nonzero(v) == len(i_set) + len(j_set)


def test_directional_gradient_examples():
    f = PwLinear(2, b=np.ones((2, 2)))
    assert gen.directional_gradient(f, [0.0, 0.0], [1.0, -1.0]) == 2.0
    assert gen.directional_gradient(f, [0.0, 0.0], [1.0, 1.0]) == 0.0
    assert gen.directional_gradient(f.to_table(), [0.0, 0.0], [1.0, -1.0]) == 2.0
    lin = PwLinear.linear([0.5, -2.0, 3.0])
    v = np.array([1.0, 0.0, -1.0])
    x = [0.0, 0.0, 0.0]
    assert gen.directional_gradient(lin, x, v) == -gen.directional_gradient(lin, x, -v)
    with pytest.raises(TypeError):
        gen.directional_gradient(lambda z: 0.0, x, v)
    with pytest.raises(ValueError):
        gen.directional_gradient(lin, [0.0, 0.0], [1.0, 1.0])


@given(st.lists(st.integers(-2, 2), min_size=2, max_size=4), st.data())
def test_directional_gradient_matches_difference_quotient(xs, data):
    n = len(xs)
    x = np.array(xs, dtype=float)
    b = np.array(data.draw(st.lists(st.integers(-3, 3), min_size=n * n, max_size=n * n)), dtype=float).reshape(n, n)
    a = np.array(data.draw(st.lists(st.integers(-3, 3), min_size=n, max_size=n)), dtype=float)
    v = np.array(data.draw(st.lists(st.sampled_from([-1, 0, 1]), min_size=n, max_size=n)), dtype=float)
    f = PwLinear(n, a=a, b=b)
    eps = 2.0**-20  # exact in binary; well inside the cell entered
    quotient = (f.evaluate(x + eps * v) - f.evaluate(x)) / eps
    assert gen.directional_gradient(f, x, v) == pytest.approx(quotient, abs=1e-9)
    assert gen.directional_gradient(f.to_table(), x, v) == pytest.approx(quotient, abs=1e-9)


def test_generator_on_g():
    for theta in [0.5, 1.0, 3.0]:
        fam = erosion_theta_family(theta)
        assert gen.apply_generator(fam, PwLinear.g(2), [0.0, 0.0]) == 4 * theta
        assert gen.apply_generator(fam, PwLinear.g(3), [0.0, 0.0, 0.0]) == 12 * theta
        assert gen.apply_generator(fam, PwLinear.g(3), [0.0, 0.0, 1.0]) == 4 * theta
        assert gen.apply_generator(fam, PwLinear.g(3), [0.0, 1.0, 2.0]) == 0.0


def test_generator_family_too_small():
    fam = erosion_theta_family(1.0, k_max=2)
    with pytest.raises(ValueError):
        gen.apply_generator(fam, PwLinear.g(3), [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        gen.apply_generator(fam, PwLinear.g(3), [0.0, 0.0])


def _random_f(data, n):
    a = np.array(data.draw(st.lists(st.integers(-4, 4), min_size=n, max_size=n)), dtype=float) / 4
    b = np.array(data.draw(st.lists(st.integers(-4, 4), min_size=n * n, max_size=n * n)), dtype=float).reshape(n, n) / 4
    return PwLinear(n, a=a, b=b)


@given(st.integers(2, 4), st.data())
def test_generator_is_cell_constant(n, data):
    ranks = np.array(data.draw(st.lists(st.integers(0, 2), min_size=n, max_size=n)), dtype=float)
    cell = gen.cell_of(ranks)
    f = _random_f(data, n)
    fam = erosion_theta_family(data.draw(st.sampled_from([0.5, 1.0, 2.0])))
    # a second point of the same cell: an increasing map of the rank values
    levels = np.unique(ranks)
    new_levels = np.cumsum(np.array(data.draw(st.lists(st.integers(1, 9), min_size=levels.size,
                                                           max_size=levels.size)), dtype=float))
    other = new_levels[np.searchsorted(levels, ranks)]
    assert gen.cell_of(other) == cell
    assert gen.apply_generator(fam, f, ranks) == gen.apply_generator(fam, f, other)
    assert gen.apply_generator(fam, f.to_table(), ranks) == pytest.approx(gen.apply_generator(fam, f, ranks), abs=1e-12)


@given(st.integers(1, 4), st.data())
def test_generator_vanishes_at_distinct_points(n, data):
    x = np.array(data.draw(st.lists(st.integers(-50, 50), min_size=n, max_size=n, unique=True)), dtype=float)
    f = _random_f(data, n)
    fam = erosion_theta_family(1.0)
    assert gen.apply_generator(fam, f, x) == 0.0


@given(st.integers(2, 4), st.data(), st.sampled_from([0.25, -1.5, 3.0]))
def test_symmetric_boundary_shift_leaves_generator(n, data, delta):
    x = np.array(data.draw(st.lists(st.integers(0, 2), min_size=n, max_size=n)), dtype=float)
    f = _random_f(data, n)
    fam = erosion_theta_family(1.0)
    assert gen.apply_generator(fam.shifted(delta), f, x) == gen.apply_generator(fam, f, x)


@given(st.integers(1, 4), st.data())
def test_generator_nonnegative_for_positive_pair_weights(n, data):
    x = np.array(data.draw(st.lists(st.integers(0, 2), min_size=n, max_size=n)), dtype=float)
    b = np.array(data.draw(st.lists(st.integers(0, 4), min_size=n * n, max_size=n * n)), dtype=float).reshape(n, n)
    assert gen.apply_generator(erosion_theta_family(1.0), PwLinear(n, b=b), x) >= 0


def test_generator_many_matches_pointwise():
    rng = np.random.default_rng(3)
    states = rng.integers(0, 3, size=(200, 3)).astype(float)
    f = PwLinear(3, a=[0.5, 0.0, -1.0], b=[[0, 1, 0.5], [0, 0, 2], [0, 0, 0]])
    fam = erosion_theta_family(1.0)
    want = np.array([gen.apply_generator(fam, f, s) for s in states])
    assert np.array_equal(gen.apply_generator_many(fam, f, states), want)
    assert np.array_equal(gen.apply_generator_many(fam, f, states + 1e-12 * rng.random(states.shape), 1e-9), want)
    table = gen.generator_table(fam, f)
    assert table.size == 27


def test_consistency_check_examples():
    assert erosion_theta_family(1.0, 20).values.shape == (22, 22)
    assert gen.consistency_check(erosion_theta_family(1.0, 20)).passed
    assert gen.consistency_check(general_theta_family(1.0, 0.5, -0.5, 20)).passed
    bad = gen.consistency_check(erosion_theta_family(1.0).perturbed(1, 1, 0.1))
    assert not bad.passed
    assert (1, 1) in [(k, l) for k, l, *_ in bad.consistency_violations]
    assert (0, 1) in [(k, l) for k, l, *_ in bad.consistency_violations]
    neg = gen.consistency_check(erosion_theta_family(1.0).perturbed(2, 2, -0.5))
    assert (2, 2, -0.5) in neg.positivity_violations
    with pytest.raises(ValueError):
        gen.consistency_check(erosion_theta_family(1.0, 4), 10)


def test_family_round_trip_and_access():
    fam = general_theta_family(1.0, 0.5, 0.25, 6)
    back = ThetaFamily.from_json(fam.to_json())
    assert np.array_equal(back.values, fam.values) and back.k_max == 6
    assert fam.theta_of_vector([1, -1, 0]) == fam(1, 1)
    with pytest.raises(ValueError):
        fam.theta(9, 0)
    with pytest.raises(ValueError):
        ThetaFamily(2, np.zeros((3, 3)))


def test_form_b_validation_and_conversion():
    f = PwLinear(3, c=1.0, a=[1.0, 0.0, -0.5], b=[[0, 1, 2], [0, 0, -1], [0, 0, 0]])
    t = f.to_table()
    rng = np.random.default_rng(0)
    for x in rng.normal(size=(20, 3)):
        assert t.evaluate(x) == pytest.approx(f.evaluate(x), abs=1e-12)
    back = t.to_closed_form()
    assert np.allclose(back.a, f.a) and np.allclose(back.b, f.b) and back.c == pytest.approx(1.0)
    table = dict(t.table)
    cell = next(iter(table))
    g, o = table[cell]
    table[cell] = (g, o + 1.0)
    with pytest.raises(ValueError):
        PwLinear(3, table=table)
    with pytest.raises(ValueError):
        PwLinear(3, table={cell: (g, o)})
    # max(x1, x2) is continuous but has no closed form of this shape
    maxf = {}
    for c in gen.all_weak_orderings(2):
        if c.is_strict:
            top = next(iter(c.ordered_blocks[-1]))
            maxf[c] = (np.eye(2)[top], 0.0)
    m = PwLinear(2, table=maxf)
    assert m.evaluate([3.0, -1.0]) == 3.0
    back2 = m.to_closed_form()
    assert back2.evaluate([3.0, -1.0]) == pytest.approx(3.0)
    assert PwLinear.from_json(f.to_json()).evaluate([1.0, 2.0, 3.0]) == pytest.approx(f.evaluate([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        PwLinear(2, a=[1.0, 2.0, 3.0])


def test_psi_closed_form_examples():
    g2 = PwLinear.g(2)
    assert gen.psi_total(g2, [0.0, 0.0], 1.0) == pytest.approx(2 * kappa(1.0, 0.0), rel=1e-15)
    assert abs(gen.psi_total(PwLinear.g(3), [0.0, 40.0, 80.0], 1.0)) < 1e-150
    with pytest.raises(ValueError):
        gen.psi_closed_form(g2, [0.0, 0.0], 2, 1.0)


def test_psi_limit_recovers_generator():
    fam = erosion_theta_family(1.0)
    for f, x in [(PwLinear.g(2), [0.0, 0.0]), (PwLinear.g(3), [0.0, 0.0, 0.0]), (PwLinear.g(3), [0.0, 0.0, 1.0])]:
        vals = [math.sqrt(math.pi / t) * gen.psi_total(f, x, t) for t in (1.0, 0.25, 1 / 16, 1e-8)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert abs(vals[-1] - gen.apply_generator(fam, f, x)) <= 1e-6


@pytest.mark.slow
def test_psi_monte_carlo_matches_closed_form():
    g3 = PwLinear.g(3)
    x = [0.0, 0.0, 0.0]
    for k in range(3):
        est = gen.psi_monte_carlo(g3, x, k, 1.0, replicas=4000, seed=10 + k)
        assert est.z_score(gen.psi_closed_form(g3, x, k, 1.0)) <= 3
    est = gen.psi_monte_carlo(g3, [0.0, 0.5, -0.3], 1, 1.0, replicas=4000, seed=20)
    assert est.z_score(gen.psi_closed_form(g3, [0.0, 0.5, -0.3], 1, 1.0)) <= 3
    const = gen.psi_monte_carlo(PwLinear(3, c=2.0), x, 0, 1.0, replicas=50, seed=1)
    assert const.value == 0.0
