from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import linalg
from scipy import stats as sps

from erosion import lattice
from erosion.lattice import ArrowField, DiscreteKernel, WindowExitError


def _constant_field(window, value=1):
    mask = lattice._parity_mask(window)
    return ArrowField(window, (mask * value).astype(np.int8), 0)


def test_field_is_deterministic_and_balanced():
    w = (0, 1999, 0, 999)
    a = lattice.sample_arrow_field(w, 5)
    assert a == lattice.sample_arrow_field(w, 5)
    vals = a.site_values()
    assert vals.size == 10**6
    assert abs(vals.mean()) <= 4 / math.sqrt(vals.size)
    assert a != lattice.sample_arrow_field(w, 6)


def test_fields_from_split_seeds_are_uncorrelated():
    from erosion._seeding import mix

    w1, w2 = (0, 1999, 0, 999), (5000, 6999, 0, 999)
    a = lattice.sample_arrow_field(w1, mix(9, 1)).site_values().astype(float)
    b = lattice.sample_arrow_field(w2, mix(9, 2)).site_values().astype(float)
    assert abs(np.mean(a * b)) <= 4 / math.sqrt(a.size)


def test_field_validation():
    with pytest.raises(ValueError):
        lattice.sample_arrow_field((3, 2, 0, 1), 0)
    w = (0, 3, 0, 1)
    bad = np.ones((2, 4), dtype=np.int8)
    with pytest.raises(ValueError):
        ArrowField(w, bad, 0)
    f = lattice.sample_arrow_field(w, 1)
    with pytest.raises(ValueError):
        f.sign(1, 0)
    with pytest.raises(WindowExitError):
        f.sign(10, 0)
    with pytest.raises(ValueError):
        lattice.sample_arrow_field(w, None)


def test_field_round_trips():
    f = lattice.sample_arrow_field((-5, 7, 2, 9), 3)
    assert ArrowField.from_bytes(f.to_bytes()) == f
    assert ArrowField.from_bytes(f.to_bytes()).seed_id == f.seed_id
    assert ArrowField.from_json(f.to_json()) == f
    with pytest.raises(ValueError):
        ArrowField.from_bytes(b"ZZZZ" + f.to_bytes()[4:])


def test_agreement_probability_against_matrix_exponential():
    q = np.array([[-1.0, 1.0], [1.0, -1.0]])
    for u in [0.0, 0.1, 0.5, 2.0]:
        assert lattice.agreement_probability(u) == pytest.approx(linalg.expm(q * u)[0, 0], abs=1e-14)
    assert lattice.ResampleClock(0.5).agreement == lattice.agreement_probability(0.5)
    with pytest.raises(ValueError):
        lattice.ResampleClock(-0.1)


def test_evolution_agreement_rates():
    w = (0, 1999, 0, 999)
    f = lattice.sample_arrow_field(w, 2)
    assert lattice.evolve_arrow_field(f, 0.0, 3) == f
    for u, seed in [(0.5, 4), (50.0, 5)]:
        g = lattice.evolve_arrow_field(f, u, seed)
        p = lattice.agreement_probability(u)
        agree = np.mean(g.site_values() == f.site_values())
        assert abs(agree - p) <= 4 * math.sqrt(p * (1 - p) / 10**6)
    with pytest.raises(ValueError):
        lattice.evolve_arrow_field(f, -1.0, 1)


def test_trace_on_constant_field_is_straight():
    f = _constant_field((0, 20, 0, 20), 1)
    assert np.array_equal(lattice.trace_walk(f, (0, 0), 10), np.arange(11))


def test_traced_paths_coalesce():
    f = lattice.sample_arrow_field((-100, 100, 0, 99), 8)
    paths = lattice.trace_walks(f, np.arange(-40, 41, 2), 0, 99)
    for i in range(paths.shape[0] - 1):
        meet = np.flatnonzero(paths[i] == paths[i + 1])
        if meet.size:
            assert np.array_equal(paths[i, meet[0]:], paths[i + 1, meet[0]:])


def test_trace_window_exit():
    f = _constant_field((0, 5, 0, 20), 1)
    with pytest.raises(WindowExitError):
        lattice.trace_walk(f, (0, 0), 10)
    with pytest.raises(ValueError):
        lattice.trace_walk(f, (1, 0), 3)


@pytest.mark.slow
def test_traced_displacement_variance():
    n, per_field, spacing = 400, 500, 64
    disp = []
    for i in range(20):
        ks = spacing * np.arange(per_field)
        f = lattice.sample_arrow_field((-n - 2, int(ks[-1]) + n + 2, 0, n - 1), 100 + i)
        p = lattice.trace_walks(f, ks, 0, n)
        disp.append(p[:, -1] - p[:, 0])
    disp = np.concatenate(disp).astype(float)
    assert abs(np.var(disp) / n - 1) <= 0.05


def test_exact_kernel_point_cases():
    f = _constant_field((-10, 10, 0, 10), 1)
    k = lattice.exact_kernel(f, 0.8, (0, 0), 2)
    sites, probs = k.row(1)
    assert dict(zip(sites.tolist(), probs.tolist())) == {-1: pytest.approx(0.2), 1: pytest.approx(0.8)}
    g = lattice.sample_arrow_field((-30, 30, 0, 30), 4)
    path = lattice.trace_walk(g, (0, 0), 20)
    one = lattice.exact_kernel(g, 1.0, (0, 0), 21)
    for n in range(21):
        sites, probs = one.row(n)
        assert probs[sites == path[n]][0] == 1.0 and probs.sum() == 1.0


def test_exact_kernel_half_is_binomial():
    g = lattice.sample_arrow_field((-30, 30, 0, 30), 5)
    k = lattice.exact_kernel(g, 0.5, (0, 0), 21)
    for n in (1, 7, 20):
        sites, probs = k.row(n)
        assert np.allclose(probs, sps.binom.pmf(np.arange(n + 1), n, 0.5), rtol=1e-13, atol=0)
        assert np.all((sites + n) % 2 == 0)


def test_exact_kernel_validation():
    g = lattice.sample_arrow_field((-5, 5, 0, 5), 1)
    with pytest.raises(ValueError):
        lattice.exact_kernel(g, 0.4, (0, 0), 3)
    with pytest.raises(ValueError):
        lattice.exact_kernel(g, 0.7, (1, 0), 3)
    with pytest.raises(WindowExitError):
        lattice.exact_kernel(g, 0.7, (0, 0), 20)


def test_compose_identity_and_direct():
    g = lattice.sample_arrow_field((-40, 40, 0, 40), 6)
    k5 = lattice.exact_kernel(g, 0.7, (0, 0), 6)
    assert lattice.kernel_compose(k5, g, 0.7, 5) is k5
    composed = lattice.kernel_compose(k5, g, 0.7, 10)
    direct = lattice.exact_kernel(g, 0.7, (0, 0), 11)
    assert max(np.max(np.abs(a - b)) for a, b in zip(composed.rows, direct.rows)) <= 1e-12
    with pytest.raises(ValueError):
        lattice.kernel_compose(k5, g, 0.8, 10)
    with pytest.raises(ValueError):
        lattice.kernel_compose(k5, g, 0.7, 3)


def test_compose_at_q_one_concatenates_paths():
    g = lattice.sample_arrow_field((-40, 40, 0, 40), 7)
    k = lattice.kernel_compose(lattice.exact_kernel(g, 1.0, (0, 0), 8), g, 1.0, 25)
    path = lattice.trace_walk(g, (0, 0), 25)
    for n in range(26):
        sites, probs = k.row(n)
        assert probs[sites == path[n]][0] == 1.0


@given(st.integers(0, 2**32 - 1), st.floats(0.5, 1.0), st.integers(0, 12), st.integers(0, 12))
def test_flow_property(seed, q, a, b):
    g = lattice.sample_arrow_field((-30, 30, 0, 30), seed)
    t, n = min(a, b) + 2, max(a, b) + 14
    first = lattice.exact_kernel(g, q, (0, 2), t - 2 + 1)
    composed = lattice.kernel_compose(first, g, q, n)
    direct = lattice.exact_kernel(g, q, (0, 2), n - 2 + 1)
    for x, y in zip(composed.rows, direct.rows):
        assert np.max(np.abs(x - y)) <= 1e-12
    for i, r in enumerate(direct.rows):
        assert abs(r.sum() - 1) <= 1e-12 and np.all(r >= 0)
        sites, _ = direct.row(2 + i)
        assert np.all((sites + 2 + i) % 2 == 0)


def test_kernel_round_trips():
    g = lattice.sample_arrow_field((-10, 10, 0, 10), 2)
    k = lattice.exact_kernel(g, 0.6, (0, 0), 8)
    back = DiscreteKernel.from_bytes(k.to_bytes())
    assert back.start == k.start and back.q == k.q
    assert all(np.array_equal(a, b) for a, b in zip(back.rows, k.rows))
    js = DiscreteKernel.from_json(k.to_json())
    assert all(np.array_equal(a, b) for a, b in zip(js.rows, k.rows))
    with pytest.raises(ValueError):
        DiscreteKernel((1, 0), 0.6, (np.ones(1),))


def test_npoint_sample_degenerate_cases():
    g = lattice.sample_arrow_field((-60, 60, 0, 49), 3)
    starts = [(0, 0), (0, 0), (4, 0), (10, 0)]
    walks = lattice.discrete_npoint_sample(g, 1.0, starts, 50, seed=1)
    assert np.array_equal(walks, lattice.trace_walks(g, [0, 0, 4, 10], 0, 50))
    same = np.array([lattice.discrete_npoint_sample(g, 0.5, [(0, 0), (0, 0)], 1, seed=s)[:, 1]
                     for s in range(4000)])
    frac = np.mean(same[:, 0] == same[:, 1])
    assert abs(frac - 0.5) <= 4 * math.sqrt(0.25 / 4000)
    with pytest.raises(ValueError):
        lattice.discrete_npoint_sample(g, 0.5, [(0, 0), (1, 1)], 5, seed=1)
    with pytest.raises(WindowExitError):
        lattice.discrete_npoint_sample(g, 0.5, [(0, 0)], 80, seed=1)


def test_npoint_meeting_matches_kernel_products():
    q, n = 0.75, 12
    hits, prods = [], []
    for s in range(3000):
        g = lattice.sample_arrow_field((-20, 20, 0, n), s)
        end = lattice.discrete_npoint_sample(g, q, [(0, 0), (2, 0)], n, seed=s, terminal_only=True)
        hits.append(end[0] == end[1])
        sa, pa = lattice.exact_kernel(g, q, (0, 0), n + 1).row(n)
        sb, pb = lattice.exact_kernel(g, q, (2, 0), n + 1).row(n)
        both = dict(zip(sa.tolist(), pa))
        prods.append(sum(both.get(k, 0.0) * p for k, p in zip(sb.tolist(), pb)))
    hits, prods = np.array(hits, dtype=float), np.array(prods)
    diff = hits - prods
    assert abs(diff.mean()) <= 4 * diff.std(ddof=1) / math.sqrt(diff.size)


def test_diffusive_rescale():
    path = np.arange(11)
    t, v = lattice.diffusive_rescale(path, 1.0)
    assert np.array_equal(t, np.arange(11.0)) and np.array_equal(v, path.astype(float))
    t, v = lattice.diffusive_rescale(path, 1 / 100)
    assert v[-1] == pytest.approx(10 * 0.1) and t[-1] == pytest.approx(0.1)
    with pytest.raises(ValueError):
        lattice.diffusive_rescale(path, 0.0)


def test_markov_composition_check():
    w = (0, 1999, 0, 999)
    rep = lattice.markov_composition_check(w, 0.25, 0.25, 1)
    assert rep.sites == 10**6 and rep.passed
    assert rep.expected == pytest.approx(0.5 * (1 + math.exp(-1)))
    only = lattice.markov_composition_check(w, 0.4, 0.0, 2)
    assert only.passed and only.expected == lattice.agreement_probability(0.4)
    far = lattice.markov_composition_check(w, 20.0, 20.0, 3)
    assert far.passed and abs(far.agreement_two_step - 0.5) < 0.005
    with pytest.raises(ValueError):
        lattice.markov_composition_check(w, -1.0, 0.0, 1)
