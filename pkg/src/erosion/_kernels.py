"""Compiled inner loops.  Everything here is pure given the generator state.

numba is optional: without it the same functions run as plain Python, with
identical results and a large slowdown.
"""
from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


@njit(cache=True)
def bridge_local_time_sample(rng, a, b, h):
    """Local time at 0 accumulated by a Brownian bridge from ``a`` to ``b``
    over time ``h`` (unit variance rate), sampled exactly.

    Given the endpoints the bridge touches 0 with probability
    ``exp(-2ab/h)`` (one when the signs differ); given a touch,
    ``y = |a| + |b| + L`` has density proportional to ``y exp(-y^2/2h)`` on
    ``y > |a| + |b|``, a Rayleigh tail that inverts in closed form.
    Returns ``(hit, local_time)``.
    """
    c = abs(a) + abs(b)
    if a * b > 0.0:
        if rng.random() >= math.exp(-2.0 * a * b / h):
            return False, 0.0
    u = 1.0 - rng.random()
    y = math.sqrt(c * c - 2.0 * h * math.log(u))
    return True, y - c


@njit(cache=True)
def _bridge_point(rng, a, b, s, h):
    """Z(s) for a Brownian bridge a -> b over [0, h] that does not touch 0
    (when a, b share a sign): bridge proposal accepted with the product of
    the two sub-bridge avoidance probabilities."""
    if s <= 0.0:
        return a
    if s >= h:
        return b
    mean = a + (b - a) * (s / h)
    sdb = math.sqrt(s * (h - s) / h)
    if a * b <= 0.0:
        return mean + sdb * rng.standard_normal()
    while True:
        z = mean + sdb * rng.standard_normal()
        if z * a <= 0.0:
            continue
        acc = -math.expm1(-2.0 * a * z / s) * -math.expm1(-2.0 * z * b / (h - s))
        if rng.random() < acc:
            return z


@njit(cache=True)
def theta_core(rng, z0, drift, skew, theta, h, t_out):
    """Simulate the auxiliary diffusion ``Z = z0 + B + drift*s + skew*L(Z)`` on
    a fine grid of step ``h`` and invert ``alpha(s) = 2s + L(s)/theta`` at the
    (increasing, starting at 0) times ``t_out``.

    Local time accrues at a single point inside each step that touches 0 (the
    zero of the piecewise-linear path a -> 0 -> b); in real time that point
    becomes a pause of length ``dL/theta`` during which Z(A(t)) == 0 exactly.

    Returns fine-grid arrays (z, cumulative local time, alpha, zero fraction,
    local-time increment) and per-output arrays (A, Z(A), L(A)).
    """
    t_end = t_out[-1]
    cap = int(t_end / (2.0 * h)) + 2
    z = np.empty(cap + 1)
    lt = np.empty(cap + 1)
    alpha = np.empty(cap + 1)
    frac = np.zeros(cap)
    dl = np.zeros(cap)
    z[0] = z0
    lt[0] = 0.0
    alpha[0] = 0.0
    sd = math.sqrt(h)
    p_up = 0.5 * (1.0 + skew)
    m = 0
    while alpha[m] <= t_end:
        if m == cap:
            break
        a = z[m]
        if skew == 0.0:
            b = a + drift * h + sd * rng.standard_normal()
            hit, dlt = bridge_local_time_sample(rng, a, b, h)
        else:
            # skew Brownian step through its reflected modulus, then a drift shift
            w = abs(a) + sd * rng.standard_normal()
            r = abs(w)
            if w <= 0.0:
                hit = True
            else:
                hit = rng.random() < math.exp(-2.0 * abs(a) * r / h)
            if hit:
                c = abs(a) + r
                u = 1.0 - rng.random()
                dlt = math.sqrt(c * c - 2.0 * h * math.log(u)) - c
                sign = 1.0 if rng.random() < p_up else -1.0
            else:
                dlt = 0.0
                sign = 1.0 if a > 0.0 else -1.0
            b = sign * r + drift * h
        if hit:
            den = abs(a) + abs(b)
            frac[m] = abs(a) / den if den > 0.0 else 0.0
            dl[m] = dlt
        z[m + 1] = b
        lt[m + 1] = lt[m] + dl[m]
        alpha[m + 1] = alpha[m] + 2.0 * h + dl[m] / theta
        m += 1

    n_out = t_out.shape[0]
    a_out = np.empty(n_out)
    z_out = np.empty(n_out)
    l_out = np.empty(n_out)
    j = 0
    for i in range(n_out):
        t = t_out[i]
        while j + 1 < m and alpha[j + 1] <= t:
            j += 1
        tau = t - alpha[j]
        a = z[j]
        b = z[j + 1]
        if dl[j] > 0.0:
            s_star = frac[j] * h
            pause = dl[j] / theta
            if tau < 2.0 * s_star:
                s = 0.5 * tau
                zz = a - a * (s / s_star)
                ll = lt[j]
            elif tau < 2.0 * s_star + pause:
                s = s_star
                zz = 0.0
                ll = lt[j] + (tau - 2.0 * s_star) * theta
            else:
                s = s_star + 0.5 * (tau - 2.0 * s_star - pause)
                rest = h - s_star
                zz = b * ((s - s_star) / rest) if rest > 0.0 else b
                ll = lt[j + 1]
            if s > h:
                s = h
        else:
            s = 0.5 * tau
            if s > h:
                s = h
            zz = _bridge_point(rng, a, b, s, h)
            ll = lt[j]
        a_out[i] = j * h + s
        z_out[i] = zz
        l_out[i] = ll
    return z[: m + 1], lt[: m + 1], alpha[: m + 1], frac[:m], dl[:m], a_out, z_out, l_out


@njit(cache=True)
def switching_paths(rng, x0, classes, sub_steps, h, out):
    """Advance N particles through blocks of ``sub_steps`` Gaussian steps.

    ``classes[k, i]`` is particle i's label during block k.  Particles sharing
    a label and a position move together; particles sharing a label coalesce
    when their independent paths would have met (bridge test on each step,
    ascending index pairs, the higher index adopting the lower one's path);
    different labels move independently.  For two particles this is exact at
    the step endpoints.
    """
    n_blocks = classes.shape[0]
    n = x0.shape[0]
    pos = x0.copy()
    new = np.empty(n)
    leader = np.empty(n, dtype=np.int64)
    sd = math.sqrt(h)
    for i in range(n):
        out[0, i] = pos[i]
    row = 1
    for k in range(n_blocks):
        for _ in range(sub_steps):
            for i in range(n):
                leader[i] = i
                for j in range(i):
                    if leader[j] == j and classes[k, j] == classes[k, i] and pos[j] == pos[i]:
                        leader[i] = j
                        break
            for i in range(n):
                if leader[i] == i:
                    new[i] = pos[i] + sd * rng.standard_normal()
                else:
                    new[i] = new[leader[i]]
            for i in range(n):
                if leader[i] != i:
                    continue
                for j in range(i + 1, n):
                    if leader[j] != j or classes[k, j] != classes[k, i]:
                        continue
                    a = pos[i] - pos[j]
                    b = new[i] - new[j]
                    ab = a * b
                    if ab <= 0.0:
                        hit = True
                    elif ab >= 746.0 * h:
                        hit = False  # exp(-ab/h) underflows to 0
                    else:
                        hit = rng.random() < math.exp(-ab / h)
                    if hit:
                        for q in range(n):
                            if leader[q] == j:
                                leader[q] = i
                                new[q] = new[i]
            for i in range(n):
                pos[i] = new[i]
                out[row, i] = pos[i]
            row += 1
    return out


@njit(cache=True)
def count_downcrossings(y, eps):
    """Downcrossings of [0, eps] by |y| on a grid: armed once |y| >= eps,
    completed at the first later point where y is zero or has changed sign."""
    count = 0
    armed = 0
    for i in range(y.shape[0]):
        v = y[i]
        if armed == 0:
            if v >= eps:
                armed = 1
            elif v <= -eps:
                armed = -1
        else:
            if armed * v <= 0.0:
                count += 1
                armed = 0
                if v >= eps:
                    armed = 1
                elif v <= -eps:
                    armed = -1
    return count


@njit(cache=True, inline="always")
def _touch(rng, u, gap_a, gap_b, hh):
    """Whether a bridge with endpoint distances gap_a, gap_b > 0 to a level
    reaches it, given the shared uniform ``u`` (drawn on first use)."""
    g = gap_a * gap_b
    if g >= 36.8 * hh:
        # probability below 2^-53, the resolution of rng.random()
        return False, u
    if u < 0.0:
        u = rng.random()
    return u < math.exp(-g / hh), u


@njit(cache=True, inline="always")
def crossing_step(rng, a, b, hh, eps, armed, counts, zero_known):
    """Advance the downcrossing counters over one step of a continuous path
    from ``a`` to ``b``.  Crossings between grid points are sampled from the
    Brownian bridge: a level at distances d1, d2 from the endpoints is reached
    with probability exp(-d1 d2 / hh), hh = variance rate * dt / 2.  One
    uniform per barrier (0, the upper and the lower level) is shared by all
    eps so the counts stay pathwise consistent.  With ``zero_known`` the
    caller has already decided whether 0 was touched (touched iff b == 0).
    Only the first event of each kind inside a step is resolved."""
    u0 = -1.0
    uu = -1.0
    ud = -1.0
    for k in range(eps.shape[0]):
        e = eps[k]
        if armed[k] != 0:
            s = armed[k]
            touched = s * b <= 0.0
            if not touched and not zero_known:
                touched, u0 = _touch(rng, u0, abs(a), abs(b), hh)
            if touched:
                counts[k] += 1
                armed[k] = 0
                if b >= e:
                    armed[k] = 1
                elif b <= -e:
                    armed[k] = -1
        elif b >= e:
            armed[k] = 1
        elif b <= -e:
            armed[k] = -1
        else:
            up, uu = _touch(rng, uu, e - a, e - b, hh)
            if up:
                armed[k] = 1
            else:
                down, ud = _touch(rng, ud, e + a, e + b, hh)
                if down:
                    armed[k] = -1
            if armed[k] != 0 and armed[k] * b <= 0.0:
                counts[k] += 1
                armed[k] = 0


@njit(cache=True)
def count_downcrossings_bridge(rng, y, eps, hh):
    """``count_downcrossings`` for the continuous path whose grid values are
    ``y``, with crossings between grid points sampled from the bridge."""
    counts = np.zeros(eps.shape[0], dtype=np.int64)
    armed = np.zeros(eps.shape[0], dtype=np.int64)
    for k in range(eps.shape[0]):
        if y[0] >= eps[k]:
            armed[k] = 1
        elif y[0] <= -eps[k]:
            armed[k] = -1
    e_max = np.max(eps) if eps.shape[0] > 0 else 0.0
    for i in range(y.shape[0] - 1):
        a = y[i]
        b = y[i + 1]
        if not (a * b >= 36.8 * hh and abs(a) >= e_max and abs(b) >= e_max):
            crossing_step(rng, a, b, hh, eps, armed, counts, False)
    return counts


@njit(cache=True)
def pair_sign_codes(states, n_codes):
    """Base-3 code of the pairwise sign pattern of each row, plus the first
    row index at which each code occurs (-1 if absent)."""
    m, n = states.shape
    codes = np.empty(m, dtype=np.int64)
    first = np.full(n_codes, -1, dtype=np.int64)
    for r in range(m):
        c = 0
        w = 1
        for i in range(n):
            for j in range(i + 1, n):
                d = states[r, i] - states[r, j]
                s = 2 if d > 0.0 else (0 if d < 0.0 else 1)
                c += w * s
                w *= 3
        codes[r] = c
        if first[c] < 0:
            first[c] = r
    return codes, first


@njit(cache=True)
def code_integral(paths, idx, w, table):
    """sum_q w[q] * table[code(paths[idx[q]])] with the pairwise-sign code."""
    n = paths.shape[1]
    total = 0.0
    for q in range(idx.shape[0]):
        r = idx[q]
        c = 0
        m = 1
        for i in range(n):
            for j in range(i + 1, n):
                d = paths[r, i] - paths[r, j]
                s = 2 if d > 0.0 else (0 if d < 0.0 else 1)
                c += m * s
                m *= 3
        total += w[q] * table[c]
    return total


@njit(cache=True)
def pn_difference_stats(rng, y0, independent, sub_steps, h, eps):
    """Run only the difference Y = X - X' of a (p, n)-coupled pair (rate 2
    while apart; absorbed at 0 inside coalescing intervals, using the same
    bridge test as ``switching_paths``).  Returns (left-endpoint occupation
    of {Y = 0}, |Y| at the end, downcrossing counts for each level in eps,
    with crossings between grid points sampled from the bridge).
    """
    n_eps = eps.shape[0]
    counts = np.zeros(n_eps, dtype=np.int64)
    armed = np.zeros(n_eps, dtype=np.int64)
    y = y0
    for k in range(n_eps):
        if y >= eps[k]:
            armed[k] = 1
        elif y <= -eps[k]:
            armed[k] = -1
    # beyond every level on one side with no resolvable touch of 0, a step
    # cannot change any counter
    e_max = np.max(eps) if n_eps > 0 else 0.0
    sd = math.sqrt(2.0 * h)
    occ = 0
    for blk in range(independent.shape[0]):
        indep = independent[blk]
        for _ in range(sub_steps):
            if y == 0.0:
                occ += 1
                if not indep:
                    continue
            b = y + sd * rng.standard_normal()
            if not indep:
                yb = y * b
                if yb <= 0.0:
                    b = 0.0
                elif yb < 746.0 * h and rng.random() < math.exp(-yb / h):
                    # exp underflows to 0 beyond the cutoff, so skipping the
                    # draw there changes no decision
                    b = 0.0
            # rate 2 difference: hh = 2 h / 2
            if not (y * b >= 36.8 * h and abs(y) >= e_max and abs(b) >= e_max):
                crossing_step(rng, y, b, h, eps, armed, counts, not indep)
            y = b
    return occ * h, abs(y), counts
