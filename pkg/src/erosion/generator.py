"""The generator A^theta_N on continuous piecewise-linear test functions.

Coordinates are 0-based.  A cell of R^N is a weak total ordering of the
coordinates; at a point x with partition into blocks of equal coordinates,
V(x) holds, for every block C and every split C = I + J (I or J may be
empty), the vector v_IJ that is +1 on I and -1 on J.  Then

    A f(x) = sum_{v in V(x)} theta(|I|:|J|) grad_v f(x)

with grad_v the one-sided directional derivative.  Everything is computed
combinatorially from orderings, never by finite differences.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable

import numpy as np

from ._kernels import pair_sign_codes
from .analytics import kappa


@dataclass(frozen=True)
class WeakOrdering:
    """Blocks of tied coordinates, listed from smallest value to largest."""

    ordered_blocks: tuple

    def __post_init__(self):
        blocks = tuple(frozenset(b) for b in self.ordered_blocks)
        object.__setattr__(self, "ordered_blocks", blocks)
        seen = [i for b in blocks for i in b]
        if any(len(b) == 0 for b in blocks):
            raise ValueError("blocks must be nonempty")
        if sorted(seen) != list(range(len(seen))):
            raise ValueError("blocks must partition {0, ..., N-1}")

    @property
    def n(self) -> int:
        return sum(len(b) for b in self.ordered_blocks)

    @property
    def is_strict(self) -> bool:
        return all(len(b) == 1 for b in self.ordered_blocks)

    def ranks(self) -> np.ndarray:
        r = np.empty(self.n, dtype=np.int64)
        for rank, b in enumerate(self.ordered_blocks):
            for i in b:
                r[i] = rank
        return r

    def sample_point(self) -> np.ndarray:
        """A point in the relative interior of the cell."""
        return self.ranks().astype(float)

    def refinements(self) -> Iterable["WeakOrdering"]:
        """Strict orderings whose closure contains this cell."""
        for perms in itertools.product(*(itertools.permutations(sorted(b)) for b in self.ordered_blocks)):
            yield WeakOrdering(tuple(frozenset([i]) for p in perms for i in p))

    @classmethod
    def from_ranks(cls, ranks) -> "WeakOrdering":
        ranks = np.asarray(ranks)
        levels = np.unique(ranks)
        return cls(tuple(frozenset(np.flatnonzero(ranks == v).tolist()) for v in levels))


def all_weak_orderings(n: int) -> list[WeakOrdering]:
    """Every weak ordering of n coordinates (ordered set partitions)."""
    out = []

    def rec(remaining, prefix):
        if not remaining:
            out.append(WeakOrdering(tuple(prefix)))
            return
        rem = sorted(remaining)
        for size in range(1, len(rem) + 1):
            for block in itertools.combinations(rem, size):
                rec(remaining - set(block), prefix + [frozenset(block)])

    rec(set(range(n)), [])
    return out


def _block_ranks(x, tol: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("coordinates must be finite")
    order = np.argsort(x, kind="stable")
    xs = x[order]
    step = np.concatenate(([0], (np.diff(xs) > tol).astype(np.int64)))
    ranks = np.empty(x.size, dtype=np.int64)
    ranks[order] = np.cumsum(step)
    return ranks


def cell_of(x, tol: float = 0.0) -> WeakOrdering:
    """Group coordinates within ``tol`` of their sorted neighbour (tol = 0 is
    bit equality) and order the groups by value."""
    return WeakOrdering.from_ranks(_block_ranks(x, tol))


def vectors_V(x, tol: float = 0.0) -> list[tuple[frozenset, frozenset, np.ndarray]]:
    """All (I, J, v_IJ) for the blocks of x, including I or J empty."""
    cell = cell_of(x, tol)
    n = cell.n
    out = []
    for block in cell.ordered_blocks:
        members = sorted(block)
        for size in range(len(members) + 1):
            for chosen in itertools.combinations(members, size):
                i_set = frozenset(chosen)
                j_set = frozenset(block) - i_set
                v = np.zeros(n)
                v[list(i_set)] = 1.0
                v[list(j_set)] = -1.0
                out.append((i_set, j_set, v))
    return out


def _entered_ranks(ranks: np.ndarray, v) -> np.ndarray:
    """Ranks of the cell containing x + eps v for small eps > 0: ties are broken
    by v, equal (rank, v) pairs stay tied."""
    v = np.asarray(v, dtype=float)
    keys = np.stack([ranks, v], axis=1)
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    return inv.ravel()


class PwLinear:
    """Continuous piecewise-linear function on R^N.

    Form (a): c + sum a_i x_i + sum_{i<j} b_ij |x_i - x_j|.
    Form (b): a table mapping strict (and optionally weak) orderings to
    (gradient, offset); validated for continuity across facets.
    """

    def __init__(self, n: int, *, c=0.0, a=None, b=None, table=None, tol: float = 1e-12):
        self.n = int(n)
        if self.n < 1:
            raise ValueError("dimension must be positive")
        if table is not None:
            if a is not None or b is not None:
                raise ValueError("give either closed-form coefficients or a cell table")
            self.form = "b"
            self.table = {}
            for cell, (grad, off) in table.items():
                if cell.n != self.n:
                    raise ValueError("cell dimension mismatch")
                g = np.asarray(grad, dtype=float)
                if g.shape != (self.n,):
                    raise ValueError("gradient dimension mismatch")
                self.table[cell] = (g, float(off))
            self._validate_table(tol)
        else:
            self.form = "a"
            self.c = float(c)
            self.a = np.zeros(self.n) if a is None else np.asarray(a, dtype=float).copy()
            bb = np.zeros((self.n, self.n)) if b is None else np.asarray(b, dtype=float).copy()
            if self.a.shape != (self.n,) or bb.shape != (self.n, self.n):
                raise ValueError("coefficient shapes do not match dimension")
            self.b = np.triu(bb, 1) + np.triu(bb, 1).T
            if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b)) and math.isfinite(self.c)):
                raise ValueError("coefficients must be finite")

    @classmethod
    def g(cls, n: int) -> "PwLinear":
        """sum_{i<j} |x_i - x_j|."""
        return cls(n, b=np.ones((n, n)))

    @classmethod
    def linear(cls, a, c: float = 0.0) -> "PwLinear":
        a = np.asarray(a, dtype=float)
        return cls(a.size, c=c, a=a)

    # -- form (b) -------------------------------------------------------
    def _piece(self, cell: WeakOrdering):
        if cell in self.table:
            return self.table[cell]
        for strict in cell.refinements():
            if strict in self.table:
                return self.table[strict]
        raise ValueError(f"no piece for cell {cell}")

    def _validate_table(self, tol):
        strict = [c for c in all_weak_orderings(self.n) if c.is_strict]
        missing = [c for c in strict if c not in self.table]
        if missing:
            raise ValueError(f"cell table lacks {len(missing)} strict orderings")
        for cell in strict:
            order = [next(iter(b)) for b in cell.ordered_blocks]
            g1, o1 = self.table[cell]
            for pos in range(self.n - 1):
                blocks = [frozenset([i]) for i in order]
                merged = blocks[:pos] + [blocks[pos] | blocks[pos + 1]] + blocks[pos + 2 :]
                facet = WeakOrdering(tuple(merged))
                pt = facet.sample_point()
                swapped = order[:pos] + [order[pos + 1], order[pos]] + order[pos + 2 :]
                g2, o2 = self.table[WeakOrdering(tuple(frozenset([i]) for i in swapped))]
                if abs((g1 @ pt + o1) - (g2 @ pt + o2)) > tol * max(1.0, abs(g1 @ pt + o1)):
                    raise ValueError(f"cell table is discontinuous across {facet}")
        for cell, (g, o) in self.table.items():
            if cell.is_strict:
                continue
            pt = cell.sample_point()
            for strict_cell in cell.refinements():
                g2, o2 = self.table[strict_cell]
                if abs((g @ pt + o) - (g2 @ pt + o2)) > tol * max(1.0, abs(g @ pt + o)):
                    raise ValueError(f"weak cell {cell} disagrees with {strict_cell}")

    # -- evaluation -----------------------------------------------------
    def evaluate(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected a point in R^{self.n}")
        if self.form == "a":
            diff = np.abs(x[:, None] - x[None, :])
            return float(self.c + self.a @ x + 0.5 * np.sum(self.b * diff))
        g, o = self._piece(cell_of(x))
        return float(g @ x + o)

    def evaluate_many(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        if xs.ndim != 2 or xs.shape[1] != self.n:
            raise ValueError(f"expected points in R^{self.n}")
        if self.form == "a":
            out = self.c + xs @ self.a
            for i in range(self.n):
                for j in range(i + 1, self.n):
                    if self.b[i, j] != 0:
                        out = out + self.b[i, j] * np.abs(xs[:, i] - xs[:, j])
            return out
        return np.array([self.evaluate(x) for x in xs])

    def gradient_in_cell(self, ranks) -> np.ndarray:
        """Gradient of the piece on the cell with these ranks.  Tied pairs
        contribute nothing in form (a); form (b) uses a refining strict piece,
        whose gradient agrees along every direction that keeps the ties."""
        ranks = np.asarray(ranks)
        if self.form == "a":
            s = np.sign(ranks[:, None] - ranks[None, :])
            return self.a + np.sum(self.b * s, axis=1)
        g, _ = self._piece(WeakOrdering.from_ranks(ranks))
        return g

    def directional_gradient(self, x, v, tol: float = 0.0) -> float:
        return directional_gradient(self, x, v, tol)

    # -- conversions ----------------------------------------------------
    def to_closed_form(self, tol: float = 1e-9) -> "PwLinear":
        """Return an equivalent form-(a) function, or raise if none exists."""
        if self.form == "a":
            return self
        n = self.n
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        rows, rhs = [], []
        for cell in all_weak_orderings(n):
            if not cell.is_strict:
                continue
            g, o = self.table[cell]
            r = cell.ranks()
            for comp in range(n):
                row = np.zeros(1 + n + len(pairs))
                row[1 + comp] = 1.0
                for p, (i, j) in enumerate(pairs):
                    if comp == i:
                        row[1 + n + p] = np.sign(r[i] - r[j])
                    elif comp == j:
                        row[1 + n + p] = np.sign(r[j] - r[i])
                rows.append(row)
                rhs.append(g[comp])
            row = np.zeros(1 + n + len(pairs))
            row[0] = 1.0
            rows.append(row)
            rhs.append(o)
        m = np.array(rows)
        y = np.array(rhs)
        sol, *_ = np.linalg.lstsq(m, y, rcond=None)
        if np.max(np.abs(m @ sol - y), initial=0.0) > tol * max(1.0, np.max(np.abs(y))):
            raise ValueError("function has no closed form c + a.x + sum b_ij |x_i - x_j|")
        b = np.zeros((n, n))
        for p, (i, j) in enumerate(pairs):
            b[i, j] = sol[1 + n + p]
        return PwLinear(n, c=sol[0], a=sol[1 : 1 + n], b=b)

    def to_table(self) -> "PwLinear":
        """Form (b) copy of a form-(a) function (all strict cells)."""
        if self.form == "b":
            return self
        table = {}
        for cell in all_weak_orderings(self.n):
            if cell.is_strict:
                table[cell] = (self.gradient_in_cell(cell.ranks()), self.c)
        return PwLinear(self.n, table=table)

    def to_json(self) -> str:
        f = self.to_closed_form()
        return json.dumps({"c": f.c, "a": f.a.tolist(), "b": np.triu(f.b, 1).tolist()})

    @classmethod
    def from_json(cls, text: str) -> "PwLinear":
        d = json.loads(text)
        a = np.asarray(d["a"], dtype=float)
        return cls(a.size, c=d["c"], a=a, b=np.asarray(d["b"], dtype=float))


def directional_gradient(f: PwLinear, x, v, tol: float = 0.0) -> float:
    """One-sided derivative lim (f(x + eps v) - f(x))/eps, eps -> 0+."""
    if not isinstance(f, PwLinear):
        raise TypeError("f must be a PwLinear")
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.shape != (f.n,) or v.shape != (f.n,):
        raise ValueError("dimension mismatch")
    ranks = _block_ranks(x, tol)
    if f.form == "a":
        same = ranks[:, None] == ranks[None, :]
        s = np.where(same, 0.0, np.sign(ranks[:, None] - ranks[None, :]))
        dv = v[:, None] - v[None, :]
        pair = np.where(same, np.abs(dv), s * dv)
        return math.fsum(np.concatenate((f.a * v, 0.5 * (f.b * pair).ravel())))
    entered = _entered_ranks(ranks, v)
    return math.fsum(f.gradient_in_cell(entered) * v)


@dataclass(frozen=True, eq=False)
class ThetaFamily:
    """theta(k:l) for 0 <= k, l <= k_max + 1, stored densely so that the
    consistency relation can be checked for every k + l <= k_max."""

    k_max: int
    values: np.ndarray
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != (self.k_max + 2, self.k_max + 2):
            raise ValueError("values must have shape (k_max + 2, k_max + 2)")
        self.values.setflags(write=False)

    def __call__(self, k: int, l: int) -> float:
        return self.theta(k, l)

    def theta(self, k: int, l: int) -> float:
        if not (0 <= k <= self.k_max + 1 and 0 <= l <= self.k_max + 1):
            raise ValueError(f"theta({k}:{l}) outside the stored range (k_max={self.k_max})")
        return float(self.values[k, l])

    def theta_of_vector(self, v) -> float:
        v = np.asarray(v)
        return self.theta(int(np.sum(v > 0)), int(np.sum(v < 0)))

    def shifted(self, delta: float) -> "ThetaFamily":
        """Add delta to every theta(n:0) and theta(0:n), n >= 1."""
        vals = self.values.copy()
        vals[1:, 0] += delta
        vals[0, 1:] += delta
        return ThetaFamily(self.k_max, vals, self.label + f" shifted by {delta}", dict(self.meta))

    def perturbed(self, k: int, l: int, delta: float) -> "ThetaFamily":
        vals = self.values.copy()
        vals[k, l] += delta
        return ThetaFamily(self.k_max, vals, self.label + f" with theta({k}:{l}) + {delta}", dict(self.meta))

    def to_json(self) -> str:
        return json.dumps({"k_max": self.k_max, "label": self.label, "values": self.values.ravel().tolist()})

    @classmethod
    def from_json(cls, text: str) -> "ThetaFamily":
        d = json.loads(text)
        k = d["k_max"]
        return cls(k, np.array(d["values"], dtype=float).reshape(k + 2, k + 2), d.get("label", ""))


def family_from_rule(k_max: int, interior: Callable[[int, int], Fraction], right: Fraction, left: Fraction,
                     label: str = "", meta: dict | None = None) -> ThetaFamily:
    """Build a family from an interior rule for k, l >= 1 and the anchors
    theta(1:0) = right, theta(0:1) = left, filling the boundary by
    theta(k+1:0) = theta(k:0) - theta(k:1) and theta(0:l+1) = theta(0:l) - theta(1:l).
    Arithmetic is exact (fractions)."""
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    size = k_max + 2
    t = [[Fraction(0)] * size for _ in range(size)]
    for k in range(1, size):
        for l in range(1, size):
            t[k][l] = Fraction(interior(k, l))
    t[1][0] = Fraction(right)
    t[0][1] = Fraction(left)
    for k in range(1, size - 1):
        t[k + 1][0] = t[k][0] - t[k][1]
    for l in range(1, size - 1):
        t[0][l + 1] = t[0][l] - t[1][l]
    t[0][0] = t[1][0] + t[0][1]
    vals = np.array([[float(v) for v in row] for row in t])
    return ThetaFamily(k_max, vals, label, meta or {})


@dataclass(frozen=True)
class ConsistencyReport:
    k_max: int
    consistency_violations: tuple
    positivity_violations: tuple

    @property
    def passed(self) -> bool:
        return not self.consistency_violations and not self.positivity_violations

    def to_json(self) -> str:
        return json.dumps(
            {
                "k_max": self.k_max,
                "consistency_violations": [list(v) for v in self.consistency_violations],
                "positivity_violations": [list(v) for v in self.positivity_violations],
                "passed": self.passed,
            }
        )


def consistency_check(family: ThetaFamily, k_max: int | None = None) -> ConsistencyReport:
    """theta(k:l) = theta(k+1:l) + theta(k:l+1) exactly for k + l <= k_max
    (compared as exact rationals of the stored floats), and theta(k:l) >= 0
    for k, l >= 1."""
    k_max = family.k_max if k_max is None else k_max
    if k_max > family.k_max:
        raise ValueError(f"family only populated to k_max={family.k_max}")
    cons, pos = [], []
    for k in range(k_max + 1):
        for l in range(k_max + 1 - k):
            lhs = Fraction(family.theta(k, l))
            rhs = Fraction(family.theta(k + 1, l)) + Fraction(family.theta(k, l + 1))
            if lhs != rhs:
                cons.append((k, l, float(lhs), float(rhs)))
            if k >= 1 and l >= 1 and lhs < 0:
                pos.append((k, l, float(lhs)))
    return ConsistencyReport(k_max, tuple(cons), tuple(pos))


def apply_generator(family: ThetaFamily, f: PwLinear, x, tol: float = 0.0) -> float:
    """A^theta_N f(x), summed exactly-rounded over V(x)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (f.n,):
        raise ValueError("dimension mismatch")
    vecs = vectors_V(x, tol)
    thetas = []
    for i_set, j_set, _ in vecs:
        k, l = len(i_set), len(j_set)
        if k + l > family.k_max:
            raise ValueError(f"family k_max={family.k_max} too small for a block of size {k + l}")
        thetas.append(family.theta(k, l))
    if f.form == "a":
        # same terms as directional_gradient, with the sign pattern shared
        ranks = _block_ranks(x, tol)
        same = ranks[:, None] == ranks[None, :]
        s = np.where(same, 0.0, np.sign(ranks[:, None] - ranks[None, :]))
        terms = []
        for th, (_, _, v) in zip(thetas, vecs):
            if th == 0:
                continue
            dv = v[:, None] - v[None, :]
            pair = np.where(same, np.abs(dv), s * dv)
            terms.append(th * math.fsum(np.concatenate((f.a * v, 0.5 * (f.b * pair).ravel()))))
        return math.fsum(terms)
    return math.fsum(th * directional_gradient(f, x, v, tol) for th, (_, _, v) in zip(thetas, vecs) if th != 0)


def cell_codes(states, tol: float = 0.0) -> np.ndarray:
    """Integer rank pattern of every row of ``states`` (shape (M, N))."""
    states = np.asarray(states, dtype=float)
    order = np.argsort(states, axis=1, kind="stable")
    xs = np.take_along_axis(states, order, axis=1)
    step = np.concatenate([np.zeros((xs.shape[0], 1), dtype=np.int64), (np.diff(xs, axis=1) > tol)], axis=1)
    ranks_sorted = np.cumsum(step, axis=1)
    ranks = np.empty_like(ranks_sorted)
    np.put_along_axis(ranks, order, ranks_sorted, axis=1)
    return ranks


def generator_table(family: ThetaFamily, f: PwLinear) -> np.ndarray:
    """A f on every cell, indexed by the base-3 code of the pairwise sign
    pattern (digit 0, 1, 2 for x_i <, =, > x_j over pairs i < j in order)."""
    n = f.n
    pairs = n * (n - 1) // 2
    if pairs > 12:
        raise ValueError("cell table too large for this dimension")
    table = np.zeros(3**pairs)
    for cell in all_weak_orderings(n):
        pt = cell.sample_point()
        code = 0
        weight = 1
        for i in range(n):
            for j in range(i + 1, n):
                code += weight * (int(np.sign(pt[i] - pt[j])) + 1)
                weight *= 3
        table[code] = apply_generator(family, f, pt)
    return table


def apply_generator_many(family: ThetaFamily, f: PwLinear, states, tol: float = 0.0) -> np.ndarray:
    """A f at every row of ``states``, evaluating once per distinct cell
    (A f is constant on cells)."""
    states = np.asarray(states, dtype=float)
    m, n = states.shape
    pairs = n * (n - 1) // 2
    if tol == 0 and pairs <= 12:
        # cell code from the pattern of pairwise signs; no sorting needed
        codes, first = pair_sign_codes(np.ascontiguousarray(states), 3**pairs)
        table = np.zeros(3**pairs)
        for c in np.flatnonzero(first >= 0):
            table[c] = apply_generator(family, f, states[first[c]])
        return table[codes]
    ranks = cell_codes(states, tol)
    codes = ranks @ (n ** np.arange(n, dtype=np.int64))
    _, first, inv = np.unique(codes, return_index=True, return_inverse=True)
    vals = np.array([apply_generator(family, f, ranks[i].astype(float)) for i in first])
    return vals[inv.ravel()]


def _closed(f: PwLinear) -> PwLinear:
    try:
        return f.to_closed_form()
    except ValueError as exc:
        raise ValueError("psi needs f representable as c + a.x + sum b_ij |x_i - x_j|") from exc


def psi_closed_form(f: PwLinear, x, k: int, t: float) -> float:
    """psi^k_t f(x) = E^{k}_x[f(Z(t)) - f(x)] for the system in which
    coordinate k moves independently and the rest coalesce.  The order of the
    other coordinates is preserved, so only the pairs (i, k) contribute:
    psi^k_t f(x) = sum_{i != k} b_ik kappa_t(x_i - x_k)."""
    f = _closed(f)
    x = np.asarray(x, dtype=float)
    if x.shape != (f.n,):
        raise ValueError("dimension mismatch")
    if not 0 <= k < f.n:
        raise ValueError(f"k must be in 0..{f.n - 1}")
    others = [i for i in range(f.n) if i != k]
    return math.fsum(f.b[i, k] * kappa(t, x[i] - x[k]) for i in others)


def psi_total(f: PwLinear, x, t: float) -> float:
    f = _closed(f)
    return math.fsum(psi_closed_form(f, x, k, t) for k in range(f.n))


def psi_monte_carlo(f: PwLinear, x, k: int, t: float, replicas: int = 1000, seed=None, sub_steps: int = 64):
    """Monte Carlo psi^k_t f(x) with the coalescing coordinates merged by the
    per-step bridge test.  Returns an EstimateWithError."""
    from ._kernels import switching_paths
    from .paths import as_rng
    from .stats import estimate

    if replicas < 1:
        raise ValueError("replicas must be at least 1")
    x = np.asarray(x, dtype=float)
    if not 0 <= k < x.size:
        raise ValueError(f"k must be in 0..{x.size - 1}")
    rng = as_rng(seed)
    classes = np.zeros((1, x.size), dtype=np.int64)
    classes[0, k] = 1
    out = np.empty((sub_steps + 1, x.size))
    ends = np.empty((replicas, x.size))
    for r in range(replicas):
        switching_paths(rng, x, classes, sub_steps, t / sub_steps, out)
        ends[r] = out[-1]
    return estimate(f.evaluate_many(ends) - f.evaluate(x))
