"""N-particle systems built by interval-wise switching.

Time is cut into intervals of length 1/n.  On each interval every particle
gets a class label; particles with the same label coalesce when they meet,
particles with different labels move independently.  Choosing the labels
gives the sticky-coalescing system (two groups, independent across groups
with probability p per interval) and the N-point motion of the erosion flow
(each particle independently leaves the coalescing system with probability p).
With p = theta sqrt(pi/n) these approximate the continuum objects.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from ._kernels import switching_paths
from .generator import ThetaFamily, family_from_rule
from .paths import TimeGrid, as_rng


def cluster_labels(paths: np.ndarray) -> np.ndarray:
    """Per row, the smallest index of a coordinate bit-equal to each coordinate."""
    rows, n = paths.shape
    labels = np.tile(np.arange(n), (rows, 1))
    for i in range(1, n):
        for j in range(i - 1, -1, -1):
            eq = paths[:, j] == paths[:, i]
            labels[eq, i] = labels[eq, j]
    return labels


@dataclass(frozen=True, eq=False)
class PathBundle:
    grid: TimeGrid
    paths: np.ndarray  # (n_steps + 1, N)
    cluster_id: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        rows = self.grid.n_steps + 1
        if self.paths.ndim != 2 or self.paths.shape[0] != rows:
            raise ValueError(f"paths must have {rows} rows")
        if self.cluster_id.shape != self.paths.shape:
            raise ValueError("cluster_id must match paths")

    @classmethod
    def from_paths(cls, grid: TimeGrid, paths: np.ndarray, meta: dict | None = None) -> "PathBundle":
        return cls(grid, paths, cluster_labels(paths), meta or {})

    @property
    def n(self) -> int:
        return self.paths.shape[1]

    def check(self) -> None:
        """Labels must form an equivalence relation matching bit-equality."""
        for i in range(self.n):
            for j in range(self.n):
                same = self.cluster_id[:, i] == self.cluster_id[:, j]
                if np.any(same != (self.paths[:, i] == self.paths[:, j])):
                    raise AssertionError(f"cluster labels of {i} and {j} disagree with the paths")

    def project(self, coords) -> "PathBundle":
        coords = list(coords)
        return PathBundle.from_paths(self.grid, self.paths[:, coords].copy(), dict(self.meta))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.n
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(n)] + [f"cluster_{i + 1}" for i in range(n)])
        for t, xs, cs in zip(self.grid.times, self.paths, self.cluster_id):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in xs] + [int(c) for c in cs])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, text: str) -> "PathBundle":
        rows = list(csv.reader(io.StringIO(text)))
        n = (len(rows[0]) - 1) // 2
        arr = np.array([[float(v) for v in r] for r in rows[1:]])
        t = arr[:, 0]
        grid = TimeGrid(float(t[0]), float(t[1] - t[0]), len(t) - 1)
        return cls(grid, arr[:, 1 : 1 + n].copy(), arr[:, 1 + n :].astype(np.int64), {})


@dataclass(frozen=True, eq=False)
class SwitchingSchedule:
    n: int
    p: float
    y: np.ndarray  # (n_blocks, N) bool

    @property
    def s_sets(self) -> list[frozenset]:
        return [frozenset(np.flatnonzero(row).tolist()) for row in self.y]


def switching_probability(theta: float, n_switch: int) -> float:
    if not theta >= 0:
        raise ValueError(f"theta must be non-negative, got {theta}")
    if n_switch < 1:
        raise ValueError("n_switch must be positive")
    return theta * math.sqrt(math.pi / n_switch)


def _n_blocks(n_switch: int, horizon: float) -> int:
    k = round(horizon * n_switch)
    if k < 1 or abs(k - horizon * n_switch) > 1e-9 * max(1.0, horizon * n_switch):
        raise ValueError(f"t_horizon * n_switch must be a positive integer, got {horizon * n_switch}")
    return int(k)


def run_switching(x0, classes: np.ndarray, n_switch: int, sub_steps: int, rng, meta: dict) -> PathBundle:
    """Evolve particles from ``x0`` under per-interval class labels."""
    if sub_steps < 1:
        raise ValueError("sub_steps must be positive")
    x0 = np.asarray(x0, dtype=float)
    n_blocks = classes.shape[0]
    grid = TimeGrid(0.0, 1.0 / (n_switch * sub_steps), n_blocks * sub_steps)
    out = np.empty((grid.n_steps + 1, x0.size))
    switching_paths(rng, x0, np.ascontiguousarray(classes, dtype=np.int64), sub_steps, grid.dt, out)
    return PathBundle.from_paths(grid, out, meta)


def erosion_schedule(n_particles: int, theta: float, n_switch: int, t_horizon: float, rng) -> SwitchingSchedule:
    p = switching_probability(theta, n_switch)
    if p > 1:
        raise ValueError(f"p = theta sqrt(pi/n) = {p} exceeds 1; increase n_switch")
    y = rng.random((_n_blocks(n_switch, t_horizon), n_particles)) < p
    return SwitchingSchedule(n_switch, p, y)


def erosion_classes(schedule: SwitchingSchedule) -> np.ndarray:
    """Class 0 for the coalescing particles, a private class for each member of S_k."""
    n = schedule.y.shape[1]
    return np.where(schedule.y, np.arange(1, n + 1)[None, :], 0).astype(np.int64)


def sample_npoint_erosion(
    x,
    theta: float,
    t_horizon: float = 1.0,
    n_switch: int = 1024,
    sub_steps: int = 8,
    seed=None,
) -> PathBundle:
    """N-point motion of the erosion flow by the switching construction: on
    each interval particles in S_k = {i : Y_k^i = 1} move independently and
    the others form a coalescing system."""
    rng = as_rng(seed)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sched = erosion_schedule(x.size, theta, n_switch, t_horizon, rng)
    meta = {"kind": "erosion", "theta": theta, "n_switch": n_switch, "sub_steps": sub_steps, "p": sched.p}
    return run_switching(x, erosion_classes(sched), n_switch, sub_steps, rng, meta)


def sample_scs(
    starts_w,
    starts_wprime,
    theta: float,
    t_horizon: float = 1.0,
    n_switch: int = 1024,
    sub_steps: int = 8,
    seed=None,
) -> PathBundle:
    """Sticky-coalescing system: W-paths coalesce among themselves, W'-paths
    among themselves, and on each interval the two groups are independent
    with probability p or form one coalescing system otherwise.  Columns are
    the W-paths followed by the W'-paths."""
    rng = as_rng(seed)
    w = np.atleast_1d(np.asarray(starts_w, dtype=float))
    wp = np.atleast_1d(np.asarray(starts_wprime, dtype=float))
    p = switching_probability(theta, n_switch)
    if p > 1:
        raise ValueError(f"p = theta sqrt(pi/n) = {p} exceeds 1; increase n_switch")
    n_blocks = _n_blocks(n_switch, t_horizon)
    y = rng.random(n_blocks) < p
    group = np.concatenate([np.zeros(w.size, dtype=np.int64), np.ones(wp.size, dtype=np.int64)])
    classes = np.where(y[:, None], group[None, :], 0)
    meta = {"kind": "scs", "theta": theta, "n_switch": n_switch, "sub_steps": sub_steps, "p": p,
            "m": int(w.size), "n": int(wp.size)}
    return run_switching(np.concatenate([w, wp]), classes, n_switch, sub_steps, rng, meta)


def erosion_theta_family(theta: float, k_max: int = 20) -> ThetaFamily:
    """theta(1:1) = theta, theta(1:l) = theta(k:1) = theta/2 for k, l >= 2,
    zero when both are >= 2; boundary from theta(1:0) = theta(0:1) = theta/2
    by the consistency recursion, so theta(m+1:0) = -m theta/2."""
    if not theta >= 0:
        raise ValueError(f"theta must be non-negative, got {theta}")
    th = Fraction(theta)

    def interior(k, l):
        if k == 1 and l == 1:
            return th
        if k == 1 or l == 1:
            return th / 2
        return Fraction(0)

    fam = family_from_rule(k_max, interior, th / 2, th / 2, f"erosion theta={theta}", {"theta": theta})
    _assert_consistent(fam)
    return fam


def general_theta_family(theta: float, beta1: float, beta2: float, k_max: int = 20) -> ThetaFamily:
    """Asymmetric erosion family: theta(1:1) = theta, theta(1:l) =
    (2 theta + beta1 - beta2)/4 and theta(k:1) = (2 theta + beta2 - beta1)/4
    for k, l >= 2, zero when both are >= 2; boundary anchored at
    theta(1:0) = -theta(0:1) = beta1/2."""
    if not theta >= 0:
        raise ValueError(f"theta must be non-negative, got {theta}")
    if abs(beta1 - beta2) > 2 * theta:
        raise ValueError(f"inadmissible drifts: |beta1 - beta2| > 2 theta")
    th, b1, b2 = Fraction(theta), Fraction(beta1), Fraction(beta2)

    def interior(k, l):
        if k == 1 and l == 1:
            return th
        if k == 1:
            return (2 * th + b1 - b2) / 4
        if l == 1:
            return (2 * th + b2 - b1) / 4
        return Fraction(0)

    fam = family_from_rule(k_max, interior, b1 / 2, -b1 / 2, f"general theta={theta} beta=({beta1}, {beta2})",
                           {"theta": theta, "beta1": beta1, "beta2": beta2})
    _assert_consistent(fam)
    return fam


def _assert_consistent(fam: ThetaFamily) -> None:
    from .generator import consistency_check

    # exact for dyadic parameters; other inputs may round in the last bits
    bad = [v for v in consistency_check(fam).consistency_violations
           if abs(v[2] - v[3]) > 1e-14 * max(1.0, abs(v[2]))]
    if bad:
        raise AssertionError(f"{fam.label}: consistency fails at {bad[:3]}")
