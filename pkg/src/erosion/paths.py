"""Samplers for coupled pairs of Brownian motions.

Coalescing and (p, n)-coupled pairs are exact at grid points.  The
theta-coupled pair is built from an auxiliary (skew) Brownian motion Z and
the clock alpha(s) = 2s + L(s)/theta: with A the inverse of alpha,

    X  = U + Z(A),   X' = U - Z(A),   U(t) = (x1+x2)/2 + B'(t - A(t)) + (b1+b2) t / 2,

so the pair is glued exactly (bit-equal) while the clock pauses at a zero
of Z, and the time spent glued up to t is t - 2A(t) = L(A(t))/theta.
"""
from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from ._kernels import pn_difference_stats, switching_paths, theta_core

PAIR_MAGIC = b"PPR1"


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        if not math.isfinite(self.t0):
            raise ValueError("t0 must be finite")

    @classmethod
    def over(cls, horizon: float, n_steps: int, t0: float = 0.0) -> "TimeGrid":
        return cls(t0, horizon / n_steps, n_steps)

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True, eq=False)
class PathPair:
    grid: TimeGrid
    x: np.ndarray
    x_prime: np.ndarray
    together: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.grid.n_steps + 1
        for name in ("x", "x_prime", "together"):
            if np.shape(getattr(self, name)) != (n,):
                raise ValueError(f"{name} must have length {n}")
        tog = np.asarray(self.together, dtype=bool)
        if np.any(self.x[tog] != self.x_prime[tog]):
            raise ValueError("together flag set where the paths differ")

    @property
    def diff(self) -> np.ndarray:
        return self.x - self.x_prime

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x", "x_prime", "together"])
        for t, a, b, g in zip(self.grid.times, self.x, self.x_prime, self.together):
            w.writerow([repr(float(t)), repr(float(a)), repr(float(b)), int(g)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, text: str, meta: dict | None = None) -> "PathPair":
        rows = list(csv.reader(io.StringIO(text)))[1:]
        arr = np.array([[float(v) for v in r] for r in rows])
        t = arr[:, 0]
        grid = TimeGrid(float(t[0]), float(t[1] - t[0]), len(t) - 1)
        return cls(grid, arr[:, 1].copy(), arr[:, 2].copy(), arr[:, 3] != 0, meta or {})

    def to_bytes(self) -> bytes:
        """Little-endian layout: magic, t0 f64, dt f64, n_steps u64, meta length
        u32, meta JSON, x f64[n+1], x' f64[n+1], together bit-packed."""
        meta = json.dumps(self.meta, sort_keys=True).encode()
        head = PAIR_MAGIC + struct.pack("<ddQI", self.grid.t0, self.grid.dt, self.grid.n_steps, len(meta))
        return b"".join(
            [
                head,
                meta,
                np.asarray(self.x, dtype="<f8").tobytes(),
                np.asarray(self.x_prime, dtype="<f8").tobytes(),
                np.packbits(np.asarray(self.together, dtype=bool)).tobytes(),
            ]
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "PathPair":
        if data[:4] != PAIR_MAGIC:
            raise ValueError("not a path-pair record")
        t0, dt, n_steps, mlen = struct.unpack_from("<ddQI", data, 4)
        pos = 4 + struct.calcsize("<ddQI")
        meta = json.loads(data[pos : pos + mlen])
        pos += mlen
        n = n_steps + 1
        x = np.frombuffer(data, "<f8", n, pos).astype(float)
        pos += 8 * n
        xp = np.frombuffer(data, "<f8", n, pos).astype(float)
        pos += 8 * n
        tog = np.unpackbits(np.frombuffer(data, np.uint8, -1, pos))[:n].astype(bool)
        return cls(TimeGrid(t0, dt, n_steps), x, xp, tog, meta)


@dataclass(frozen=True)
class CouplingParams:
    beta1: float
    beta2: float
    theta: float

    def __post_init__(self):
        if not self.theta >= 0:
            raise ValueError(f"theta must be non-negative, got {self.theta}")
        gap = abs(self.beta1 - self.beta2)
        if self.theta == 0:
            if gap != 0:
                raise ValueError("theta = 0 requires equal drifts")
        elif gap > 2.0 * self.theta * (1 + 1e-12):
            raise ValueError(f"inadmissible drifts: |beta1 - beta2| = {gap} > 2 theta = {2 * self.theta}")

    @property
    def drift_gap(self) -> float:
        return self.beta1 - self.beta2

    @property
    def skew(self) -> float:
        if self.theta == 0:
            return 0.0
        return min(1.0, max(-1.0, self.drift_gap / (2.0 * self.theta)))


@dataclass(frozen=True, eq=False)
class SkewTimeChange:
    """Auxiliary diffusion on its own fine grid (step ``h``) plus the inverse
    clock on the output grid.  ``z_at``/``local_time_at`` are Z and its local
    time at A(t) for each output time."""

    h: float
    theta: float
    z: np.ndarray
    local_time: np.ndarray
    alpha: np.ndarray
    a_inverse: np.ndarray
    z_at: np.ndarray
    local_time_at: np.ndarray
    zero_fraction: np.ndarray

    def occupation(self, times) -> np.ndarray:
        return np.asarray(times) - 2.0 * self.a_inverse

    def inverse_defect(self, times) -> float:
        """Largest distance from t to the interval [alpha(A(t)-), alpha(A(t)+)].

        Local time enters at a single instant s* inside each step that
        touches 0, so alpha jumps there and A(t) is the generalized inverse.
        """
        times = np.asarray(times, dtype=float)
        s = self.a_inverse
        k = np.clip(np.floor(s / self.h).astype(np.int64), 0, self.alpha.size - 2)
        r = np.clip(s - k * self.h, 0.0, self.h)
        jump = self.alpha[k + 1] - self.alpha[k] - 2.0 * self.h
        star = self.zero_fraction[k] * self.h
        hit = jump > 0
        base = self.alpha[k] + 2.0 * r
        slack = 1e-12 * max(1.0, float(np.max(np.abs(times), initial=0.0)))
        lo = base + np.where(hit & (r > star + slack), jump, 0.0)
        hi = base + np.where(hit & (r >= star - slack), jump, 0.0)
        return float(np.max(np.maximum(np.maximum(lo - times, 0.0), np.maximum(times - hi, 0.0))))


def bridge_hit_probability(a: float, b: float, dt: float, var_rate: float = 1.0) -> float:
    """Probability that a Brownian bridge from a to b over dt touches 0, for a
    motion living above the barrier: 1 when either end is at or below 0."""
    if not dt > 0 or not var_rate > 0:
        raise ValueError("dt and var_rate must be positive")
    if a <= 0 or b <= 0:
        return 1.0
    return math.exp(-2.0 * a * b / (var_rate * dt))


def bridge_local_time_mean(a, b, h):
    """E[L | W(0)=a, W(h)=b] for the local time at 0 of a unit-rate Brownian
    bridge, normalized so that |W| - L is a martingale."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.abs(a) + np.abs(b)
    out = (
        math.sqrt(2.0 * math.pi * h)
        * np.exp(((b - a) ** 2 - c**2) / (2.0 * h))
        * special.erfcx(c / math.sqrt(2.0 * h))
        / 2.0
    )
    return float(out) if out.ndim == 0 else out


def _classes(n_blocks: int, labels) -> np.ndarray:
    return np.ascontiguousarray(np.broadcast_to(np.asarray(labels, dtype=np.int64), (n_blocks, len(labels))))


def sample_coalescing_pair(x1: float, x2: float, grid: TimeGrid, seed=None) -> PathPair:
    """Coalescing pair, exact in law at the grid points.

    Each step draws independent Gaussian increments and then decides from the
    bridge of the (rate 2) difference whether the two met during the step; if
    so the second path adopts the first one's endpoint from then on.
    """
    rng = as_rng(seed)
    out = np.empty((grid.n_steps + 1, 2))
    x0 = np.array([x1, x2], dtype=float)
    switching_paths(rng, x0, _classes(grid.n_steps, [0, 0]), 1, grid.dt, out)
    x, xp = out[:, 0].copy(), out[:, 1].copy()
    return PathPair(grid, x, xp, x == xp, {"kind": "coalescing"})


def _blocks(n: int, horizon: float) -> int:
    k = round(horizon * n)
    if k < 1 or abs(k - horizon * n) > 1e-9 * max(1.0, horizon * n):
        raise ValueError(f"horizon * n must be a positive integer, got {horizon * n}")
    return int(k)


def sample_pn_pair(
    x1: float,
    x2: float,
    p: float,
    n: int,
    horizon: float = 1.0,
    seed=None,
    sub_steps: int = 1,
) -> PathPair:
    """(p, n)-coupled pair: on each interval [k/n, (k+1)/n] a Bernoulli(p)
    draw makes the pair independent (1) or coalescing (0).  ``sub_steps``
    grid points per interval; exact in law at every grid point."""
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if n < 1 or sub_steps < 1:
        raise ValueError("n and sub_steps must be positive")
    rng = as_rng(seed)
    n_blocks = _blocks(n, horizon)
    y = rng.random(n_blocks) < p
    classes = np.zeros((n_blocks, 2), dtype=np.int64)
    classes[y, 1] = 1
    grid = TimeGrid(0.0, 1.0 / (n * sub_steps), n_blocks * sub_steps)
    out = np.empty((grid.n_steps + 1, 2))
    switching_paths(rng, np.array([x1, x2], dtype=float), classes, sub_steps, grid.dt, out)
    x, xp = out[:, 0].copy(), out[:, 1].copy()
    meta = {"kind": "pn", "p": p, "n": n, "sub_steps": sub_steps, "independent_blocks": int(y.sum())}
    return PathPair(grid, x, xp, x == xp, meta)


def together_band(horizon: float) -> float:
    return 1e-9 * math.sqrt(horizon)


def _theta_segment(rng, x1, x2, params: CouplingParams, rel_times, h):
    """Theta-coupled evolution from (x1, x2) at the relative times given
    (increasing, starting at 0).  Returns x, x', together and the raw core."""
    z0 = 0.5 * (x1 - x2)
    core = theta_core(rng, z0, params.drift_gap, params.skew, params.theta, h, rel_times)
    a_out, z_out = core[5], core[6].copy()
    z_out[np.abs(z_out) < together_band(rel_times[-1])] = 0.0
    free = rel_times - a_out
    inc = np.diff(free)
    inc = np.maximum(inc, 0.0)
    bprime = np.concatenate(([0.0], np.cumsum(np.sqrt(inc) * rng.standard_normal(inc.size))))
    u = 0.5 * (x1 + x2) + bprime + 0.5 * (params.beta1 + params.beta2) * rel_times
    x = u + z_out
    xp = u - z_out
    return x, xp, z_out == 0.0, core


def sample_theta_pair(
    x1: float,
    x2: float,
    params: CouplingParams,
    grid: TimeGrid,
    fine_factor: int = 64,
    seed=None,
) -> tuple[PathPair, SkewTimeChange]:
    """Theta-coupled pair with drifts (beta1, beta2) on ``grid``.

    Z runs on a step ``grid.dt / fine_factor``.  Its local time is sampled
    exactly given each step's endpoints; with beta1 != beta2 the skew motion
    is stepped exactly and the drift added by splitting, which costs an
    O(sqrt(h)) bias.
    """
    if params.theta == 0:
        raise ValueError("theta = 0: use sample_coalescing_pair")
    if fine_factor < 1:
        raise ValueError("fine_factor must be at least 1")
    rng = as_rng(seed)
    h = grid.dt / fine_factor
    rel = grid.times - grid.t0
    x, xp, tog, core = _theta_segment(rng, float(x1), float(x2), params, rel, h)
    z, lt, alpha, frac, _, a_out, z_out, l_out = core
    x[0], xp[0], tog[0] = x1, x2, x1 == x2
    tc = SkewTimeChange(h, params.theta, z, lt, alpha, a_out, z_out, l_out, frac)
    meta = {"kind": "theta", "beta1": params.beta1, "beta2": params.beta2, "theta": params.theta,
            "fine_factor": fine_factor}
    return PathPair(grid, x, xp, tog, meta), tc


def sample_ptn_pair(
    x1: float,
    x2: float,
    p: float,
    theta: float,
    n: int,
    horizon: float = 1.0,
    fine_factor: int = 64,
    seed=None,
    sub_steps: int = 8,
) -> PathPair:
    """(p, theta, n)-coupled pair: each interval of length 1/n is independent
    with probability p and theta-coupled otherwise, continuing from the
    current state."""
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    if n < 1 or sub_steps < 1:
        raise ValueError("n and sub_steps must be positive")
    rng = as_rng(seed)
    n_blocks = _blocks(n, horizon)
    dt = 1.0 / (n * sub_steps)
    grid = TimeGrid(0.0, dt, n_blocks * sub_steps)
    rel = dt * np.arange(sub_steps + 1)
    params = CouplingParams(0.0, 0.0, theta)
    h = dt / fine_factor
    x = np.empty(grid.n_steps + 1)
    xp = np.empty(grid.n_steps + 1)
    tog = np.empty(grid.n_steps + 1, dtype=bool)
    x[0], xp[0] = x1, x2
    tog[0] = x1 == x2
    y = rng.random(n_blocks) < p
    sd = math.sqrt(dt)
    for k in range(n_blocks):
        i0 = k * sub_steps
        sl = slice(i0 + 1, i0 + sub_steps + 1)
        if y[k]:
            x[sl] = x[i0] + np.cumsum(sd * rng.standard_normal(sub_steps))
            xp[sl] = xp[i0] + np.cumsum(sd * rng.standard_normal(sub_steps))
            tog[sl] = x[sl] == xp[sl]
        else:
            sx, sxp, stog, _ = _theta_segment(rng, x[i0], xp[i0], params, rel, h)
            x[sl], xp[sl], tog[sl] = sx[1:], sxp[1:], stog[1:]
    meta = {"kind": "ptn", "p": p, "theta": theta, "n": n, "sub_steps": sub_steps,
            "fine_factor": fine_factor}
    return PathPair(grid, x, xp, tog, meta)


def pn_pair_statistics(
    x1: float,
    x2: float,
    p: float,
    n: int,
    horizon: float = 1.0,
    seed=None,
    sub_steps: int = 1,
    eps=(0.01,),
) -> tuple[float, float, np.ndarray]:
    """Streaming version of ``sample_pn_pair`` for ensembles: evolves only the
    difference and returns (diagonal occupation, |X - X'| at the horizon,
    downcrossing local-time estimates for each eps) without storing paths.
    Same law as computing these from ``sample_pn_pair`` output."""
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if n < 1 or sub_steps < 1:
        raise ValueError("n and sub_steps must be positive")
    rng = as_rng(seed)
    n_blocks = _blocks(n, horizon)
    y = rng.random(n_blocks) < p
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    if np.any(eps <= 0):
        raise ValueError("eps must be positive")
    h = 1.0 / (n * sub_steps)
    occ, gap, counts = pn_difference_stats(rng, float(x1 - x2), y, sub_steps, h, eps)
    return occ, gap, eps * counts
