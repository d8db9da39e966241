"""Discrete web on the even lattice {(k, n): k + n even}.

Each site carries a sign xi(k, n); the web path from (k, n) steps to
k + xi(k, n).  A second web obtained by resampling each sign independently
keeps it with probability (1 + e^{-2u})/2 after dynamics time u.  Filtering
gives the discrete flow of kernels: mass at (k, n) sends a fraction q to
k + xi and 1 - q to k - xi.  Kernels only connect rows of equal parity.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from ._seeding import DYNAMICS_STREAM, FIELD_STREAM, WALKER_STREAM, mix, stream

FIELD_MAGIC = b"AWF1"
KERNEL_MAGIC = b"DKR1"


class WindowExitError(RuntimeError):
    """A walk or kernel support left the finite window."""


def agreement_probability(u: float) -> float:
    """P(sign unchanged) for the rate-1 flip chain after time u."""
    if u < 0:
        raise ValueError(f"dynamics time must be non-negative, got {u}")
    return 0.5 * (1.0 + math.exp(-2.0 * u))


@dataclass(frozen=True)
class ResampleClock:
    u: float

    def __post_init__(self):
        if not self.u >= 0:
            raise ValueError(f"u must be non-negative, got {self.u}")

    @property
    def agreement(self) -> float:
        return agreement_probability(self.u)


def _check_window(window):
    k_min, k_max, n_min, n_max = (int(v) for v in window)
    if k_min > k_max or n_min > n_max:
        raise ValueError(f"empty window {window}")
    return k_min, k_max, n_min, n_max


def _parity_mask(window) -> np.ndarray:
    k_min, k_max, n_min, n_max = window
    k = np.arange(k_min, k_max + 1)
    n = np.arange(n_min, n_max + 1)
    return ((n[:, None] + k[None, :]) % 2) == 0


@dataclass(frozen=True, eq=False)
class ArrowField:
    """Dense int8 array indexed [n - n_min, k - k_min]; off-parity entries 0."""

    window: tuple
    signs: np.ndarray
    seed_id: int

    def __post_init__(self):
        w = _check_window(self.window)
        object.__setattr__(self, "window", w)
        shape = (w[3] - w[2] + 1, w[1] - w[0] + 1)
        if self.signs.shape != shape:
            raise ValueError(f"signs must have shape {shape}")
        mask = _parity_mask(w)
        if np.any(self.signs[~mask] != 0) or np.any(np.abs(self.signs[mask]) != 1):
            raise ValueError("signs must be +-1 on even sites and 0 elsewhere")
        self.signs.setflags(write=False)

    @property
    def k_min(self) -> int:
        return self.window[0]

    @property
    def n_min(self) -> int:
        return self.window[2]

    @property
    def n_sites(self) -> int:
        return int(_parity_mask(self.window).sum())

    def sign(self, k: int, n: int) -> int:
        if not (self.window[0] <= k <= self.window[1] and self.window[2] <= n <= self.window[3]):
            raise WindowExitError(f"site ({k}, {n}) outside window {self.window}")
        if (k + n) % 2:
            raise ValueError(f"site ({k}, {n}) has odd parity")
        return int(self.signs[n - self.n_min, k - self.k_min])

    def site_values(self) -> np.ndarray:
        """Signs of all even sites, row-major."""
        return self.signs[_parity_mask(self.window)]

    def __eq__(self, other):
        if not isinstance(other, ArrowField):
            return NotImplemented
        return self.window == other.window and np.array_equal(self.signs, other.signs)

    def to_bytes(self) -> bytes:
        """Little-endian: magic, window 4 x i64, seed_id u64, packed bits of the
        even sites in row-major order (1 for +1)."""
        bits = np.packbits(self.site_values() > 0)
        return FIELD_MAGIC + struct.pack("<4qQ", *self.window, self.seed_id) + bits.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ArrowField":
        if data[:4] != FIELD_MAGIC:
            raise ValueError("not an arrow-field record")
        *window, seed_id = struct.unpack_from("<4qQ", data, 4)
        window = tuple(window)
        mask = _parity_mask(window)
        raw = np.frombuffer(data, np.uint8, -1, 4 + struct.calcsize("<4qQ"))
        vals = np.unpackbits(raw)[: int(mask.sum())].astype(np.int8) * 2 - 1
        signs = np.zeros(mask.shape, dtype=np.int8)
        signs[mask] = vals
        return cls(window, signs, seed_id)

    def to_json(self) -> str:
        return json.dumps({"window": list(self.window), "seed_id": self.seed_id, "signs": self.signs.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "ArrowField":
        d = json.loads(text)
        return cls(tuple(d["window"]), np.array(d["signs"], dtype=np.int8), d["seed_id"])


def sample_arrow_field(window, seed: int) -> ArrowField:
    """i.i.d. uniform signs on the even sites of ``window`` (inclusive bounds)."""
    w = _check_window(window)
    mask = _parity_mask(w)
    rng = stream(seed, FIELD_STREAM)
    signs = (rng.integers(0, 2, size=mask.shape, dtype=np.int8) * 2 - 1) * mask
    return ArrowField(w, signs.astype(np.int8), int(seed))


def evolve_arrow_field(field: ArrowField, u: float, seed: int) -> ArrowField:
    """Run the flip dynamics for time u: each sign is kept with probability
    (1 + e^{-2u})/2 and flipped otherwise, independently."""
    keep = agreement_probability(u)
    rng = stream(seed, DYNAMICS_STREAM)
    flip = rng.random(field.signs.shape) >= keep
    signs = np.where(flip, -field.signs, field.signs).astype(np.int8)
    return ArrowField(field.window, signs, mix(field.seed_id, seed))


def trace_walks(field: ArrowField, ks, n0: int, n_steps: int) -> np.ndarray:
    """Web paths from (k, n0) for each k in ``ks``; shape (len(ks), n_steps + 1)."""
    k_min, k_max, n_min, n_max = field.window
    ks = np.atleast_1d(np.asarray(ks, dtype=np.int64))
    if np.any((ks + n0) % 2):
        raise ValueError("start sites must have even parity")
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    if n0 < n_min or n0 + n_steps - 1 > n_max:
        raise WindowExitError("walk rows leave the window")
    out = np.empty((ks.size, n_steps + 1), dtype=np.int64)
    out[:, 0] = ks
    pos = ks.copy()
    for i in range(n_steps):
        if pos.min() < k_min or pos.max() > k_max:
            raise WindowExitError(f"walk left the window at row {n0 + i}")
        pos = pos + field.signs[n0 + i - n_min, pos - k_min]
        out[:, i + 1] = pos
    return out


def trace_walk(field: ArrowField, start, n_steps: int) -> np.ndarray:
    k, n = start
    return trace_walks(field, [k], n, n_steps)[0]


@dataclass(frozen=True, eq=False)
class DiscreteKernel:
    """Rows n = m .. m + len(rows) - 1 of the kernel from (k, m).  Row i holds
    the probabilities of k - i, k - i + 2, ..., k + i."""

    start: tuple
    q: float
    rows: tuple

    def __post_init__(self):
        k, m = self.start
        if (k + m) % 2:
            raise ValueError("kernel start must have even parity")
        for i, r in enumerate(self.rows):
            if r.shape != (i + 1,):
                raise ValueError(f"row {i} must have {i + 1} entries")

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def last_row(self) -> int:
        return self.start[1] + len(self.rows) - 1

    def row(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """(sites, probabilities) of row n."""
        k, m = self.start
        i = n - m
        if not 0 <= i < len(self.rows):
            raise ValueError(f"row {n} not in kernel rows {m}..{self.last_row}")
        return k - i + 2 * np.arange(i + 1), self.rows[i]

    def to_bytes(self) -> bytes:
        """Little-endian: magic, k i64, m i64, q f64, n_rows u64, then the rows
        as consecutive f64 vectors of lengths 1, 2, ..., n_rows."""
        head = KERNEL_MAGIC + struct.pack("<qqdQ", self.start[0], self.start[1], self.q, len(self.rows))
        return head + b"".join(np.asarray(r, dtype="<f8").tobytes() for r in self.rows)

    @classmethod
    def from_bytes(cls, data: bytes) -> "DiscreteKernel":
        if data[:4] != KERNEL_MAGIC:
            raise ValueError("not a kernel record")
        k, m, q, n_rows = struct.unpack_from("<qqdQ", data, 4)
        pos = 4 + struct.calcsize("<qqdQ")
        rows = []
        for i in range(n_rows):
            rows.append(np.frombuffer(data, "<f8", i + 1, pos).astype(float))
            pos += 8 * (i + 1)
        return cls((k, m), q, tuple(rows))

    def to_json(self) -> str:
        return json.dumps({"start": list(self.start), "q": self.q, "rows": [r.tolist() for r in self.rows]})

    @classmethod
    def from_json(cls, text: str) -> "DiscreteKernel":
        d = json.loads(text)
        return cls(tuple(d["start"]), d["q"], tuple(np.array(r, dtype=float) for r in d["rows"]))


def _check_q(q):
    if not 0.5 <= q <= 1.0:
        raise ValueError(f"q must lie in [1/2, 1], got {q}")


def exact_kernel(field: ArrowField, q: float, start, n_rows: int) -> DiscreteKernel:
    """Rows start[1] .. start[1] + n_rows - 1 of the discrete kernel, by the
    forward dynamic program."""
    _check_q(q)
    k, m = start
    if (k + m) % 2:
        raise ValueError("kernel start must have even parity")
    if n_rows < 1:
        raise ValueError("n_rows must be at least 1")
    k_min, k_max, n_min, n_max = field.window
    span = n_rows - 1
    if span > 0 and (m < n_min or m + span - 1 > n_max or k - (span - 1) < k_min or k + span - 1 > k_max):
        raise WindowExitError("kernel support leaves the window")
    rows = [np.ones(1)]
    cur = rows[0]
    for i in range(span):
        sites = k - i + 2 * np.arange(i + 1)
        xi = field.signs[m + i - n_min, sites - k_min]
        up = cur * np.where(xi > 0, q, 1.0 - q)
        down = cur * np.where(xi > 0, 1.0 - q, q)
        nxt = np.zeros(i + 2)
        nxt[1:] += up
        nxt[:-1] += down
        rows.append(nxt)
        cur = nxt
    return DiscreteKernel((k, m), q, tuple(rows))


def _batched_rows(field: ArrowField, q: float, sites: np.ndarray, t: int, n: int) -> list[np.ndarray]:
    """Kernels from every (j, t), j in ``sites``, advanced together on dense
    window columns.  Returns the matrices for rows t+1 .. n."""
    k_min, k_max, n_min, n_max = field.window
    width = k_max - k_min + 1
    mat = np.zeros((sites.size, width))
    mat[np.arange(sites.size), sites - k_min] = 1.0
    out = []
    for r in range(t, n):
        if r < n_min or r > n_max:
            raise WindowExitError(f"row {r} outside window")
        if np.any(mat[:, 0] != 0) or np.any(mat[:, -1] != 0):
            raise WindowExitError(f"kernel support reaches the window edge at row {r}")
        xi = field.signs[r - n_min]
        w_up = np.where(xi > 0, q, 1.0 - q)
        w_dn = np.where(xi > 0, 1.0 - q, q)
        nxt = np.zeros_like(mat)
        nxt[:, 1:] += mat[:, :-1] * w_up[:-1]
        nxt[:, :-1] += mat[:, 1:] * w_dn[1:]
        mat = nxt
        out.append(mat)
    return out


def kernel_compose(kernel: DiscreteKernel, field: ArrowField, q: float, n: int) -> DiscreteKernel:
    """Extend ``kernel`` (rows m..t) to rows m..n by composing its row t with
    the kernels K_{t,r}(j, .) from every j in that row's support."""
    if q != kernel.q:
        raise ValueError("kernel and composition must share q")
    _check_q(q)
    t = kernel.last_row
    if n < t:
        raise ValueError(f"target row {n} precedes the kernel's last row {t}")
    if n == t:
        return kernel
    k, m = kernel.start
    sites, weights = kernel.row(t)
    k_min = field.window[0]
    rows = list(kernel.rows)
    for s, mat in enumerate(_batched_rows(field, q, sites, t, n), start=1):
        dense = weights @ mat
        i = t - m + s
        lo = k - i - k_min
        idx = lo + 2 * np.arange(i + 1)
        rows.append(dense[idx].copy())
    return DiscreteKernel(kernel.start, q, tuple(rows))


def discrete_npoint_sample(
    field: ArrowField,
    q: float,
    starts,
    n_steps: int,
    seed: int,
    terminal_only: bool = False,
) -> np.ndarray:
    """Walkers that, given the field, independently take k -> k + xi with
    probability q and k -> k - xi otherwise.  ``starts`` are (k, n) sites on
    a common row.  Returns (N, n_steps + 1) positions, or the terminal
    positions only."""
    _check_q(q)
    starts = np.asarray(starts, dtype=np.int64).reshape(-1, 2)
    rows0 = np.unique(starts[:, 1])
    if rows0.size != 1:
        raise ValueError("all walkers must start on the same row")
    n0 = int(rows0[0])
    ks = starts[:, 0].copy()
    if np.any((ks + n0) % 2):
        raise ValueError("start sites must have even parity")
    k_min, k_max, n_min, n_max = field.window
    if n0 < n_min or n0 + n_steps - 1 > n_max:
        raise WindowExitError("walker rows leave the window")
    rng = stream(seed, WALKER_STREAM)
    pos = ks
    path = None if terminal_only else np.empty((ks.size, n_steps + 1), dtype=np.int64)
    if path is not None:
        path[:, 0] = pos
    for i in range(n_steps):
        if pos.min() < k_min or pos.max() > k_max:
            raise WindowExitError(f"walker left the window at row {n0 + i}")
        xi = field.signs[n0 + i - n_min, pos - k_min]
        follow = rng.random(pos.size) < q
        pos = pos + np.where(follow, xi, -xi)
        if path is not None:
            path[:, i + 1] = pos
    return pos if terminal_only else path


def diffusive_rescale(path, eps: float, n0: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Scale time by eps and space by sqrt(eps); returns (times, values)."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    path = np.asarray(path)
    times = eps * (n0 + np.arange(path.shape[-1]))
    return times, math.sqrt(eps) * path.astype(float)


@dataclass(frozen=True)
class CompositionReport:
    sites: int
    expected: float
    agreement_two_step: float
    agreement_one_step: float
    z_two_step: float
    z_one_step: float
    z_difference: float
    sigmas: float

    @property
    def passed(self) -> bool:
        return max(abs(self.z_two_step), abs(self.z_one_step), abs(self.z_difference)) <= self.sigmas


def markov_composition_check(window, u1: float, u2: float, seed: int, sigmas: float = 4.0) -> CompositionReport:
    """Evolve a field by u1 then by u2 and compare the agreement with the
    original to (1 + e^{-2(u1+u2)})/2, and to a single evolution by u1+u2."""
    if u1 < 0 or u2 < 0:
        raise ValueError("dynamics times must be non-negative")
    base = sample_arrow_field(window, seed)
    f1 = evolve_arrow_field(base, u1, mix(seed, 1))
    f2 = evolve_arrow_field(f1, u2, mix(seed, 2))
    direct = evolve_arrow_field(base, u1 + u2, mix(seed, 3))
    s0 = base.site_values()
    a2 = float(np.mean(f2.site_values() == s0))
    a1 = float(np.mean(direct.site_values() == s0))
    p = agreement_probability(u1 + u2)
    n = s0.size
    sd = math.sqrt(p * (1.0 - p) / n)
    if sd == 0:
        z2 = 0.0 if a2 == p else math.inf
        z1 = 0.0 if a1 == p else math.inf
        zd = 0.0 if a1 == a2 else math.inf
    else:
        z2 = (a2 - p) / sd
        z1 = (a1 - p) / sd
        zd = (a2 - a1) / (sd * math.sqrt(2.0))
    return CompositionReport(n, p, a2, a1, z2, z1, zd, sigmas)
