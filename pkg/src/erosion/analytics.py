"""Closed forms and quadratures for the special functions used throughout.

All spatial quantities refer to the *difference* of two Brownian motions,
which diffuses at rate 2 while the motions are apart.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy import integrate, special

if TYPE_CHECKING:
    from .stats import EstimateWithError

SQRT_PI = math.sqrt(math.pi)


@dataclass(frozen=True)
class NormalParams:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def mean_abs(self) -> float:
        """E|Y| for Y ~ N(mean, variance)."""
        s = self.std
        u = abs(self.mean) / s
        return s * (2.0 * _phi(u) + u * (1.0 - 2.0 * special.ndtr(-u)))


@dataclass(frozen=True)
class KappaQuery:
    t: float
    x: float

    def __post_init__(self):
        _check_time(self.t)


def _phi(u):
    return np.exp(-0.5 * np.square(u)) / math.sqrt(2.0 * math.pi)


def _check_time(t):
    if not np.all(np.asarray(t) > 0):
        raise ValueError(f"time must be strictly positive, got {t}")


def normal_cdf(x):
    """Standard normal distribution function, accurate to ~1e-16 absolute."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("normal_cdf requires finite input")
    out = special.ndtr(x)
    return float(out) if out.ndim == 0 else out


def kappa(t, x):
    """kappa_t(x) = E|B(2t) + x| - |x|.

    Written as ``2 s (phi(u) - u Q(u))`` with ``s = sqrt(2t)``, ``u = |x|/s`` and
    ``Q`` the upper normal tail, which avoids the cancellation in the naive
    difference for large ``|x|``; the far tail uses a continued fraction.
    """
    _check_time(t)
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    s = np.sqrt(2.0 * t)
    u = np.abs(x) / s
    out = 2.0 * s * _folded_tail(u)
    return float(out) if out.ndim == 0 else out


def _folded_tail(u):
    """phi(u) - u Q(u) for u >= 0.  Beyond u = 3 the difference cancels, so
    use phi(u) / (1 + u D) with D = u + 2/(u + 3/(u + ...)), the tail of
    Laplace's continued fraction for the Mills ratio."""
    u = np.asarray(u, dtype=float)
    direct = np.maximum(_phi(u) - u * special.ndtr(-u), 0.0)
    big = u > 3.0
    if not np.any(big):
        return direct
    ub = u[big] if u.ndim else u
    d = ub.copy()
    for k in range(120, 1, -1):
        d = ub + k / d
    tail = _phi(ub) / (1.0 + ub * d)
    if u.ndim == 0:
        return tail
    out = direct.copy()
    out[big] = tail
    return out


def first_passage_cdf(t, x, var_rate=2.0):
    """P(T_x <= t) for a Brownian motion of variance ``var_rate`` per unit time
    started at ``x > 0`` hitting 0 (reflection principle). Zero for ``t <= 0``."""
    if not np.all(np.asarray(x) > 0):
        raise ValueError(f"starting offset must be positive, got {x}")
    if not var_rate > 0:
        raise ValueError(f"var_rate must be positive, got {var_rate}")
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = x / np.sqrt(2.0 * var_rate * np.where(t > 0, t, 1.0))
    out = np.where(t > 0, special.erfc(arg), 0.0)
    return float(out) if out.ndim == 0 else out


def lambda_coalescing(t: float, x: float) -> float:
    """Expected time spent together up to ``t`` by two coalescing Brownian
    motions started ``x`` apart: E[(t - T_x)^+] = int_0^t P(T_x <= s) ds."""
    _check_time(t)
    if x < 0:
        raise ValueError(f"offset must be non-negative, got {x}")
    if x == 0:
        return float(t)
    value, _ = integrate.quad(
        lambda s: first_passage_cdf(s, x, 2.0), 0.0, t, epsabs=1e-10, epsrel=1e-12, limit=200
    )
    return float(value)


def lambda_theta(
    t: float,
    x: float,
    theta: float,
    replicas: int = 2000,
    seed=None,
    n_steps: int = 256,
    fine_factor: int = 64,
) -> "EstimateWithError":
    """Monte Carlo estimate of the expected diagonal occupation up to ``t`` for
    a theta-coupled pair started ``x`` apart.

    Each replica contributes ``t - 2 A(t)``, the occupation implied by the
    time change (equal to the symmetric local time of the auxiliary
    diffusion at ``A(t)`` divided by ``theta``).
    """
    from .paths import CouplingParams, TimeGrid, sample_theta_pair
    from .stats import estimate

    _check_time(t)
    if x < 0:
        raise ValueError(f"offset must be non-negative, got {x}")
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    rng = np.random.default_rng(seed)
    grid = TimeGrid(0.0, t / n_steps, n_steps)
    params = CouplingParams(0.0, 0.0, theta)
    occ = np.empty(replicas)
    for r in range(replicas):
        _, tc = sample_theta_pair(x, 0.0, params, grid, fine_factor, rng)
        occ[r] = t - 2.0 * tc.a_inverse[-1]
    return estimate(occ)
