"""Pathwise estimators and the statistical tests built on them."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np
from scipy import stats as sps

from ._kernels import code_integral, count_downcrossings, count_downcrossings_bridge

if TYPE_CHECKING:
    from .generator import PwLinear, ThetaFamily
    from .npoint import PathBundle
    from .paths import PathPair, TimeGrid


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    std_error: float
    replicas: int

    def __post_init__(self):
        if not self.std_error >= 0:
            raise ValueError(f"std_error must be non-negative, got {self.std_error}")
        if self.replicas < 1:
            raise ValueError(f"replicas must be at least 1, got {self.replicas}")

    def z_score(self, target: float) -> float:
        if self.std_error == 0:
            return 0.0 if self.value == target else math.inf
        return abs(self.value - target) / self.std_error


@dataclass(frozen=True)
class TestReport:
    """``passed`` is ``statistic <= threshold``; each producer documents
    what the statistic is (one- or two-sided)."""

    __test__ = False  # not a pytest class

    statistic: float
    threshold: float
    passed: bool
    description: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "TestReport":
        return cls(**json.loads(text))

    @classmethod
    def compare(cls, statistic: float, threshold: float, description: str) -> "TestReport":
        statistic = float(statistic)
        threshold = float(threshold)
        return cls(statistic, threshold, bool(statistic <= threshold), description)


def estimate(samples) -> EstimateWithError:
    """Sample mean with its standard error.  Sums use ``math.fsum`` so the
    result does not depend on the order replicas were reduced in."""
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n == 0:
        raise ValueError("cannot estimate from an empty sample")
    mean = math.fsum(x) / n
    if n == 1:
        return EstimateWithError(mean, math.inf, 1)
    var = math.fsum((x - mean) ** 2) / (n - 1)
    return EstimateWithError(mean, math.sqrt(var / n), n)


def ratio_estimate(num, den) -> EstimateWithError:
    """mean(num)/mean(den) with a delta-method standard error that accounts
    for the correlation between paired samples."""
    a = np.asarray(num, dtype=float).ravel()
    b = np.asarray(den, dtype=float).ravel()
    if a.size != b.size or a.size < 2:
        raise ValueError("ratio_estimate needs two paired samples of size >= 2")
    n = a.size
    ma = math.fsum(a) / n
    mb = math.fsum(b) / n
    if mb == 0:
        raise ValueError("denominator mean is zero")
    r = ma / mb
    resid = (a - r * b) / mb
    se = math.sqrt(math.fsum(resid**2) / (n - 1) / n)
    return EstimateWithError(r, se, n)


def occupation_diagonal(pair: "PathPair") -> float:
    """Time spent on the diagonal, left-endpoint rule on the together channel."""
    flags = np.asarray(pair.together[:-1], dtype=bool)
    return pair.grid.dt * int(np.count_nonzero(flags))


def local_time_downcrossing(diff_path, grid: "TimeGrid | None", eps: float, rng=None,
                            var_rate: float = 2.0) -> float:
    """eps times the number of downcrossings of [0, eps] by |diff_path|.

    This converges to the semimartingale local time at 0 (the one with
    |Y| - L a martingale), whatever the diffusion rate of Y.  A path that
    never leaves 0 has no crossings and reports 0.

    Counting on the grid alone misses every touch of 0 or of eps that falls
    between grid points, which biases the estimate down unless eps is many
    step sizes wide.  Given ``rng`` (and the grid), those touches are sampled
    from the Brownian bridge with the given variance rate, so the count is
    that of the continuous path.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    y = np.ascontiguousarray(diff_path, dtype=float)
    if grid is not None and y.shape[0] != grid.n_steps + 1:
        raise ValueError("path length does not match grid")
    if rng is None:
        return eps * count_downcrossings(y, float(eps))
    if grid is None or not var_rate > 0:
        raise ValueError("bridge sampling needs the grid and a positive variance rate")
    from .paths import as_rng

    counts = count_downcrossings_bridge(as_rng(rng), y, np.array([float(eps)]), 0.5 * var_rate * grid.dt)
    return eps * int(counts[0])


def quad_covariation(pair: "PathPair") -> float:
    """Realized covariation sum of dX dX' over the grid increments."""
    dx = np.diff(pair.x)
    dxp = np.diff(pair.x_prime)
    return math.fsum(dx * dxp)


def ks_critical_value(level: float, n: int, m: int) -> float:
    """Asymptotic two-sample Kolmogorov-Smirnov critical value."""
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    c = math.sqrt(-0.5 * math.log(level / 2.0))
    return c * math.sqrt((n + m) / (n * m))


def ks_two_sample(a, b, level: float = 0.01) -> TestReport:
    """Two-sample KS statistic against the asymptotic critical value."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("ks_two_sample needs two nonempty samples")
    d = sps.ks_2samp(a, b).statistic
    crit = ks_critical_value(level, a.size, b.size)
    return TestReport.compare(d, crit, f"two-sample KS, n={a.size}, m={b.size}, level={level}")


def ks_normal(samples, mean: float = 0.0, std: float = 1.0, level: float = 0.01) -> TestReport:
    """One-sample KS against N(mean, std^2), exact finite-n critical value."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("ks_normal needs a nonempty sample")
    d = sps.kstest(x, "norm", args=(mean, std)).statistic
    crit = sps.kstwo.ppf(1.0 - level, x.size)
    return TestReport.compare(d, crit, f"one-sample KS vs N({mean}, {std}^2), n={x.size}, level={level}")


def two_sided_z(level: float) -> float:
    """z with P(|N(0,1)| > z) = level."""
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    return float(sps.norm.isf(level / 2.0))


def drift_statistics(
    bundles: Sequence["PathBundle"],
    f: "PwLinear",
    family: "ThetaFamily",
    quad_points: int | None = None,
    tol: float = 0.0,
    table: np.ndarray | None = None,
) -> np.ndarray:
    """Per-replica f(X(t)) - f(x0) - int_0^t A f(X(s)) ds.

    With ``quad_points=None`` the integral is a left-endpoint sum over the
    bundle's grid; otherwise the generator is evaluated at the given number
    of equally spaced midpoint times (taking the state at the grid point at
    or before each one).  All bundles must share one grid.  ``table`` is a
    precomputed ``generator_table(family, f)`` for callers that loop.
    """
    from .generator import apply_generator_many, generator_table

    if not bundles:
        raise ValueError("no bundles")
    grid = bundles[0].grid
    n_rows = grid.n_steps + 1
    horizon = grid.dt * grid.n_steps
    if quad_points is None:
        idx = np.arange(grid.n_steps)
        w = np.full(idx.size, grid.dt)
    else:
        if quad_points < 1:
            raise ValueError("quad_points must be positive")
        s = (np.arange(quad_points) + 0.5) * (horizon / quad_points)
        idx = np.minimum(np.floor(s / grid.dt + 1e-9).astype(np.int64), grid.n_steps)
        w = np.full(quad_points, horizon / quad_points)
    if any(b.paths.shape[0] != n_rows for b in bundles):
        raise ValueError("bundles do not share a grid")
    n = bundles[0].n
    start = f.evaluate_many(np.stack([b.paths[0] for b in bundles]))
    end = f.evaluate_many(np.stack([b.paths[-1] for b in bundles]))
    if tol == 0 and n * (n - 1) // 2 <= 8:
        if table is None:
            table = generator_table(family, f)
        integral = np.array([code_integral(b.paths, idx, w, table) for b in bundles])
    else:
        paths = np.stack([b.paths for b in bundles])
        states = paths[:, idx, :].reshape(-1, n)
        gen = apply_generator_many(family, f, states, tol).reshape(len(bundles), idx.size)
        integral = np.sum(gen * w, axis=1)
    return end - start - integral


def martingale_drift_test(
    sampler: Callable[[np.ndarray, float, np.random.Generator], "PathBundle"],
    f: "PwLinear",
    family: "ThetaFamily",
    x0,
    t: float,
    quad_points: int | None = None,
    replicas: int = 1000,
    level: float = 0.0026998,
    seed=None,
    chunk: int = 256,
    tol: float = 0.0,
) -> TestReport:
    """Monte Carlo check that f(X(t)) - f(x0) - int A f(X(s)) ds has mean 0.

    ``sampler(x0, t, rng)`` returns one N-point bundle.  The statistic is
    |mean| / std_error (two-sided) and the threshold the normal quantile
    for ``level``; the default level corresponds to 3 sigma.
    """
    x0 = np.asarray(x0, dtype=float)
    rng = np.random.default_rng(seed)
    parts = []
    done = 0
    while done < replicas:
        k = min(chunk, replicas - done)
        bundles = [sampler(x0, t, rng) for _ in range(k)]
        parts.append(drift_statistics(bundles, f, family, quad_points, tol))
        done += k
    return zero_mean_report(np.concatenate(parts), level, "martingale drift")


def zero_mean_report(samples, level: float = 0.0026998, what: str = "mean") -> TestReport:
    """Two-sided z test of a zero mean: statistic |mean| / std_error against
    the normal quantile for ``level`` (the default is 3 sigma)."""
    est = estimate(samples)
    return TestReport.compare(
        est.z_score(0.0),
        two_sided_z(level),
        f"{what} {est.value:.6g} +/- {est.std_error:.3g} over {est.replicas} replicas",
    )
