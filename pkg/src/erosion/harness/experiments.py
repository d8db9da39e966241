"""Registered experiments, one per acceptance criterion.

Each experiment takes its resolved parameters, a root seed and a worker
count, and returns an ``Outcome``: one ``TestReport`` per registered check,
JSON-able diagnostics, CSV tables and plottable series.  Replica ensembles
use ``run_replicas`` so results do not depend on the worker count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate
from scipy import stats as sps

from .. import analytics, generator, lattice, npoint, paths, stats
from ..stats import TestReport
from .seeds import derive_seed, replica_rng, run_replicas


@dataclass
class Outcome:
    reports: dict[str, TestReport]
    diagnostics: dict = field(default_factory=dict)
    tables: dict[str, tuple[list[str], list[list]]] = field(default_factory=dict)
    series: dict[str, dict] = field(default_factory=dict)


@dataclass(frozen=True)
class Experiment:
    name: str
    criterion: int
    summary: str
    schema: dict
    checks: Callable[[dict], list[str]]
    run: Callable[[dict, int, int], Outcome]

    def check_names(self, params: dict | None = None) -> list[str]:
        return list(self.checks({**self.schema, **(params or {})}))


REGISTRY: dict[str, Experiment] = {}


def register(name: str, criterion: int, summary: str, schema: dict, checks):
    def deco(fn):
        if name in REGISTRY:
            raise ValueError(f"duplicate experiment {name}")
        names = checks if callable(checks) else (lambda p, c=tuple(checks): c)
        REGISTRY[name] = Experiment(name, criterion, summary, dict(schema), names, fn)
        return fn

    return deco


def _line(label, x, y) -> dict:
    return {"label": label, "x": [float(v) for v in x], "y": [float(v) for v in y]}


def _series(title, xlabel, ylabel, lines, kind="line", **extra) -> dict:
    return {"title": title, "xlabel": xlabel, "ylabel": ylabel, "kind": kind, "lines": lines, **extra}


def _est(e: stats.EstimateWithError) -> dict:
    return {"value": e.value, "std_error": e.std_error, "replicas": e.replicas}


# -- 1. kappa closed form ----------------------------------------------------

def kappa_quadrature(t: float, x: float) -> float:
    """E|x + B(2t)| - |x| by adaptive quadrature, split at the kink."""
    sd = math.sqrt(2.0 * t)

    def dens(y):
        return math.exp(-0.5 * ((y - x) / sd) ** 2) / (sd * math.sqrt(2.0 * math.pi))

    lo, hi = x - 40.0 * sd, x + 40.0 * sd
    pos = neg = 0.0
    if hi > 0:
        pos, _ = integrate.quad(lambda y: y * dens(y), max(lo, 0.0), hi, epsabs=1e-14, epsrel=1e-13, limit=200)
    if lo < 0:
        neg, _ = integrate.quad(lambda y: -y * dens(y), lo, min(hi, 0.0), epsabs=1e-14, epsrel=1e-13, limit=200)
    return pos + neg - abs(x)


_GRID = {"t_grid": [0.01, 0.1, 1.0, 10.0], "x_grid": [0.0, 0.1, 1.0, 5.0]}


@register("kappa-closed-form", 1, "closed-form kappa against adaptive quadrature",
          {**_GRID, "tol": 1e-10}, ["kappa-vs-quadrature"])
def _kappa(params, root_seed, workers):
    rows, worst = [], 0.0
    for t in params["t_grid"]:
        for x in params["x_grid"]:
            c = float(analytics.kappa(t, x))
            q = kappa_quadrature(t, x)
            worst = max(worst, abs(c - q))
            rows.append([t, x, c, q, abs(c - q)])
    xs = np.linspace(-4.0, 4.0, 161)
    return Outcome(
        {"kappa-vs-quadrature": TestReport.compare(worst, params["tol"], "max |kappa - quadrature| over the grid")},
        {"max_abs_deviation": worst},
        {"kappa": (["t", "x", "closed_form", "quadrature", "abs_diff"], rows)},
        {"kappa": _series("kappa_t(x)", "x", "kappa", [_line(f"t={t}", xs, analytics.kappa(t, xs))
                                                       for t in (0.1, 1.0)])},
    )


# -- 2. psi monotone limit ---------------------------------------------------

@register("psi-monotone-limit", 2, "theta sqrt(pi/t) psi_t g decreases to A g as t -> 0",
          {"theta": 1.0, "j_max": 12, "tol": 1e-6},
          ["monotone-N2", "limit-N2", "monotone-N3", "limit-N3"])
def _psi(params, root_seed, workers):
    theta = params["theta"]
    fam = npoint.erosion_theta_family(theta)
    ts = [4.0 ** -j for j in range(params["j_max"] + 1)]
    reports, rows, lines, diag = {}, [], [], {}
    for n in (2, 3):
        g = generator.PwLinear.g(n)
        x = np.zeros(n)
        vals = [theta * math.sqrt(math.pi / t) * generator.psi_total(g, x, t) for t in ts]
        target = generator.apply_generator(fam, g, x)
        rise = max(b - a for a, b in zip(vals, vals[1:]))
        slack = 1e-12 * max(abs(v) for v in vals)
        reports[f"monotone-N{n}"] = TestReport.compare(
            rise, slack, "largest increase along t = 4^-j (nonincreasing up to rounding)")
        reports[f"limit-N{n}"] = TestReport.compare(
            abs(vals[-1] - target), params["tol"], f"|value at t=4^-{params['j_max']} - A g(0)|, A g(0) = {target}")
        diag[f"A_g_N{n}"] = target
        rows += [[n, t, v] for t, v in zip(ts, vals)]
        lines.append(_line(f"N={n}, x=0", np.log2(ts), vals))
    # a point without full ties, where the limit is approached strictly
    x = np.array([0.0, 0.0, 0.5])
    g = generator.PwLinear.g(3)
    vals = [theta * math.sqrt(math.pi / t) * generator.psi_total(g, x, t) for t in ts]
    diag["off_diagonal_point"] = {"x": x.tolist(), "values": vals, "A_g": generator.apply_generator(fam, g, x)}
    lines.append(_line("N=3, x=(0,0,0.5)", np.log2(ts), vals))
    return Outcome(reports, diag, {"psi": (["N", "t", "value"], rows)},
                   {"psi": _series("theta sqrt(pi/t) psi_t g", "log2 t", "value", lines, kind="scatter")})


# -- 3. comparison inequality ------------------------------------------------

@register("comparison-inequality", 3, "sqrt(4/(pi t)) lambda_t(x) <= kappa_t(x)",
          {**_GRID, "tol": 1e-12}, ["comparison"])
def _comparison(params, root_seed, workers):
    rows, worst = [], -math.inf
    for t in params["t_grid"]:
        for x in params["x_grid"]:
            lhs = math.sqrt(4.0 / (math.pi * t)) * analytics.lambda_coalescing(t, x)
            rhs = float(analytics.kappa(t, x))
            worst = max(worst, lhs - rhs)
            rows.append([t, x, lhs, rhs, lhs - rhs])
    return Outcome(
        {"comparison": TestReport.compare(worst, params["tol"], "max (sqrt(4/(pi t)) lambda - kappa) over the grid")},
        {"max_excess": worst},
        {"comparison": (["t", "x", "scaled_lambda", "kappa", "excess"], rows)},
    )


# -- 4. discrete flow property -----------------------------------------------

@register("discrete-flow-property", 4, "composed discrete kernels equal the direct dynamic program",
          {"fields": 100, "size": 400, "q_values": [0.6, 0.9], "span": 197, "tol": 1e-12},
          ["chapman-kolmogorov"])
def _flow(params, root_seed, workers):
    size, span = params["size"], params["span"]
    half = size // 2
    if span > half - 2 or span > size - 1:
        raise ValueError("span does not fit the window")
    window = (-half, size - half - 1, 0, size - 1)
    worst, rows = 0.0, []
    for i in range(params["fields"]):
        rng = replica_rng(root_seed, "discrete-flow-property/layout", i)
        fld = lattice.sample_arrow_field(window, derive_seed(root_seed, "discrete-flow-property/field", i))
        m = int(rng.integers(0, size - span - 1))
        k = m % 2  # even parity start at column 0 or 1
        mid = m + int(rng.integers(0, span + 1))
        for q in params["q_values"]:
            direct = lattice.exact_kernel(fld, q, (k, m), span + 1)
            first = lattice.exact_kernel(fld, q, (k, m), mid - m + 1)
            composed = lattice.kernel_compose(first, fld, q, m + span)
            dev = max(float(np.max(np.abs(a - b))) for a, b in zip(direct.rows, composed.rows))
            worst = max(worst, dev)
            rows.append([i, q, m, mid, m + span, dev])
    return Outcome(
        {"chapman-kolmogorov": TestReport.compare(worst, params["tol"], "max entrywise |composed - direct|")},
        {"max_abs_deviation": worst, "comparisons": len(rows)},
        {"flow": (["field", "q", "start_row", "middle_row", "end_row", "max_abs_diff"], rows)},
    )


# -- 5. discrete dynamics semigroup ------------------------------------------

@register("discrete-dynamics-semigroup", 5, "evolving by u1 then u2 matches one step of u1 + u2",
          {"width": 2000, "height": 1000, "u1": 0.25, "u2": 0.5, "sigmas": 4.0},
          ["semigroup"])
def _semigroup(params, root_seed, workers):
    window = (0, params["width"] - 1, 0, params["height"] - 1)
    rep = lattice.markov_composition_check(window, params["u1"], params["u2"],
                                           derive_seed(root_seed, "discrete-dynamics-semigroup", 0),
                                           params["sigmas"])
    z = max(abs(rep.z_two_step), abs(rep.z_one_step), abs(rep.z_difference))
    diag = {k: getattr(rep, k) for k in ("sites", "expected", "agreement_two_step", "agreement_one_step",
                                         "z_two_step", "z_one_step", "z_difference")}
    return Outcome(
        {"semigroup": TestReport.compare(z, params["sigmas"],
                                         f"max |z| of agreement over {rep.sites} sites (two-step, one-step, difference)")},
        diag,
    )


# -- 6. (p, n) coupling limit ------------------------------------------------

def _pn_job(rng, p, n, sub_steps, eps):
    occ, gap, lts = paths.pn_pair_statistics(0.0, 0.0, p, n, 1.0, rng, sub_steps, eps)
    return [occ, gap, *lts]


@register("pn-coupling-limit", 6, "(p, n)-coupled pairs: local time over 2 theta occupation tends to 1",
          {"theta": 1.0, "n_values": [64, 256, 1024], "replicas": 10000, "eps": 0.01, "fine_log2": 18,
           "joint_se": 3.0},
          ["ratio-at-largest-n", "ratio-monotone-in-n"])
def _pn(params, root_seed, workers):
    theta, eps = params["theta"], params["eps"]
    fine = 2 ** params["fine_log2"]
    ns = sorted(params["n_values"])
    eps_all = (eps, 2.0 * eps)
    out, rows = {}, []
    for n in ns:
        if fine % n:
            raise ValueError(f"2^fine_log2 must be a multiple of n={n}")
        p = theta * math.sqrt(math.pi / n)
        res = run_replicas(_pn_job, root_seed, f"pn-coupling-limit/n={n}", params["replicas"],
                           (p, n, fine // n, eps_all), workers)
        occ, gap = res[:, 0], res[:, 1]
        ratio = stats.ratio_estimate(res[:, 2], 2.0 * theta * occ)
        ratio2 = stats.ratio_estimate(res[:, 3], 2.0 * theta * occ)
        tanaka = stats.ratio_estimate(gap, 2.0 * theta * occ)
        out[n] = {"p": p, "one_over_one_minus_p": 1.0 / (1.0 - p), "ratio": _est(ratio),
                  "ratio_2eps": _est(ratio2), "tanaka_ratio": _est(tanaka),
                  "mean_occupation": _est(stats.estimate(occ))}
        rows.append([n, p, 1.0 / (1.0 - p), ratio.value, ratio.std_error, ratio2.value, tanaka.value,
                     tanaka.std_error])
    top = out[ns[-1]]["ratio"]
    dists = [abs(out[n]["ratio"]["value"] - 1.0) for n in ns]
    rise = max(b - a for a, b in zip(dists, dists[1:])) if len(ns) > 1 else -math.inf
    reports = {
        "ratio-at-largest-n": TestReport.compare(
            abs(top["value"] - 1.0) / top["std_error"], params["joint_se"],
            f"|ratio - 1| / SE at n={ns[-1]}: ratio {top['value']:.5g} +/- {top['std_error']:.2g}"),
        "ratio-monotone-in-n": TestReport.compare(
            rise, 0.0, "largest increase of |ratio - 1| between consecutive n (must be <= 0)"),
    }
    xs = np.log2(ns)
    series = {"pn_ratio": _series("(p, n) coupling ratios", "log2 n", "ratio", [
        _line(f"downcrossing eps={eps}", xs, [out[n]["ratio"]["value"] for n in ns]),
        _line(f"downcrossing eps={2 * eps}", xs, [out[n]["ratio_2eps"]["value"] for n in ns]),
        _line("E|X-X'| / (2 theta E occ)", xs, [out[n]["tanaka_ratio"]["value"] for n in ns]),
        _line("1 / (1 - p)", xs, [out[n]["one_over_one_minus_p"] for n in ns]),
    ], kind="scatter")}
    return Outcome(reports, {"by_n": {str(n): v for n, v in out.items()}, "fine_dt": 1.0 / fine},
                   {"pn_ratios": (["n", "p", "one_over_one_minus_p", "ratio", "ratio_se", "ratio_2eps",
                                   "tanaka_ratio", "tanaka_se"], rows)},
                   series)


# -- 7, 8. theta-coupled pair identities ---------------------------------------

def _theta_job(rng, theta, n_steps, fine_factor):
    grid = paths.TimeGrid(0.0, 1.0 / n_steps, n_steps)
    pair, tc = paths.sample_theta_pair(0.0, 0.0, paths.CouplingParams(0.0, 0.0, theta), grid, fine_factor, rng)
    return [abs(pair.diff[-1]), float(tc.occupation(1.0)[-1]), stats.occupation_diagonal(pair),
            stats.quad_covariation(pair)]


def theta_ensemble(root_seed, theta, n_steps, fine_factor, replicas, workers) -> np.ndarray:
    """Columns: |X(1) - X'(1)|, occupation t - 2A(t), grid occupation,
    realized covariation.  Shared by the Tanaka and covariation checks."""
    name = f"theta-ensemble/theta={theta!r}/n_steps={n_steps}/fine_factor={fine_factor}"
    return run_replicas(_theta_job, root_seed, name, replicas, (theta, n_steps, fine_factor), workers)


_THETA = {"thetas": [0.5, 1.0, 2.0], "replicas": 10000, "n_steps": 256, "fine_factor": 64, "sigmas": 3.0}


@register("tanaka-identity", 7, "E|X(1) - X'(1)| = 2 theta E occupation, stable under grid refinement",
          {**_THETA, "max_change": 0.05},
          lambda p: [f"{kind}-theta={th}" for th in p["thetas"] for kind in ("tanaka", "refinement")])
def _tanaka(params, root_seed, workers):
    reports, diag, rows = {}, {}, []
    for th in params["thetas"]:
        base = theta_ensemble(root_seed, th, params["n_steps"], params["fine_factor"], params["replicas"], workers)
        fine = theta_ensemble(root_seed, th, params["n_steps"], 2 * params["fine_factor"], params["replicas"], workers)
        est = stats.estimate(base[:, 0] - 2.0 * th * base[:, 1])
        reports[f"tanaka-theta={th}"] = TestReport.compare(
            est.z_score(0.0), params["sigmas"],
            f"|mean(|X-X'| - 2 theta occ)| / SE = {est.value:.4g} / {est.std_error:.2g}")
        changes = {}
        for col, label in ((0, "gap"), (1, "occupation")):
            a, b = math.fsum(base[:, col]), math.fsum(fine[:, col])
            changes[label] = abs(b - a) / abs(a)
        reports[f"refinement-theta={th}"] = TestReport.compare(
            max(changes.values()), params["max_change"], "largest relative change of a mean under fine_factor doubling")
        diag[str(th)] = {
            "mean_gap": _est(stats.estimate(base[:, 0])),
            "mean_occupation": _est(stats.estimate(base[:, 1])),
            "mean_grid_occupation": _est(stats.estimate(base[:, 2])),
            "tanaka_difference": _est(est),
            "tanaka_difference_grid_occupation": _est(stats.estimate(base[:, 0] - 2.0 * th * base[:, 2])),
            "relative_change_under_refinement": changes,
        }
        rows.append([th, diag[str(th)]["mean_gap"]["value"], diag[str(th)]["mean_occupation"]["value"],
                     est.value, est.std_error, changes["gap"], changes["occupation"]])
    return Outcome(reports, diag, {"tanaka": (["theta", "mean_gap", "mean_occupation", "difference", "se",
                                               "gap_change", "occupation_change"], rows)})


@register("covariation-identity", 8, "E[X, X'](1) = E occupation on the Tanaka ensembles",
          dict(_THETA), lambda p: [f"covariation-theta={th}" for th in p["thetas"]])
def _covariation(params, root_seed, workers):
    reports, diag, rows = {}, {}, []
    for th in params["thetas"]:
        base = theta_ensemble(root_seed, th, params["n_steps"], params["fine_factor"], params["replicas"], workers)
        est = stats.estimate(base[:, 3] - base[:, 1])
        reports[f"covariation-theta={th}"] = TestReport.compare(
            est.z_score(0.0), params["sigmas"],
            f"|mean(covariation - occ)| / SE = {est.value:.4g} / {est.std_error:.2g}")
        diag[str(th)] = {"mean_covariation": _est(stats.estimate(base[:, 3])), "difference": _est(est),
                         "difference_grid_occupation": _est(stats.estimate(base[:, 3] - base[:, 2]))}
        rows.append([th, diag[str(th)]["mean_covariation"]["value"], est.value, est.std_error])
    return Outcome(reports, diag, {"covariation": (["theta", "mean_covariation", "difference", "se"], rows)})


# -- 9. two-point motion -------------------------------------------------------

def _gap_job(rng, theta, n_switch, sub_steps):
    b = npoint.sample_npoint_erosion(np.zeros(2), theta, 1.0, n_switch, sub_steps, rng)
    return abs(b.paths[-1, 0] - b.paths[-1, 1])


def _pair_gap_job(rng, theta, n_steps, fine_factor):
    grid = paths.TimeGrid(0.0, 1.0 / n_steps, n_steps)
    pair, _ = paths.sample_theta_pair(0.0, 0.0, paths.CouplingParams(0.0, 0.0, theta), grid, fine_factor, rng)
    return abs(pair.diff[-1])


@register("two-point-motion", 9, "erosion two-point motion is a 2 theta-coupled pair (terminal gap KS)",
          {"theta": 1.0, "n_switch": 1024, "sub_steps": 8, "replicas": 10000, "level": 0.01,
           "pair_n_steps": 64, "pair_fine_factor": 64, "sensitivity": True},
          ["ks-terminal-gap"])
def _two_point(params, root_seed, workers):
    theta, n_sw, reps = params["theta"], params["n_switch"], params["replicas"]
    ref = run_replicas(_pair_gap_job, root_seed, "two-point-motion/pair", reps,
                       (2.0 * theta, params["pair_n_steps"], params["pair_fine_factor"]), workers)

    def erosion(n):
        return run_replicas(_gap_job, root_seed, f"two-point-motion/n_switch={n}", reps,
                            (theta, n, params["sub_steps"]), workers)

    gaps = erosion(n_sw)
    rep = stats.ks_two_sample(gaps, ref, params["level"])
    diag = {"n_switch": n_sw, "ks": rep.statistic, "critical": rep.threshold,
            "mean_gap_erosion": _est(stats.estimate(gaps)), "mean_gap_pair": _est(stats.estimate(ref))}
    if params["sensitivity"]:
        sens = {}
        for n in (n_sw // 2, 2 * n_sw):
            g = erosion(n)
            r = stats.ks_two_sample(g, ref, params["level"])
            sens[str(n)] = {"ks": r.statistic, "mean_gap": _est(stats.estimate(g))}
        diag["sensitivity"] = sens
    qs = np.linspace(0.0, 1.0, 101)
    series = {"gap_cdf": _series("terminal gap", "gap", "empirical cdf", [
        _line(f"erosion N=2, n_switch={n_sw}", np.quantile(gaps, qs), qs),
        _line(f"theta-coupled pair, theta={2 * theta}", np.quantile(ref, qs), qs)])}
    return Outcome({"ks-terminal-gap": rep}, diag,
                   {"gaps": (["erosion_gap", "pair_gap"], [[a, b] for a, b in zip(gaps, ref)])}, series)


# -- 10. N-point martingale problem ---------------------------------------------

@lru_cache(maxsize=None)
def _drift_setup(n, theta, fs):
    fam = npoint.erosion_theta_family(theta)
    out = []
    for c, a, b in fs:
        bb = np.zeros((n, n))
        bb[np.triu_indices(n, 1)] = b
        f = generator.PwLinear(n, c=c, a=a, b=bb)
        out.append((f, generator.generator_table(fam, f)))
    return fam, tuple(out)


def _drift_job(rng, n, theta, n_switch, sub_steps, fs):
    fam, setup = _drift_setup(n, theta, fs)
    b = npoint.sample_npoint_erosion(np.zeros(n), theta, 1.0, n_switch, sub_steps, rng)
    return [float(stats.drift_statistics([b], f, fam, table=table)[0]) for f, table in setup]


def _g_coeffs(n):
    return (0.0, (0.0,) * n, (1.0,) * (n * (n - 1) // 2))


@register("npoint-martingale", 10, "erosion N-point motion solves the A^theta_N martingale problem",
          {"theta": 1.0, "n_switch": 1024, "sub_steps": 8, "replicas": 100000, "level": 0.0026998,
           "generic_c": 0.5, "generic_a": [0.5, -1.0, 0.25], "generic_b": [1.0, -0.5, 2.0],
           "sensitivity_replicas": 10000},
          ["drift-g-N2", "drift-g-N3", "drift-generic-N3"])
def _martingale(params, root_seed, workers):
    theta, n_sw, ss = params["theta"], params["n_switch"], params["sub_steps"]
    generic = (float(params["generic_c"]), tuple(map(float, params["generic_a"])),
               tuple(map(float, params["generic_b"])))
    if len(generic[1]) != 3 or len(generic[2]) != 3:
        raise ValueError("generic f needs 3 linear and 3 pair coefficients")
    plan = {2: (_g_coeffs(2),), 3: (_g_coeffs(3), generic)}
    labels = {2: ["drift-g-N2"], 3: ["drift-g-N3", "drift-generic-N3"]}

    def run(n, n_switch, reps, tag):
        return run_replicas(_drift_job, root_seed, f"npoint-martingale/N={n}/n_switch={n_switch}{tag}", reps,
                            (n, theta, n_switch, ss, plan[n]), workers)

    reports, diag = {}, {"n_switch": n_sw}
    for n in (2, 3):
        res = run(n, n_sw, params["replicas"], "")
        for col, key in enumerate(labels[n]):
            reports[key] = stats.zero_mean_report(res[:, col], params["level"], f"{key}: drift")
            diag[key] = _est(stats.estimate(res[:, col]))
        if params["sensitivity_replicas"] > 0:
            for m in (n_sw // 2, 2 * n_sw):
                r = run(n, m, params["sensitivity_replicas"], "/sensitivity")
                for col, key in enumerate(labels[n]):
                    diag.setdefault("sensitivity", {}).setdefault(key, {})[str(m)] = _est(stats.estimate(r[:, col]))
    bundle = npoint.sample_npoint_erosion(np.zeros(3), theta, 1.0, n_sw, ss,
                                          replica_rng(root_seed, "npoint-martingale/example", 0))
    step = max(1, bundle.grid.n_steps // 2048)
    t = bundle.grid.times[::step]
    series = {"bundle_N3": _series("erosion 3-point motion", "t", "x", [
        _line(f"x_{i + 1}", t, bundle.paths[::step, i]) for i in range(3)])}
    return Outcome(reports, diag, {}, series)


# -- 11. theta family algebra ---------------------------------------------------

@register("theta-family-algebra", 11, "consistency, positivity and boundary-shift invariance of theta families",
          {"thetas": [0.5, 1.0, 2.0], "general": [[1.0, 0.5, -0.5], [1.0, 2.0, 0.0]], "k_max": 20,
           "shift_points": 100, "shifts": [0.25, -1.5, 3.0]},
          ["consistency", "positivity", "shift-invariance"])
def _families(params, root_seed, workers):
    k_max = params["k_max"]
    fams = [npoint.erosion_theta_family(th, k_max) for th in params["thetas"]]
    fams += [npoint.general_theta_family(th, b1, b2, k_max) for th, b1, b2 in params["general"]]
    cons = pos = 0
    per = {}
    for fam in fams:
        rep = generator.consistency_check(fam, k_max)
        cons += len(rep.consistency_violations)
        pos += len(rep.positivity_violations)
        per[fam.label] = {"consistency": len(rep.consistency_violations), "positivity": len(rep.positivity_violations)}
    rng = replica_rng(root_seed, "theta-family-algebra", 0)
    mismatches = 0
    for _ in range(params["shift_points"]):
        n = int(rng.integers(2, 5))
        x = rng.integers(-2, 3, size=n).astype(float) / 4.0  # ties are frequent
        b = rng.integers(-8, 9, size=(n, n)) / 8.0
        f = generator.PwLinear(n, c=float(rng.integers(-4, 5)) / 4.0, a=rng.integers(-8, 9, size=n) / 8.0, b=b)
        for fam in fams:
            base = generator.apply_generator(fam, f, x)
            for d in params["shifts"]:
                if generator.apply_generator(fam.shifted(d), f, x) != base:
                    mismatches += 1
    return Outcome(
        {"consistency": TestReport.compare(cons, 0, "exact consistency violations, k + l <= k_max"),
         "positivity": TestReport.compare(pos, 0, "negative theta(k:l) with k, l >= 1"),
         "shift-invariance": TestReport.compare(mismatches, 0, "generator values changed by a boundary shift")},
        {"families": per, "shift_comparisons": params["shift_points"] * len(fams) * len(params["shifts"])},
    )


# -- 12. Donsker -------------------------------------------------------------------

@register("donsker", 12, "rescaled discrete walk terminal law is standard normal",
          {"n_steps": 10000, "replicas": 10000, "q": 0.5, "level": 0.01, "window_sigmas": 6.0},
          ["ks-normal"])
def _donsker(params, root_seed, workers):
    n = params["n_steps"]
    half = int(math.ceil(params["window_sigmas"] * math.sqrt(n)))
    window = (-half, half, 0, n - 1)
    fld = lattice.sample_arrow_field(window, derive_seed(root_seed, "donsker/field", 0))
    starts = np.zeros((params["replicas"], 2), dtype=np.int64)
    end = lattice.discrete_npoint_sample(fld, params["q"], starts, n, derive_seed(root_seed, "donsker/walkers", 0),
                                         terminal_only=True)
    _, scaled = lattice.diffusive_rescale(end, 1.0 / n)
    rep = stats.ks_normal(scaled, 0.0, 1.0, params["level"])
    qs = np.linspace(0.005, 0.995, 100)
    series = {"donsker_qq": _series("terminal law quantiles", "normal quantile", "sample quantile", [
        _line("rescaled walk", sps.norm.ppf(qs), np.quantile(scaled, qs))], kind="scatter")}
    est = stats.estimate(scaled)
    return Outcome({"ks-normal": rep}, {"mean": _est(est), "variance": float(np.var(scaled, ddof=1))},
                   {}, series)
