#!/usr/bin/env python3
"""
Asymptotic Slopes and Verification Drivers
==========================================

- slope_estimate: tail-increment slope with one Richardson step and an error bar
- verify_theorem_B: slopes of Deligne pairings, E and J against intersection numbers
- verify_theorem_C: slope of the K-energy against M^NA and DF; M_B and Gamma slopes from a beta family
- growth_exponent: polynomial growth of int e^beta_t
- semistability_scan: Sobol-sampled PL candidates, min DF and an upper bound for delta
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import qmc

from functionals import (aubin_j, deligne, gamma_gap, mabuchi, mabuchi_proxy, monge_ampere_energy,
                         potential_slot)
from input_validator import (CertificateMissingError, EntropyError, KstabValidationError, parse_rational)
from invariants import InvariantReport, detwisted_intersection, na_invariants
from polytope import MomentPolytope
from potentials import TorusPotential, ricci_potential
from rays import BetaFamily, Ray
from testconfig import (TestConfigPL, breakpoint_order, default_twist, make_testconfig, total_polytope,
                        validate_pl)

logger = logging.getLogger(__name__)

SLOPE_CONFIG = {
    'tail': 3,
    'stabilization_tol': 1e-3,
    'theoremB_tol': 1e-3,
    'theoremC_tol': 1e-2,
    'weak_tol': 1e-6,
    'growth_tol': 0.3,
    'jna_floor': 1e-6,
    'anchor_denominator': 64,
}

ROW_COLUMNS = ['suite', 'case', 'lhs', 'rhs', 'abs_diff', 'tol', 'pass', 'note']
SCAN_COLUMNS = ['tc_id', 'kind', 'pieces', 'DF', 'MNA', 'JNA', 'ratio']


@dataclass
class SlopeEstimate:
    """Asymptotic slope of t -> F(phi_t)"""
    name: str
    samples: Tuple[Tuple[float, float], ...]
    slope: float
    intercept: float
    error_bar: float
    stabilized: bool = False
    increments: Tuple[float, ...] = ()


def slope_estimate(samples: Sequence[Tuple[float, float]], name: str = "F", tail: Optional[int] = None,
                   tol: Optional[float] = None) -> SlopeEstimate:
    """
    Slope from the last increments (v_{k+1} - v_k) / (t_{k+1} - t_k).

    One Richardson step removes a 1/t term: s = (tau_2 s_2 - tau_1 s_1) / (tau_2 - tau_1) at the
    increment midpoints tau. The error bar is the largest deviation of a tail increment from s;
    the estimate counts as stabilized when the last three increments agree within tol.

    Raises:
        KstabValidationError: fewer than 4 samples, non-increasing times, non-finite values
    """
    tail = tail or SLOPE_CONFIG['tail']
    tol = SLOPE_CONFIG['stabilization_tol'] if tol is None else tol
    if len(samples) < 4:
        raise KstabValidationError(f"Slope estimate for {name} needs at least 4 samples, got {len(samples)}")
    t = np.array([float(s[0]) for s in samples])
    v = np.array([float(s[1]) for s in samples])
    if np.any(np.diff(t) <= 0):
        raise KstabValidationError(f"Sample times for {name} must be strictly increasing")
    if not np.all(np.isfinite(v)):
        raise KstabValidationError(f"Samples of {name} are not finite")
    increments = np.diff(v) / np.diff(t)
    tau = 0.5 * (t[1:] + t[:-1])
    slope = float((tau[-1] * increments[-1] - tau[-2] * increments[-2]) / (tau[-1] - tau[-2]))
    error_bar = float(np.abs(increments[-tail:] - slope).max())
    last = increments[-3:]
    stabilized = bool(np.all(np.abs(np.diff(last)) <= tol * (1.0 + abs(slope))))
    return SlopeEstimate(name, tuple((float(a), float(b)) for a, b in zip(t, v)), slope,
                         float(v[-1] - slope * t[-1]), error_bar, stabilized, tuple(float(x) for x in increments))


def make_row(suite: str, case: str, lhs: float, rhs: float, tol: float,
             passed: Optional[bool] = None, note: str = "") -> Dict[str, Any]:
    """One verification row; passes when |lhs - rhs| <= tol unless a verdict is given"""
    lhs, rhs = float(lhs), float(rhs)
    diff = abs(lhs - rhs)
    verdict = bool(diff <= tol) if passed is None else bool(passed)
    icon = "✅" if verdict else "❌"
    logger.info(f"{icon} {suite} {case}: lhs={lhs:.8g} rhs={rhs:.8g} |diff|={diff:.3g} tol={tol:.3g}")
    return {'suite': suite, 'case': case, 'lhs': lhs, 'rhs': rhs, 'abs_diff': diff, 'tol': float(tol),
            'pass': verdict, 'note': note}


def ray_profile(ray: Ray, functional: Callable[[TorusPotential], float], name: str,
                stop_on: Tuple[type, ...] = ()) -> Tuple[List[Tuple[float, float]], str]:
    """(t, F(phi_t)) along a ray; stops at the first time raising one of stop_on"""
    samples = []
    for t, potential in zip(ray.times, ray.potentials):
        try:
            samples.append((t, float(functional(potential))))
        except stop_on as e:
            note = f"{name} stopped before t={t:g}: {e}"
            logger.warning(f"⚠️ {note}")
            return samples, note
    return samples, ""


def _require_certificate(ray: Ray) -> None:
    if ray.compatibility is None:
        raise CertificateMissingError(f"Ray of kind {ray.kind} carries no compatibility certificate")


# --------------------------------------------------
# Energy slopes
# --------------------------------------------------

def deligne_profile(rays: Sequence[Ray]) -> List[Tuple[float, float]]:
    """(t, <phi_0^t, ..., phi_n^t>) for one ray per slot on a common grid and time grid"""
    grids = {ray.grid for ray in rays}
    if len(grids) != 1:
        raise KstabValidationError("Slot rays live on different grids")
    times = rays[0].times
    if any(ray.times != times for ray in rays):
        raise KstabValidationError("Slot rays use different time grids")
    reference = rays[0].reference
    samples = []
    for index, t in enumerate(times):
        slots = [potential_slot(ray.potentials[index], reference) for ray in rays]
        samples.append((t, deligne(slots)))
    return samples


def verify_theorem_B(tcs: Sequence[TestConfigPL], rays: Sequence[Ray], names: Optional[Sequence[str]] = None,
                     tolerance: Optional[float] = None, mixed: bool = True) -> List[Dict[str, Any]]:
    """
    Slopes of <phi^t, ..., phi^t>, E and J along compatible rays against (A^(n+1)), E^NA and J^NA;
    with mixed=True also <phi_a^t, phi_b^t, ...> against (A_a . A_b^n) for consecutive rays on one grid.

    Raises:
        CertificateMissingError: a ray without compatibility certificate
    """
    if len(tcs) != len(rays):
        raise KstabValidationError("verify_theorem_B needs one ray per test configuration")
    tolerance = tolerance or SLOPE_CONFIG['theoremB_tol']
    names = list(names) if names else [f"case{i}" for i in range(len(tcs))]
    rows = []
    for name, tc, ray in zip(names, tcs, rays):
        _require_certificate(ray)
        report = na_invariants(tc)
        n = tc.dim
        reference = ray.reference
        checks = [
            ('deligne', deligne_profile([ray] * (n + 1)), report.A_top),
            ('E', ray_profile(ray, lambda p: monge_ampere_energy(p, reference).value, 'E')[0], report.ENA),
            ('J', ray_profile(ray, lambda p: aubin_j(p, reference).value, 'J')[0], report.JNA),
        ]
        for quantity, samples, target in checks:
            estimate = slope_estimate(samples, name=quantity)
            tol = max(tolerance, 3 * estimate.error_bar)
            rows.append(make_row('theoremB', f"{name}:{quantity}", estimate.slope, float(target), tol,
                                 note="" if estimate.stabilized else "increments not stabilized"))
    if mixed:
        for i in range(len(tcs) - 1):
            first, second = rays[i], rays[i + 1]
            if first.grid != second.grid or first.times != second.times or tcs[i].base != tcs[i + 1].base:
                continue
            n = tcs[i].dim
            twists = [default_twist(tcs[i])] + [default_twist(tcs[i + 1])] * n
            classes = [total_polytope(tcs[i], twists[0])] + [total_polytope(tcs[i + 1], twists[1])] * n
            target = detwisted_intersection(classes, twists, [tcs[i].base] * (n + 1))
            estimate = slope_estimate(deligne_profile([first] + [second] * n), name='deligne')
            rows.append(make_row('theoremB', f"{names[i]}x{names[i + 1]}:deligne", estimate.slope, float(target),
                                 max(tolerance, 3 * estimate.error_bar)))
    return rows


# --------------------------------------------------
# K-energy slopes
# --------------------------------------------------

def verify_theorem_C(tc: TestConfigPL, ray: Ray, name: str = "case", smooth_ray: Optional[Ray] = None,
                     beta: Optional[BetaFamily] = None, tolerance: Optional[float] = None,
                     weak_tolerance: Optional[float] = None) -> List[Dict[str, Any]]:
    """
    slope(M) against M^NA, the weak inequality slope(M) <= DF and the gap DF - slope(M) = |correction|.

    With a smooth compatible ray and a beta family on its grid: slope(M_B) against DF and
    slope(Gamma) against the correction term. Entropy overflow truncates the samples at the last valid time.
    """
    _require_certificate(ray)
    tolerance = tolerance or SLOPE_CONFIG['theoremC_tol']
    weak_tolerance = weak_tolerance or SLOPE_CONFIG['weak_tol']
    report = na_invariants(tc)
    reference = ray.reference
    ricci = ricci_potential(reference)
    samples, note = ray_profile(ray, lambda p: mabuchi(p, ricci, reference).value, 'M', stop_on=(EntropyError,))
    estimate = slope_estimate(samples, name='M')
    tol = max(tolerance, 3 * estimate.error_bar)
    weak = max(weak_tolerance, 3 * estimate.error_bar)
    rows = [
        make_row('theoremC', f"{name}:M~MNA", estimate.slope, float(report.MNA), tol, note=note),
        make_row('theoremC', f"{name}:M<=DF", estimate.slope, float(report.DF), weak,
                 passed=estimate.slope <= float(report.DF) + weak, note=note),
        make_row('theoremC', f"{name}:DF-M~|correction|", float(report.DF) - estimate.slope,
                 abs(float(report.correction)), tol, note=note),
    ]
    if smooth_ray is not None and beta is not None:
        rows.extend(_beta_rows(tc, smooth_ray, beta, report, name, tolerance))
    return rows


def _beta_rows(tc: TestConfigPL, ray: Ray, beta: BetaFamily, report: InvariantReport, name: str,
               tolerance: float) -> List[Dict[str, Any]]:
    _require_certificate(ray)
    if beta.grid != ray.grid or tuple(beta.times) != ray.times:
        raise KstabValidationError("Beta family and smooth ray must share grid and times")
    reference = ray.reference
    ricci = ricci_potential(reference)
    xi = dict(zip(beta.times, beta.xi))
    proxy, gap = [], []
    for t, potential in zip(ray.times, ray.potentials):
        try:
            proxy.append((t, mabuchi_proxy(potential, xi[t], ricci, reference).value))
            gap.append((t, gamma_gap(potential, xi[t], ricci, reference)))
        except EntropyError as e:
            logger.warning(f"⚠️ Beta family stopped before t={t:g}: {e}")
            break
    rows = []
    proxy_slope = slope_estimate(proxy, name='MB')
    rows.append(make_row('theoremC', f"{name}:MB~DF", proxy_slope.slope, float(report.DF),
                         max(tolerance, 3 * proxy_slope.error_bar)))
    gap_slope = slope_estimate(gap, name='Gamma')
    rows.append(make_row('theoremC', f"{name}:Gamma~correction", gap_slope.slope, float(report.correction),
                         max(tolerance, 3 * gap_slope.error_bar)))
    return rows


def verify_weak_C(tc: TestConfigPL, ray: Ray, name: str = "case",
                  tolerance: Optional[float] = None) -> Dict[str, Any]:
    """slope(M) <= DF + max(tol, 3 error_bar)"""
    _require_certificate(ray)
    tolerance = tolerance or SLOPE_CONFIG['weak_tol']
    report = na_invariants(tc)
    reference = ray.reference
    ricci = ricci_potential(reference)
    samples, note = ray_profile(ray, lambda p: mabuchi(p, ricci, reference).value, 'M', stop_on=(EntropyError,))
    estimate = slope_estimate(samples, name='M')
    tol = max(tolerance, 3 * estimate.error_bar)
    return make_row('weakC', f"{name}:M<=DF", estimate.slope, float(report.DF), tol,
                    passed=estimate.slope <= float(report.DF) + tol, note=note)


# --------------------------------------------------
# Growth of the relative canonical volume
# --------------------------------------------------

def growth_exponent(times: Sequence[float], integrals: Sequence[float], tail: Optional[int] = None) -> float:
    """
    Exponent k of int e^beta_t ~ t^k by least squares of log I against log t over the tail.

    Raises:
        KstabValidationError: non-positive integral or fewer than two positive times
    """
    tail = tail or SLOPE_CONFIG['tail']
    t = np.asarray(times, dtype=float)
    values = np.asarray(integrals, dtype=float)
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise KstabValidationError("Volume integrals must be positive and finite")
    keep = t > 0
    t, values = t[keep][-tail:], values[keep][-tail:]
    if len(t) < 2:
        raise KstabValidationError("Growth exponent needs at least two positive times")
    return float(np.polyfit(np.log(t), np.log(values), 1)[0])


def log_growth_ratio(times: Sequence[float], integrals: Sequence[float]) -> float:
    """log(int e^beta_t) / t at the last time; tends to 0"""
    return math.log(float(integrals[-1])) / float(times[-1])


def verify_growth(tc: TestConfigPL, beta: BetaFamily, name: str = "case",
                  tolerance: Optional[float] = None) -> List[Dict[str, Any]]:
    """
    Growth rows for int e^beta_t, p = largest number of pieces through a point:
      * exponent   - fitted exponent against p - 1 (one neck of modulus ~ t per crossing)
      * bound      - fitted exponent at most 2(p - 1), the polynomial bound the o(t) argument uses
      * log/t      - log(int e^beta_t) / t against 0
    """
    tolerance = tolerance or SLOPE_CONFIG['growth_tol']
    integrals = beta.integrals()
    exponent = growth_exponent(beta.times, integrals)
    p = breakpoint_order(tc)
    bound = 2 * (p - 1)
    ratio = log_growth_ratio(beta.times, integrals)
    return [
        make_row('growth', f"{name}:exponent", exponent, p - 1, tolerance),
        make_row('growth', f"{name}:exponent<=2(p-1)", exponent, bound, tolerance,
                 passed=exponent <= bound + tolerance),
        make_row('growth', f"{name}:log/t", ratio, 0.0, tolerance),
    ]


# --------------------------------------------------
# Semistability scans
# --------------------------------------------------

@dataclass
class ScanResult:
    """Scan rows in candidate order with the extremes"""
    rows: pd.DataFrame
    min_DF: float
    argmin: Optional[TestConfigPL]
    delta_upper: float
    candidates: List[TestConfigPL] = field(default_factory=list, repr=False)


def parse_slope_set(slopes: Sequence[Sequence[Any]], dim: int) -> List[Tuple[Fraction, ...]]:
    """Rational slope vectors, duplicates removed in order"""
    if not slopes:
        raise KstabValidationError("Slope set is empty")
    parsed = []
    for slope in slopes:
        vector = tuple(parse_rational(a) for a in slope)
        if len(vector) != dim:
            raise KstabValidationError(f"Slope {list(slope)} does not have dimension {dim}")
        if vector not in parsed:
            parsed.append(vector)
    return parsed


def _anchor(polytope: MomentPolytope, unit: np.ndarray) -> Tuple[Any, ...]:
    vertices = np.array(polytope.vertices, dtype=float)
    low, high = vertices.min(axis=0), vertices.max(axis=0)
    point = low + unit * (high - low)
    if polytope.exact:
        return tuple(Fraction(float(x)).limit_denominator(SLOPE_CONFIG['anchor_denominator']) for x in point)
    return tuple(float(x) for x in point)


def scan_candidates(polytope: MomentPolytope, slopes: Sequence[Tuple[Fraction, ...]], samples: int, seed: int,
                    max_pieces: int = 3, include_linear: bool = True) -> List[Tuple[str, TestConfigPL]]:
    """
    Linear candidates for every nonzero slope, then PL candidates max_j <a_j, y - c_j> with
    slopes and anchors c_j read off a scrambled Sobol sequence.
    """
    n = polytope.dim
    candidates: List[Tuple[str, TestConfigPL]] = []
    if include_linear:
        for slope in slopes:
            if any(a != 0 for a in slope):
                candidates.append(('linear', make_testconfig(polytope, [(slope, 0)])))
    if samples <= 0:
        return candidates
    dimension = 1 + max_pieces * (1 + n)
    sampler = qmc.Sobol(d=dimension, scramble=True, seed=seed)
    points = sampler.random_base2(m=max(0, math.ceil(math.log2(samples))))[:samples]
    for u in points:
        count = min(max_pieces, 2 + int(u[0] * (max_pieces - 1)))
        pieces = []
        for j in range(count):
            offset = 1 + j * (1 + n)
            slope = slopes[min(len(slopes) - 1, int(u[offset] * len(slopes)))]
            anchor = _anchor(polytope, u[offset + 1:offset + 1 + n])
            intercept = -sum((a * c for a, c in zip(slope, anchor)), Fraction(0) if polytope.exact else 0.0)
            pieces.append((slope, intercept))
        candidates.append(('pl', make_testconfig(polytope, pieces)))
    return candidates


def _scan_row(index: int, kind: str, tc: TestConfigPL) -> Tuple[Dict[str, Any], TestConfigPL]:
    tc = validate_pl(tc)
    report = na_invariants(tc)
    jna = float(report.JNA)
    ratio = float(report.MNA) / jna if jna >= SLOPE_CONFIG['jna_floor'] else float('nan')
    pieces = ";".join(f"{list(map(str, p.slope))}:{p.intercept}" for p in tc.pieces)
    row = {'tc_id': index, 'kind': kind, 'pieces': pieces, 'DF': float(report.DF), 'MNA': float(report.MNA),
           'JNA': jna, 'ratio': ratio}
    return row, tc


def uniform_stability_ratio(rows: pd.DataFrame) -> float:
    """min M^NA / J^NA over rows with J^NA >= 1e-6: an upper bound for the uniform stability constant"""
    usable = rows[rows['JNA'] >= SLOPE_CONFIG['jna_floor']]
    if usable.empty:
        return float('nan')
    return float((usable['MNA'] / usable['JNA']).min())


def semistability_scan(polytope: MomentPolytope, slopes: Sequence[Sequence[Any]], samples: int, seed: int,
                       max_pieces: int = 3, threads: int = 1, include_linear: bool = True) -> ScanResult:
    """
    Evidence (never proof) of K-semistability: min DF over the candidates and delta_upper.

    Candidates are evaluated in parallel and merged in candidate order, so the result depends on the seed only.
    """
    slope_set = parse_slope_set(slopes, polytope.dim)
    candidates = scan_candidates(polytope, slope_set, samples, seed, max_pieces, include_linear)
    logger.info(f"🔄 Scanning {len(candidates)} candidates with {threads} thread(s)")
    results = Parallel(n_jobs=max(1, threads), backend='threading')(
        delayed(_scan_row)(index, kind, tc) for index, (kind, tc) in enumerate(candidates))
    rows = pd.DataFrame([row for row, _ in results], columns=SCAN_COLUMNS)
    tcs = [tc for _, tc in results]
    best = int(rows['DF'].idxmin()) if not rows.empty else None
    result = ScanResult(
        rows=rows,
        min_DF=float(rows['DF'].min()) if not rows.empty else float('nan'),
        argmin=tcs[best] if best is not None else None,
        delta_upper=uniform_stability_ratio(rows),
        candidates=tcs,
    )
    logger.info(f"📊 Scan done: min DF = {result.min_DF:.6g}, delta_upper = {result.delta_upper:.6g}")
    return result
