#!/usr/bin/env python3
"""
Verification Suites Registry
============================

- REGISTRY maps suite names to builders and metadata
- @register(name, title=...) decorator to register suites
- get_suite_and_meta(name) helper to retrieve builder and metadata
- Suites:
  * theoremB   - slopes of Deligne pairings, E and J against intersection numbers
  * theoremC   - slope of the K-energy against M^NA, DF and the correction term
  * weakC      - slope(M) <= DF on the configured and on random configurations
  * basechange - homogeneity of M^NA, E^NA, J^NA under tau -> tau^d
  * twist      - independence of the invariants from the twist C and from f -> f + c
  * growth     - polynomial growth of the relative canonical volume (curves)
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from input_validator import KstabSettings, KstabValidationError
from invariants import InvariantReport, na_invariants
from potentials import LogGrid, default_grid
from rays import (beta_family, geodesic_from_testconfig, hmae_residual, ray_grid, second_differences,
                  smooth_compatible_ray, time_grid)
from functionals import monge_ampere_energy
from slopes import make_row, ray_profile, verify_growth, verify_theorem_B, verify_theorem_C, verify_weak_C
from testconfig import TestConfigPL, base_change, default_twist, random_testconfig, twisted

logger = logging.getLogger(__name__)

Rows = List[Dict[str, Any]]

# Central registry of suites
# Structure: { name: { "build": callable, "meta": { "title": str, "description": str } } }
REGISTRY: Dict[str, Dict[str, Any]] = {}


@dataclass
class SuiteCase:
    """One named test configuration, optionally with its own base grid"""
    name: str
    tc: TestConfigPL
    grid: Optional[LogGrid] = None


@dataclass
class SuiteContext:
    """Everything a suite needs: cases, settings and the run-level overrides"""
    cases: List[SuiteCase]
    settings: KstabSettings = field(default_factory=KstabSettings)
    t_max: Optional[float] = None
    tolerance: Optional[float] = None
    seed: int = 0
    random_cases: int = 0
    degrees: Sequence[int] = (2, 3)
    twist: Optional[float] = None
    threads: int = 1

    def tol(self, suite: str) -> float:
        return self.tolerance or float(getattr(self.settings.tolerances, suite))

    def times(self) -> Tuple[float, ...]:
        return time_grid(self.t_max or self.settings.t_max, int(self.settings.time_base))

    def base_grid(self, case: SuiteCase) -> LogGrid:
        return case.grid or default_grid(case.tc.dim)

    def map_cases(self, func: Callable[[SuiteCase], Rows], cases: Optional[Sequence[SuiteCase]] = None) -> Rows:
        """Run func per case across threads; rows come back in case order"""
        cases = self.cases if cases is None else cases
        chunks = Parallel(n_jobs=max(1, self.threads), backend='threading')(delayed(func)(case) for case in cases)
        return [row for chunk in chunks for row in chunk]


def register(name: str, title: Optional[str] = None,
             description: str = "") -> Callable[[Callable[[SuiteContext], Rows]], Callable[[SuiteContext], Rows]]:
    """
    Decorator to register a verification suite.

    Args:
        name: Unique suite name (used by `kstab verify --suite`)
        title: Optional human-friendly title (defaults to title-cased name)
        description: One line shown in the command-line help

    Returns:
        The original function, unmodified
    """
    def _decorator(func: Callable[[SuiteContext], Rows]) -> Callable[[SuiteContext], Rows]:
        REGISTRY[name] = {
            "build": func,
            "meta": {"title": title or name.replace("_", " ").title(), "description": description},
        }
        return func
    return _decorator


def get_suite_and_meta(name: str) -> Tuple[Callable[[SuiteContext], Rows], Dict[str, Any]]:
    """
    Retrieve the registered suite and its metadata.

    Raises:
        KstabValidationError: unknown suite name
    """
    if name not in REGISTRY:
        raise KstabValidationError(f"Unknown suite '{name}' (available: {', '.join(suite_names())})")
    entry = REGISTRY[name]
    return entry["build"], entry["meta"]


def suite_names() -> List[str]:
    return list(REGISTRY)


# --------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------

def _group_by_base(cases: Sequence[SuiteCase]) -> List[List[SuiteCase]]:
    groups: List[List[SuiteCase]] = []
    for case in cases:
        for group in groups:
            if group[0].tc.base == case.tc.base and group[0].grid == case.grid:
                group.append(case)
                break
        else:
            groups.append([case])
    return groups


def _certificate_rows(name: str, ray, context: SuiteContext) -> Rows:
    """Homogeneous Monge-Ampère residual and affinity of E along one geodesic"""
    residual = hmae_residual(ray)
    tol = context.settings.tolerances.hmae
    rows = [make_row('theoremB', f"{name}:hmae", residual, 0.0, tol, passed=residual <= tol)]
    samples, _ = ray_profile(ray, lambda p: monge_ampere_energy(p, ray.reference).value, 'E')
    curvature = float(np.abs(second_differences([t for t, _ in samples], [v for _, v in samples])).max())
    affine = context.settings.tolerances.affine
    rows.append(make_row('theoremB', f"{name}:E-affine", curvature, 0.0, affine, passed=curvature <= affine))
    return rows


def _invariant_rows(suite: str, name: str, first: InvariantReport, second: InvariantReport,
                    fields: Sequence[str], tol: float, scale: Any = 1) -> Rows:
    """lhs = field of first, rhs = scale * field of second; exact inputs compare exactly"""
    rows = []
    for field_name in fields:
        lhs, rhs = getattr(first, field_name), scale * getattr(second, field_name)
        exact = isinstance(lhs, Fraction) and isinstance(rhs, Fraction)
        rows.append(make_row(suite, f"{name}:{field_name}", lhs, rhs, tol,
                             passed=(lhs == rhs) if exact else None, note="exact" if exact else ""))
    return rows


# --------------------------------------------------------------------
# Suites
# --------------------------------------------------------------------

@register("theoremB", title="Deligne, E and J slopes",
          description="slopes of <phi,...,phi>, E, J along geodesics vs (A^(n+1)), E^NA, J^NA")
def theorem_b(context: SuiteContext) -> Rows:
    """One shared grid per base polytope so mixed pairings can be formed"""
    times = context.times()
    tol = context.tol('theoremB')
    rows: Rows = []
    for group in _group_by_base(context.cases):
        tcs = [case.tc for case in group]
        grid = ray_grid(tcs, max(times), context.base_grid(group[0]))
        rays = [geodesic_from_testconfig(tc, times, grid, expand=False) for tc in tcs]
        names = [case.name for case in group]
        rows.extend(verify_theorem_B(tcs, rays, names, tolerance=tol))
        for name, ray in zip(names, rays):
            rows.extend(_certificate_rows(name, ray, context))
    return rows


@register("theoremC", title="K-energy slopes",
          description="slope(M) vs M^NA, slope(M) <= DF, DF - slope(M) = |correction|; M_B and Gamma on curves")
def theorem_c(context: SuiteContext) -> Rows:
    times = context.times()
    tol = context.tol('theoremC')
    weak = context.settings.tolerances.weakC

    def run(case: SuiteCase) -> Rows:
        ray = geodesic_from_testconfig(case.tc, times, context.base_grid(case))
        smooth, beta = None, None
        if case.tc.dim == 1:
            smooth = smooth_compatible_ray(case.tc, times, ray.grid, twist=context.twist, expand=False)
            beta = beta_family(case.tc, times, ray.grid, twist=context.twist, expand=False)
        return verify_theorem_C(case.tc, ray, case.name, smooth_ray=smooth, beta=beta,
                                tolerance=tol, weak_tolerance=weak)

    return context.map_cases(run)


@register("weakC", title="Weak K-energy inequality",
          description="slope(M) <= DF on the configured cases and on seeded random PL configurations")
def weak_c(context: SuiteContext) -> Rows:
    times = context.times()
    tol = context.tol('weakC')
    rng = np.random.default_rng(context.seed)
    cases = list(context.cases)
    bases: List[SuiteCase] = []
    for case in context.cases:
        if not any(case.tc.base == other.tc.base for other in bases):
            bases.append(case)
    for case in bases:
        for i in range(context.random_cases):
            cases.append(SuiteCase(f"{case.name}:random{i}", random_testconfig(case.tc.base, rng), case.grid))
    logger.info(f"🔄 weakC over {len(cases)} configurations")

    def run(case: SuiteCase) -> Rows:
        ray = geodesic_from_testconfig(case.tc, times, context.base_grid(case))
        return [verify_weak_C(case.tc, ray, case.name, tolerance=tol)]

    return context.map_cases(run, cases)


@register("basechange", title="Base change homogeneity",
          description="M^NA, E^NA, J^NA of the base change tau -> tau^d equal d times the original")
def basechange(context: SuiteContext) -> Rows:
    tol = context.tol('basechange')
    rows: Rows = []
    for case in context.cases:
        report = na_invariants(case.tc, context.twist)
        for degree in context.degrees:
            changed = na_invariants(base_change(case.tc, int(degree)))
            rows.extend(_invariant_rows('basechange', f"{case.name}:d={degree}", changed, report,
                                        ('MNA', 'ENA', 'JNA'), tol, scale=int(degree)))
    return rows


@register("twist", title="Twist independence",
          description="DF, M^NA, E^NA, J^NA do not depend on C; DF, M^NA, J^NA unchanged by f -> f + c")
def twist(context: SuiteContext) -> Rows:
    tol = context.tol('twist')
    rows: Rows = []
    for case in context.cases:
        C = default_twist(case.tc) if context.twist is None else context.twist
        C = Fraction(C).limit_denominator() if isinstance(C, float) and case.tc.base.exact else C
        first = na_invariants(case.tc, C, check_twist=False)
        second = na_invariants(case.tc, C + 5, check_twist=False)
        rows.extend(_invariant_rows('twist', f"{case.name}:C", first, second, ('DF', 'MNA', 'ENA', 'JNA'), tol))
        shifted = na_invariants(twisted(case.tc, Fraction(1, 2)))
        rows.extend(_invariant_rows('twist', f"{case.name}:f+1/2", shifted, na_invariants(case.tc),
                                    ('DF', 'MNA', 'JNA'), tol))
    return rows


@register("growth", title="Relative canonical volume growth",
          description="exponent of int e^beta_t vs p - 1 and at most 2(p - 1); log(int e^beta_t)/t -> 0 (curves)")
def growth(context: SuiteContext) -> Rows:
    times = context.times()
    tol = context.tol('growth')
    curves = [case for case in context.cases if case.tc.dim == 1]
    for case in context.cases:
        if case.tc.dim != 1:
            logger.warning(f"⚠️ growth skips {case.name}: beta families are built for curves only")

    def run(case: SuiteCase) -> Rows:
        beta = beta_family(case.tc, times, context.base_grid(case), twist=context.twist)
        return verify_growth(case.tc, beta, case.name, tolerance=tol)

    return context.map_cases(run, curves)
