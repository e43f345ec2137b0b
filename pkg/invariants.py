#!/usr/bin/env python3
"""
Non-Archimedean Invariants
Intersection numbers on the toric total space Q_C and the invariants DF, M^NA, E^NA, J^NA,
de-twisted so that nothing depends on the twist C
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from input_validator import ConsistencyError, KstabValidationError, parse_number
from polytope import (MomentPolytope, Point, Scalar, exact_sum, facet_lattice_volume, integrate_pl, is_delzant, is_exact,
                      mixed_volume, sbar, toric_futaki, volume)
from testconfig import TestConfigPL, central_fiber, default_twist, facet_index, total_polytope, validate_pl

logger = logging.getLogger(__name__)

INVARIANT_CONFIG = {
    'twist_tol': 1e-10,
}

Body = Union[MomentPolytope, Sequence[Point]]


@dataclass
class InvariantReport:
    """Intersection-theoretic invariants of one test configuration"""
    V: Scalar
    Sbar: Scalar
    A_top: Scalar
    K_A_n: Scalar
    DF: Scalar
    correction: Scalar
    MNA: Scalar
    ENA: Scalar
    JNA: Scalar
    twist_C_used: Scalar
    multiplicities: Tuple[int, ...] = ()
    reduced: bool = True
    total_space_delzant: bool = True

    INVARIANT_FIELDS = ('V', 'Sbar', 'A_top', 'K_A_n', 'DF', 'correction', 'MNA', 'ENA', 'JNA')

    def to_row(self) -> Dict[str, Any]:
        row = {name: float(getattr(self, name)) for name in self.INVARIANT_FIELDS}
        row['twist_C_used'] = float(self.twist_C_used)
        row['multiplicities'] = " ".join(str(m) for m in self.multiplicities)
        row['reduced'] = self.reduced
        row['total_space_delzant'] = self.total_space_delzant
        return row


# --------------------------------------------------
# Intersection numbers
# --------------------------------------------------

def fiber_class(dim: int) -> List[Point]:
    """Segment {0} x [0, 1]: the class of a fiber of the total space over P^1"""
    return [tuple([Fraction(0)] * dim + [Fraction(0)]), tuple([Fraction(0)] * dim + [Fraction(1)])]


def pullback_class(base: MomentPolytope) -> List[Point]:
    """Flat slice P x {0}: the pull-back of alpha from X"""
    return [tuple(v) + (Fraction(0),) for v in base.vertices]


def intersection_number(*classes: Body) -> Scalar:
    """(A_0 . ... . A_n) of toric classes as the (n+1)!-normalized mixed volume"""
    return mixed_volume(*classes)


def detwisted_intersection(classes: Sequence[Body], twists: Sequence[Any], bases: Sequence[MomentPolytope]) -> Scalar:
    """
    (prod_i (A_i - C_i F)) for classes A_i twisted by C_i fibers.

    Uses F^2 = 0 and (F . prod_{k != i} A_k) = mixed volume of the fiber restrictions (the bases).
    """
    if not len(classes) == len(twists) == len(bases):
        raise KstabValidationError("Each class needs a twist and a base polytope")
    raw = intersection_number(*classes)
    corrections = []
    for i, twist in enumerate(twists):
        twist = parse_number(twist)
        if twist == 0:
            continue
        others = [bases[k] for k in range(len(bases)) if k != i]
        corrections.append(twist * (mixed_volume(*others) if others else 1))
    return raw - exact_sum(corrections) if corrections else raw


# --------------------------------------------------
# Invariants
# --------------------------------------------------

def _invariants_at(tc: TestConfigPL, twist: Scalar) -> InvariantReport:
    base = tc.base
    n = base.dim
    V = math.factorial(n) * volume(base)
    S = sbar(base)
    Q = total_polytope(tc, twist)
    n_fact = math.factorial(n)

    A_top = math.factorial(n + 1) * volume(Q) - (n + 1) * twist * V
    lattice = [facet_lattice_volume(Q, i) for i in range(len(Q.facets))]
    K_A_n = -n_fact * exact_sum(lattice) + 2 * n_fact * volume(base) + twist * S * V
    DF = (S / (n + 1)) * A_top / V + K_A_n / V

    fiber = central_fiber(tc)
    correction_terms = [(1 - c.multiplicity) * n_fact * lattice[facet_index(Q, f"top:{c.piece}")]
                        for c in fiber.components]
    correction = exact_sum(correction_terms) / V
    ENA = A_top / ((n + 1) * V)
    flat = pullback_class(base)
    pairing = detwisted_intersection([Q] + [flat] * n, [twist] + [0] * n, [base] * (n + 1))
    JNA = pairing / V - ENA
    return InvariantReport(
        V=V, Sbar=S, A_top=A_top, K_A_n=K_A_n, DF=DF, correction=correction, MNA=DF + correction,
        ENA=ENA, JNA=JNA, twist_C_used=twist,
        multiplicities=tuple(c.multiplicity for c in fiber.components),
        reduced=fiber.reduced,
        total_space_delzant=bool(is_delzant(Q)),
    )


def na_invariants(tc: TestConfigPL, twist: Optional[Any] = None, check_twist: bool = True) -> InvariantReport:
    """
    DF, M^NA, E^NA, J^NA of a test configuration from intersection numbers on Q_C.

    Raises:
        KstabValidationError: C <= max f
        ConsistencyError: the de-twisted values depend on C
    """
    tc = tc if tc.normalized else validate_pl(tc)
    twist = default_twist(tc) if twist is None else parse_number(twist)
    report = _invariants_at(tc, twist)
    if check_twist:
        other = _invariants_at(tc, twist + 1)
        exact = is_exact([getattr(report, name) for name in InvariantReport.INVARIANT_FIELDS] +
                         [getattr(other, name) for name in InvariantReport.INVARIANT_FIELDS])
        for name in InvariantReport.INVARIANT_FIELDS:
            a, b = getattr(report, name), getattr(other, name)
            if (a != b) if exact else abs(float(a) - float(b)) > INVARIANT_CONFIG['twist_tol']:
                raise ConsistencyError(f"{name} depends on the twist: {a} at C={twist}, {b} at C={twist + 1}")
    logger.debug(f"Invariants at C={twist}: DF={float(report.DF):.6g} MNA={float(report.MNA):.6g}")
    return report


def boundary_minus_mean(tc: TestConfigPL) -> Scalar:
    """Independent toric oracle for M^NA: (int_dP f dsigma - Sbar int_P f dx) / vol(P)"""
    return toric_futaki(tc.base, tc.pairs())


def mean_value(tc: TestConfigPL) -> Scalar:
    """Average of f over P; E^NA = -mean f"""
    return integrate_pl(tc.base, tc.pairs()) / volume(tc.base)
