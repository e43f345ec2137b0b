#!/usr/bin/env python3
"""
Toric Test Configurations
Piecewise-linear convex functions f = max_j(<a_j, x> + b_j) on a moment polytope, their
central-fiber combinatorics, divisor decomposition, base change and total-space polytope
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from input_validator import (KstabValidationError, PolytopeSpec, TestConfigSpec, load_json, parse_number,
                             parse_rational, validate_model)
from polytope import (MomentPolytope, Scalar, active_region_vertices, affine_rank, facet_lattice_volume,
                      is_exact, make_polytope, parse_polytope, pl_maximum, pl_minimum, pl_value)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Piece:
    """Affine function <slope, x> + intercept with rational slope"""
    slope: Tuple[Fraction, ...]
    intercept: Scalar

    @property
    def multiplicity(self) -> int:
        """Smallest positive m with m * slope integral"""
        return math.lcm(*[Fraction(a).denominator for a in self.slope])

    def to_dict(self) -> Dict[str, Any]:
        fmt = lambda v: (str(v) if Fraction(v).denominator != 1 else int(v)) if isinstance(v, (int, Fraction)) else float(v)
        return {'a': [fmt(a) for a in self.slope], 'b': fmt(self.intercept)}


@dataclass(frozen=True)
class TestConfigPL:
    """Toric surrogate of a cohomological test configuration: f = max_j(<a_j, x> + b_j) on P"""
    __test__ = False

    base: MomentPolytope
    pieces: Tuple[Piece, ...]
    normalized: bool = False

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def exact(self) -> bool:
        return is_exact([p.intercept for p in self.pieces])

    def pairs(self) -> List[Tuple[Tuple[Scalar, ...], Scalar]]:
        return [(p.slope, p.intercept) for p in self.pieces]

    def value(self, point: Sequence[Scalar]) -> Scalar:
        return pl_value(self.pairs(), point)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """f at float points of shape (k, n)"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        slopes = np.array([[float(a) for a in p.slope] for p in self.pieces])
        intercepts = np.array([float(p.intercept) for p in self.pieces])
        return np.max(points @ slopes.T + intercepts, axis=1)

    def maximum(self) -> Scalar:
        return pl_maximum(self.base, self.pairs())

    def minimum(self) -> Scalar:
        return pl_minimum(self.base, self.pairs())

    def to_dict(self) -> Dict[str, Any]:
        return {'pieces': [p.to_dict() for p in self.pieces], 'base': self.base.to_dict()}


@dataclass(frozen=True)
class FiberComponent:
    """Irreducible component of the central fiber, one per active piece"""
    piece: int
    normal: Tuple[int, ...]
    multiplicity: int
    lattice_volume: Scalar


@dataclass(frozen=True)
class CentralFiber:
    components: Tuple[FiberComponent, ...]

    @property
    def reduced(self) -> bool:
        return all(c.multiplicity == 1 for c in self.components)


@dataclass(frozen=True)
class DivisorTerm:
    """Coefficient of the R-divisor D on one central-fiber component"""
    piece: int
    multiplicity: int
    coefficient: Scalar


# --------------------------------------------------
# Construction and validation
# --------------------------------------------------

def make_testconfig(base: MomentPolytope, pieces: Sequence[Tuple[Sequence[Any], Any]]) -> TestConfigPL:
    """Build and normalize a test configuration from (slope, intercept) pairs"""
    if not pieces:
        raise KstabValidationError("A test configuration needs at least one piece")
    built = []
    for slope, intercept in pieces:
        if len(slope) != base.dim:
            raise KstabValidationError(f"Slope {list(slope)} does not have dimension {base.dim}")
        built.append(Piece(tuple(parse_rational(a) for a in slope), parse_number(intercept)))
    return validate_pl(TestConfigPL(base, tuple(built)))


def parse_testconfig(data: Union[Dict[str, Any], TestConfigSpec], base: Optional[MomentPolytope] = None,
                     root: Optional[Path] = None) -> TestConfigPL:
    """
    Build a test configuration from JSON {"pieces": [{"a": [...], "b": ...}], "base": <polytope or path>}.

    An explicit base polytope overrides the one named in the file; string bases are paths
    resolved against root.
    """
    spec = data if isinstance(data, TestConfigSpec) else validate_model(TestConfigSpec, data, source="testconfig")
    if base is None:
        if spec.base is None:
            raise KstabValidationError("Test configuration has no base polytope")
        if isinstance(spec.base, PolytopeSpec):
            base = parse_polytope(spec.base)
        else:
            path = Path(spec.base)
            if root is not None and not path.is_absolute():
                path = Path(root) / path
            base = parse_polytope(load_json(path))
    return make_testconfig(base, [(piece.a, piece.b) for piece in spec.pieces])


def validate_pl(tc: TestConfigPL) -> TestConfigPL:
    """
    Remove duplicate pieces and pieces whose active region has empty interior.

    Raises:
        KstabValidationError: no piece is active on an open set
    """
    unique: List[Piece] = []
    for piece in tc.pieces:
        if piece not in unique:
            unique.append(piece)
    pairs = [(p.slope, p.intercept) for p in unique]
    regions = active_region_vertices(tc.base, pairs)
    kept = [piece for piece, region in zip(unique, regions)
            if region and affine_rank(region) == tc.base.dim]
    if not kept:
        raise KstabValidationError("No piece of the test configuration has an active region")
    if len(kept) < len(tc.pieces):
        logger.debug(f"Normalized test configuration: {len(tc.pieces)} -> {len(kept)} pieces")
    return TestConfigPL(tc.base, tuple(kept), normalized=True)


def _normalized(tc: TestConfigPL) -> TestConfigPL:
    return tc if tc.normalized else validate_pl(tc)


def active_regions(tc: TestConfigPL) -> List[List[Tuple[Scalar, ...]]]:
    """Vertex list of the active region of every piece"""
    return active_region_vertices(tc.base, _normalized(tc).pairs())


# --------------------------------------------------
# Total space
# --------------------------------------------------

def top_normal(piece: Piece) -> Tuple[Tuple[int, ...], int]:
    """Primitive inward normal m(-a, -1) of the graph facet and the multiplicity m"""
    m = piece.multiplicity
    return tuple(int(-m * a) for a in piece.slope) + (-m,), m


def total_polytope(tc: TestConfigPL, twist: Any) -> MomentPolytope:
    """
    Q_C = {(x, s) : x in P, 0 <= s <= C - f(x)} in dimension n + 1.

    Facet labels: 'vertical:i' (from facet i of P), 'bottom' (fiber over infinity),
    'top:j' (graph of C - f over the region of piece j, a central-fiber component).

    Raises:
        KstabValidationError: C <= max f
    """
    tc = _normalized(tc)
    twist = parse_number(twist)
    if not twist > tc.maximum():
        raise KstabValidationError(f"Twist C={twist} must exceed max f = {tc.maximum()}")
    facets, labels = [], []
    for index, facet in enumerate(tc.base.facets):
        facets.append((tuple(facet.normal) + (0,), facet.support))
        labels.append(f"vertical:{index}")
    facets.append(((0,) * tc.dim + (1,), 0))
    labels.append("bottom")
    for index, piece in enumerate(tc.pieces):
        normal, m = top_normal(piece)
        facets.append((normal, m * (twist - piece.intercept)))
        labels.append(f"top:{index}")
    return make_polytope(tc.dim + 1, facets, labels=labels)


def facet_index(polytope: MomentPolytope, label: str) -> int:
    for index, facet in enumerate(polytope.facets):
        if facet.label == label:
            return index
    raise KstabValidationError(f"Polytope has no facet labelled {label}")


def default_twist(tc: TestConfigPL) -> Scalar:
    """max f + 1, the twist used when none is given"""
    return tc.maximum() + 1


# --------------------------------------------------
# Central fiber and divisor
# --------------------------------------------------

def central_fiber(tc: TestConfigPL) -> CentralFiber:
    """One component per active piece with multiplicity m_j and lattice volume of its graph facet"""
    tc = _normalized(tc)
    total = total_polytope(tc, default_twist(tc))
    components = []
    for index, piece in enumerate(tc.pieces):
        normal, m = top_normal(piece)
        volume = facet_lattice_volume(total, facet_index(total, f"top:{index}"))
        components.append(FiberComponent(index, normal, m, volume))
    return CentralFiber(tuple(components))


def divisor_decomposition(tc: TestConfigPL) -> List[DivisorTerm]:
    """
    Nonzero coefficients -m_j b_j of D on the central-fiber components.

    Measured against the zero-intercept configuration with the same slopes, so shifting every
    intercept by c changes D by -c times the fiber cycle sum_j m_j E_j.
    """
    tc = _normalized(tc)
    terms = []
    for index, piece in enumerate(tc.pieces):
        coefficient = -piece.multiplicity * piece.intercept
        if coefficient != 0:
            terms.append(DivisorTerm(index, piece.multiplicity, coefficient))
    return terms


def base_change(tc: TestConfigPL, degree: int) -> TestConfigPL:
    """Normalized base change tau -> tau^d: f -> d f; multiplicities become m_j / gcd(m_j, d)"""
    if not isinstance(degree, int) or degree <= 0:
        raise KstabValidationError(f"Base change degree must be a positive integer, got {degree}")
    tc = _normalized(tc)
    pieces = tuple(Piece(tuple(degree * a for a in p.slope), degree * p.intercept) for p in tc.pieces)
    return TestConfigPL(tc.base, pieces, normalized=True)


def twisted(tc: TestConfigPL, constant: Any) -> TestConfigPL:
    """f + c: adds c times the central fiber to the class"""
    constant = parse_number(constant)
    tc = _normalized(tc)
    pieces = tuple(Piece(p.slope, p.intercept + constant) for p in tc.pieces)
    return TestConfigPL(tc.base, pieces, normalized=True)


def breakpoint_order(tc: TestConfigPL) -> int:
    """Largest number of pieces attaining the max at a common point of P"""
    tc = _normalized(tc)
    pairs = tc.pairs()
    best = 1
    for region in active_regions(tc):
        for vertex in region:
            value = pl_value(pairs, vertex)
            exact = tc.exact and is_exact(list(vertex))
            count = sum(1 for slope, intercept in pairs
                        if _close(sum((a * x for a, x in zip(slope, vertex)), Fraction(0) if exact else 0.0) + intercept,
                                  value, exact))
            best = max(best, count)
    return best


def _close(a: Scalar, b: Scalar, exact: bool) -> bool:
    return a == b if exact else abs(float(a) - float(b)) <= 1e-9


def lcm_multiplicity(tc: TestConfigPL) -> int:
    return math.lcm(*[p.multiplicity for p in _normalized(tc).pieces])


# --------------------------------------------------
# Generators
# --------------------------------------------------

def trivial(base: MomentPolytope) -> TestConfigPL:
    return make_testconfig(base, [((0,) * base.dim, 0)])


def linear(base: MomentPolytope, slope: Sequence[Any], intercept: Any = 0) -> TestConfigPL:
    """Product configuration of a one-parameter subgroup"""
    return make_testconfig(base, [(slope, intercept)])


def random_testconfig(base: MomentPolytope, rng: np.random.Generator, max_pieces: int = 3,
                      denominators: Sequence[int] = (1, 2), slope_bound: int = 2) -> TestConfigPL:
    """Random PL convex function with rational slopes and intercepts chosen so every piece can be active"""
    for _ in range(100):
        count = int(rng.integers(1, max_pieces + 1))
        pieces = []
        vertices = np.array(base.vertices, dtype=float)
        for _ in range(count):
            denominator = int(rng.choice(list(denominators)))
            slope = tuple(Fraction(int(rng.integers(-slope_bound * denominator, slope_bound * denominator + 1)), denominator)
                          for _ in range(base.dim))
            weight = rng.uniform(0.2, 0.8)
            anchor = weight * vertices[int(rng.integers(len(vertices)))] + (1.0 - weight) * vertices.mean(axis=0)
            intercept = Fraction(-float(np.dot([float(a) for a in slope], anchor))).limit_denominator(16)
            pieces.append((slope, intercept))
        try:
            return make_testconfig(base, pieces)
        except KstabValidationError:
            continue
    return trivial(base)
