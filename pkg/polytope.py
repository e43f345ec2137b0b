#!/usr/bin/env python3
"""
Moment Polytopes
================

Facet-presented convex polytopes P = {x : <x, normal_F> >= -support_F} with primitive
inward integer normals. Provides exact (Fraction) geometry when every support number is
rational and float64 geometry with ABS_TOL incidence decisions otherwise:

- vertex enumeration, redundant-facet elimination, boundedness check
- Euclidean volume, n!-normalized mixed volume, facet lattice volume
- Delzant certificate, anticanonical polytope, average scalar curvature
- exact integrals of piecewise-linear convex functions over P and over its boundary
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull

from input_validator import KstabValidationError, PolytopeSpec, parse_number, validate_model

logger = logging.getLogger(__name__)

Scalar = Union[Fraction, float]
Point = Tuple[Scalar, ...]

ABS_TOL = 1e-9


# --------------------------------------------------
# Scalar helpers
# --------------------------------------------------

def is_exact(values: Sequence[Any]) -> bool:
    """True when every value is an int or Fraction"""
    return all(isinstance(value, (int, Fraction)) and not isinstance(value, bool) for value in values)


def to_scalar(value: Any, exact: bool) -> Scalar:
    if exact:
        return Fraction(value)
    return float(value)


def exact_sum(values: Sequence[Scalar]) -> Scalar:
    """Sum in exact arithmetic for Fractions, exactly rounded (fsum) for floats"""
    values = list(values)
    if is_exact(values):
        return sum(values, Fraction(0))
    return math.fsum(float(value) for value in values)


def _is_zero(value: Scalar, exact: bool) -> bool:
    return value == 0 if exact else abs(value) <= ABS_TOL


def _nonnegative(value: Scalar, exact: bool) -> bool:
    return value >= 0 if exact else value >= -ABS_TOL


def _det(rows: Sequence[Sequence[Scalar]]) -> Scalar:
    """Determinant, exact by Gaussian elimination over Fractions when possible"""
    size = len(rows)
    if size == 0:
        return Fraction(1)
    flat = [entry for row in rows for entry in row]
    if not is_exact(flat):
        return float(np.linalg.det(np.array(rows, dtype=float)))
    matrix = [[Fraction(entry) for entry in row] for row in rows]
    sign = 1
    result = Fraction(1)
    for col in range(size):
        pivot = next((r for r in range(col, size) if matrix[r][col] != 0), None)
        if pivot is None:
            return Fraction(0)
        if pivot != col:
            matrix[col], matrix[pivot] = matrix[pivot], matrix[col]
            sign = -sign
        result *= matrix[col][col]
        for r in range(col + 1, size):
            factor = matrix[r][col] / matrix[col][col]
            if factor:
                for c in range(col, size):
                    matrix[r][c] -= factor * matrix[col][c]
    return sign * result


def _solve(matrix: Sequence[Sequence[Scalar]], rhs: Sequence[Scalar], exact: bool) -> Optional[List[Scalar]]:
    """Solve a square system; None when singular"""
    size = len(matrix)
    if not exact:
        a = np.array(matrix, dtype=float)
        if abs(np.linalg.det(a)) <= ABS_TOL:
            return None
        return [float(v) for v in np.linalg.solve(a, np.array(rhs, dtype=float))]
    aug = [[Fraction(entry) for entry in row] + [Fraction(rhs[i])] for i, row in enumerate(matrix)]
    for col in range(size):
        pivot = next((r for r in range(col, size) if aug[r][col] != 0), None)
        if pivot is None:
            return None
        aug[col], aug[pivot] = aug[pivot], aug[col]
        for r in range(size):
            if r != col and aug[r][col] != 0:
                factor = aug[r][col] / aug[col][col]
                for c in range(col, size + 1):
                    aug[r][c] -= factor * aug[col][c]
    return [aug[i][size] / aug[i][i] for i in range(size)]


def affine_rank(points: Sequence[Point]) -> int:
    """Dimension of the affine hull of a point set"""
    if len(points) <= 1:
        return 0
    base = points[0]
    rows = [[p[k] - base[k] for k in range(len(base))] for p in points[1:]]
    flat = [entry for row in rows for entry in row]
    if not is_exact(flat):
        return int(np.linalg.matrix_rank(np.array(rows, dtype=float), tol=ABS_TOL))
    matrix = [[Fraction(entry) for entry in row] for row in rows]
    rank = 0
    cols = len(base)
    for col in range(cols):
        pivot = next((r for r in range(rank, len(matrix)) if matrix[r][col] != 0), None)
        if pivot is None:
            continue
        matrix[rank], matrix[pivot] = matrix[pivot], matrix[rank]
        for r in range(rank + 1, len(matrix)):
            factor = matrix[r][col] / matrix[rank][col]
            if factor:
                for c in range(col, cols):
                    matrix[r][c] -= factor * matrix[rank][c]
        rank += 1
    return rank


def _mean(points: Sequence[Point]) -> Point:
    count = len(points)
    exact = is_exact([entry for p in points for entry in p])
    if exact:
        return tuple(sum((Fraction(p[k]) for p in points), Fraction(0)) / count for k in range(len(points[0])))
    return tuple(math.fsum(float(p[k]) for p in points) / count for k in range(len(points[0])))


def _dedupe(points: Sequence[Point], exact: bool) -> List[Point]:
    if exact:
        return sorted(set(points))
    unique: List[Point] = []
    for point in points:
        if not any(max(abs(float(a) - float(b)) for a, b in zip(point, other)) <= 1e3 * ABS_TOL for other in unique):
            unique.append(tuple(float(v) for v in point))
    return sorted(unique)


# --------------------------------------------------
# Triangulation and integration over hulls
# --------------------------------------------------

def _simplices(coords: List[Point]) -> List[Tuple[int, ...]]:
    """Index tuples triangulating conv(coords); index len(coords) denotes the centroid"""
    dim = len(coords[0])
    if affine_rank(coords) < dim:
        return []
    if dim == 1:
        low = min(range(len(coords)), key=lambda i: coords[i][0])
        high = max(range(len(coords)), key=lambda i: coords[i][0])
        return [(low, high)]
    hull = ConvexHull(np.array(coords, dtype=float))
    centroid = len(coords)
    return [tuple(int(i) for i in simplex) + (centroid,) for simplex in hull.simplices]


def hull_integral(coords: List[Point], lifts: Optional[List[Point]] = None,
                  integrand: Optional[Callable[[Point], Scalar]] = None) -> Scalar:
    """
    Integral of an affine integrand over conv(coords), exact for rational data.

    Args:
        coords: points in the coordinates that carry the measure
        lifts: the same points in the coordinates the integrand is written in
               (affinely related to coords); defaults to coords
        integrand: affine function, evaluated at simplex centroids; None means volume

    Zero-dimensional coordinate sets carry the counting measure.
    """
    lifts = coords if lifts is None else lifts
    if not coords:
        return Fraction(0)
    if len(coords[0]) == 0:
        return integrand(lifts[0]) if integrand else Fraction(1)
    simplices = _simplices(coords)
    dim = len(coords[0])
    extended = list(coords) + [_mean(coords)]
    lifted = list(lifts) + [_mean(lifts)]
    pieces = []
    for simplex in simplices:
        base = extended[simplex[0]]
        rows = [[extended[i][k] - base[k] for k in range(dim)] for i in simplex[1:]]
        size = abs(_det(rows)) / math.factorial(dim)
        if integrand is not None:
            size = size * integrand(_mean([lifted[i] for i in simplex]))
        pieces.append(size)
    return exact_sum(pieces)


# --------------------------------------------------
# Halfspace systems
# --------------------------------------------------

def enumerate_vertices(normals: Sequence[Sequence[Scalar]], supports: Sequence[Scalar], exact: bool) -> List[Point]:
    """Vertices of {x : <x, normal_i> + support_i >= 0} by brute force over dim-subsets"""
    dim = len(normals[0])
    found: List[Point] = []
    for subset in itertools.combinations(range(len(normals)), dim):
        solution = _solve([normals[i] for i in subset], [-supports[i] for i in subset], exact)
        if solution is None:
            continue
        if all(_nonnegative(_dot(solution, normals[i]) + supports[i], exact) for i in range(len(normals))):
            found.append(tuple(solution))
    return _dedupe(found, exact)


def _dot(x: Sequence[Scalar], y: Sequence[Scalar]) -> Scalar:
    return sum((a * b for a, b in zip(x, y)), Fraction(0) if is_exact(list(x) + list(y)) else 0.0)


def _check_bounded(normals: Sequence[Sequence[int]], supports: Sequence[Scalar]) -> None:
    """Raise unless the halfspace system is a nonempty bounded region"""
    dim = len(normals[0])
    a_ub = -np.array(normals, dtype=float)
    b_ub = np.array([float(s) for s in supports])
    for k in range(dim):
        for sign in (1.0, -1.0):
            objective = np.zeros(dim)
            objective[k] = sign
            result = linprog(objective, A_ub=a_ub, b_ub=b_ub, bounds=[(None, None)] * dim, method='highs')
            if result.status == 2:
                raise KstabValidationError("Polytope is empty")
            if result.status == 3:
                raise KstabValidationError("Polytope is unbounded")


# --------------------------------------------------
# Data classes
# --------------------------------------------------

@dataclass(frozen=True)
class Facet:
    """Inequality <x, normal> >= -support"""
    normal: Tuple[int, ...]
    support: Scalar
    label: str = field(default="", compare=False)

    def value(self, point: Sequence[Scalar]) -> Scalar:
        """Affine function l_F(x) = <x, normal> + support"""
        return _dot(point, self.normal) + self.support


@dataclass(frozen=True)
class DelzantCertificate:
    """Outcome of the vertex-normal basis check; failing vertex recorded when not Delzant"""
    delzant: bool
    vertex: Optional[Point] = None
    normals: Tuple[Tuple[int, ...], ...] = ()
    determinant: Optional[Scalar] = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.delzant


@dataclass(frozen=True)
class MomentPolytope:
    """Bounded full-dimensional polytope with primitive inward normals and no redundant facet"""
    dim: int
    facets: Tuple[Facet, ...]

    @property
    def exact(self) -> bool:
        return is_exact([facet.support for facet in self.facets])

    @property
    def normals(self) -> np.ndarray:
        return np.array([facet.normal for facet in self.facets], dtype=float)

    @property
    def supports(self) -> np.ndarray:
        return np.array([float(facet.support) for facet in self.facets])

    @cached_property
    def vertices(self) -> List[Point]:
        return enumerate_vertices([f.normal for f in self.facets], [f.support for f in self.facets], self.exact)

    def tight_facets(self, point: Sequence[Scalar]) -> List[int]:
        """Indices of facets containing the point"""
        exact = self.exact and is_exact(list(point))
        return [i for i, facet in enumerate(self.facets) if _is_zero(facet.value(point), exact)]

    def facet_vertices(self, index: int) -> List[Point]:
        return [v for v in self.vertices if index in self.tight_facets(v)]

    def contains(self, point: Sequence[Scalar], tol: float = ABS_TOL) -> bool:
        return all(float(facet.value(point)) >= -tol for facet in self.facets)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'dim': self.dim,
            'facets': [{'normal': list(f.normal), 'support': _format_scalar(f.support)} for f in self.facets],
        }


def _format_scalar(value: Scalar) -> Union[int, float, str]:
    if isinstance(value, Fraction):
        return int(value) if value.denominator == 1 else f"{value.numerator}/{value.denominator}"
    return float(value)


# --------------------------------------------------
# Construction
# --------------------------------------------------

def make_polytope(dim: int, facets: Sequence[Tuple[Sequence[int], Any]], labels: Optional[Sequence[str]] = None,
                  require_delzant: bool = False) -> MomentPolytope:
    """
    Build a MomentPolytope from (normal, support) pairs.

    Checks primitivity, boundedness and nonempty interior, then removes redundant facets
    (duplicates keep the lexicographically smallest normal).

    Raises:
        KstabValidationError: invalid presentation, or not Delzant when require_delzant is set
    """
    if dim < 1:
        raise KstabValidationError(f"Dimension must be positive, got {dim}")
    labels = list(labels) if labels is not None else [""] * len(facets)
    raw = []
    for (normal, support), label in zip(facets, labels):
        normal = tuple(int(v) for v in normal)
        if len(normal) != dim:
            raise KstabValidationError(f"Normal {normal} does not have dimension {dim}")
        if math.gcd(*[abs(v) for v in normal]) != 1:
            raise KstabValidationError(f"Normal {normal} is not primitive")
        raw.append(Facet(normal, parse_number(support), label))
    exact = is_exact([facet.support for facet in raw])
    if not exact:
        raw = [Facet(f.normal, float(f.support), f.label) for f in raw]

    # keep the tightest support per normal
    tightest: Dict[Tuple[int, ...], Facet] = {}
    for facet in raw:
        current = tightest.get(facet.normal)
        if current is None or facet.support < current.support:
            tightest[facet.normal] = facet
    candidates = sorted(tightest.values(), key=lambda f: f.normal)

    _check_bounded([f.normal for f in candidates], [f.support for f in candidates])
    points = enumerate_vertices([f.normal for f in candidates], [f.support for f in candidates], exact)
    if affine_rank(points) < dim:
        raise KstabValidationError("Polytope has empty interior")

    kept = []
    for facet in candidates:
        tight = [p for p in points if _is_zero(facet.value(p), exact and is_exact(list(p)))]
        if tight and affine_rank(tight) == dim - 1 and (dim > 1 or len(tight) == 1):
            kept.append(facet)
        else:
            logger.debug(f"Dropping redundant facet {facet.normal} >= {-facet.support}")
    polytope = MomentPolytope(dim=dim, facets=tuple(kept))
    if require_delzant:
        certificate = is_delzant(polytope)
        if not certificate:
            raise KstabValidationError(f"Polytope is not Delzant: {certificate.reason}")
    return polytope


def parse_polytope(data: Union[Dict[str, Any], PolytopeSpec], require_delzant: bool = False) -> MomentPolytope:
    """Build a polytope from its JSON form {"dim": m, "facets": [{"normal": [...], "support": ...}]}"""
    spec = data if isinstance(data, PolytopeSpec) else validate_model(PolytopeSpec, data, source="polytope")
    return make_polytope(spec.dim, [(f.normal, f.support) for f in spec.facets], require_delzant=require_delzant)


def interval(low: Any = 0, high: Any = 1) -> MomentPolytope:
    low, high = parse_number(low), parse_number(high)
    return make_polytope(1, [((1,), -low), ((-1,), high)], labels=["low", "high"])


def unit_cube(dim: int) -> MomentPolytope:
    facets = []
    for k in range(dim):
        e = [0] * dim
        e[k] = 1
        facets.append((tuple(e), 0))
        facets.append((tuple(-v for v in e), 1))
    return make_polytope(dim, facets)


def standard_simplex(dim: int) -> MomentPolytope:
    facets = []
    for k in range(dim):
        e = [0] * dim
        e[k] = 1
        facets.append((tuple(e), 0))
    facets.append((tuple([-1] * dim), 1))
    return make_polytope(dim, facets)


def product(first: MomentPolytope, second: MomentPolytope) -> MomentPolytope:
    """Polytope of the product toric manifold"""
    facets = []
    for f in first.facets:
        facets.append((tuple(f.normal) + (0,) * second.dim, f.support))
    for f in second.facets:
        facets.append(((0,) * first.dim + tuple(f.normal), f.support))
    return make_polytope(first.dim + second.dim, facets)


def hirzebruch(k: int, a: Any = 2, b: Any = 1) -> MomentPolytope:
    """Hirzebruch surface F_k with class {x >= 0, 0 <= y <= b, x + k y <= a}; needs a > k b"""
    a, b = parse_number(a), parse_number(b)
    if not a > k * b:
        raise KstabValidationError(f"Hirzebruch class requires a > k*b, got a={a}, b={b}, k={k}")
    return make_polytope(2, [((1, 0), 0), ((0, 1), 0), ((0, -1), b), ((-1, -k), a)])


def scaled(polytope: MomentPolytope, factor: Any) -> MomentPolytope:
    factor = parse_number(factor)
    if not factor > 0:
        raise KstabValidationError(f"Scale factor must be positive, got {factor}")
    return make_polytope(polytope.dim, [(f.normal, f.support * factor) for f in polytope.facets])


def translated(polytope: MomentPolytope, shift: Sequence[Any]) -> MomentPolytope:
    shift = [parse_number(v) for v in shift]
    return make_polytope(polytope.dim, [(f.normal, f.support - _dot(shift, f.normal)) for f in polytope.facets])


def transformed(polytope: MomentPolytope, matrix: Sequence[Sequence[int]]) -> MomentPolytope:
    """Image under a unimodular integer matrix g (x -> g x); normals become g^{-T} normal"""
    g = [[Fraction(v) for v in row] for row in matrix]
    if abs(_det(g)) != 1:
        raise KstabValidationError("Lattice transformation must be unimodular")
    dim = polytope.dim
    # columns of g^{-1}
    columns = [_solve(g, [Fraction(int(i == k)) for i in range(dim)], True) for k in range(dim)]
    facets = []
    for f in polytope.facets:
        normal = tuple(int(_dot(columns[r], f.normal)) for r in range(dim))
        facets.append((normal, f.support))
    return make_polytope(dim, facets)


def anticanonical(polytope: MomentPolytope) -> MomentPolytope:
    """Polytope of c_1: same normals, all supports 1"""
    return make_polytope(polytope.dim, [(f.normal, 1) for f in polytope.facets])


# --------------------------------------------------
# Volumes
# --------------------------------------------------

def _points_of(body: Union[MomentPolytope, Sequence[Point]]) -> List[Point]:
    if isinstance(body, MomentPolytope):
        return list(body.vertices)
    points = [tuple(parse_number(v) if not isinstance(v, float) else v for v in p) for p in body]
    if not points:
        raise KstabValidationError("Empty point set")
    return points


def _dim_of(body: Union[MomentPolytope, Sequence[Point]]) -> int:
    return body.dim if isinstance(body, MomentPolytope) else len(body[0])


def volume(polytope: Union[MomentPolytope, Sequence[Point]]) -> Scalar:
    """Euclidean volume; exact Fraction for rational data"""
    points = _points_of(polytope)
    exact = is_exact([v for p in points for v in p])
    points = [tuple(to_scalar(v, exact) for v in p) for p in points]
    return hull_integral(points)


def _minkowski(first: List[Point], second: List[Point]) -> List[Point]:
    exact = is_exact([v for p in first + second for v in p])
    summed = _dedupe([tuple(a + b for a, b in zip(p, q)) for p in first for q in second], exact)
    dim = len(summed[0])
    if dim >= 2 and len(summed) > dim + 1 and affine_rank(summed) == dim:
        hull = ConvexHull(np.array(summed, dtype=float))
        summed = [summed[i] for i in sorted(hull.vertices)]
    return summed


def mixed_volume(*bodies: Union[MomentPolytope, Sequence[Point]]) -> Scalar:
    """
    n!-normalized mixed volume MV(P_1, ..., P_m), so MV(P, ..., P) = m! vol(P).

    Computed by inclusion-exclusion over Minkowski sums; bodies may be polytopes or
    (possibly lower-dimensional) point sets such as flat slices or segments.
    """
    if not bodies:
        raise KstabValidationError("mixed_volume needs at least one body")
    dims = {_dim_of(body) for body in bodies}
    if len(dims) != 1:
        raise KstabValidationError(f"Dimension mismatch in mixed_volume: {sorted(dims)}")
    dim = dims.pop()
    if len(bodies) != dim:
        raise KstabValidationError(f"mixed_volume in dimension {dim} needs {dim} bodies, got {len(bodies)}")
    point_sets = [_points_of(body) for body in bodies]
    exact = is_exact([v for points in point_sets for p in points for v in p])
    point_sets = [[tuple(to_scalar(v, exact) for v in p) for p in points] for points in point_sets]
    keys = [tuple(points) for points in point_sets]

    cache: Dict[Tuple, Scalar] = {}
    terms = []
    for size in range(1, dim + 1):
        for subset in itertools.combinations(range(dim), size):
            key = tuple(sorted(keys[i] for i in subset))
            if key not in cache:
                summed = point_sets[subset[0]]
                for i in subset[1:]:
                    summed = _minkowski(summed, point_sets[i])
                cache[key] = volume(summed)
            sign = -1 if (dim - size) % 2 else 1
            terms.append(sign * cache[key])
    return exact_sum(terms)


# --------------------------------------------------
# Facet lattice geometry
# --------------------------------------------------

def unimodular_completion(normal: Sequence[int]) -> List[List[int]]:
    """Integer matrix U with det +-1 and normal . U = e_1; columns 2.. span the lattice of normal-perp"""
    dim = len(normal)
    row = [int(v) for v in normal]
    basis = [[int(i == j) for j in range(dim)] for i in range(dim)]

    def column_op(target: int, source: int, factor: int) -> None:
        row[target] -= factor * row[source]
        for r in range(dim):
            basis[r][target] -= factor * basis[r][source]

    def swap(i: int, j: int) -> None:
        row[i], row[j] = row[j], row[i]
        for r in range(dim):
            basis[r][i], basis[r][j] = basis[r][j], basis[r][i]

    while sum(1 for v in row if v != 0) > 1:
        nonzero = sorted((i for i in range(dim) if row[i] != 0), key=lambda i: abs(row[i]))
        smallest = nonzero[0]
        for i in nonzero[1:]:
            column_op(i, smallest, row[i] // row[smallest])
    pivot = next(i for i in range(dim) if row[i] != 0)
    if abs(row[pivot]) != 1:
        raise KstabValidationError(f"Normal {tuple(normal)} is not primitive")
    swap(0, pivot)
    if row[0] == -1:
        row[0] = 1
        for r in range(dim):
            basis[r][0] = -basis[r][0]
    return basis


def facet_coordinates(normal: Sequence[int], points: Sequence[Point], origin: Point) -> List[Point]:
    """Lattice coordinates of points on the hyperplane through origin with the given normal"""
    dim = len(normal)
    basis = unimodular_completion(normal)
    exact = is_exact([v for p in points for v in p])
    coords = []
    for point in points:
        solution = _solve(basis, [point[k] - origin[k] for k in range(dim)], exact)
        coords.append(tuple(solution[1:]))
    return coords


def facet_lattice_volume(polytope: MomentPolytope, index: int) -> Scalar:
    """(m-1)-volume of facet `index` in the lattice of its hyperplane; 1 for endpoints of intervals"""
    if not 0 <= index < len(polytope.facets):
        raise KstabValidationError(f"Facet index {index} out of range")
    points = polytope.facet_vertices(index)
    if not points:
        raise KstabValidationError(f"Facet {index} is degenerate")
    if polytope.dim == 1:
        return Fraction(1)
    coords = facet_coordinates(polytope.facets[index].normal, points, points[0])
    measure = hull_integral(coords)
    if measure == 0:
        raise KstabValidationError(f"Facet {index} is degenerate")
    return measure


def is_delzant(polytope: MomentPolytope) -> DelzantCertificate:
    """Check that exactly dim facets meet at each vertex with normals forming a Z-basis"""
    for vertex in polytope.vertices:
        tight = polytope.tight_facets(vertex)
        normals = tuple(polytope.facets[i].normal for i in tight)
        if len(tight) != polytope.dim:
            return DelzantCertificate(False, vertex, normals, None,
                                      f"{len(tight)} facets meet at vertex {vertex}")
        determinant = _det([[Fraction(v) for v in n] for n in normals])
        if abs(determinant) != 1:
            return DelzantCertificate(False, vertex, normals, determinant,
                                      f"normals at vertex {vertex} have determinant {determinant}")
    return DelzantCertificate(True)


def vertex_cones(polytope: MomentPolytope) -> List[Tuple[Point, Tuple[int, ...]]]:
    """(vertex, indices of the facets through it) for every vertex of a simple polytope"""
    return [(vertex, tuple(polytope.tight_facets(vertex))) for vertex in polytope.vertices]


def c1_degree(polytope: MomentPolytope) -> Scalar:
    """(c_1 . alpha^(n-1)) = sum over facets of (n-1)! times the facet lattice volume"""
    factor = math.factorial(polytope.dim - 1)
    return exact_sum([factor * facet_lattice_volume(polytope, i) for i in range(len(polytope.facets))])


def sbar(polytope: MomentPolytope) -> Scalar:
    """Average scalar curvature n (c_1 . alpha^(n-1)) / (alpha^n)"""
    n = polytope.dim
    return n * c1_degree(polytope) / (math.factorial(n) * volume(polytope))


# --------------------------------------------------
# Piecewise-linear integrals
# --------------------------------------------------

Piece = Tuple[Sequence[Scalar], Scalar]


def _normalize_pieces(pieces: Sequence[Piece]) -> List[Tuple[Tuple[Scalar, ...], Scalar]]:
    unique = []
    for slope, intercept in pieces:
        item = (tuple(slope), intercept)
        if item not in unique:
            unique.append(item)
    return unique


def pl_value(pieces: Sequence[Piece], point: Sequence[Scalar]) -> Scalar:
    """max_j (<a_j, x> + b_j)"""
    return max(_dot(slope, point) + intercept for slope, intercept in pieces)


def pl_maximum(polytope: MomentPolytope, pieces: Sequence[Piece]) -> Scalar:
    """Maximum of a convex PL function on P (attained at a vertex)"""
    return max(pl_value(pieces, vertex) for vertex in polytope.vertices)


def pl_minimum(polytope: MomentPolytope, pieces: Sequence[Piece]) -> Scalar:
    """Minimum of max_j(<a_j,x> + b_j) on P; attained at a vertex of some active region"""
    regions = active_region_vertices(polytope, _normalize_pieces(pieces))
    return min(pl_value(pieces, vertex) for region in regions for vertex in region)


def piece_region_system(polytope: MomentPolytope, pieces: Sequence[Piece], j: int) -> Tuple[List[Tuple[Scalar, ...]], List[Scalar]]:
    """Halfspace system of the region of P where piece j attains the max"""
    slope_j, intercept_j = pieces[j]
    normals = [tuple(f.normal) for f in polytope.facets]
    supports = [f.support for f in polytope.facets]
    for k, (slope_k, intercept_k) in enumerate(pieces):
        if k == j:
            continue
        normals.append(tuple(a - b for a, b in zip(slope_j, slope_k)))
        supports.append(intercept_j - intercept_k)
    exact = is_exact(supports + [v for n in normals for v in n])
    normals = [tuple(to_scalar(v, exact) for v in n) for n in normals]
    supports = [to_scalar(s, exact) for s in supports]
    return normals, supports


def active_region_vertices(polytope: MomentPolytope, pieces: Sequence[Piece]) -> List[List[Point]]:
    """Vertex lists of the active region of every piece (empty list when never active)"""
    regions = []
    for j in range(len(pieces)):
        normals, supports = piece_region_system(polytope, pieces, j)
        regions.append(enumerate_vertices(normals, supports, is_exact(supports)))
    return regions


def _agree_on_facet(first: Piece, second: Piece, facet: Facet) -> bool:
    """True when two affine pieces coincide on the hyperplane of a facet"""
    diff = [a - b for a, b in zip(first[0], second[0])] + [first[1] - second[1]]
    ref = list(facet.normal) + [facet.support]
    exact = is_exact(diff + ref)
    pivot = next(i for i, v in enumerate(facet.normal) if v != 0)
    ratio = diff[pivot] / ref[pivot]
    return all(_is_zero(d - ratio * r, exact) for d, r in zip(diff, ref))


def integrate_pl(polytope: MomentPolytope, pieces: Sequence[Piece]) -> Scalar:
    """Exact integral of max_j(<a_j,x> + b_j) over P"""
    pieces = _normalize_pieces(pieces)
    parts = []
    for j, region in enumerate(active_region_vertices(polytope, pieces)):
        if len(region) <= polytope.dim or affine_rank(region) < polytope.dim:
            continue
        slope, intercept = pieces[j]
        parts.append(hull_integral(region, integrand=lambda p, s=slope, b=intercept: _dot(s, p) + b))
    return exact_sum(parts)


def boundary_integral_pl(polytope: MomentPolytope, pieces: Sequence[Piece]) -> Scalar:
    """Exact integral of max_j(<a_j,x> + b_j) over the boundary of P against the facet lattice measure"""
    pieces = _normalize_pieces(pieces)
    parts = []
    for index, facet in enumerate(polytope.facets):
        for j in range(len(pieces)):
            if any(_agree_on_facet(pieces[j], pieces[k], facet) for k in range(j)):
                continue
            normals, supports = piece_region_system(polytope, pieces, j)
            exact = is_exact(supports)
            normals.append(tuple(to_scalar(-v, exact) for v in facet.normal))
            supports.append(to_scalar(-facet.support, exact))
            region = enumerate_vertices(normals, supports, exact)
            if not region or affine_rank(region) < polytope.dim - 1:
                continue
            slope, intercept = pieces[j]
            integrand = lambda p, s=slope, b=intercept: _dot(s, p) + b
            if polytope.dim == 1:
                parts.append(integrand(region[0]))
                continue
            coords = facet_coordinates(facet.normal, region, region[0])
            parts.append(hull_integral(coords, lifts=region, integrand=integrand))
    return exact_sum(parts)


def toric_futaki(polytope: MomentPolytope, pieces: Sequence[Piece]) -> Scalar:
    """
    Boundary-minus-mean functional (int_{dP} f dsigma - Sbar int_P f dx) / vol(P).

    For PL convex f with rational slopes this is the non-Archimedean Mabuchi invariant of
    the associated test configuration (and its Donaldson-Futaki invariant when reduced).
    """
    vol = volume(polytope)
    return (boundary_integral_pl(polytope, pieces) - sbar(polytope) * integrate_pl(polytope, pieces)) / vol
