#!/usr/bin/env python3
"""
Torus-Invariant Kähler Potentials
=================================

Invariant potentials are convex functions psi of log coordinates x = (log|z_1|^2, ...).
The reference metric is the Legendre dual of the Guillemin symplectic potential
u(y) = sum_F l_F(y) log l_F(y); relative potentials are phi = psi - psi_ref.

- LogGrid: uniform box grid with trapezoid weights and order-independent reductions
- GuilleminDual: evaluates Legendre(u + quadratic) with closed-form Hessians
- catalog of named potentials (guillemin, fubini-study, pullback, perturbation, sampled)
- Monge-Ampère and mixed Monge-Ampère densities, Ricci potential, scalar curvature
"""

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.spatial import ConvexHull, QhullError

from input_validator import (ConsistencyError, GridSpec, GridTooSmallError, KstabValidationError,
                             NonConvexError, validate_model)
from polytope import MomentPolytope, anticanonical, is_delzant, standard_simplex, vertex_cones, volume
from potential_cache import potential_cache

logger = logging.getLogger(__name__)

POTENTIAL_CONFIG = {
    'tail_width': 26.0,
    'resolution': {1: 4097, 2: 257},
    'newton_max_iter': 200,
    'newton_tol': 1e-12,
    'max_log_step': 8.0,
    'mass_fraction': 1.0 - 1e-8,
    'quadrature_warning': 1e-4,
    'tail_hessian': 1e-10,
    'fd_step': 1e-2,
    'image_tol': 1e-8,
}


# --------------------------------------------------
# Grids
# --------------------------------------------------

@dataclass(frozen=True)
class LogGrid:
    """Uniform tensor grid on a box in log coordinates (dimension 1 or 2 for quadrature)"""
    box: Tuple[Tuple[float, float], ...]
    resolution: Tuple[int, ...]

    def __post_init__(self):
        if len(self.box) != len(self.resolution) or not self.box:
            raise KstabValidationError("Grid box and resolution must have the same positive length")
        for (low, high), count in zip(self.box, self.resolution):
            if not low < high:
                raise KstabValidationError(f"Grid side [{low}, {high}] is empty")
            if count < 5:
                raise KstabValidationError(f"Grid resolution {count} is below 5")

    @classmethod
    def from_spec(cls, spec: Union[GridSpec, Dict[str, Any]]) -> 'LogGrid':
        spec = spec if isinstance(spec, GridSpec) else validate_model(GridSpec, spec, source="grid")
        return cls(tuple((float(lo), float(hi)) for lo, hi in spec.box), tuple(int(n) for n in spec.resolution))

    def to_dict(self) -> Dict[str, Any]:
        return {'box': [list(side) for side in self.box], 'resolution': list(self.resolution)}

    @property
    def dim(self) -> int:
        return len(self.box)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.resolution)

    @property
    def size(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def steps(self) -> Tuple[float, ...]:
        return tuple((high - low) / (count - 1) for (low, high), count in zip(self.box, self.resolution))

    @cached_property
    def axes(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.linspace(low, high, count) for (low, high), count in zip(self.box, self.resolution))

    @cached_property
    def points(self) -> np.ndarray:
        """Grid nodes as an array of shape (size, dim), row-major"""
        mesh = np.meshgrid(*self.axes, indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid weights, shaped like the grid"""
        factors = []
        for step, count in zip(self.steps, self.resolution):
            w = np.full(count, step)
            w[0] = w[-1] = 0.5 * step
            factors.append(w)
        total = factors[0]
        for w in factors[1:]:
            total = np.multiply.outer(total, w)
        return total

    def reshape(self, values: np.ndarray) -> np.ndarray:
        """Flat (size, ...) samples to grid.shape + (...); grid-shaped input passes through"""
        values = np.asarray(values)
        if values.shape[:self.dim] == self.shape:
            return values
        return values.reshape(self.shape + values.shape[1:])

    def integrate(self, values: np.ndarray) -> float:
        """Trapezoid rule with exactly rounded summation, so results do not depend on evaluation order"""
        values = np.asarray(values, dtype=float).reshape(self.shape)
        return math.fsum((self.weights * values).ravel())

    def coarsened(self) -> 'LogGrid':
        """Every other node (needs an odd node count per side)"""
        for count in self.resolution:
            if count % 2 == 0 or count < 9:
                raise KstabValidationError(f"Cannot coarsen a grid side with {count} nodes")
        return LogGrid(self.box, tuple((count + 1) // 2 for count in self.resolution))

    def restrict(self, values: np.ndarray) -> np.ndarray:
        """Values at the nodes of coarsened()"""
        values = np.asarray(values)
        if values.shape[:self.dim] != self.shape:
            values = values.reshape(self.shape + values.shape[1:])
        return values[tuple(slice(None, None, 2) for _ in self.shape)]

    def expanded(self, low: Sequence[float], high: Sequence[float]) -> 'LogGrid':
        """Grid on a larger box keeping the node spacing"""
        box, resolution = [], []
        for (lo, hi), nodes, step, new_lo, new_hi in zip(self.box, self.resolution, self.steps, low, high):
            if new_lo >= lo and new_hi <= hi:
                box.append((lo, hi))
                resolution.append(nodes)
                continue
            new_lo, new_hi = min(lo, new_lo), max(hi, new_hi)
            count = int(math.ceil((new_hi - new_lo) / step - 1e-9)) + 1
            if count % 2 == 0:
                count += 1
            box.append((new_lo, new_lo + step * (count - 1)))
            resolution.append(count)
        return LogGrid(tuple(box), tuple(resolution))


def default_grid(dim: int, tail: Optional[float] = None, resolution: Optional[int] = None,
                 center: Optional[Sequence[float]] = None) -> LogGrid:
    """Symmetric box [-tail, tail]^dim around center"""
    tail = POTENTIAL_CONFIG['tail_width'] if tail is None else tail
    resolution = POTENTIAL_CONFIG['resolution'].get(dim, 129) if resolution is None else resolution
    center = [0.0] * dim if center is None else list(center)
    return LogGrid(tuple((c - tail, c + tail) for c in center), tuple([resolution] * dim))


def grid_gradient(values: np.ndarray, grid: LogGrid) -> np.ndarray:
    """Centered first differences, shape grid.shape + (dim,)"""
    values = grid.reshape(values)
    parts = np.gradient(values, *grid.steps, edge_order=2)
    if grid.dim == 1:
        parts = [parts]
    return np.stack(parts, axis=-1)


def grid_hessian(values: np.ndarray, grid: LogGrid) -> np.ndarray:
    """Centered second differences, shape grid.shape + (dim, dim); edge nodes copy their neighbours"""
    values = grid.reshape(values)
    dim = grid.dim
    hessian = np.zeros(grid.shape + (dim, dim))
    for i in range(dim):
        h = grid.steps[i]
        second = np.zeros(grid.shape)
        inner = [slice(None)] * dim
        inner[i] = slice(1, -1)
        plus = [slice(None)] * dim
        plus[i] = slice(2, None)
        minus = [slice(None)] * dim
        minus[i] = slice(None, -2)
        second[tuple(inner)] = (values[tuple(plus)] - 2 * values[tuple(inner)] + values[tuple(minus)]) / h ** 2
        first = [slice(None)] * dim
        first[i] = 0
        after = [slice(None)] * dim
        after[i] = 1
        second[tuple(first)] = second[tuple(after)]
        last = [slice(None)] * dim
        last[i] = -1
        before = [slice(None)] * dim
        before[i] = -2
        second[tuple(last)] = second[tuple(before)]
        hessian[..., i, i] = second
        for j in range(i + 1, dim):
            mixed = np.gradient(np.gradient(values, grid.steps[i], axis=i, edge_order=2),
                                grid.steps[j], axis=j, edge_order=2)
            hessian[..., i, j] = hessian[..., j, i] = mixed
    return hessian


def hessian_by_evaluation(func: Callable[[np.ndarray], np.ndarray], points: np.ndarray, step: float) -> np.ndarray:
    """Hessian of a scalar function at points; fourth order via Richardson on steps h and 2h"""
    dim = points.shape[1]

    def central(h: float) -> np.ndarray:
        out = np.empty((len(points), dim, dim))
        center = func(points)
        for i in range(dim):
            e_i = np.zeros(dim)
            e_i[i] = h
            out[:, i, i] = (func(points + e_i) - 2 * center + func(points - e_i)) / h ** 2
            for j in range(i + 1, dim):
                e_j = np.zeros(dim)
                e_j[j] = h
                value = (func(points + e_i + e_j) - func(points + e_i - e_j)
                         - func(points - e_i + e_j) + func(points - e_i - e_j)) / (4 * h ** 2)
                out[:, i, j] = out[:, j, i] = value
        return out

    return (4 * central(step) - central(2 * step)) / 3


def gradient_by_evaluation(func: Callable[[np.ndarray], np.ndarray], points: np.ndarray, step: float) -> np.ndarray:
    """Gradient at points by fourth-order central differences"""
    dim = points.shape[1]
    out = np.empty((len(points), dim))
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = step
        out[:, i] = (8 * (func(points + e) - func(points - e)) - (func(points + 2 * e) - func(points - 2 * e))) / (12 * step)
    return out


# --------------------------------------------------
# Mixed discriminants
# --------------------------------------------------

def mixed_discriminant(matrices: Sequence[np.ndarray]) -> np.ndarray:
    """
    Mixed discriminant D(A_1, ..., A_n) of stacked symmetric matrices by polarization,
    normalized so that D(A, ..., A) = det A.
    """
    n = len(matrices)
    total = np.zeros(np.asarray(matrices[0]).shape[:-2])
    for size in range(1, n + 1):
        sign = -1.0 if (n - size) % 2 else 1.0
        for subset in itertools.combinations(range(n), size):
            summed = sum(np.asarray(matrices[i]) for i in subset)
            total = total + sign * np.linalg.det(summed)
    return total / math.factorial(n)


# --------------------------------------------------
# Guillemin dual solver
# --------------------------------------------------

@dataclass
class DualSample:
    """Values of a dual potential at a batch of points"""
    value: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray
    logdet: np.ndarray


@dataclass
class _Chart:
    vertex: np.ndarray
    basis: Tuple[int, ...]
    others: Tuple[int, ...]
    ninv: np.ndarray
    nug: np.ndarray
    nug_ninv: np.ndarray
    lgv: np.ndarray
    logabsdet: float
    start: np.ndarray
    offset: Optional[np.ndarray]


class GuilleminDual:
    """
    Legendre dual psi(x) = sup_y <x, y> - u(y) of u = sum_F l_F log l_F + y.Qy/2 + q.y.

    Each point is solved in the chart of the vertex v maximising <x, v>: the unknowns are
    w_i = log l_i for the facets through v, so tails are resolved without cancellation.
    Works for any simple or non-simple polytope of any dimension; Hessians and
    log-determinants are closed form.
    """

    def __init__(self, polytope: MomentPolytope, quadratic: Optional[np.ndarray] = None,
                 linear: Optional[np.ndarray] = None, max_iter: Optional[int] = None, tol: Optional[float] = None):
        self.polytope = polytope
        self.dim = polytope.dim
        self.normals = polytope.normals
        self.supports = polytope.supports
        self.Q = np.zeros((self.dim, self.dim)) if quadratic is None else np.asarray(quadratic, dtype=float)
        self.q = np.zeros(self.dim) if linear is None else np.asarray(linear, dtype=float)
        if self.Q.shape != (self.dim, self.dim) or self.q.shape != (self.dim,):
            raise KstabValidationError("Quadratic perturbation has the wrong shape")
        if not np.allclose(self.Q, self.Q.T):
            raise KstabValidationError("Quadratic perturbation must be symmetric")
        if np.linalg.eigvalsh(self.Q).min() < -1e-14:
            raise NonConvexError("Quadratic perturbation must be positive semidefinite")
        self.max_iter = max_iter or POTENTIAL_CONFIG['newton_max_iter']
        self.tol = tol or POTENTIAL_CONFIG['newton_tol']
        self.centroid = np.mean(np.array(polytope.vertices, dtype=float), axis=0)
        self._charts = [self._make_chart(vertex, tight) for vertex, tight in vertex_cones(polytope)]
        self._vertices = np.array([chart.vertex for chart in self._charts])

    def to_dict(self) -> Dict[str, Any]:
        return {'polytope': self.polytope.to_dict(), 'Q': self.Q.tolist(), 'q': self.q.tolist()}

    def _make_chart(self, vertex, tight: Sequence[int]) -> _Chart:
        vertex = np.array([float(v) for v in vertex])
        best, best_det = None, 0.0
        for subset in itertools.combinations(tight, self.dim):
            det = abs(np.linalg.det(self.normals[list(subset)]))
            if det > best_det + 1e-12:
                best, best_det = subset, det
        if best is None:
            raise KstabValidationError(f"Vertex {tuple(vertex)} has no chart")
        others = tuple(i for i in range(len(self.normals)) if i not in best)
        n_matrix = self.normals[list(best)]
        ninv = np.linalg.inv(n_matrix)
        nug = self.normals[list(others)].reshape(len(others), self.dim)
        lgv = nug @ vertex + self.supports[list(others)]
        lgv = np.where(np.abs(lgv) < 1e-12, 0.0, lgv)
        l_center = n_matrix @ self.centroid + self.supports[list(best)]
        start = np.log(0.5 * l_center)
        offset = None
        if np.all(lgv > 0):
            # first-order chart solution w = N^{-T}x - 1 - offset
            offset = ninv.T @ (nug.T @ (np.log(lgv) + 1.0) + self.Q @ vertex + self.q)
        return _Chart(vertex, tuple(best), others, ninv, nug, nug @ ninv, lgv,
                      float(np.log(best_det)), start, offset)

    # --------------------------------------------------

    def _state(self, chart: _Chart, W: np.ndarray):
        L = np.exp(W)
        Y = chart.vertex + L @ chart.ninv.T
        LG = chart.lgv + L @ chart.nug_ninv.T
        return L, Y, LG

    def _theta(self, chart: _Chart, X, W, L, Y, LG) -> np.ndarray:
        xi = X @ chart.ninv
        with np.errstate(divide='ignore', invalid='ignore'):
            entropy_g = np.where(LG > 0, LG * np.log(np.where(LG > 0, LG, 1.0)), 0.0)
        quad = 0.5 * np.einsum('ki,ij,kj->k', Y, self.Q, Y) + Y @ self.q
        return X @ chart.vertex + np.sum(xi * L, axis=1) - np.sum(L * W, axis=1) - np.sum(entropy_g, axis=1) - quad

    def _residual(self, chart: _Chart, X, W, L, Y, LG) -> np.ndarray:
        grad_rest = (np.log(LG) + 1.0) @ chart.nug + Y @ self.Q + self.q
        return W + 1.0 + (grad_rest - X) @ chart.ninv

    def _chart_matrix(self, chart: _Chart, LG) -> np.ndarray:
        rest = np.einsum('kg,ga,gb->kab', 1.0 / LG, chart.nug, chart.nug) + self.Q
        return np.einsum('ai,kab,bj->kij', chart.ninv, rest, chart.ninv)

    def _solve_chart(self, chart: _Chart, X: np.ndarray) -> np.ndarray:
        count = len(X)
        W = np.tile(chart.start, (count, 1))
        if chart.offset is not None:
            guess = np.minimum(X @ chart.ninv - 1.0 - chart.offset, chart.start)
            _, _, LG = self._state(chart, guess)
            feasible = np.all(LG > 0, axis=1)
            W[feasible] = guess[feasible]
        identity = np.eye(self.dim)
        scale = 1.0 + np.abs(X).max(axis=1)
        for _ in range(self.max_iter):
            L, Y, LG = self._state(chart, W)
            F = self._residual(chart, X, W, L, Y, LG)
            done = np.abs(F).max(axis=1) <= self.tol * (scale + np.abs(W).max(axis=1))
            if done.all():
                return W
            M = self._chart_matrix(chart, LG)
            J = identity + M * L[:, None, :]
            D = -np.linalg.solve(J, F[..., None])[..., 0]
            slope = -np.sum(L * F * D, axis=1)
            theta0 = self._theta(chart, X, W, L, Y, LG)
            alpha = np.minimum(1.0, POTENTIAL_CONFIG['max_log_step'] / np.maximum(np.abs(D).max(axis=1), 1e-300))
            accepted = done.copy()
            W_next = W.copy()
            for _ in range(60):
                trial = W + alpha[:, None] * D
                with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
                    Lt, Yt, LGt = self._state(chart, trial)
                    feasible = np.all(LGt > 0, axis=1) & np.all(np.isfinite(Lt), axis=1)
                    theta = np.where(feasible, self._theta(chart, X, trial, Lt, Yt, np.where(LGt > 0, LGt, 1.0)), -np.inf)
                slack = 1e-14 * (1.0 + np.abs(theta0))
                ok = feasible & (theta >= theta0 + 1e-4 * alpha * slope - slack) & ~accepted
                W_next[ok] = trial[ok]
                accepted |= ok
                if accepted.all():
                    break
                alpha = np.where(accepted, alpha, 0.5 * alpha)
            W = W_next
        L, Y, LG = self._state(chart, W)
        F = self._residual(chart, X, W, L, Y, LG)
        worst = int(np.argmax(np.abs(F).max(axis=1)))
        if np.abs(F[worst]).max() > 1e-8 * (scale[worst] + np.abs(W[worst]).max()):
            raise ConsistencyError(f"Legendre solver did not converge at x={X[worst].tolist()} "
                                   f"(residual {np.abs(F[worst]).max():.3e})")
        return W

    def evaluate(self, points: np.ndarray) -> DualSample:
        """Value, gradient, Hessian and log-determinant of the Hessian at each point"""
        X = np.atleast_2d(np.asarray(points, dtype=float))
        if X.shape[1] != self.dim:
            raise KstabValidationError(f"Points of dimension {X.shape[1]} for a {self.dim}-dimensional potential")
        count = len(X)
        value = np.empty(count)
        gradient = np.empty((count, self.dim))
        hessian = np.empty((count, self.dim, self.dim))
        logdet = np.empty(count)
        chart_index = np.argmax(X @ self._vertices.T, axis=1)
        identity = np.eye(self.dim)
        for index, chart in enumerate(self._charts):
            mask = chart_index == index
            if not mask.any():
                continue
            Xc = X[mask]
            W = self._solve_chart(chart, Xc)
            L, Y, LG = self._state(chart, W)
            M = self._chart_matrix(chart, LG)
            A = identity + L[:, :, None] * M
            inner = np.linalg.solve(A, identity * L[:, None, :])
            H = np.einsum('ia,kab,jb->kij', chart.ninv, inner, chart.ninv)
            hessian[mask] = 0.5 * (H + np.swapaxes(H, 1, 2))
            logdet[mask] = W.sum(axis=1) - np.linalg.slogdet(A)[1] - 2.0 * chart.logabsdet
            gradient[mask] = Y
            value[mask] = self._theta(chart, Xc, W, L, Y, LG)
        return DualSample(value, gradient, hessian, logdet)

    def symplectic_potential(self, points: np.ndarray) -> np.ndarray:
        """u(y) at interior points of the polytope"""
        Y = np.atleast_2d(np.asarray(points, dtype=float))
        l = Y @ self.normals.T + self.supports
        if np.any(l < 0):
            raise KstabValidationError("Symplectic potential evaluated outside the polytope")
        with np.errstate(divide='ignore', invalid='ignore'):
            entropy = np.where(l > 0, l * np.log(np.where(l > 0, l, 1.0)), 0.0)
        return entropy.sum(axis=1) + 0.5 * np.einsum('ki,ij,kj->k', Y, self.Q, Y) + Y @ self.q


# --------------------------------------------------
# Potentials
# --------------------------------------------------

@dataclass
class TorusPotential:
    """Sampled convex function psi = psi_ref + phi on a log grid"""
    polytope: MomentPolytope
    grid: LogGrid
    psi: np.ndarray
    phi: np.ndarray
    hessian: np.ndarray
    gradient: Optional[np.ndarray] = None
    logdet: Optional[np.ndarray] = None
    evaluator: Optional[Callable[[np.ndarray], DualSample]] = field(default=None, repr=False)
    name: str = ""

    @property
    def dim(self) -> int:
        return self.grid.dim

    def density(self) -> np.ndarray:
        """Monge-Ampère density n! det D^2 psi"""
        factor = math.factorial(self.dim)
        if self.logdet is not None:
            return factor * np.exp(self.logdet)
        return factor * np.linalg.det(self.hessian)

    def log_density(self) -> np.ndarray:
        factor = math.log(math.factorial(self.dim))
        if self.logdet is not None:
            return factor + self.logdet
        with np.errstate(divide='ignore', invalid='ignore'):
            return factor + np.log(np.linalg.det(self.hessian))

    def mass(self) -> float:
        return self.grid.integrate(self.density())

    def shifted(self, constant: float) -> 'TorusPotential':
        """Same metric, relative potential phi + constant"""
        evaluator = self.evaluator
        if evaluator is not None:
            def evaluator(points, _inner=self.evaluator, _c=constant):
                sample = _inner(points)
                return replace(sample, value=sample.value + _c)
        return replace(self, psi=self.psi + constant, phi=self.phi + constant, evaluator=evaluator,
                       name=f"{self.name}+{constant:g}")

    def relative_to(self, reference: 'TorusPotential') -> 'TorusPotential':
        """Same psi, phi measured against another reference"""
        check_same_grid([self, reference])
        return replace(self, phi=self.psi - reference.psi)


def coarsen_potential(potential: TorusPotential) -> TorusPotential:
    """The same potential on every other node"""
    grid = potential.grid
    restrict = lambda values: None if values is None else grid.restrict(values)
    return replace(potential, grid=grid.coarsened(), psi=restrict(potential.psi), phi=restrict(potential.phi),
                   hessian=restrict(potential.hessian), gradient=restrict(potential.gradient),
                   logdet=restrict(potential.logdet))


def combine_potentials(first: TorusPotential, second: TorusPotential, weight: float,
                       name: str = "") -> TorusPotential:
    """(1 - s) psi_0 + s psi_1; Hessians combine linearly, log-determinants are recomputed"""
    check_same_grid([first, second])
    s = float(weight)
    mix = lambda a, b: None if a is None or b is None else (1.0 - s) * a + s * b
    hessian = mix(first.hessian, second.hessian)
    sign, logdet = np.linalg.slogdet(hessian)
    evaluator = None
    if first.evaluator is not None and second.evaluator is not None:
        def evaluator(points, _a=first.evaluator, _b=second.evaluator):
            a, b = _a(points), _b(points)
            h = (1.0 - s) * a.hessian + s * b.hessian
            return DualSample((1.0 - s) * a.value + s * b.value, (1.0 - s) * a.gradient + s * b.gradient,
                              h, np.linalg.slogdet(h)[1])
    combined = TorusPotential(first.polytope, first.grid, mix(first.psi, second.psi), mix(first.phi, second.phi),
                              hessian, gradient=mix(first.gradient, second.gradient),
                              logdet=np.where(sign > 0, logdet, -np.inf), evaluator=evaluator,
                              name=name or f"({first.name},{second.name};{s:g})")
    check_admissible(combined)
    return combined


def check_same_grid(potentials: Sequence[Any]) -> LogGrid:
    grids = {p.grid for p in potentials if isinstance(p, TorusPotential)}
    if len(grids) > 1:
        raise KstabValidationError("Potentials live on different grids")
    return grids.pop() if grids else None


def check_admissible(potential: TorusPotential, tol: float = 1e-10) -> None:
    """omega_phi >= 0: Hessian positive semidefinite at every node"""
    eigen = np.linalg.eigvalsh(potential.hessian)
    worst = float(eigen.min())
    if worst < -tol:
        location = np.unravel_index(int(np.argmin(eigen.min(axis=-1))), potential.grid.shape)
        raise NonConvexError(f"Potential {potential.name or ''} is not convex at node {location} (eigenvalue {worst:.3e})")


def potential_from_dual(dual: GuilleminDual, grid: LogGrid, reference: Optional[TorusPotential] = None,
                        shift: Optional[np.ndarray] = None, name: str = "") -> TorusPotential:
    """Sample a dual potential (optionally precomposed with x -> x + shift) on a grid"""
    if dual.dim != grid.dim:
        raise KstabValidationError(f"{dual.dim}-dimensional potential on a {grid.dim}-dimensional grid")
    shift = np.zeros(dual.dim) if shift is None else np.asarray(shift, dtype=float)

    def evaluator(points: np.ndarray) -> DualSample:
        return dual.evaluate(np.atleast_2d(points) + shift)

    sample = evaluator(grid.points)
    psi = grid.reshape(sample.value)
    phi = np.zeros_like(psi) if reference is None else psi - reference.psi
    return TorusPotential(
        polytope=dual.polytope,
        grid=grid,
        psi=psi,
        phi=phi,
        hessian=grid.reshape(sample.hessian),
        gradient=grid.reshape(sample.gradient),
        logdet=grid.reshape(sample.logdet),
        evaluator=evaluator,
        name=name,
    )


@potential_cache("dual")
def guillemin_dual(polytope: MomentPolytope, quadratic: Optional[Tuple] = None, linear: Optional[Tuple] = None) -> GuilleminDual:
    return GuilleminDual(polytope,
                         None if quadratic is None else np.array(quadratic, dtype=float),
                         None if linear is None else np.array(linear, dtype=float))


def check_mass(potential: TorusPotential, expected: float, captured: Optional[float] = None) -> float:
    """
    Compare the Monge-Ampère mass the box captures with its intersection-number value.

    `captured` is the exact mass of the box (see gradient_image_volume); without it the quadrature
    mass stands in. A quadrature mass far from `captured` only logs a warning.

    Raises:
        GridTooSmallError: the box misses more than 1 - mass_fraction of the mass
    """
    mass = potential.mass()
    box_mass = mass if captured is None else captured
    deficit = abs(box_mass - expected)
    allowed = (1.0 - POTENTIAL_CONFIG['mass_fraction']) * abs(expected)
    if deficit > allowed:
        raise GridTooSmallError(
            f"Grid box {potential.grid.box} captures mass {box_mass:.12g} of {expected:.12g}; enlarge the box")
    if captured is not None and abs(mass - captured) > POTENTIAL_CONFIG['quadrature_warning'] * abs(expected):
        logger.warning(f"⚠️ Quadrature mass {mass:.10g} of {potential.name} is off the captured {captured:.10g}; "
                       f"refine the grid")
    edge = _edge_values(np.abs(potential.hessian).max(axis=(-1, -2)), potential.grid)
    if edge.max() > POTENTIAL_CONFIG['tail_hessian']:
        logger.warning(f"⚠️ Hessian reaches {edge.max():.2e} on the grid boundary of {potential.name}")
    return mass


def box_boundary_loop(grid: LogGrid) -> np.ndarray:
    """Boundary nodes of a 2-D grid box, counter-clockwise from the lower-left corner, each once"""
    if grid.dim != 2:
        raise KstabValidationError("Boundary loops are defined for 2-D grids")
    first, second = grid.axes
    return np.concatenate([
        np.column_stack([first, np.full(len(first), second[0])]),
        np.column_stack([np.full(len(second) - 1, first[-1]), second[1:]]),
        np.column_stack([first[-2::-1], np.full(len(first) - 1, second[-1])]),
        np.column_stack([np.full(len(second) - 2, first[0]), second[-2:0:-1]]),
    ])


def gradient_image_volume(gradient_at: Callable[[np.ndarray], np.ndarray], grid: LogGrid) -> float:
    """
    Volume of grad(psi)(box) for convex psi, from the exact gradient on the box boundary.

    In one dimension it is psi'(high) - psi'(low). In two it is the area enclosed by the image of
    the boundary loop (shoelace formula), since det D^2 psi dx = d(psi_1 d psi_2).
    """
    if grid.dim == 1:
        (low, high), = grid.box
        ends = np.asarray(gradient_at(np.array([[low], [high]])), dtype=float)
        return float(ends[1, 0] - ends[0, 0])
    image = np.asarray(gradient_at(box_boundary_loop(grid)), dtype=float)
    u, v = image[:, 0], image[:, 1]
    return 0.5 * (math.fsum(u * np.roll(v, -1)) - math.fsum(np.roll(u, -1) * v))


def _edge_values(values: np.ndarray, grid: LogGrid) -> np.ndarray:
    parts = []
    for axis in range(grid.dim):
        parts.append(np.take(values, 0, axis=axis).ravel())
        parts.append(np.take(values, -1, axis=axis).ravel())
    return np.concatenate(parts)


@potential_cache("reference")
def guillemin_reference(polytope: MomentPolytope, grid: LogGrid) -> TorusPotential:
    """
    Reference potential psi_ref = Legendre(sum_F l_F log l_F) sampled on the grid.

    Raises:
        KstabValidationError: polytope not Delzant
        GridTooSmallError: box misses more than the allowed Monge-Ampère mass
    """
    certificate = is_delzant(polytope)
    if not certificate:
        raise KstabValidationError(f"Reference metric needs a Delzant polytope: {certificate.reason}")
    potential = potential_from_dual(guillemin_dual(polytope), grid, name="guillemin")
    check_mass(potential, math.factorial(polytope.dim) * float(volume(polytope)))
    image = potential.gradient.reshape(-1, polytope.dim)
    slack = (image @ polytope.normals.T + polytope.supports).min()
    if slack < -POTENTIAL_CONFIG['image_tol']:
        raise ConsistencyError(f"Gradient image leaves the polytope by {-slack:.3e}")
    logger.debug(f"Reference potential built on {grid.shape} nodes")
    return potential


def torus_pullback(polytope: MomentPolytope, grid: LogGrid, shift: Sequence[float]) -> TorusPotential:
    """Reference metric pulled back by the torus element z -> exp(shift/2) z, i.e. psi_ref(x + shift)"""
    reference = guillemin_reference(polytope, grid)
    return potential_from_dual(guillemin_dual(polytope), grid, reference=reference, shift=np.asarray(shift, dtype=float),
                               name=f"pullback{tuple(shift)}")


def symplectic_perturbation(polytope: MomentPolytope, grid: LogGrid, quadratic: Sequence[Sequence[float]],
                            linear: Optional[Sequence[float]] = None) -> TorusPotential:
    """Legendre(u_ref + y.Qy/2 + q.y): a smooth admissible potential in the reference class"""
    reference = guillemin_reference(polytope, grid)
    quadratic = tuple(tuple(float(v) for v in row) for row in quadratic)
    linear = None if linear is None else tuple(float(v) for v in linear)
    dual = guillemin_dual(polytope, quadratic, linear)
    potential = potential_from_dual(dual, grid, reference=reference, name="perturbation")
    check_mass(potential, math.factorial(polytope.dim) * float(volume(polytope)))
    return potential


def sampled_potential(polytope: MomentPolytope, grid: LogGrid, psi: np.ndarray, name: str = "sampled") -> TorusPotential:
    """Potential known only through samples of psi; derivatives by finite differences"""
    reference = guillemin_reference(polytope, grid)
    psi = grid.reshape(np.asarray(psi, dtype=float))
    hessian = grid_hessian(psi, grid)
    potential = TorusPotential(polytope, grid, psi, psi - reference.psi, hessian,
                               gradient=grid_gradient(psi, grid), name=name)
    check_admissible(potential, tol=1e-8)
    return potential


def fubini_study(dim: int, grid: LogGrid) -> TorusPotential:
    """log(1 + sum_i e^{x_i}), the reference potential of the standard simplex"""
    return guillemin_reference(standard_simplex(dim), grid)


# --------------------------------------------------
# Catalog
# --------------------------------------------------

# Structure: { name: { "build": callable(polytope, grid, params), "meta": {"title": str} } }
POTENTIAL_CATALOG: Dict[str, Dict[str, Any]] = {}


def register_potential(name: str, title: Optional[str] = None):
    """Decorator to register a named potential builder"""
    def _decorator(func):
        POTENTIAL_CATALOG[name] = {"build": func, "meta": {"title": title or name.replace("-", " ").title()}}
        return func
    return _decorator


@register_potential("guillemin", title="Guillemin reference metric")
def _catalog_guillemin(polytope: MomentPolytope, grid: LogGrid, params: Dict[str, Any]) -> TorusPotential:
    return guillemin_reference(polytope, grid)


@register_potential("fubini-study", title="Fubini-Study metric")
def _catalog_fubini_study(polytope: MomentPolytope, grid: LogGrid, params: Dict[str, Any]) -> TorusPotential:
    return fubini_study(grid.dim, grid)


@register_potential("pullback", title="Torus pull-back of the reference metric")
def _catalog_pullback(polytope: MomentPolytope, grid: LogGrid, params: Dict[str, Any]) -> TorusPotential:
    return torus_pullback(polytope, grid, params.get("shift", [0.0] * grid.dim))


@register_potential("perturbation", title="Symplectic perturbation")
def _catalog_perturbation(polytope: MomentPolytope, grid: LogGrid, params: Dict[str, Any]) -> TorusPotential:
    return symplectic_perturbation(polytope, grid, params["quadratic"], params.get("linear"))


@register_potential("sampled", title="Sampled values from file")
def _catalog_sampled(polytope: MomentPolytope, grid: LogGrid, params: Dict[str, Any]) -> TorusPotential:
    path = Path(params["path"])
    if not path.exists():
        raise KstabValidationError(f"Sample file not found: {path}")
    values = pd.read_csv(path, header=None, comment='#').to_numpy(dtype=float).ravel()
    if values.size != grid.size:
        raise KstabValidationError(f"{path} holds {values.size} values for a grid of {grid.size} nodes")
    return sampled_potential(polytope, grid, values, name=path.stem)


def build_potential(name: str, polytope: MomentPolytope, grid: LogGrid,
                    params: Optional[Dict[str, Any]] = None) -> TorusPotential:
    """Build a catalog potential by identifier"""
    if name not in POTENTIAL_CATALOG:
        raise KstabValidationError(f"Unknown potential '{name}'; known: {sorted(POTENTIAL_CATALOG)}")
    return POTENTIAL_CATALOG[name]["build"](polytope, grid, params or {})


# --------------------------------------------------
# Legendre transform of samples
# --------------------------------------------------

def check_convex_samples(nodes: np.ndarray, values: np.ndarray, tol: Optional[float] = None) -> None:
    """Raise NonConvexError unless every sample lies on the lower convex envelope"""
    nodes = np.asarray(nodes, dtype=float).reshape(len(values), -1)
    values = np.asarray(values, dtype=float)
    tol = 1e-9 * (1.0 + np.abs(values).max()) if tol is None else tol
    lifted = np.column_stack([nodes, values])
    try:
        hull = ConvexHull(lifted)
    except QhullError:
        # samples on an affine subspace; the lifted set is flat only for affine data
        return
    lower = hull.equations[hull.equations[:, -2] < -1e-12]
    envelope = np.max(-(nodes @ lower[:, :-2].T + lower[:, -1]) / lower[:, -2], axis=1)
    excess = values - envelope
    if excess.max() > tol:
        worst = int(np.argmax(excess))
        raise NonConvexError(f"Samples are not convex near {nodes[worst].tolist()} (excess {excess[worst]:.3e})")


def legendre_transform(nodes: np.ndarray, values: np.ndarray, targets: np.ndarray,
                       check: bool = True, chunk: int = 2048) -> np.ndarray:
    """
    Discrete convex conjugate f*(x) = max_k <x, y_k> - f(y_k) at each target x.

    Args:
        nodes: sample locations y_k, shape (K,) or (K, n)
        values: f(y_k)
        targets: evaluation points, shape (M,) or (M, n)
        check: reject non-convex samples
    """
    values = np.asarray(values, dtype=float).ravel()
    nodes = np.asarray(nodes, dtype=float).reshape(len(values), -1)
    targets = np.asarray(targets, dtype=float)
    targets = targets.reshape(-1, nodes.shape[1])
    if check:
        check_convex_samples(nodes, values)
    out = np.empty(len(targets))
    for start in range(0, len(targets), chunk):
        block = targets[start:start + chunk]
        out[start:start + chunk] = np.max(block @ nodes.T - values, axis=1)
    return out


# --------------------------------------------------
# Monge-Ampère densities and curvature
# --------------------------------------------------

Slot = Union[TorusPotential, np.ndarray]


def _slot_hessian(slot: Slot) -> np.ndarray:
    return slot.hessian if isinstance(slot, TorusPotential) else np.asarray(slot)


def ma_density(slots: Sequence[Slot]) -> np.ndarray:
    """
    Mixed Monge-Ampère density n! D(D^2 psi_1, ..., D^2 psi_n) on the common grid.

    Slots are potentials or Hessian fields of closed forms (such as Ricci forms).
    """
    if not slots:
        raise KstabValidationError("ma_density needs at least one slot")
    check_same_grid(slots)
    hessians = [_slot_hessian(slot) for slot in slots]
    dim = hessians[0].shape[-1]
    if len(hessians) != dim:
        raise KstabValidationError(f"ma_density in dimension {dim} needs {dim} slots, got {len(hessians)}")
    if any(h.shape != hessians[0].shape for h in hessians):
        raise KstabValidationError("Slot Hessian fields have different shapes")
    if len({id(h) for h in hessians}) == 1 and isinstance(slots[0], TorusPotential):
        return slots[0].density()
    return math.factorial(dim) * mixed_discriminant(hessians)


@dataclass
class RicciData:
    """Ricci potential r = -log det D^2 psi and its Hessian (the Ricci form)"""
    r: np.ndarray
    hessian: np.ndarray
    polytope: MomentPolytope
    grid: LogGrid
    gradient: Optional[np.ndarray] = None


def log_det_hessian(potential: TorusPotential) -> np.ndarray:
    """Hessian of log det D^2 psi; by evaluation when closed forms exist, on the grid otherwise"""
    if potential.evaluator is not None:
        step = POTENTIAL_CONFIG['fd_step']
        func = lambda points: potential.evaluator(points).logdet
        return potential.grid.reshape(hessian_by_evaluation(func, potential.grid.points, step))
    return grid_hessian(potential.log_density(), potential.grid)


def ricci_potential(reference: TorusPotential) -> RicciData:
    """
    Ricci potential of a strictly convex potential.

    Raises:
        KstabValidationError: Hessian determinant vanishes somewhere on the grid
    """
    log_density = reference.log_density()
    if not np.all(np.isfinite(log_density)):
        raise KstabValidationError("Hessian determinant vanishes on the grid; Ricci potential undefined")
    r = -(log_density - math.log(math.factorial(reference.dim)))
    hessian = -log_det_hessian(reference)
    gradient = None
    if reference.evaluator is not None:
        func = lambda points: -reference.evaluator(points).logdet
        gradient = reference.grid.reshape(gradient_by_evaluation(func, reference.grid.points, POTENTIAL_CONFIG['fd_step']))
    return RicciData(r=r, hessian=hessian, polytope=anticanonical(reference.polytope), grid=reference.grid,
                     gradient=gradient)


def scalar_curvature(potential: TorusPotential) -> np.ndarray:
    """S = tr(H^{-1} Ric) = n D(Ric, H, ..., H) / det H with Ric = -D^2 log det H"""
    ricci = -log_det_hessian(potential)
    return np.trace(np.linalg.solve(potential.hessian, ricci), axis1=-2, axis2=-1)


def ricci_degree(ricci: RicciData, reference: TorusPotential) -> float:
    """(c_1 . alpha^(n-1)) by quadrature of n! D(Ric, omega, ..., omega)"""
    slots = [ricci.hessian] + [reference] * (reference.dim - 1)
    return reference.grid.integrate(ma_density(slots))


def sbar_quadrature(ricci: RicciData, reference: TorusPotential) -> float:
    """Average scalar curvature n (c_1 . alpha^(n-1)) / (alpha^n) by quadrature"""
    return reference.dim * ricci_degree(ricci, reference) / reference.mass()
