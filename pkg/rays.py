#!/usr/bin/env python3
"""
Rays of Torus-Invariant Potentials
==================================

- geodesic_from_testconfig: weak geodesic ray u_t = u_0 + t f, evaluated through
  psi_t(x) = min over the simplex of psi_0(x - t A lambda) - t b.lambda
- smooth_compatible_ray: fiber restrictions of the Guillemin potential of the total space Q_C
- subgeodesic families (convex combinations, time reparametrizations)
- certificates: homogeneous Monge-Ampère residual, (x, t) Hessian eigenvalues, uniform Hessian bound
- beta_family: fiberwise log-densities of the relative canonical volume form (n = 1)
"""

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from input_validator import ConsistencyError, KstabValidationError, parse_number
from polytope import MomentPolytope, volume
from potentials import (DualSample, GuilleminDual, LogGrid, TorusPotential, check_admissible, check_mass,
                        combine_potentials, default_grid, gradient_image_volume, guillemin_dual, guillemin_reference)
from testconfig import TestConfigPL, default_twist, total_polytope, validate_pl

logger = logging.getLogger(__name__)

RAY_CONFIG = {
    'time_base': 2,
    'newton_max_iter': 80,
    'face_tol': 1e-11,
    'barycentric_slack': 1e-9,
    'hessian_floor': 0.0,
    'derivative_step': 1e-4,
}

RAY_KINDS = ('weak-geodesic', 'smooth-compatible', 'subgeodesic')
COMPATIBILITIES = ('smooth', 'C11', 'Linf')


@dataclass
class RaySample:
    """One time of a ray: fiber potential, velocity and the (x, t) Hessian of the total potential"""
    t: float
    potential: TorusPotential
    velocity: np.ndarray
    jacobian: np.ndarray


@dataclass(frozen=True)
class Ray:
    tc: Optional[TestConfigPL]
    samples: Tuple[RaySample, ...]
    kind: str
    reference: TorusPotential
    compatibility: Optional[str] = None
    certificate: Dict[str, float] = field(default_factory=dict)
    sampler: Optional[Callable[[float], RaySample]] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in RAY_KINDS:
            raise KstabValidationError(f"Unknown ray kind '{self.kind}'")
        if self.compatibility is not None and self.compatibility not in COMPATIBILITIES:
            raise KstabValidationError(f"Unknown compatibility '{self.compatibility}'")
        times = [s.t for s in self.samples]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise KstabValidationError("Ray times must be strictly increasing")

    @property
    def times(self) -> Tuple[float, ...]:
        return tuple(s.t for s in self.samples)

    @property
    def potentials(self) -> Tuple[TorusPotential, ...]:
        return tuple(s.potential for s in self.samples)

    @property
    def grid(self) -> LogGrid:
        return self.reference.grid


def time_grid(t_max: float, base: Optional[int] = None, include_zero: bool = True) -> Tuple[float, ...]:
    """Geometric times 1, b, b^2, ..., t_max (preceded by 0)"""
    base = base or RAY_CONFIG['time_base']
    if t_max < 1 or base < 2:
        raise KstabValidationError(f"Time grid needs t_max >= 1 and base >= 2 (got {t_max}, {base})")
    times = [0.0] if include_zero else []
    t = 1.0
    while t <= t_max * (1 + 1e-12):
        times.append(t)
        t *= base
    return tuple(times)


def ray_grid(tcs: Union[TestConfigPL, Sequence[TestConfigPL]], t_max: float,
             base_grid: Optional[LogGrid] = None) -> LogGrid:
    """
    Grid whose box follows the moving Monge-Ampère mass up to t_max.

    The mass of psi_t sits at grad u_0(y) + t a_j, so each side grows by t_max times the extreme slopes.
    """
    tcs = [tcs] if isinstance(tcs, TestConfigPL) else list(tcs)
    dim = tcs[0].dim
    base_grid = base_grid or default_grid(dim)
    if base_grid.dim != dim:
        raise KstabValidationError(f"{base_grid.dim}-dimensional grid for a {dim}-dimensional configuration")
    slopes = np.array([[float(a) for a in piece.slope] for tc in tcs for piece in tc.pieces])
    low = [lo + t_max * min(0.0, slopes[:, i].min()) for i, (lo, _) in enumerate(base_grid.box)]
    high = [hi + t_max * max(0.0, slopes[:, i].max()) for i, (_, hi) in enumerate(base_grid.box)]
    grid = base_grid.expanded(low, high)
    if grid != base_grid:
        logger.warning(f"⚠️ Expanding grid box {base_grid.box} -> {grid.box} ({grid.shape} nodes) for t_max={t_max:g}")
    return grid


# --------------------------------------------------
# Weak geodesic of a test configuration
# --------------------------------------------------

@dataclass
class GeodesicPoint:
    """Solution of the simplex minimisation at a batch of points"""
    value: np.ndarray
    gradient: np.ndarray
    velocity: np.ndarray
    jacobian: np.ndarray


class GeodesicSolver:
    """
    Evaluates psi_t = Legendre(u_0 + t f) for f = max_j <a_j, y> + b_j.

    By minimax psi_t(x) = min_lambda psi_0(x - t A lambda) - t b.lambda. The minimiser lies in the
    relative interior of a face spanned by affinely independent slopes, where it is the unique
    stationary point of the face restriction; the minimum over all face candidates is the value.
    """

    def __init__(self, tc: TestConfigPL, dual: GuilleminDual):
        self.tc = tc
        self.dual = dual
        self.dim = tc.dim
        self.slopes = np.array([[float(a) for a in p.slope] for p in tc.pieces])
        self.intercepts = np.array([float(p.intercept) for p in tc.pieces])
        self.faces = [face for size in range(1, min(len(tc.pieces), self.dim + 1) + 1)
                      for face in itertools.combinations(range(len(tc.pieces)), size)
                      if self._independent(face)]

    def _independent(self, face: Tuple[int, ...]) -> bool:
        if len(face) == 1:
            return True
        D = (self.slopes[list(face[1:])] - self.slopes[face[0]]).T
        return np.linalg.matrix_rank(D, tol=1e-12) == len(face) - 1

    def _face_data(self, face: Tuple[int, ...]):
        D = (self.slopes[list(face[1:])] - self.slopes[face[0]]).T
        db = self.intercepts[list(face[1:])] - self.intercepts[face[0]]
        return D, db

    def _at(self, X: np.ndarray, t: float, face: Tuple[int, ...], mu: np.ndarray) -> Tuple[np.ndarray, DualSample]:
        D, _ = self._face_data(face)
        direction = self.slopes[face[0]] + mu @ D.T
        return X - t * direction, self.dual.evaluate(X - t * direction)

    def _face_value(self, sample: DualSample, t: float, face: Tuple[int, ...], mu: np.ndarray) -> np.ndarray:
        _, db = self._face_data(face)
        return sample.value - t * (self.intercepts[face[0]] + mu @ db)

    def _solve_edge(self, X: np.ndarray, t: float, face: Tuple[int, ...]):
        """Bracketed Newton for the stationary point on a segment of the simplex"""
        D, db = self._face_data(face)
        d = D[:, 0]
        count = len(X)
        lo, hi = np.zeros(count), np.ones(count)
        ends = [self._at(X, t, face, np.full((count, 1), s))[1] for s in (0.0, 1.0)]
        slope_at = lambda sample: -(sample.gradient @ d + db[0])
        valid = (slope_at(ends[0]) < 0) & (slope_at(ends[1]) > 0)
        s = np.full(count, 0.5)
        active = valid.copy()
        for _ in range(RAY_CONFIG['newton_max_iter']):
            if not active.any():
                break
            _, sample = self._at(X[active], t, face, s[active, None])
            residual = -(sample.gradient @ d + db[0])
            curvature = t * np.einsum('i,kij,j->k', d, sample.hessian, d)
            converged = np.abs(residual) <= RAY_CONFIG['face_tol']
            lo_a, hi_a, s_a = lo[active], hi[active], s[active]
            lo_a = np.where(residual < 0, s_a, lo_a)
            hi_a = np.where(residual > 0, s_a, hi_a)
            with np.errstate(divide='ignore', invalid='ignore'):
                step = s_a - residual / curvature
            bisect = ~np.isfinite(step) | (step <= lo_a) | (step >= hi_a)
            s_new = np.where(bisect, 0.5 * (lo_a + hi_a), step)
            s_new = np.where(converged, s_a, s_new)
            lo[active], hi[active], s[active] = lo_a, hi_a, s_new
            still = ~converged & (hi_a - lo_a > 1e-15)
            index = np.flatnonzero(active)
            active[index[~still]] = False
        return s[:, None], valid

    def _solve_face(self, X: np.ndarray, t: float, face: Tuple[int, ...]):
        """Damped Newton for faces of dimension two and more"""
        D, db = self._face_data(face)
        count, k = len(X), len(face) - 1
        mu = np.full((count, k), 1.0 / (k + 1))
        active = np.ones(count, dtype=bool)
        converged = np.zeros(count, dtype=bool)
        for _ in range(RAY_CONFIG['newton_max_iter']):
            if not active.any():
                break
            index = np.flatnonzero(active)
            Xa, mua = X[index], mu[index]
            _, sample = self._at(Xa, t, face, mua)
            residual = sample.gradient @ D + db
            done = np.abs(residual).max(axis=1) <= RAY_CONFIG['face_tol']
            converged[index[done]] = True
            matrix = np.einsum('ia,kij,jb->kab', D, sample.hessian, D)
            with np.errstate(all='ignore'):
                step = np.linalg.solve(matrix, residual[..., None])[..., 0] / t
            value = self._face_value(sample, t, face, mua)
            alpha = np.ones(len(index))
            accepted = done.copy()
            for _ in range(40):
                trial = mua + alpha[:, None] * step
                _, trial_sample = self._at(Xa, t, face, trial)
                better = self._face_value(trial_sample, t, face, trial) <= value + 1e-15 * (1 + np.abs(value))
                ok = better & ~accepted & np.all(np.isfinite(trial), axis=1)
                mua = np.where(ok[:, None], trial, mua)
                accepted |= ok
                if accepted.all():
                    break
                alpha = np.where(accepted, alpha, 0.5 * alpha)
            mu[index] = mua
            barycentric = np.column_stack([1.0 - mua.sum(axis=1), mua])
            escaped = np.any(barycentric < -1.0, axis=1) | np.any(barycentric > 2.0, axis=1) | ~accepted
            active[index[done | escaped]] = False
        barycentric = np.column_stack([1.0 - mu.sum(axis=1), mu])
        valid = converged & np.all(barycentric >= -RAY_CONFIG['barycentric_slack'], axis=1)
        return mu, valid

    def evaluate(self, points: np.ndarray, t: float) -> GeodesicPoint:
        X = np.atleast_2d(np.asarray(points, dtype=float))
        count, n = X.shape
        best = np.full(count, np.inf)
        best_face = np.zeros(count, dtype=int)
        best_mu = [None] * len(self.faces)
        samples: Dict[int, DualSample] = {}
        faces = [face for face in self.faces if len(face) == 1] if t == 0 else self.faces
        for index, face in enumerate(faces):
            if len(face) == 1:
                mu = np.zeros((count, 0))
                valid = np.ones(count, dtype=bool)
            elif len(face) == 2:
                mu, valid = self._solve_edge(X, t, face)
            else:
                mu, valid = self._solve_face(X, t, face)
            if not valid.any():
                continue
            _, sample = self._at(X, t, face, mu)
            value = np.where(valid, self._face_value(sample, t, face, mu), np.inf)
            if t == 0:
                # all vertices share the value; the active piece decides the face
                f = sample.gradient @ self.slopes.T + self.intercepts
                better = np.argmax(f, axis=1) == face[0]
                value = np.where(better, value, np.inf)
            improved = value < best
            best = np.where(improved, value, best)
            best_face = np.where(improved, index, best_face)
            best_mu[index] = mu
            samples[index] = sample
        if not np.all(np.isfinite(best)):
            raise ConsistencyError(f"Geodesic minimisation failed at t={t:g}")

        value = best
        gradient = np.empty((count, n))
        jacobian = np.empty((count, n + 1, n + 1))
        for index, face in enumerate(faces):
            mask = best_face == index
            if not mask.any():
                continue
            sample, mu = samples[index], best_mu[index][mask]
            H = sample.hessian[mask]
            gradient[mask] = sample.gradient[mask]
            D, _ = self._face_data(face)
            if len(face) > 1:
                HD = H @ D
                inner = np.linalg.solve(np.einsum('ia,kij,jb->kab', D, H, D), np.swapaxes(HD, 1, 2))
                H = H - HD @ inner
            direction = self.slopes[face[0]] + mu @ D.T
            M = np.concatenate([np.broadcast_to(np.eye(n), (len(mu), n, n)), -direction[:, :, None]], axis=2)
            jacobian[mask] = np.swapaxes(M, 1, 2) @ H @ M
        velocity = -np.max(gradient @ self.slopes.T + self.intercepts, axis=1)
        return GeodesicPoint(value, gradient, velocity, 0.5 * (jacobian + np.swapaxes(jacobian, 1, 2)))


def cell_average_hessian(gradient_at: Callable[[np.ndarray], np.ndarray], grid: LogGrid) -> np.ndarray:
    """Differences of the exact gradient at half steps; integrates density jumps exactly"""
    points = grid.points
    n = grid.dim
    hessian = np.empty((len(points), n, n))
    for i, step in enumerate(grid.steps):
        offset = np.zeros(n)
        offset[i] = 0.5 * step
        hessian[:, :, i] = (gradient_at(points + offset) - gradient_at(points - offset)) / step
    hessian = 0.5 * (hessian + np.swapaxes(hessian, 1, 2))
    eigen, vectors = np.linalg.eigh(hessian)
    eigen = np.maximum(eigen, RAY_CONFIG['hessian_floor'])
    return grid.reshape(np.einsum('kij,kj,klj->kil', vectors, eigen, vectors))


def _fiber_potential(polytope: MomentPolytope, grid: LogGrid, reference: TorusPotential, psi: np.ndarray,
                     gradient: np.ndarray, hessian: np.ndarray, logdet: Optional[np.ndarray], name: str) -> TorusPotential:
    if logdet is None:
        sign, logdet = np.linalg.slogdet(hessian)
        logdet = np.where(sign > 0, logdet, -np.inf)
    psi = grid.reshape(psi)
    return TorusPotential(polytope, grid, psi, psi - reference.psi, grid.reshape(hessian),
                          gradient=grid.reshape(gradient), logdet=grid.reshape(logdet), name=name)


def _hessian_certificate(samples: Sequence[RaySample]) -> Dict[str, float]:
    return {'hessian_bound': max(float(np.abs(np.linalg.eigvalsh(s.potential.hessian)).max()) for s in samples)}


def geodesic_from_testconfig(tc: TestConfigPL, times: Sequence[float], grid: Optional[LogGrid] = None,
                             expand: bool = True) -> Ray:
    """
    Weak geodesic ray of a test configuration, starting at the Guillemin reference potential.

    Raises:
        GridTooSmallError: the box misses Monge-Ampère mass at some time (expand=False)
    """
    tc = tc if tc.normalized else validate_pl(tc)
    base = tc.base
    times = tuple(float(t) for t in times)
    if any(t < 0 for t in times):
        raise KstabValidationError("Ray times must be non-negative")
    grid = grid or default_grid(tc.dim)
    if expand:
        grid = ray_grid(tc, max(times), grid)
    reference = guillemin_reference(base, grid)
    solver = GeodesicSolver(tc, guillemin_dual(base))
    volume_form_mass = math.factorial(base.dim) * float(volume(base))

    def sample_at(t: float) -> RaySample:
        point = solver.evaluate(grid.points, t)
        gradient_at = lambda p: solver.evaluate(p, t).gradient
        hessian = cell_average_hessian(gradient_at, grid)
        potential = _fiber_potential(base, grid, reference, point.value, point.gradient, hessian, None,
                                     name=f"geodesic t={t:g}")
        captured = math.factorial(base.dim) * gradient_image_volume(gradient_at, grid)
        check_mass(potential, volume_form_mass, captured=captured)
        return RaySample(t, potential, grid.reshape(point.velocity), grid.reshape(point.jacobian))

    logger.info(f"🔄 Building geodesic ray on {grid.shape} nodes for {len(times)} times")
    samples = tuple(sample_at(t) for t in times)
    certificate = _hessian_certificate(samples)
    logger.info(f"✅ Geodesic ray ready (Hessian bound {certificate['hessian_bound']:.4g})")
    return Ray(tc, samples, 'weak-geodesic', reference, compatibility='C11', certificate=certificate,
               sampler=sample_at)


# --------------------------------------------------
# Smooth compatible ray from the total space
# --------------------------------------------------

def _total_space_sampler(tc: TestConfigPL, twist, grid: LogGrid):
    """psi_Q(x, t) for the Guillemin potential of Q_C at all grid nodes and time t"""
    dual = guillemin_dual(total_polytope(tc, twist))

    def sample(t: float) -> DualSample:
        points = np.column_stack([grid.points, np.full(grid.size, t)])
        return dual.evaluate(points)

    return sample


def smooth_compatible_ray(tc: TestConfigPL, times: Sequence[float], grid: Optional[LogGrid] = None,
                          twist: Optional[Any] = None, expand: bool = True) -> Ray:
    """
    Smooth subgeodesic ray phi_t = psi_Q(., t) - t C - psi_ref from the Guillemin metric of Q_C.

    Raises:
        KstabValidationError: C <= max f
    """
    tc = tc if tc.normalized else validate_pl(tc)
    twist = default_twist(tc) if twist is None else parse_number(twist)
    if twist <= tc.maximum():
        raise KstabValidationError(f"Twist C={twist} must exceed max f = {tc.maximum()}")
    base = tc.base
    n = base.dim
    times = tuple(float(t) for t in times)
    grid = grid or default_grid(n)
    if expand:
        grid = ray_grid(tc, max(times), grid)
    reference = guillemin_reference(base, grid)
    evaluate = _total_space_sampler(tc, twist, grid)
    C = float(twist)
    volume_form_mass = math.factorial(n) * float(volume(base))

    def sample_at(t: float) -> RaySample:
        sample = evaluate(t)
        fiber = sample.hessian[:, :n, :n]
        potential = _fiber_potential(base, grid, reference, sample.value - t * C, sample.gradient[:, :n],
                                     fiber, None, name=f"smooth t={t:g}")
        check_mass(potential, volume_form_mass)
        velocity = sample.gradient[:, n] - C
        return RaySample(t, potential, grid.reshape(velocity), grid.reshape(sample.hessian))

    logger.info(f"🔄 Building smooth compatible ray from Q_C (C={twist}) on {grid.shape} nodes")
    samples = tuple(sample_at(t) for t in times)
    return Ray(tc, samples, 'smooth-compatible', reference, compatibility='smooth',
               certificate=_hessian_certificate(samples), sampler=sample_at)


# --------------------------------------------------
# Subgeodesic families
# --------------------------------------------------

def _central_difference(func: Callable[[float], float], t: float) -> float:
    """Derivative of func at t by a symmetric difference quotient"""
    step = RAY_CONFIG['derivative_step']
    return (func(t + step) - func(t - step)) / (2 * step)


def convex_combination_ray(p0: TorusPotential, p1: TorusPotential, sigma: Callable[[float], float],
                           dsigma: Callable[[float], float], times: Sequence[float],
                           reference: Optional[TorusPotential] = None) -> Ray:
    """psi_t = (1 - sigma(t)) psi_0 + sigma(t) psi_1; a subgeodesic when the (x, t) Hessian stays nonnegative"""
    if p0.gradient is None or p1.gradient is None:
        raise KstabValidationError("Convex combination rays need potentials with gradients")
    reference = reference or guillemin_reference(p0.polytope, p0.grid)
    n = p0.dim
    difference = p1.psi - p0.psi
    gradient_difference = p1.gradient - p0.gradient

    def sample_at(t: float) -> RaySample:
        s, ds, d2s = sigma(t), dsigma(t), _central_difference(dsigma, t)
        potential = combine_potentials(p0, p1, s, name=f"combination t={t:g}").relative_to(reference)
        jacobian = np.zeros(p0.grid.shape + (n + 1, n + 1))
        jacobian[..., :n, :n] = potential.hessian
        jacobian[..., :n, n] = jacobian[..., n, :n] = ds * gradient_difference
        jacobian[..., n, n] = d2s * difference
        return RaySample(float(t), potential, ds * difference, jacobian)

    samples = tuple(sample_at(float(t)) for t in times)
    return Ray(None, samples, 'subgeodesic', reference, sampler=sample_at)


def reparametrized_ray(ray: Ray, g: Callable[[float], float], dg: Callable[[float], float],
                       times: Optional[Sequence[float]] = None) -> Ray:
    """
    t -> psi_{g(t)}: a subgeodesic of the same fibers when g is convex and the velocity is nonnegative.

    The (x, t) Hessian transforms as [[H, g' m], [g' m, g'^2 w + g'' v]].
    """
    if ray.sampler is None:
        raise KstabValidationError("Ray cannot be re-sampled at new times")
    n = ray.grid.dim
    times = ray.times if times is None else tuple(float(t) for t in times)

    def sample_at(t: float) -> RaySample:
        base = ray.sampler(g(t))
        d1, d2 = dg(t), _central_difference(dg, t)
        J = base.jacobian.copy()
        J[..., :n, n] *= d1
        J[..., n, :n] *= d1
        J[..., n, n] = d1 ** 2 * base.jacobian[..., n, n] + d2 * base.velocity
        potential = base.potential
        return RaySample(float(t), potential, d1 * base.velocity, J)

    samples = tuple(sample_at(t) for t in times)
    return Ray(ray.tc, samples, 'subgeodesic', ray.reference, sampler=sample_at)


# --------------------------------------------------
# Certificates
# --------------------------------------------------

def _interior(values: np.ndarray, grid: LogGrid) -> np.ndarray:
    return values[tuple(slice(1, -1) for _ in range(grid.dim))]


def hmae_residual(ray: Ray) -> float:
    """
    sup over interior nodes and times of max(det J, 0) / (1 + |J|^2)^((n+1)/2),
    J the (x, t) Hessian of the total potential
    """
    if len(ray.samples) < 3:
        raise KstabValidationError(f"hmae_residual needs at least 3 times, got {len(ray.samples)}")
    grid = ray.grid
    n = grid.dim
    worst = 0.0
    for sample in ray.samples:
        J = _interior(sample.jacobian, grid)
        det = np.linalg.det(J)
        scale = (1.0 + np.sum(J ** 2, axis=(-1, -2))) ** ((n + 1) / 2)
        worst = max(worst, float(np.max(np.maximum(det, 0.0) / scale)))
    return worst


def subgeodesic_certificate(ray: Ray) -> float:
    """Smallest eigenvalue of the symmetrised (x, t) Hessian, relative to its size; >= 0 for subgeodesics"""
    grid = ray.grid
    worst = np.inf
    for sample in ray.samples:
        J = _interior(sample.jacobian, grid)
        J = 0.5 * (J + np.swapaxes(J, -1, -2))
        eigen = np.linalg.eigvalsh(J)
        worst = min(worst, float(np.min(eigen[..., 0] / (1.0 + np.abs(eigen).max(axis=-1)))))
    return worst


def hessian_bound(ray: Ray) -> float:
    """max over t of the sup norm of the fiber Hessian"""
    return _hessian_certificate(ray.samples)['hessian_bound']


def check_admissible_ray(ray: Ray) -> None:
    """omega_phi_t >= 0 at every time"""
    for potential in ray.potentials:
        check_admissible(potential)


def linf_distance(first: Ray, second: Ray) -> float:
    """sup_t |phi_t - phi'_t|_inf over the common times"""
    if first.grid != second.grid:
        raise KstabValidationError("Rays live on different grids")
    common = sorted(set(first.times) & set(second.times))
    if not common:
        raise KstabValidationError("Rays share no time")
    a = dict(zip(first.times, first.potentials))
    b = dict(zip(second.times, second.potentials))
    return max(float(np.abs(a[t].phi - b[t].phi).max()) for t in common)


def second_differences(times: Sequence[float], values: Sequence[float]) -> np.ndarray:
    """Second divided differences (scaled to match f'' ) of samples on a non-uniform grid"""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(t) < 3:
        raise KstabValidationError("Second differences need at least 3 samples")
    left = (v[1:-1] - v[:-2]) / (t[1:-1] - t[:-2])
    right = (v[2:] - v[1:-1]) / (t[2:] - t[1:-1])
    return 2.0 * (right - left) / (t[2:] - t[:-2])


# --------------------------------------------------
# Relative canonical volume forms
# --------------------------------------------------

@dataclass
class BetaFamily:
    """beta_t = log of the fiberwise volume form Omega^(n+1) / pi^* omega_P1, and xi_t = beta_t - log MA(omega)"""
    times: Tuple[float, ...]
    beta: Tuple[np.ndarray, ...]
    xi: Tuple[np.ndarray, ...]
    grid: LogGrid

    def integrals(self) -> List[float]:
        """int e^beta_t dx per time"""
        out = []
        for beta in self.beta:
            shift = float(beta.max())
            out.append(math.exp(shift) * self.grid.integrate(np.exp(beta - shift)))
        return out


def _log_fubini_study_density(t: float) -> float:
    """log of e^t / (1 + e^t)^2"""
    return -abs(t) - 2.0 * math.log1p(math.exp(-abs(t)))


def beta_family(tc: TestConfigPL, times: Sequence[float], grid: Optional[LogGrid] = None,
                twist: Optional[Any] = None, expand: bool = True) -> BetaFamily:
    """
    Fiberwise log-densities of the Guillemin volume form of Q_C relative to the Fubini-Study form of P^1.

    Only curves (n = 1) are supported.
    """
    tc = tc if tc.normalized else validate_pl(tc)
    if tc.dim != 1:
        raise KstabValidationError("beta_family is implemented for n = 1 only")
    twist = default_twist(tc) if twist is None else parse_number(twist)
    times = tuple(float(t) for t in times)
    grid = grid or default_grid(1)
    if expand:
        grid = ray_grid(tc, max(times), grid)
    reference = guillemin_reference(tc.base, grid)
    evaluate = _total_space_sampler(tc, twist, grid)
    factor = math.log(math.factorial(tc.dim + 1))
    beta, xi = [], []
    for t in times:
        value = grid.reshape(factor + evaluate(t).logdet - _log_fubini_study_density(t))
        beta.append(value)
        xi.append(value - reference.log_density())
    return BetaFamily(times, tuple(beta), tuple(xi), grid)


# --------------------------------------------------
# Dump
# --------------------------------------------------

def dump_ray(ray: Ray, path: Union[str, Path]) -> Path:
    """
    Binary column file: one JSON header line {n, box, resolution, times, kind},
    then float64 psi_t values in row-major grid order, one block per time.
    """
    path = Path(path)
    header = {
        'n': ray.grid.dim,
        'box': [list(side) for side in ray.grid.box],
        'resolution': list(ray.grid.resolution),
        'times': list(ray.times),
        'kind': ray.kind,
    }
    with open(path, 'wb') as handle:
        handle.write((json.dumps(header) + "\n").encode('utf-8'))
        for potential in ray.potentials:
            handle.write(np.ascontiguousarray(potential.psi, dtype='<f8').tobytes())
    logger.info(f"📊 Ray dump written to {path}")
    return path


def load_ray_dump(path: Union[str, Path]) -> Tuple[Dict[str, Any], np.ndarray]:
    """Header and values of shape (times, *resolution)"""
    with open(path, 'rb') as handle:
        header = json.loads(handle.readline().decode('utf-8'))
        values = np.frombuffer(handle.read(), dtype='<f8')
    shape = (len(header['times']),) + tuple(header['resolution'])
    if values.size != int(np.prod(shape)):
        raise KstabValidationError(f"Ray dump {path} holds {values.size} values, expected {int(np.prod(shape))}")
    return header, values.reshape(shape)
