#!/usr/bin/env python3
"""
Energy Functionals
==================

Multivariate (Deligne) energy and its specialisations on sampled torus-invariant potentials:
Monge-Ampère energy E, twisted energy E^theta, Aubin J, relative entropy, the Mabuchi
K-energy through the Chen-Tian decomposition M = Sbar E - E^Ric + H, and the M_B proxy
built from a family of volume-form potentials.

Every quadrature is a trapezoid sum with exactly rounded reduction on the slots' common grid.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from input_validator import EntropyError, KstabValidationError
from potentials import (LogGrid, RicciData, TorusPotential, coarsen_potential, grid_hessian,
                        guillemin_reference, ma_density, mixed_discriminant, scalar_curvature, sbar_quadrature)

logger = logging.getLogger(__name__)

FUNCTIONAL_CONFIG = {
    'density_floor': 1e-300,
    'time_step': 1e-3,
}

FUNCTIONAL_NAMES = ('deligne', 'E', 'Etheta', 'J', 'entropy', 'M', 'MB')


@dataclass
class FunctionalValue:
    """A functional value with its quadrature error estimate (|fine - coarse| over one refinement)"""
    name: str
    value: float
    quadrature_error: float = float('nan')

    def __float__(self) -> float:
        return self.value


@dataclass
class DeligneSlot:
    """One slot of the multivariate energy: reference form theta, relative potential phi, omega = theta + dd^c phi"""
    theta: np.ndarray
    phi: np.ndarray
    grid: LogGrid
    omega: Optional[np.ndarray] = None


def potential_slot(potential: TorusPotential, reference: Optional[TorusPotential] = None) -> DeligneSlot:
    """Slot (theta_ref, phi, omega_phi) of a potential; the reference defaults to the Guillemin metric of its polytope"""
    reference = reference or guillemin_reference(potential.polytope, potential.grid)
    return DeligneSlot(theta=reference.hessian, phi=potential.phi, grid=potential.grid, omega=potential.hessian)


def form_slot(theta: np.ndarray, grid: LogGrid, phi: Optional[np.ndarray] = None) -> DeligneSlot:
    """Slot of a closed form given by its Hessian field, with an optional relative potential"""
    phi = np.zeros(grid.shape) if phi is None else grid.reshape(np.asarray(phi, dtype=float))
    omega = theta if not np.any(phi) else theta + grid_hessian(phi, grid)
    return DeligneSlot(theta=theta, phi=phi, grid=grid, omega=omega)


def _check_slots(slots: Sequence[DeligneSlot]) -> LogGrid:
    grids = {slot.grid for slot in slots}
    if len(grids) != 1:
        raise KstabValidationError("Deligne slots live on different grids")
    grid = grids.pop()
    if grid.dim not in (1, 2):
        raise KstabValidationError("Quadrature supports dimensions 1 and 2 only")
    if len(slots) != grid.dim + 1:
        raise KstabValidationError(f"Deligne functional in dimension {grid.dim} needs {grid.dim + 1} slots")
    return grid


def deligne(slots: Sequence[DeligneSlot]) -> float:
    """
    <phi_0, ..., phi_n> = sum_i int phi_i n! D(theta_0, ..., theta_{i-1}, omega_{i+1}, ..., omega_n) dx

    Symmetric in the slots and satisfies the change-of-function identity
    <phi_0', ...> - <phi_0, ...> = int (phi_0' - phi_0) prod_{i>0} omega_i.
    """
    grid = _check_slots(slots)
    n = grid.dim
    total = []
    for i, slot in enumerate(slots):
        if not np.any(slot.phi):
            continue
        forms = [slots[k].theta for k in range(i)] + [slots[k].omega for k in range(i + 1, n + 1)]
        if any(form is None for form in forms):
            raise KstabValidationError(f"Slot {i} needs the curvature forms of the other slots")
        density = math.factorial(n) * mixed_discriminant(forms)
        total.append(grid.integrate(slot.phi * density))
    return math.fsum(total)


def _volume(reference: TorusPotential) -> float:
    return reference.mass()


def _reference_for(potential: TorusPotential, reference: Optional[TorusPotential]) -> TorusPotential:
    return reference or guillemin_reference(potential.polytope, potential.grid)


def monge_ampere_energy_value(potential: TorusPotential, reference: Optional[TorusPotential] = None) -> float:
    """E = (n+1)^{-1} V^{-1} sum_j int phi MA(omega^j, omega_phi^(n-j))"""
    reference = _reference_for(potential, reference)
    n = potential.dim
    grid = potential.grid
    parts = []
    for j in range(n + 1):
        slots = [reference] * j + [potential] * (n - j)
        parts.append(grid.integrate(potential.phi * ma_density(slots)))
    return math.fsum(parts) / ((n + 1) * _volume(reference))


def etheta_value(theta: np.ndarray, potential: TorusPotential, reference: Optional[TorusPotential] = None) -> float:
    """E^theta = V^{-1} <0, phi, ..., phi>_(theta, omega, ..., omega)"""
    reference = _reference_for(potential, reference)
    slot = potential_slot(potential, reference)
    slots = [form_slot(theta, potential.grid)] + [slot] * potential.dim
    return deligne(slots) / _volume(reference)


def aubin_j_value(potential: TorusPotential, reference: Optional[TorusPotential] = None) -> float:
    """J = V^{-1} int phi MA(omega) - E"""
    reference = _reference_for(potential, reference)
    mean = potential.grid.integrate(potential.phi * reference.density()) / _volume(reference)
    return mean - monge_ampere_energy_value(potential, reference)


def entropy_value(potential: TorusPotential, reference: Optional[TorusPotential] = None) -> float:
    """
    Relative entropy V^{-1} int rho_phi log(rho_phi / rho_ref) dx of the normalized Monge-Ampère measures.

    Raises:
        EntropyError: the integrand is not finite at some node
    """
    reference = _reference_for(potential, reference)
    density = potential.density()
    log_ratio = potential.log_density() - reference.log_density()
    integrand = np.where(density < FUNCTIONAL_CONFIG['density_floor'], 0.0, density * log_ratio)
    bad = ~np.isfinite(integrand)
    if bad.any():
        index = np.unravel_index(int(np.argmax(bad)), potential.grid.shape)
        location = potential.grid.points[np.ravel_multi_index(index, potential.grid.shape)]
        raise EntropyError(f"Entropy integrand not finite at node {index} (x={location.tolist()})")
    return potential.grid.integrate(integrand) / _volume(reference)


def mabuchi_value(potential: TorusPotential, ricci: RicciData, reference: Optional[TorusPotential] = None) -> float:
    """Chen-Tian formula M = Sbar E - E^Ric + H"""
    reference = _reference_for(potential, reference)
    sbar = sbar_quadrature(ricci, reference)
    energy = monge_ampere_energy_value(potential, reference)
    ricci_energy = etheta_value(ricci.hessian, potential, reference)
    return sbar * energy - ricci_energy + entropy_value(potential, reference)


def mabuchi_proxy_value(potential: TorusPotential, xi: np.ndarray, ricci: RicciData,
                        reference: Optional[TorusPotential] = None) -> float:
    """M_B = Sbar E + V^{-1} <xi_B, phi, ..., phi>_(-Ric, omega, ..., omega)"""
    reference = _reference_for(potential, reference)
    xi = potential.grid.reshape(np.asarray(xi, dtype=float))
    if not np.all(np.isfinite(xi)):
        raise KstabValidationError("Volume-form potential is not finite on the grid")
    sbar = sbar_quadrature(ricci, reference)
    slots = [DeligneSlot(theta=-ricci.hessian, phi=xi, grid=potential.grid)] + \
        [potential_slot(potential, reference)] * potential.dim
    return sbar * monge_ampere_energy_value(potential, reference) + deligne(slots) / _volume(reference)


# --------------------------------------------------
# Values with quadrature error estimates
# --------------------------------------------------

def _coarsen_ricci(ricci: RicciData) -> RicciData:
    grid = ricci.grid
    return replace(ricci, r=grid.restrict(ricci.r), hessian=grid.restrict(ricci.hessian), grid=grid.coarsened(),
                   gradient=None if ricci.gradient is None else grid.restrict(ricci.gradient))


def _with_error(name: str, func: Callable[..., float], potential: TorusPotential,
                reference: Optional[TorusPotential], *extra) -> FunctionalValue:
    reference = _reference_for(potential, reference)
    value = func(potential, *extra, reference)
    try:
        coarse_extra = [_coarsen_ricci(e) if isinstance(e, RicciData)
                        else (potential.grid.restrict(e) if isinstance(e, np.ndarray) else e) for e in extra]
        coarse = func(coarsen_potential(potential), *coarse_extra, coarsen_potential(reference))
        error = abs(value - coarse)
    except KstabValidationError:
        error = float('nan')
    return FunctionalValue(name, value, error)


def monge_ampere_energy(potential: TorusPotential, reference: Optional[TorusPotential] = None) -> FunctionalValue:
    return _with_error('E', monge_ampere_energy_value, potential, reference)


def aubin_j(potential: TorusPotential, reference: Optional[TorusPotential] = None) -> FunctionalValue:
    return _with_error('J', aubin_j_value, potential, reference)


def entropy(potential: TorusPotential, reference: Optional[TorusPotential] = None) -> FunctionalValue:
    return _with_error('entropy', entropy_value, potential, reference)


def etheta(theta: np.ndarray, potential: TorusPotential, reference: Optional[TorusPotential] = None) -> FunctionalValue:
    func = lambda pot, th, ref: etheta_value(th, pot, ref)
    return _with_error('Etheta', func, potential, reference, potential.grid.reshape(theta))


def mabuchi(potential: TorusPotential, ricci: RicciData, reference: Optional[TorusPotential] = None) -> FunctionalValue:
    return _with_error('M', mabuchi_value, potential, reference, ricci)


def mabuchi_proxy(potential: TorusPotential, xi: np.ndarray, ricci: RicciData,
                  reference: Optional[TorusPotential] = None) -> FunctionalValue:
    """M_B along a ray at one time, xi = beta_t - log omega^n sampled on the grid"""
    func = lambda pot, x, ric, ref: mabuchi_proxy_value(pot, x, ric, ref)
    return _with_error('MB', func, potential, reference, potential.grid.reshape(np.asarray(xi, dtype=float)), ricci)


@dataclass
class EnergySuite:
    """Energy functionals of one potential"""
    E: FunctionalValue
    ERic: FunctionalValue
    J: FunctionalValue
    entropy: FunctionalValue
    M: FunctionalValue

    def as_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name).value for name in ('E', 'ERic', 'J', 'entropy', 'M')}


def energy_suite(potential: TorusPotential, ricci: RicciData,
                 reference: Optional[TorusPotential] = None) -> EnergySuite:
    """E, E^Ric, J, entropy and M of one potential"""
    reference = _reference_for(potential, reference)
    energy = monge_ampere_energy(potential, reference)
    ricci_energy = etheta(ricci.hessian, potential, reference)
    ricci_energy.name = 'ERic'
    aubin = aubin_j(potential, reference)
    ent = entropy(potential, reference)
    sbar = sbar_quadrature(ricci, reference)
    value = sbar * energy.value - ricci_energy.value + ent.value
    error = abs(sbar) * energy.quadrature_error + ricci_energy.quadrature_error + ent.quadrature_error
    return EnergySuite(energy, ricci_energy, aubin, ent, FunctionalValue('M', value, error))


# --------------------------------------------------
# Variations
# --------------------------------------------------

def mabuchi_gradient(potential: TorusPotential, ricci: RicciData,
                     reference: Optional[TorusPotential] = None) -> np.ndarray:
    """
    Euler-Lagrange density V^{-1} (S(omega_phi) - Sbar) MA(phi) of M, paired with the symplectic
    variation v = udot o grad(psi). The Kähler variation is psidot = -v.
    """
    reference = _reference_for(potential, reference)
    sbar = sbar_quadrature(ricci, reference)
    return (scalar_curvature(potential) - sbar) * potential.density() / _volume(reference)


def directional_derivative(potential: TorusPotential, direction: np.ndarray, ricci: RicciData,
                           reference: Optional[TorusPotential] = None) -> float:
    """dM(phi)[v] = V^{-1} int v (S - Sbar) MA, with v = udot o grad(psi) sampled on the grid"""
    direction = potential.grid.reshape(np.asarray(direction, dtype=float))
    return potential.grid.integrate(direction * mabuchi_gradient(potential, ricci, reference))


def time_hessian(family: Callable[[float], TorusPotential], t: float, dt: Optional[float] = None) -> np.ndarray:
    """(n+1)x(n+1) Hessian in (x, t) of a one-parameter family psi_t at time t"""
    dt = dt or FUNCTIONAL_CONFIG['time_step']
    before, center, after = family(t - dt), family(t), family(t + dt)
    n = center.dim
    if center.gradient is None or before.gradient is None or after.gradient is None:
        raise KstabValidationError("Family members need gradients for the mixed (x, t) derivatives")
    out = np.zeros(center.grid.shape + (n + 1, n + 1))
    out[..., :n, :n] = center.hessian
    mixed = (after.gradient - before.gradient) / (2 * dt)
    out[..., :n, n] = mixed
    out[..., n, :n] = mixed
    out[..., n, n] = (after.psi - 2 * center.psi + before.psi) / dt ** 2
    return out


def second_variation(families: Sequence[Callable[[float], TorusPotential]], t: float,
                     dt: Optional[float] = None) -> float:
    """
    d^2/dt^2 <phi_0^t, ..., phi_n^t> as the fiber integral (n+1)! int D(D^2 Psi_0, ..., D^2 Psi_n) dx
    of the (x, t) Hessians of the total potentials.
    """
    hessians = [time_hessian(family, t, dt) for family in families]
    grid = families[0](t).grid
    if len(hessians) != grid.dim + 1:
        raise KstabValidationError(f"Second variation in dimension {grid.dim} needs {grid.dim + 1} families")
    return grid.integrate(math.factorial(grid.dim + 1) * mixed_discriminant(hessians))


# --------------------------------------------------
# M - M_B gap
# --------------------------------------------------

def gamma_gap(potential: TorusPotential, xi: np.ndarray, ricci: RicciData,
              reference: Optional[TorusPotential] = None) -> float:
    """Gamma = M - M_B = H - V^{-1} int xi_B MA(phi)"""
    reference = _reference_for(potential, reference)
    xi = potential.grid.reshape(np.asarray(xi, dtype=float))
    return entropy_value(potential, reference) - potential.grid.integrate(xi * potential.density()) / _volume(reference)


def entropy_lower_bound(beta: np.ndarray, grid: LogGrid, volume: float) -> float:
    """-log(V^{-1} int e^beta dx), a lower bound for Gamma by Jensen's inequality"""
    beta = grid.reshape(np.asarray(beta, dtype=float))
    shift = float(beta.max())
    return -(shift + math.log(grid.integrate(np.exp(beta - shift)) / volume))
