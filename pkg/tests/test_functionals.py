import math

import numpy as np
import pytest

from functionals import (EnergySuite, FunctionalValue, aubin_j, aubin_j_value, deligne, directional_derivative,
                         energy_suite, entropy_lower_bound, entropy_value, etheta_value, form_slot, gamma_gap,
                         mabuchi, mabuchi_proxy_value, mabuchi_value, monge_ampere_energy,
                         monge_ampere_energy_value, potential_slot, second_variation)
from input_validator import KstabValidationError
from potentials import guillemin_reference, ricci_potential, symplectic_perturbation, torus_pullback


@pytest.fixture(scope="module")
def p1_setup(p1, grid_1d):
    reference = guillemin_reference(p1, grid_1d)
    return reference, ricci_potential(reference)


@pytest.fixture(scope="module")
def square_setup(square, grid_2d):
    reference = guillemin_reference(square, grid_2d)
    return reference, ricci_potential(reference)


def test_functionals_vanish_at_the_reference(p1_setup):
    reference, ricci = p1_setup
    assert monge_ampere_energy_value(reference, reference) == 0
    assert aubin_j_value(reference, reference) == 0
    assert entropy_value(reference, reference) == 0
    assert mabuchi_value(reference, ricci, reference) == 0


def test_constant_shift(p1, grid_1d, p1_setup):
    reference, ricci = p1_setup
    potential = symplectic_perturbation(p1, grid_1d, [[0.3]])
    shifted = potential.shifted(1.5)
    assert monge_ampere_energy_value(shifted, reference) == pytest.approx(
        monge_ampere_energy_value(potential, reference) + 1.5, abs=1e-10)
    assert aubin_j_value(shifted, reference) == pytest.approx(aubin_j_value(potential, reference), abs=1e-10)
    assert mabuchi_value(shifted, ricci, reference) == pytest.approx(
        mabuchi_value(potential, ricci, reference), abs=1e-9)


def test_mabuchi_is_invariant_under_torus_pullback(p1, grid_1d, p1_setup):
    """Fubini-Study is cscK, so the K-energy is constant on its torus orbit"""
    reference, ricci = p1_setup
    for shift in (0.5, 2.0):
        assert mabuchi_value(torus_pullback(p1, grid_1d, [shift]), ricci, reference) == pytest.approx(0.0, abs=1e-6)


def test_j_and_entropy_are_nonnegative(p1, square, grid_1d, grid_2d, p1_setup, square_setup):
    cases = [(symplectic_perturbation(p1, grid_1d, [[0.4]]), p1_setup[0]),
             (torus_pullback(p1, grid_1d, [3.0]), p1_setup[0]),
             (symplectic_perturbation(square, grid_2d, [[0.4, 0.1], [0.1, 0.2]]), square_setup[0])]
    for potential, reference in cases:
        assert aubin_j_value(potential, reference) > 0
        assert entropy_value(potential, reference) > 0


def test_deligne_is_symmetric(p1, grid_1d, p1_setup):
    reference, _ = p1_setup
    first = potential_slot(torus_pullback(p1, grid_1d, [1.0]), reference)
    second = potential_slot(symplectic_perturbation(p1, grid_1d, [[0.3]]), reference)
    forward, backward = deligne([first, second]), deligne([second, first])
    assert forward == pytest.approx(backward, rel=1e-8, abs=1e-10)


def test_deligne_is_symmetric_on_surfaces(square, grid_2d, square_setup):
    reference, _ = square_setup
    slots = [potential_slot(torus_pullback(square, grid_2d, [0.5, -0.5]), reference),
             potential_slot(symplectic_perturbation(square, grid_2d, [[0.3, 0.0], [0.0, 0.1]]), reference),
             potential_slot(reference, reference)]
    values = [deligne([slots[a], slots[b], slots[c]]) for a, b, c in ((0, 1, 2), (2, 0, 1), (1, 2, 0))]
    assert max(values) - min(values) < 1e-7 * (1 + abs(values[0]))


def test_change_of_function(p1, grid_1d, p1_setup):
    reference, _ = p1_setup
    before = torus_pullback(p1, grid_1d, [1.0])
    after = symplectic_perturbation(p1, grid_1d, [[0.3]])
    other = potential_slot(torus_pullback(p1, grid_1d, [-0.5]), reference)
    change = deligne([potential_slot(after, reference), other]) - deligne([potential_slot(before, reference), other])
    expected = grid_1d.integrate((after.phi - before.phi) * other.omega[..., 0, 0])
    assert change == pytest.approx(expected, rel=1e-8, abs=1e-10)


def test_deligne_reproduces_e_and_j(p1, grid_1d, p1_setup):
    reference, _ = p1_setup
    potential = symplectic_perturbation(p1, grid_1d, [[0.3]], [0.1])
    slot = potential_slot(potential, reference)
    energy = monge_ampere_energy_value(potential, reference)
    assert deligne([slot, slot]) / 2 == pytest.approx(energy, abs=1e-10)
    zero = potential_slot(reference, reference)
    assert deligne([slot, zero]) - energy == pytest.approx(aubin_j_value(potential, reference), abs=1e-10)


def test_deligne_slot_count(p1_setup):
    reference, _ = p1_setup
    slot = potential_slot(reference, reference)
    with pytest.raises(KstabValidationError):
        deligne([slot])


def test_etheta_of_ricci_form(p1, grid_1d, p1_setup):
    reference, ricci = p1_setup
    potential = torus_pullback(p1, grid_1d, [1.0])
    slot = potential_slot(potential, reference)
    value = etheta_value(ricci.hessian, potential, reference)
    assert value == pytest.approx(deligne([form_slot(ricci.hessian, grid_1d), slot]), abs=1e-10)
    assert value == pytest.approx(grid_1d.integrate(potential.phi * ricci.hessian[..., 0, 0]), abs=1e-10)


def test_values_carry_quadrature_errors(p1, grid_1d, p1_setup):
    reference, ricci = p1_setup
    potential = symplectic_perturbation(p1, grid_1d, [[0.3]])
    energy = monge_ampere_energy(potential, reference)
    assert isinstance(energy, FunctionalValue)
    assert 0 <= energy.quadrature_error < 1e-6
    assert float(energy) == energy.value
    assert not math.isnan(aubin_j(potential, reference).quadrature_error)
    assert mabuchi(potential, ricci, reference).value == pytest.approx(mabuchi_value(potential, ricci, reference))


def test_energy_suite_combines_into_mabuchi(p1, grid_1d, p1_setup):
    reference, ricci = p1_setup
    suite = energy_suite(symplectic_perturbation(p1, grid_1d, [[0.3]]), ricci, reference)
    assert isinstance(suite, EnergySuite)
    values = suite.as_dict()
    assert values['M'] == pytest.approx(2.0 * values['E'] - values['ERic'] + values['entropy'], abs=1e-6)


def test_gamma_gap_vanishes_for_the_log_density(p1, grid_1d, p1_setup):
    reference, ricci = p1_setup
    potential = symplectic_perturbation(p1, grid_1d, [[0.3]])
    xi = potential.log_density() - reference.log_density()
    assert gamma_gap(potential, xi, ricci, reference) == pytest.approx(0.0, abs=1e-12)
    assert mabuchi_proxy_value(potential, xi, ricci, reference) == pytest.approx(
        mabuchi_value(potential, ricci, reference), abs=1e-6)


def test_proxy_vanishes_at_the_reference(p1_setup, grid_1d):
    reference, ricci = p1_setup
    assert mabuchi_proxy_value(reference, np.zeros(grid_1d.shape), ricci, reference) == 0
    with pytest.raises(KstabValidationError):
        mabuchi_proxy_value(reference, np.full(grid_1d.shape, np.inf), ricci, reference)


def test_entropy_lower_bound_is_jensen(grid_1d, p1_setup):
    reference, _ = p1_setup
    beta = reference.log_density()
    assert entropy_lower_bound(beta, grid_1d, 1.0) == pytest.approx(0.0, abs=1e-9)
    assert entropy_lower_bound(beta + math.log(2.0), grid_1d, 1.0) == pytest.approx(-math.log(2.0), abs=1e-9)


def test_directional_derivative_matches_finite_difference(p1, grid_1d, p1_setup):
    reference, ricci = p1_setup

    def member(s):
        return symplectic_perturbation(p1, grid_1d, [[0.3 + s]])

    eps = 1e-3
    plus, minus, center = member(eps), member(-eps), member(0.0)
    # u_s = u_ref + (0.3 + s) y^2 / 2, so udot o grad(psi) = grad(psi)^2 / 2
    direction = 0.5 * center.gradient[..., 0] ** 2
    psidot = (plus.psi - minus.psi) / (2 * eps)
    np.testing.assert_allclose(psidot, -direction, rtol=1e-5, atol=1e-8)
    difference = (mabuchi_value(plus, ricci, reference) - mabuchi_value(minus, ricci, reference)) / (2 * eps)
    derivative = directional_derivative(center, direction, ricci, reference)
    assert derivative == pytest.approx(difference, rel=1e-3, abs=1e-6)
    assert derivative != pytest.approx(0.0, abs=1e-4)


def test_second_variation_is_the_fiber_integral(p1, grid_1d, p1_setup):
    reference, _ = p1_setup

    def family(t):
        return symplectic_perturbation(p1, grid_1d, [[0.3 + 0.2 * t]])

    def pairing(t):
        slot = potential_slot(family(t), reference)
        return deligne([slot, slot])

    h = 0.05
    t = 0.5
    numeric = (pairing(t + h) - 2 * pairing(t) + pairing(t - h)) / h ** 2
    assert second_variation([family, family], t, dt=1e-3) == pytest.approx(numeric, rel=1e-3, abs=1e-6)
