import math

import numpy as np
import pytest

from functionals import monge_ampere_energy_value
from input_validator import GridTooSmallError, KstabValidationError
from potentials import default_grid, guillemin_dual, symplectic_perturbation, torus_pullback
from rays import (Ray, beta_family, check_admissible_ray, convex_combination_ray, dump_ray, geodesic_from_testconfig,
                  hessian_bound, hmae_residual, linf_distance, load_ray_dump, ray_grid, reparametrized_ray,
                  second_differences, smooth_compatible_ray, subgeodesic_certificate, time_grid)
from testconfig import trivial

TIMES = (0.0, 1.0, 2.0, 4.0, 8.0)


@pytest.fixture(scope="module")
def step_ray(step_tc):
    return geodesic_from_testconfig(step_tc, TIMES, default_grid(1, tail=26.0, resolution=4097))


def test_time_grid():
    assert time_grid(8) == (0.0, 1.0, 2.0, 4.0, 8.0)
    assert time_grid(27, base=3, include_zero=False) == (1.0, 3.0, 9.0, 27.0)
    with pytest.raises(KstabValidationError):
        time_grid(0.5)


def test_ray_grid_follows_the_mass(step_tc, linear_tc):
    base = default_grid(1, tail=26.0, resolution=257)
    grid = ray_grid([step_tc, linear_tc], 16.0, base)
    assert grid.box[0][0] == pytest.approx(-26.0)
    assert grid.box[0][1] >= 26.0 + 16.0
    assert grid.steps[0] == pytest.approx(base.steps[0])
    assert ray_grid(trivial(step_tc.base), 16.0, base) == base


def test_trivial_ray_stays_at_the_reference(p1, grid_1d):
    ray = geodesic_from_testconfig(trivial(p1), (0.0, 1.0, 2.0), grid_1d)
    for potential in ray.potentials:
        assert np.max(np.abs(potential.phi)) < 1e-12


def test_linear_ray_is_a_torus_translation(linear_tc, grid_1d):
    ray = geodesic_from_testconfig(linear_tc, (0.0, 1.0, 4.0), grid_1d)
    dual = guillemin_dual(linear_tc.base)
    points = ray.grid.points
    for t, potential in zip(ray.times, ray.potentials):
        expected = dual.evaluate(points - t).value
        assert np.max(np.abs(potential.psi - expected)) < 1e-9
    assert ray.kind == 'weak-geodesic' and ray.compatibility == 'C11'


def test_geodesic_solves_the_homogeneous_equation(step_ray):
    assert hmae_residual(step_ray) <= 1e-6
    assert subgeodesic_certificate(step_ray) >= -1e-8
    check_admissible_ray(step_ray)
    assert hessian_bound(step_ray) <= 0.25 + 1e-9


def test_energy_is_affine_with_slope_e_na(step_ray):
    reference = step_ray.reference
    values = [monge_ampere_energy_value(p, reference) for p in step_ray.potentials]
    assert np.max(np.abs(second_differences(step_ray.times, values))) < 1e-5
    assert values[-1] / step_ray.times[-1] == pytest.approx(-1 / 8, abs=1e-4)


def test_velocity_is_minus_f_of_the_gradient(step_tc, step_ray):
    sample = step_ray.samples[-1]
    gradient = sample.potential.gradient.reshape(-1, 1)
    assert np.max(np.abs(sample.velocity.ravel() + step_tc.evaluate(gradient))) < 1e-9


def test_small_box_without_expansion(step_tc):
    grid = default_grid(1, tail=26.0, resolution=1025)
    with pytest.raises(GridTooSmallError):
        geodesic_from_testconfig(step_tc, (0.0, 1.0, 64.0), grid, expand=False)


def test_hmae_residual_needs_three_times(step_tc, grid_1d):
    ray = geodesic_from_testconfig(step_tc, (0.0, 1.0), grid_1d)
    with pytest.raises(KstabValidationError):
        hmae_residual(ray)


def test_negative_times_are_rejected(step_tc, grid_1d):
    with pytest.raises(KstabValidationError):
        geodesic_from_testconfig(step_tc, (-1.0, 0.0), grid_1d)


def test_smooth_ray_is_a_subgeodesic(step_tc, step_ray):
    smooth = smooth_compatible_ray(step_tc, TIMES, step_ray.grid, expand=False)
    assert smooth.kind == 'smooth-compatible' and smooth.compatibility == 'smooth'
    assert subgeodesic_certificate(smooth) >= -1e-8
    # compatible rays stay a bounded distance apart
    assert linf_distance(smooth, step_ray) < 10.0
    with pytest.raises(KstabValidationError):
        smooth_compatible_ray(step_tc, TIMES, step_ray.grid, twist="1/2", expand=False)


def test_linf_distance_needs_the_same_grid(step_ray, step_tc):
    other = geodesic_from_testconfig(step_tc, (0.0, 1.0), default_grid(1, tail=26.0, resolution=1025))
    with pytest.raises(KstabValidationError):
        linf_distance(step_ray, other)


def test_convex_combination_and_reparametrization(p1, grid_1d):
    start = torus_pullback(p1, grid_1d, [0.0])
    end = symplectic_perturbation(p1, grid_1d, [[0.3]])
    sigma = lambda t: 1.0 - math.exp(-t)
    dsigma = lambda t: math.exp(-t)
    ray = convex_combination_ray(start, end, sigma, dsigma, (0.0, 0.5, 1.0))
    assert ray.kind == 'subgeodesic' and ray.compatibility is None
    assert np.allclose(ray.potentials[-1].psi, (1 - sigma(1.0)) * start.psi + sigma(1.0) * end.psi)
    # time-time entry of the (x, t) Hessian is sigma''(t) (psi_1 - psi_0)
    np.testing.assert_allclose(ray.samples[-1].jacobian[..., 1, 1], -math.exp(-1.0) * (end.psi - start.psi),
                               rtol=1e-6, atol=1e-9)
    faster = reparametrized_ray(ray, lambda t: 2.0 * t, lambda t: 2.0, times=(0.0, 0.25, 0.5))
    assert np.allclose(faster.potentials[-1].psi, ray.potentials[-1].psi)
    assert np.allclose(faster.samples[-1].velocity, 2.0 * ray.samples[-1].velocity)


def test_ray_times_must_increase(step_ray):
    with pytest.raises(KstabValidationError):
        Ray(None, tuple(reversed(step_ray.samples)), 'weak-geodesic', step_ray.reference)
    with pytest.raises(KstabValidationError):
        Ray(None, step_ray.samples, 'spiral', step_ray.reference)


def test_dump_layout(step_ray, tmp_path):
    path = dump_ray(step_ray, tmp_path / "ray.bin")
    with open(path, 'rb') as handle:
        first_line = handle.readline()
    assert first_line.startswith(b'{"n": 1')
    header, values = load_ray_dump(path)
    assert header['times'] == list(TIMES)
    assert header['kind'] == 'weak-geodesic'
    assert values.shape == (len(TIMES),) + step_ray.grid.shape
    assert np.array_equal(values[2], step_ray.potentials[2].psi)


def test_truncated_dump_is_rejected(step_ray, tmp_path):
    path = dump_ray(step_ray, tmp_path / "ray.bin")
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(KstabValidationError):
        load_ray_dump(path)


def test_beta_family_of_the_step(step_tc, step_ray):
    beta = beta_family(step_tc, TIMES, step_ray.grid, expand=False)
    integrals = beta.integrals()
    assert len(integrals) == len(TIMES)
    assert all(value > 0 and math.isfinite(value) for value in integrals)
    assert beta.xi[0].shape == step_ray.grid.shape


def test_beta_family_is_for_curves(corner_tc):
    with pytest.raises(KstabValidationError):
        beta_family(corner_tc, TIMES)


@pytest.mark.slow
def test_surface_geodesic(corner_tc, grid_2d):
    ray = geodesic_from_testconfig(corner_tc, (0.0, 1.0, 2.0, 4.0), grid_2d)
    assert hmae_residual(ray) <= 1e-6
    reference = ray.reference
    values = [monge_ampere_energy_value(p, reference) for p in ray.potentials]
    assert values[-1] / 4.0 == pytest.approx(-1 / 6, abs=5e-3)


@pytest.mark.slow
def test_surface_geodesic_on_the_default_grid(corner_tc):
    # cell-averaged Hessians lose about 5e-7 of the mass here; the box itself loses far less
    ray = geodesic_from_testconfig(corner_tc, time_grid(8, 2))
    assert ray.grid.resolution[0] >= 257
    for potential in ray.potentials:
        assert potential.mass() == pytest.approx(2.0, abs=1e-4)


def test_non_reduced_ray_hessian(half_step_tc, grid_1d):
    ray = geodesic_from_testconfig(half_step_tc, (0.0, 1.0, 2.0), grid_1d)
    assert hmae_residual(ray) <= 1e-6
