import math
from fractions import Fraction

import numpy as np
import pandas as pd
import pytest

from input_validator import CertificateMissingError, KstabValidationError
from potentials import default_grid, symplectic_perturbation, torus_pullback
from rays import beta_family, convex_combination_ray, geodesic_from_testconfig, smooth_compatible_ray, time_grid
from slopes import (ROW_COLUMNS, SCAN_COLUMNS, deligne_profile, growth_exponent, log_growth_ratio, make_row,
                    parse_slope_set, scan_candidates, semistability_scan, slope_estimate,
                    uniform_stability_ratio, verify_growth, verify_theorem_B, verify_theorem_C, verify_weak_C)


def test_slope_of_an_affine_profile():
    samples = [(t, 3.0 - 0.5 * t) for t in (0.0, 1.0, 2.0, 4.0, 8.0)]
    estimate = slope_estimate(samples, name="E")
    assert estimate.slope == pytest.approx(-0.5, abs=1e-12)
    assert estimate.intercept == pytest.approx(3.0, abs=1e-12)
    assert estimate.error_bar < 1e-12
    assert estimate.stabilized


def test_richardson_removes_a_one_over_t_term():
    # doubling times turn 3 log t into increments 2 + b / tau
    samples = [(t, 2.0 * t + 3.0 * math.log(t)) for t in (1.0, 2.0, 4.0, 8.0, 16.0, 32.0)]
    estimate = slope_estimate(samples)
    assert estimate.slope == pytest.approx(2.0, abs=1e-9)
    assert abs(estimate.increments[-1] - 2.0) > 1e-2


def test_slope_estimate_rejects_short_or_bad_profiles():
    with pytest.raises(KstabValidationError):
        slope_estimate([(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)])
    with pytest.raises(KstabValidationError):
        slope_estimate([(0.0, 0.0), (2.0, 1.0), (1.0, 2.0), (4.0, 3.0)])
    with pytest.raises(KstabValidationError):
        slope_estimate([(0.0, 0.0), (1.0, 1.0), (2.0, math.nan), (4.0, 3.0)])


def test_make_row():
    row = make_row("twist", "case:DF", 0.25, 0.25 + 1e-12, 1e-10)
    assert list(row) == ROW_COLUMNS
    assert row['pass'] and row['abs_diff'] == pytest.approx(1e-12)
    forced = make_row("weakC", "case", 1.0, 0.0, 1e-6, passed=False, note="forced")
    assert not forced['pass'] and forced['note'] == "forced"
    assert make_row("x", "y", Fraction(1, 3), 0.0, 0.5)['lhs'] == pytest.approx(1 / 3)


@pytest.fixture(scope="module")
def curve_rays(step_tc, half_step_tc):
    times = time_grid(64, 2)
    grid = default_grid(1, tail=26.0, resolution=4097)
    return {name: geodesic_from_testconfig(tc, times, grid)
            for name, tc in (("step", step_tc), ("half-step", half_step_tc))}


@pytest.mark.slow
def test_energy_slopes_on_p1(step_tc, curve_rays):
    rows = verify_theorem_B([step_tc], [curve_rays["step"]], ["step"])
    assert [row['case'] for row in rows] == ["step:deligne", "step:E", "step:J"]
    assert all(row['pass'] for row in rows), rows
    by_case = {row['case']: row for row in rows}
    assert by_case["step:deligne"]['rhs'] == pytest.approx(-0.25)
    assert by_case["step:E"]['lhs'] == pytest.approx(-1 / 8, abs=1e-3)
    assert by_case["step:J"]['lhs'] == pytest.approx(1 / 8, abs=1e-3)


@pytest.mark.slow
def test_mabuchi_slopes_on_p1(step_tc, half_step_tc, curve_rays):
    step_rows = verify_theorem_C(step_tc, curve_rays["step"], "step")
    half_rows = verify_theorem_C(half_step_tc, curve_rays["half-step"], "half-step")
    for row in step_rows + half_rows:
        assert row['pass'], row
    half = {row['case']: row for row in half_rows}
    assert half["half-step:M~MNA"]['rhs'] == pytest.approx(1 / 8)
    assert half["half-step:M<=DF"]['rhs'] == pytest.approx(3 / 8)
    assert half["half-step:DF-M~|correction|"]['rhs'] == pytest.approx(1 / 4)


@pytest.mark.slow
def test_proxy_and_gap_slopes_on_p1(half_step_tc, curve_rays):
    ray = curve_rays["half-step"]
    times = ray.times
    smooth = smooth_compatible_ray(half_step_tc, times, ray.grid, expand=False)
    beta = beta_family(half_step_tc, times, ray.grid, expand=False)
    rows = verify_theorem_C(half_step_tc, ray, "half-step", smooth_ray=smooth, beta=beta)
    extra = {row['case']: row for row in rows[3:]}
    assert set(extra) == {"half-step:MB~DF", "half-step:Gamma~correction"}
    assert extra["half-step:MB~DF"]["rhs"] == pytest.approx(3 / 8)
    assert extra["half-step:Gamma~correction"]["rhs"] == pytest.approx(-0.25)
    assert all(math.isfinite(row["lhs"]) for row in extra.values())


@pytest.mark.slow
def test_weak_inequality_on_p1(step_tc, curve_rays):
    row = verify_weak_C(step_tc, curve_rays["step"], "step")
    assert row['suite'] == 'weakC' and row['pass']


@pytest.mark.slow
def test_growth_on_p1(step_tc, linear_tc):
    times = time_grid(64, 2)
    grid = default_grid(1, tail=26.0, resolution=2049)
    step_beta = beta_family(step_tc, times, grid)
    step_rows = verify_growth(step_tc, step_beta, "step")
    assert [row["rhs"] for row in step_rows] == [1.0, 2.0, 0.0]
    assert all(row["pass"] for row in step_rows), step_rows
    # the neck volume is affine in t: doubling t doubles the increment, a t^2 law would quadruple it
    i16, i32, i64 = step_beta.integrals()[-3:]
    assert (i64 - i32) / (i32 - i16) == pytest.approx(2.0, abs=0.15)
    linear_rows = verify_growth(linear_tc, beta_family(linear_tc, times, grid), "linear")
    assert [row["rhs"] for row in linear_rows] == [0.0, 0.0, 0.0]
    assert all(row["pass"] for row in linear_rows), linear_rows


def test_subgeodesics_have_no_certificate(step_tc, p1, grid_1d):
    start = torus_pullback(p1, grid_1d, [0.0])
    end = symplectic_perturbation(p1, grid_1d, [[0.3]])
    ray = convex_combination_ray(start, end, lambda t: t / (1 + t), lambda t: 1 / (1 + t) ** 2,
                                 (0.0, 1.0, 2.0, 4.0))
    with pytest.raises(CertificateMissingError):
        verify_weak_C(step_tc, ray)
    with pytest.raises(CertificateMissingError):
        verify_theorem_B([step_tc], [ray])


def test_deligne_profile_needs_matching_rays(step_tc, linear_tc, grid_1d):
    first = geodesic_from_testconfig(step_tc, (0.0, 1.0), grid_1d)
    second = geodesic_from_testconfig(linear_tc, (0.0, 1.0, 2.0), grid_1d)
    with pytest.raises(KstabValidationError):
        deligne_profile([first, second])
    profile = deligne_profile([first, first])
    assert [t for t, _ in profile] == [0.0, 1.0]
    assert profile[0][1] == pytest.approx(0.0, abs=1e-10)


def test_growth_exponent_of_power_laws():
    times = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0]
    assert growth_exponent(times, [1.0 + t ** 2 for t in times]) == pytest.approx(2.0, abs=0.05)
    assert growth_exponent(times, [3.0] * len(times)) == pytest.approx(0.0, abs=1e-12)
    assert log_growth_ratio(times, [1.0, 2.0, 4.0, 8.0, 16.0, 32.0]) == pytest.approx(math.log(32.0) / 16.0)
    with pytest.raises(KstabValidationError):
        growth_exponent(times, [1.0, 0.0, 1.0, 1.0, 1.0, 1.0])


def test_parse_slope_set():
    assert parse_slope_set([[1, 0], ["1/2", 0], [1, 0]], 2) == [(Fraction(1), Fraction(0)), (Fraction(1, 2), Fraction(0))]
    with pytest.raises(KstabValidationError):
        parse_slope_set([[1]], 2)
    with pytest.raises(KstabValidationError):
        parse_slope_set([], 2)


SLOPES = [[1, 0], [-1, 0], [0, 1], [0, -1]]


def test_scan_candidates_are_seeded(f1):
    slopes = parse_slope_set(SLOPES, 2)
    first = scan_candidates(f1, slopes, samples=16, seed=3)
    second = scan_candidates(f1, slopes, samples=16, seed=3)
    assert [tc for _, tc in first] == [tc for _, tc in second]
    assert [kind for kind, _ in first[:4]] == ['linear'] * 4
    assert len(first) == 4 + 16


def test_scan_finds_the_destabilizing_direction_on_f1(f1):
    result = semistability_scan(f1, SLOPES, samples=32, seed=7)
    assert list(result.rows.columns) == SCAN_COLUMNS
    linear_rows = result.rows[result.rows["kind"] == "linear"]
    assert sorted(linear_rows["DF"])[0] == pytest.approx(-4 / 27)
    assert result.min_DF <= -4 / 27 + 1e-12
    assert result.argmin is not None
    assert result.delta_upper < 0


def test_scan_on_p2_finds_nothing_negative(simplex2):
    result = semistability_scan(simplex2, [[1, 0], [0, 1], [-1, -1]], samples=32, seed=1)
    linear_rows = result.rows[result.rows['kind'] == 'linear']
    assert np.allclose(linear_rows['DF'], 0.0)
    assert result.min_DF >= -1e-8


def test_scan_is_thread_count_independent(square):
    one = semistability_scan(square, SLOPES, samples=16, seed=5, threads=1)
    four = semistability_scan(square, SLOPES, samples=16, seed=5, threads=4)
    pd.testing.assert_frame_equal(one.rows, four.rows)


def test_uniform_stability_ratio_skips_small_j():
    rows = pd.DataFrame({'MNA': [0.5, 1.0, 0.0], 'JNA': [1.0, 0.5, 0.0]})
    assert uniform_stability_ratio(rows) == pytest.approx(0.5)
    assert math.isnan(uniform_stability_ratio(rows.iloc[2:]))
