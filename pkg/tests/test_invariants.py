from fractions import Fraction

import numpy as np
import pytest

from input_validator import KstabValidationError
from invariants import (boundary_minus_mean, detwisted_intersection, fiber_class, intersection_number, mean_value,
                        na_invariants, pullback_class)
from polytope import unit_cube, volume
from testconfig import base_change, linear, make_testconfig, random_testconfig, total_polytope, trivial, twisted


def test_step_on_p1(step_tc):
    report = na_invariants(step_tc)
    assert report.V == 1 and report.Sbar == 2
    assert report.A_top == Fraction(-1, 4)
    assert report.K_A_n == Fraction(1, 2)
    assert report.DF == Fraction(1, 4)
    assert report.correction == 0
    assert report.MNA == Fraction(1, 4)
    assert report.ENA == Fraction(-1, 8)
    assert report.JNA == Fraction(1, 8)
    assert report.reduced and report.total_space_delzant


def test_half_step_on_p1(half_step_tc):
    report = na_invariants(half_step_tc)
    assert report.DF == Fraction(3, 8)
    assert report.correction == Fraction(-1, 4)
    assert report.MNA == Fraction(1, 8)
    assert report.ENA == Fraction(-1, 16)
    assert report.JNA == Fraction(1, 16)
    assert report.multiplicities == (1, 2)
    assert not report.reduced


def test_linear_on_p1(linear_tc):
    report = na_invariants(linear_tc)
    assert report.DF == 0 and report.MNA == 0
    assert report.ENA == Fraction(-1, 2)
    assert report.JNA == Fraction(1, 2)


def test_trivial_configuration_has_zero_invariants(p1, square):
    for base in (p1, square):
        report = na_invariants(trivial(base))
        assert report.DF == report.MNA == report.ENA == report.JNA == 0


def test_linear_on_p2_has_zero_futaki(simplex2):
    for slope in [(1, 0), (0, 1), (-1, 1)]:
        assert na_invariants(linear(simplex2, slope)).DF == 0


def test_f1_is_destabilized_by_a_linear_configuration(f1):
    assert na_invariants(linear(f1, (-1, 0))).DF == Fraction(-2, 27)
    assert na_invariants(linear(f1, (0, 1))).DF == Fraction(-4, 27)


def test_product_step_on_p1xp1(square):
    report = na_invariants(make_testconfig(square, [((0, 0), 0), ((1, 0), "-1/2")]))
    assert report.V == 2 and report.Sbar == 4
    assert report.DF == Fraction(1, 4)
    assert report.ENA == Fraction(-1, 8)


def test_corner_on_p1xp1(corner_tc):
    report = na_invariants(corner_tc)
    assert report.DF == Fraction(1, 3)
    assert report.ENA == Fraction(-1, 6)
    assert report.JNA == Fraction(1, 6)


def test_twist_independence_is_exact(half_step_tc):
    first = na_invariants(half_step_tc, 1)
    second = na_invariants(half_step_tc, "17/3")
    for name in first.INVARIANT_FIELDS:
        assert getattr(first, name) == getattr(second, name)
    assert first.twist_C_used == 1 and second.twist_C_used == Fraction(17, 3)


def test_twist_must_exceed_maximum(step_tc):
    with pytest.raises(KstabValidationError):
        na_invariants(step_tc, Fraction(1, 2))


def test_float_twist_agrees_within_tolerance(step_tc):
    report = na_invariants(step_tc, 2.718281828459045)
    assert abs(float(report.DF) - 0.25) <= 1e-10
    assert abs(float(report.MNA) - 0.25) <= 1e-10


def test_entropy_energy_and_j_from_means(corner_tc, step_tc):
    for tc in (corner_tc, step_tc):
        report = na_invariants(tc)
        assert report.ENA == -mean_value(tc)
        assert report.JNA == mean_value(tc) - tc.minimum()


def test_shift_by_constant(step_tc, half_step_tc):
    for tc in (step_tc, half_step_tc):
        original, shifted = na_invariants(tc), na_invariants(twisted(tc, Fraction(2, 3)))
        assert shifted.DF == original.DF
        assert shifted.MNA == original.MNA
        assert shifted.JNA == original.JNA
        assert shifted.ENA == original.ENA - Fraction(2, 3)


@pytest.mark.parametrize("degree", [2, 3])
def test_base_change_homogeneity(half_step_tc, corner_tc, degree):
    for tc in (half_step_tc, corner_tc):
        original, changed = na_invariants(tc), na_invariants(base_change(tc, degree))
        assert changed.MNA == degree * original.MNA
        assert changed.ENA == degree * original.ENA
        assert changed.JNA == degree * original.JNA


def test_boundary_oracle_matches_mna_on_random_configurations(p1, square, simplex2):
    rng = np.random.default_rng(2024)
    for base in (p1, square, simplex2):
        for _ in range(8):
            tc = random_testconfig(base, rng)
            report = na_invariants(tc)
            assert report.MNA == boundary_minus_mean(tc)
            assert report.DF - report.MNA == -report.correction
            assert report.JNA >= 0


def test_intersection_numbers_of_the_total_space(step_tc):
    Q = total_polytope(step_tc, 1)
    fiber = fiber_class(1)
    flat = pullback_class(step_tc.base)
    # A.F equals the fiber volume of the base, F.F = 0
    assert intersection_number(Q, fiber) == 1
    assert intersection_number(fiber, fiber) == 0
    assert intersection_number(flat, fiber) == 1
    assert detwisted_intersection([Q, Q], [1, 1], [step_tc.base] * 2) == Fraction(-1, 4)


def test_detwisted_intersection_argument_lengths(step_tc):
    Q = total_polytope(step_tc, 1)
    with pytest.raises(KstabValidationError):
        detwisted_intersection([Q, Q], [1], [step_tc.base])


def test_report_row_is_float():
    row = na_invariants(trivial(unit_cube(2))).to_row()
    assert isinstance(row['DF'], float)
    assert row['multiplicities'] == "1"
    assert row['reduced'] is True
