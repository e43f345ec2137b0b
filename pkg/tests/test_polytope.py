from fractions import Fraction

import pytest

from input_validator import KstabValidationError
from polytope import (anticanonical, boundary_integral_pl, c1_degree, facet_lattice_volume, integrate_pl, interval,
                      is_delzant, make_polytope, mixed_volume, parse_polytope, product, sbar, scaled, standard_simplex,
                      toric_futaki, transformed, translated, unit_cube, volume)


def test_interval_is_p1(p1):
    assert p1.vertices == [(Fraction(0),), (Fraction(1),)]
    assert volume(p1) == 1
    assert c1_degree(p1) == 2
    assert sbar(p1) == 2
    assert is_delzant(p1)


def test_simplex_and_square_invariants(simplex2, square):
    assert volume(simplex2) == Fraction(1, 2)
    assert c1_degree(simplex2) == 3
    assert sbar(simplex2) == 6
    assert c1_degree(square) == 4
    assert sbar(square) == 4


def test_hirzebruch_f1(f1):
    assert len(f1.vertices) == 4
    assert volume(f1) == Fraction(3, 2)
    assert sorted(facet_lattice_volume(f1, i) for i in range(4)) == [1, 1, 1, 2]
    assert c1_degree(f1) == 5
    assert sbar(f1) == Fraction(10, 3)
    assert is_delzant(f1)


def test_non_delzant_certificate():
    polytope = make_polytope(2, [((1, 0), 0), ((0, 1), 0), ((-1, -2), 2)])
    certificate = is_delzant(polytope)
    assert not certificate
    assert certificate.vertex == (Fraction(0), Fraction(1))
    assert abs(certificate.determinant) == 2
    with pytest.raises(KstabValidationError):
        make_polytope(2, [((1, 0), 0), ((0, 1), 0), ((-1, -2), 2)], require_delzant=True)


def test_redundant_facets_are_dropped():
    polytope = make_polytope(1, [((1,), 0), ((-1,), 1), ((-1,), 3)])
    assert len(polytope.facets) == 2
    assert volume(polytope) == 1


def test_invalid_presentations():
    with pytest.raises(KstabValidationError):
        make_polytope(1, [((2,), 0), ((-1,), 1)])
    with pytest.raises(KstabValidationError):
        make_polytope(2, [((1, 0), 0), ((0, 1), 0)])
    with pytest.raises(KstabValidationError):
        make_polytope(1, [((1,), 0), ((-1,), 0)])


def test_parse_polytope_from_json(inputs_dir):
    import json
    data = json.loads((inputs_dir / "p1xp1.json").read_text())
    assert parse_polytope(data) == unit_cube(2)


def test_irrational_support_stays_float(inputs_dir):
    import json
    polytope = parse_polytope(json.loads((inputs_dir / "p1xp1_sqrt2.json").read_text()))
    assert not polytope.exact
    assert abs(float(volume(polytope)) - 2 ** 0.5) < 1e-12
    assert abs(float(sbar(polytope)) - (2 + 2 / 2 ** 0.5)) < 1e-12


def test_mixed_volume_normalization(square, simplex2):
    assert mixed_volume(square, square) == 2 * volume(square)
    assert mixed_volume(simplex2, simplex2) == 1
    assert mixed_volume(square, simplex2) == mixed_volume(simplex2, square)
    with pytest.raises(KstabValidationError):
        mixed_volume(square)


def test_lattice_maps_preserve_invariants(f1):
    moved = translated(transformed(f1, [[1, 1], [0, 1]]), [3, -2])
    assert volume(moved) == volume(f1)
    assert c1_degree(moved) == c1_degree(f1)
    assert is_delzant(moved)
    with pytest.raises(KstabValidationError):
        transformed(f1, [[2, 0], [0, 1]])


def test_scaling_and_products(p1):
    doubled = scaled(p1, 2)
    assert volume(doubled) == 2
    assert sbar(doubled) == 1
    assert product(p1, p1) == unit_cube(2)


def test_anticanonical_polytope_of_p2():
    polytope = anticanonical(standard_simplex(2))
    assert all(facet.support == 1 for facet in polytope.facets)
    assert volume(polytope) == Fraction(9, 2)


def test_pl_integrals_of_step(p1):
    step = [((Fraction(0),), Fraction(0)), ((Fraction(1),), Fraction(-1, 2))]
    assert integrate_pl(p1, step) == Fraction(1, 8)
    assert boundary_integral_pl(p1, step) == Fraction(1, 2)
    assert toric_futaki(p1, step) == Fraction(1, 4)


def test_futaki_vanishes_on_p1_and_p2_linear(p1, simplex2):
    assert toric_futaki(p1, [((Fraction(1),), Fraction(0))]) == 0
    for slope in [(1, 0), (0, 1), (1, -1)]:
        assert toric_futaki(simplex2, [(tuple(Fraction(a) for a in slope), Fraction(0))]) == 0


def test_futaki_of_f1_is_nonzero(f1):
    assert toric_futaki(f1, [((Fraction(-1), Fraction(0)), Fraction(0))]) == Fraction(-2, 27)
    assert toric_futaki(f1, [((Fraction(0), Fraction(1)), Fraction(0))]) == Fraction(-4, 27)


def test_interval_bounds_must_be_ordered():
    with pytest.raises(KstabValidationError):
        interval(1, 1)
