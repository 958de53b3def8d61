"""
Observable algebra tests
========================

Truncated hbar arithmetic, the graded-commutative product, evaluation,
functional derivatives and the support/extension/restriction maps.

Usage:
    pytest test_observables.py
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from errors import LengthMismatch, NotContained, SupportViolation, TruncationOverflow
from lattice import Interval, build_lattice, delta_smearing, general_region, make_region, pairing
from observables import (
    HbarPoly,
    Linear,
    Truncation,
    Vector,
    constant,
    derivative,
    evaluate,
    extend,
    generator,
    is_graded_symmetric,
    max_abs_difference,
    multiply,
    random_observable,
    restrict,
    support,
)

LAT = build_lattice({"dimension": "time1d", "n_time": 12, "dt": 0.1, "mass": 1.0})
REGION = make_region(LAT, Interval(3, 8))


def _test_function(seed, sites):
    rng = np.random.default_rng(seed)
    f = np.zeros(LAT.n_sites)
    f[list(sites)] = rng.standard_normal(len(sites))
    return f


def test_hbar_poly_arithmetic():
    a = HbarPoly([1, 2], h_max=3)
    b = HbarPoly([3, -1], h_max=3)
    assert (a * b) == HbarPoly([3, 5, -2], h_max=3)
    assert (a + 1) == HbarPoly([2, 2], h_max=3)
    assert (1 - a) == HbarPoly([0, -2], h_max=3)
    assert a.shift(2) == HbarPoly([0, 0, 1, 2], h_max=3)


def test_hbar_poly_truncates_silently():
    a = HbarPoly([0, 1], h_max=1)
    assert (a * a) == 0
    assert a.shift(1) == 0
    assert a[5] == 0j


def test_linear_generator_pairs_like_the_lattice():
    f = _test_function(0, range(3, 9))
    phi = np.random.default_rng(1).standard_normal(LAT.n_sites)
    value = evaluate(generator(LAT, Linear(f)), phi)
    assert value[0] == pytest.approx(pairing(LAT, f, phi))
    assert value[1] == 0


@settings(max_examples=15, deadline=None)
@given(seed_a=st.integers(0, 1000), seed_b=st.integers(0, 1000), seed_phi=st.integers(0, 1000))
def test_evaluation_is_multiplicative(seed_a, seed_b, seed_phi):
    trunc = Truncation(d_max=4, a_max=2, h_max=2)
    A = random_observable(LAT, REGION, seed_a, n_max=2, k_max=0, truncation=trunc, hbar_order=1)
    B = random_observable(LAT, REGION, seed_b, n_max=2, k_max=0, truncation=trunc, hbar_order=1)
    phi = np.random.default_rng(seed_phi).standard_normal(LAT.n_sites)
    product = evaluate(multiply(A, B), phi)
    expected = evaluate(A, phi) * evaluate(B, phi)
    scale = max(1.0, expected.max_abs())
    assert (product - expected).max_abs() <= 1e-10 * scale


def test_antifield_generators_anticommute():
    g = delta_smearing(LAT, 5)
    h = delta_smearing(LAT, 6)
    Xg = generator(LAT, Vector(g), REGION)
    Xh = generator(LAT, Vector(h), REGION)
    assert max_abs_difference(multiply(Xg, Xh), -multiply(Xh, Xg)) == 0.0
    assert multiply(Xg, Xg).is_zero(1e-15)


def test_fields_commute_with_antifields():
    Of = generator(LAT, Linear(_test_function(2, range(3, 9))), REGION)
    Xg = generator(LAT, Vector(delta_smearing(LAT, 5)), REGION)
    assert max_abs_difference(multiply(Of, Xg), multiply(Xg, Of)) < 1e-15


def test_product_is_associative():
    trunc = Truncation(d_max=4, a_max=2, h_max=1)
    A, B = (random_observable(LAT, REGION, s, n_max=1, k_max=1, truncation=trunc) for s in (3, 4))
    C = random_observable(LAT, REGION, 5, n_max=1, k_max=0, truncation=trunc)
    left = multiply(multiply(A, B), C)
    right = multiply(A, multiply(B, C))
    assert max_abs_difference(left, right) <= 1e-12 * max(1.0, left.norm())


def test_random_observables_are_graded_symmetric():
    A = random_observable(LAT, REGION, 7, n_max=3, k_max=2)
    assert is_graded_symmetric(A)
    # antifield slots only carry margin sites
    margin = np.isin(REGION.index_array, REGION.margin)
    assert np.all(A.terms[(0, 1)][:, ~margin] == 0)


def test_gradient_matches_finite_differences():
    f = _test_function(8, range(3, 9))
    Of = generator(LAT, Linear(f))
    F = multiply(Of, Of)
    phi = np.random.default_rng(9).standard_normal(LAT.n_sites)
    grad = derivative(F, phi, 1)[0]
    eps = 1e-4
    for local, site in enumerate(F.region.indices):
        step = np.zeros(LAT.n_sites)
        step[site] = eps
        numeric = (evaluate(F, phi + step)[0] - evaluate(F, phi - step)[0]) / (2 * eps)
        assert numeric == pytest.approx(LAT.weight * grad[local], rel=1e-6, abs=1e-12)


def test_hessian_of_a_square():
    f = _test_function(10, range(4, 7))
    Of = generator(LAT, Linear(f))
    hess = derivative(multiply(Of, Of), np.zeros(LAT.n_sites), 2)[0]
    local = f[list(Of.region.indices)]
    assert_allclose(hess, 2.0 * np.outer(local, local), atol=1e-14)


def test_support_extend_restrict():
    f = _test_function(11, [4, 6])
    Of = generator(LAT, Linear(f), REGION)
    assert support(Of).indices == (4, 6)
    big = make_region(LAT, Interval(0, 11))
    moved = extend(Of, big)
    assert moved.region == big
    assert max_abs_difference(restrict(moved, REGION), Of) == 0.0
    with pytest.raises(NotContained):
        extend(Of, make_region(LAT, Interval(5, 11)))
    with pytest.raises(NotContained):
        restrict(Of, big)


def test_extend_accepts_regions_holding_the_support_only():
    Of = generator(LAT, Linear(_test_function(12, [5])), REGION)
    small = general_region(LAT, [5, 9])
    assert extend(Of, small).region == small


def test_constants_have_empty_support():
    c = constant(LAT, HbarPoly([2.0, 1.0]))
    assert support(c).is_empty
    assert evaluate(c, np.zeros(LAT.n_sites)) == HbarPoly([2.0, 1.0])


def test_truncation_overflow():
    trunc = Truncation(d_max=2, a_max=1, h_max=1)
    Of = generator(LAT, Linear(_test_function(13, range(3, 9))), truncation=trunc)
    square = multiply(Of, Of)
    with pytest.raises(TruncationOverflow):
        multiply(square, Of)
    with pytest.raises(TruncationOverflow):
        random_observable(LAT, REGION, 0, n_max=3, k_max=0, truncation=trunc)


def test_generator_errors():
    with pytest.raises(LengthMismatch):
        generator(LAT, Linear(np.ones(5)))
    with pytest.raises(SupportViolation):
        generator(LAT, Linear(_test_function(14, [1])), REGION)
    # the boundary row of REGION has no stencil room
    with pytest.raises(SupportViolation):
        generator(LAT, Vector(delta_smearing(LAT, 3)), REGION)
    assert generator(LAT, Linear(np.zeros(LAT.n_sites))).is_zero()


def test_json_terms_use_global_sites():
    Of = generator(LAT, Linear(delta_smearing(LAT, 5)), REGION)
    data = Of.to_json_terms()
    assert data["terms"] == [{"n": 1, "k": 0, "hbar_order": 0, "entries": [[[5], 1.0 / LAT.weight, 0.0]]}]
