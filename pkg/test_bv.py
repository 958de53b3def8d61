"""
BV complex tests
================

The Koszul differential, the BV Laplacian and the quantum differential,
cohomology of the truncated complexes and exactness witnesses.

Usage:
    pytest test_bv.py
"""

import numpy as np
import pytest

import bv
from errors import SizeCap
from lattice import Diamond, Interval, Site, build_lattice, delta_smearing, make_region, pairing
from observables import Linear, Truncation, Vector, constant, evaluate, generator, max_abs_difference, multiply, random_observable
from propagators import build_kernels

TIME1D = build_lattice({"dimension": "time1d", "n_time": 16, "dt": 0.1, "mass": 1.0})
MINK = build_lattice({"dimension": "mink2d", "n_time": 8, "n_space": 6, "dt": 0.1, "dx": 0.2, "mass": 1.0})
REGION = make_region(TIME1D, Interval(5, 10))
TRUNC = Truncation(d_max=4, a_max=2, h_max=2)


def _test_function(lat, seed, sites):
    rng = np.random.default_rng(seed)
    f = np.zeros(lat.n_sites)
    f[list(sites)] = rng.standard_normal(len(sites))
    return f


@pytest.mark.parametrize("lat, region", [
    (TIME1D, Interval(5, 10)),
    (MINK, Diamond(Site(4, 3), 1)),
])
def test_identity_reports(lat, region):
    region = make_region(lat, region)
    kernels = build_kernels(lat)
    for report in (bv.nilpotency_check(lat, range(3), region, kernels),
                   bv.verify_algebraic_identities(lat, range(3), region, kernels),
                   bv.intertwine_check(lat, range(3), region, kernels),
                   bv.shifted_jacobi_check(lat, range(3), region)):
        assert report.passed, [(r.name, r.residual) for r in report.failures()]


def test_flipped_laplacian_breaks_the_bd_relation():
    kernels = build_kernels(TIME1D)
    report = bv.verify_algebraic_identities(TIME1D, range(2), REGION, kernels, laplacian_sign=-1.0)
    assert report.record("identities.bd_leibniz").status == "fail"
    assert report.record("identities.star_derivation").status == "pass"


def test_koszul_differential_on_generators():
    op = build_kernels(TIME1D).op
    g = _test_function(TIME1D, 1, range(6, 10))
    Xg = generator(TIME1D, Vector(g), REGION, TRUNC)
    expected = generator(TIME1D, Linear(op.apply_to_test_function(g)), REGION, TRUNC)
    assert max_abs_difference(bv.koszul_differential(Xg, op), expected) < 1e-12
    Of = generator(TIME1D, Linear(_test_function(TIME1D, 2, range(5, 11))), REGION, TRUNC)
    assert bv.koszul_differential(Of, op).is_zero()


def test_two_constructions_of_the_koszul_differential_agree():
    op = build_kernels(TIME1D).op
    A = random_observable(TIME1D, REGION, 3, n_max=2, k_max=2, truncation=TRUNC)
    formula = bv.koszul_differential(A, op)
    contraction = bv.koszul_differential_contraction(A, op)
    assert max_abs_difference(formula, contraction) <= 1e-12 * max(1.0, formula.norm())


def test_laplacian_pairs_fields_with_antifields():
    f = _test_function(TIME1D, 4, range(5, 11))
    g = _test_function(TIME1D, 5, range(6, 10))
    product = multiply(generator(TIME1D, Linear(f), REGION, TRUNC), generator(TIME1D, Vector(g), REGION, TRUNC))
    value = evaluate(bv.bv_laplacian(product), np.zeros(TIME1D.n_sites))[0]
    assert value == pytest.approx(pairing(TIME1D, f, g))


def test_quantum_differential_adds_the_hbar_laplacian():
    op = build_kernels(TIME1D).op
    A = random_observable(TIME1D, REGION, 6, n_max=2, k_max=1, truncation=TRUNC)
    s = bv.quantum_differential(A, op)
    assert max_abs_difference(s.mod_hbar(), bv.koszul_differential(A, op)) == 0.0
    assert max_abs_difference(s.hbar_coefficient(1), -1j * bv.bv_laplacian(A)) < 1e-14


def test_cohomology_of_an_interval():
    region = make_region(TIME1D, Interval(3, 12))
    coh = bv.cohomology(region, bv.Differential.QUANTUM, 3, build_kernels(TIME1D), max_ext_degree=2,
                        with_representatives=False)
    # dim H^0 in field degree n is dim Sym^n of the two-dimensional solution space
    assert coh.h0_by_sym_degree == [1, 2, 3, 4]
    assert all(d == 0 for d in coh.negative_degree_dims())
    assert coh.quantum_dims[0] == {0: 10, 1: 0}
    assert coh.quantum_dims[1] == {0: 20, 1: 0}


def test_cohomology_of_a_minkowski_slab():
    lat = build_lattice({"dimension": "mink2d", "n_time": 6, "n_space": 3, "dt": 0.1, "dx": 0.2, "mass": 1.0})
    region = make_region(lat, Interval(1, 3))
    coh = bv.cohomology(region, bv.Differential.CLASSICAL, 2, build_kernels(lat), max_ext_degree=1,
                        with_representatives=False)
    # two solutions per spatial mode
    assert coh.h0_by_sym_degree == [1, 6, 21]


def test_representatives_are_not_exact():
    kernels = build_kernels(TIME1D)
    coh = bv.cohomology(REGION, bv.Differential.CLASSICAL, 2, kernels, max_ext_degree=1, truncation=TRUNC)
    assert len(coh.representatives) == 2 + 3
    for rep in coh.representatives:
        assert bv.exactness_witness(rep, region=REGION, kernels=kernels) is bv.NotExact


@pytest.mark.parametrize("k_max", [1, 2])
def test_classical_exactness_witness(k_max):
    kernels = build_kernels(TIME1D)
    A = random_observable(TIME1D, REGION, 7, n_max=1, k_max=k_max, truncation=TRUNC, n_min=0)
    target = bv.koszul_differential(A, kernels.op)
    witness = bv.exactness_witness(target, region=REGION, kernels=kernels)
    assert witness is not bv.NotExact
    assert bv.witness_residual(witness, target, op=kernels.op) <= 1e-6 * target.norm()


def test_quantum_exactness_witness():
    kernels = build_kernels(TIME1D)
    A = random_observable(TIME1D, REGION, 8, n_max=1, k_max=1, truncation=TRUNC)
    target = bv.quantum_differential(A, kernels.op)
    witness = bv.exactness_witness(target, bv.Differential.QUANTUM, region=REGION, kernels=kernels)
    assert witness is not bv.NotExact
    assert bv.witness_residual(witness, target, bv.Differential.QUANTUM, kernels.op) <= 1e-6 * target.norm()


def test_constants_are_not_exact():
    target = constant(TIME1D, 1.0, TRUNC)
    witness = bv.exactness_witness(target, region=REGION)
    assert witness is bv.NotExact
    assert not witness
    assert bv.witness_residual(witness, target) == float("inf")


def test_monomial_coordinates_round_trip():
    cx = bv.ComplexBuilder(REGION).build(3, 1)
    A = random_observable(TIME1D, REGION, 9, n_max=2, k_max=1, truncation=TRUNC)
    for key in [(2, 0), (2, 1), (1, 1)]:
        vec = bv.to_monomials(A, cx, key)
        back = bv.from_monomials(cx, key, vec, TRUNC)
        assert np.allclose(back.terms[key][0], A.terms[key][0], atol=1e-13)


def test_koszul_block_matches_the_tensor_differential():
    kernels = build_kernels(TIME1D)
    cx = bv.ComplexBuilder(REGION, kernels).build(2, 1)
    X = generator(TIME1D, Vector(delta_smearing(TIME1D, 7)), REGION, TRUNC)
    product = multiply(generator(TIME1D, Linear(delta_smearing(TIME1D, 5)), REGION, TRUNC), X)
    image = bv.koszul_differential(product, kernels.op)
    via_block = cx.koszul[(1, 1)] @ bv.to_monomials(product, cx, (1, 1))
    assert np.allclose(via_block, bv.to_monomials(image, cx, (2, 0)), atol=1e-9)


def test_size_cap():
    with pytest.raises(SizeCap):
        bv.ComplexBuilder(REGION, size_cap=10).build(2, 1)
