"""
Model tests
===========

Model handles, Einstein causality, factorization structure maps, the Weiss
cosheaf condition, multiplicativity, cutoffs, beta-transport and the
time-slice axiom.

Usage:
    pytest test_models.py
"""

from itertools import combinations

import numpy as np
import pytest

import models
from errors import BadOrdering, KindMismatch, NotContained, NotDisjoint, PreconditionViolated, SupportViolation
from lattice import Diamond, Interval, Site, build_lattice, cauchy_neighborhood, general_region, make_region, pairing
from models import BetaMode, CoverSpec, ModelTag
from observables import Truncation, evaluate, max_abs_difference, random_observable
from products import star
from propagators import build_kernels, solution_basis

TIME1D = build_lattice({"dimension": "time1d", "n_time": 16, "dt": 0.1, "mass": 1.0})
MINK = build_lattice({"dimension": "mink2d", "n_time": 16, "n_space": 8, "dt": 0.1, "dx": 0.2, "mass": 1.0})
DESK = build_lattice({"dimension": "mink2d", "n_time": 16, "n_space": 4, "dt": 0.1, "dx": 0.2, "mass": 1.0})


def test_instantiate_dispatch():
    handle = models.instantiate("FRQuantum", TIME1D)
    assert handle.tag == ModelTag.FR_QUANTUM
    assert handle.is_quantum and not handle.is_factorization
    cg = models.instantiate(ModelTag.CG_QUANTUM, TIME1D)
    assert cg.is_factorization
    assert cg.differential_kind.value == "quantum"
    assert models.instantiate(ModelTag.CG_CLASSICAL, TIME1D).differential_kind.value == "classical"


def test_quantum_net_multiplies_with_the_star_product():
    handle = models.instantiate(ModelTag.FR_QUANTUM, TIME1D)
    region = make_region(TIME1D, Interval(4, 8))
    A = random_observable(TIME1D, region, 1, n_max=1, k_max=0)
    B = random_observable(TIME1D, region, 2, n_max=1, k_max=0)
    assert max_abs_difference(handle.product(A, B), star(A, B, handle.kernels)) == 0.0


def test_space_dimensions():
    handle = models.instantiate(ModelTag.CG_CLASSICAL, TIME1D, Truncation(d_max=2, a_max=1, h_max=0))
    # five sites, three of them in the margin
    space = handle.space(make_region(TIME1D, Interval(5, 9)))
    assert space.dims[(2, 0)] == 15
    assert space.dims[(0, 1)] == 3
    assert space.dims[(2, 1)] == 45
    assert space.total_dim == 1 + 5 + 15 + 3 + 15 + 45


@pytest.mark.parametrize("tag", list(ModelTag))
def test_einstein_causality(tag):
    handle = models.instantiate(tag, MINK)
    r1 = make_region(MINK, Diamond(Site(8, 2), 1))
    r2 = make_region(MINK, Diamond(Site(8, 6), 1))
    report = models.einstein_causality_check(handle, r1, r2)
    assert report.passed
    assert report.record("causality.bracket").residual == 0.0


def test_einstein_causality_needs_spacelike_regions():
    handle = models.instantiate(ModelTag.FR_QUANTUM, MINK)
    r1 = make_region(MINK, Diamond(Site(8, 2), 1))
    r2 = make_region(MINK, Diamond(Site(11, 2), 1))
    with pytest.raises(PreconditionViolated):
        models.einstein_causality_check(handle, r1, r2)


def test_timelike_observables_do_not_commute():
    handle = models.instantiate(ModelTag.FR_QUANTUM, MINK)
    a = general_region(MINK, [MINK.index(Site(8, 2))])
    b = general_region(MINK, [MINK.index(Site(10, 2))])
    A = random_observable(MINK, a, 1, n_max=1, k_max=0)
    B = random_observable(MINK, b, 2, n_max=1, k_max=0)
    assert models.commutator_deviation(handle, A, B) > 0.0


def test_factorization_product_errors():
    handle = models.instantiate(ModelTag.CG_CLASSICAL, TIME1D)
    r1 = make_region(TIME1D, Interval(2, 4))
    r2 = make_region(TIME1D, Interval(4, 6))
    A = random_observable(TIME1D, r1, 1, n_max=1, k_max=0)
    B = random_observable(TIME1D, r2, 2, n_max=1, k_max=0)
    with pytest.raises(NotDisjoint):
        models.factorization_product(handle, [(r1, A), (r2, B)], make_region(TIME1D, Interval(0, 10)))
    r3 = make_region(TIME1D, Interval(5, 6))
    with pytest.raises(NotContained):
        models.factorization_product(handle, [(r1, A), (r3, B)], make_region(TIME1D, Interval(0, 5)))


def test_factorization_product_of_nothing_is_the_unit():
    handle = models.instantiate(ModelTag.CG_CLASSICAL, TIME1D)
    into = make_region(TIME1D, Interval(2, 6))
    unit = models.factorization_product(handle, [], into)
    assert evaluate(unit, np.zeros(TIME1D.n_sites)) == 1.0


def test_factorization_product_is_permutation_equivariant():
    handle = models.instantiate(ModelTag.CG_CLASSICAL, TIME1D)
    pieces = [general_region(TIME1D, [s]) for s in (3, 5, 8)]
    obs = [random_observable(TIME1D, r, i, n_max=1, k_max=0) for i, r in enumerate(pieces)]
    into = make_region(TIME1D, Interval(2, 9))
    forward = models.factorization_product(handle, list(zip(pieces, obs)), into)
    backward = models.factorization_product(handle, list(zip(pieces, obs))[::-1], into)
    assert max_abs_difference(forward, backward) == 0.0


def _weiss_setup():
    handle = models.instantiate(ModelTag.CG_CLASSICAL, TIME1D)
    U = make_region(TIME1D, Interval(6, 11))
    members = tuple(general_region(TIME1D, sub) for sub in combinations(U.indices, 5))
    halves = (general_region(TIME1D, U.indices[:3]), general_region(TIME1D, U.indices[3:]))
    return handle, U, members, halves


def test_weiss_degree():
    _, U, members, halves = _weiss_setup()
    assert CoverSpec(U, members).weiss_degree() == 5
    assert CoverSpec(U, halves).weiss_degree() == 1


@pytest.mark.parametrize("max_degree", [0, 2])
def test_weiss_cover_satisfies_the_cosheaf_condition(max_degree):
    handle, U, members, _ = _weiss_setup()
    report = models.weiss_cosheaf_check(handle, CoverSpec(U, members), max_degree)
    assert report.passed, [(r.name, r.residual) for r in report.failures()]


def test_ordinary_cover_is_rejected():
    handle, U, _, halves = _weiss_setup()
    report = models.weiss_cosheaf_check(handle, CoverSpec(U, halves), 2)
    assert not report.passed
    assert report.record("weiss.degree").status == "fail"
    assert report.record("cosheaf.coequalizer").status == "fail"


def test_cosheaf_check_needs_a_factorization_model():
    _, U, members, _ = _weiss_setup()
    with pytest.raises(KindMismatch):
        models.weiss_cosheaf_check(models.instantiate(ModelTag.FR_CLASSICAL, TIME1D), CoverSpec(U, members))


def test_multiplicativity():
    handle = models.instantiate(ModelTag.CG_CLASSICAL, TIME1D)
    v1 = general_region(TIME1D, [4, 5])
    v2 = general_region(TIME1D, [9])
    report = models.multiplicativity_check(handle, v1, v2, 2)
    assert report.passed, [(r.name, r.residual) for r in report.failures()]
    with pytest.raises(NotDisjoint):
        models.multiplicativity_check(handle, v1, general_region(TIME1D, [5, 6]))


@pytest.mark.parametrize("tag", [ModelTag.CG_CLASSICAL, ModelTag.CG_QUANTUM])
def test_prefactorization_associativity(tag):
    handle = models.instantiate(tag, TIME1D)
    pieces = [general_region(TIME1D, [s]) for s in (6, 7, 8)]
    middle = general_region(TIME1D, [6, 7])
    report = models.associativity_check(handle, pieces, make_region(TIME1D, Interval(6, 11)), middle)
    assert report.passed, [(r.name, r.residual) for r in report.failures()]


def test_isotony():
    U = make_region(TIME1D, Interval(5, 9))
    V = make_region(TIME1D, Interval(2, 12))
    assert models.isotony_check(TIME1D, U, V, seed=3).passed


def test_cutoff_profile():
    N = make_region(TIME1D, Interval(6, 10))
    chi = models.make_cutoff(TIME1D, N, 7, 8, 9)
    assert chi.values[7] == 1.0 and chi.values[9] == 0.0
    assert chi.values[8] == pytest.approx(0.5)
    assert np.all(np.diff(chi.values) <= 0.0)


def test_cutoff_ordering_errors():
    N = make_region(TIME1D, Interval(6, 10))
    with pytest.raises(BadOrdering):
        models.make_cutoff(TIME1D, N, 8, 7, 9)
    with pytest.raises(BadOrdering):
        models.make_cutoff(TIME1D, N, 6, 8, 9)
    rising = np.zeros(TIME1D.n_time)
    rising[:8] = 1.0
    rising[8] = 0.2
    rising[9] = 0.4
    with pytest.raises(BadOrdering):
        models.make_cutoff(TIME1D, N, 7, 8, 9, values=rising)


def test_beta_transport_preserves_solution_pairings():
    kernels = build_kernels(TIME1D)
    N = make_region(TIME1D, Interval(6, 10))
    chi = models.make_cutoff(TIME1D, N, 7, 8, 9)
    f = np.zeros(TIME1D.n_sites)
    f[2:5] = [0.3, -1.2, 0.8]
    moved = models.beta_transport(f, chi, BetaMode.PLUS, kernels)
    assert np.all(moved[~N.mask] == 0.0)
    for phi in solution_basis(kernels.op).basis:
        assert pairing(TIME1D, moved, phi) == pytest.approx(pairing(TIME1D, f, phi), rel=1e-8, abs=1e-12)


def test_beta_transport_support_preconditions():
    N = make_region(TIME1D, Interval(6, 10))
    chi = models.make_cutoff(TIME1D, N, 7, 8, 9)
    late = np.zeros(TIME1D.n_sites)
    late[12] = 1.0
    with pytest.raises(SupportViolation):
        models.beta_transport(late, chi, BetaMode.PLUS)
    early = np.zeros(TIME1D.n_sites)
    early[3] = 1.0
    with pytest.raises(SupportViolation):
        models.beta_transport(early, chi, BetaMode.MINUS)


def test_time_slice_axiom():
    handle = models.instantiate(ModelTag.FR_CLASSICAL, DESK)
    O = make_region(DESK, Interval(3, 12))
    N = cauchy_neighborhood(DESK, 8, 2)
    report = models.time_slice_check(handle, O, N)
    assert report.passed, [(r.name, r.residual) for r in report.failures()]


def test_time_slice_without_cutoff_fails():
    handle = models.instantiate(ModelTag.FR_CLASSICAL, DESK)
    O = make_region(DESK, Interval(3, 12))
    N = cauchy_neighborhood(DESK, 8, 2)
    report = models.time_slice_check(handle, O, N, drop_cutoff=True)
    assert not report.passed
    assert report.record("time_slice.roundtrip").status == "fail"
    # extension itself does not involve the cutoff
    assert report.record("time_slice.dimensions").status == "pass"


def test_time_slice_needs_a_thick_slab():
    handle = models.instantiate(ModelTag.FR_CLASSICAL, DESK)
    with pytest.raises(PreconditionViolated):
        models.time_slice_check(handle, make_region(DESK, Interval(3, 12)), cauchy_neighborhood(DESK, 8, 1))


def test_restrict_to_cauchy():
    handle = models.instantiate(ModelTag.FR_QUANTUM, DESK)
    single = models.restrict_to_cauchy(handle, 5, [1], 2)
    assert single.region.indices == (DESK.index(Site(5, 1)),)
    wide = models.restrict_to_cauchy(handle, 5, [0, 1, 2], 2)
    assert wide.region.contains(single.region)
    full = models.restrict_to_cauchy(handle, 5, range(DESK.n_space), 2)
    assert full.region.indices == full.slab.indices
    with pytest.raises(PreconditionViolated):
        models.restrict_to_cauchy(models.instantiate(ModelTag.FR_QUANTUM, TIME1D), 5, [0])
