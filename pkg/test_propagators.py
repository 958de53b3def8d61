"""
Propagator tests
================

Green identities, support laws, positivity, exactness of the
Klein-Gordon sequence and convergence to the continuum kernel.

Usage:
    pytest test_propagators.py
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from errors import KindMismatch
from lattice import build_lattice
from propagators import (
    KernelKind,
    build_kernels,
    continuum_error,
    convergence_ratio,
    derived_kernels,
    exactness_check,
    hadamard_positivity,
    mode_recursion_agreement,
    retarded_mode_sum,
    solution_basis,
    sub_lattice,
    verify_green_identities,
)
from verifier import corrupt_kernels

TIME1D = {"dimension": "time1d", "n_time": 100, "dt": 0.05, "mass": 1.0}
MINK = {"dimension": "mink2d", "n_time": 12, "n_space": 8, "dt": 0.1, "dx": 0.2, "mass": 1.0}


@pytest.fixture(scope="module")
def time1d():
    lat = build_lattice(TIME1D)
    return lat, build_kernels(lat)


@pytest.fixture(scope="module")
def mink():
    lat = build_lattice(MINK)
    return lat, build_kernels(lat)


@pytest.mark.parametrize("fixture", ["time1d", "mink"])
def test_green_identities_hold(fixture, request):
    lat, kernels = request.getfixturevalue(fixture)
    report = verify_green_identities(kernels.op, kernels)
    assert report.passed, [r.name for r in report.failures()]


@pytest.mark.parametrize("fixture", ["time1d", "mink"])
def test_exact_sequence(fixture, request):
    lat, kernels = request.getfixturevalue(fixture)
    report = exactness_check(kernels.op, kernels.gC)
    assert report.passed, [r.name for r in report.failures()]


def test_first_retarded_step(time1d):
    lat, kernels = time1d
    # one step after the source the kernel equals dt, to second order sin(m dt)/m
    assert kernels.gR.matrix[1, 0] == pytest.approx(lat.dt)
    assert kernels.gR.matrix[1, 0] == pytest.approx(np.sin(lat.dt), rel=1e-3)
    assert kernels.gR.matrix[0, 1] == 0.0
    assert kernels.gR.matrix[5, 5] == 0.0


def test_retarded_is_translation_invariant(time1d):
    _, kernels = time1d
    G = kernels.gR.matrix
    assert_allclose(np.diag(G, -7)[:-1], np.diag(G, -7)[1:], rtol=0, atol=1e-14)


def test_mode_sum_agrees_with_leapfrog(time1d, mink):
    for _, kernels in (time1d, mink):
        assert mode_recursion_agreement(kernels.op) < 1e-10


def test_mode_sum_kernel_matches_the_recursion(mink):
    _, kernels = mink
    summed = retarded_mode_sum(kernels.op)
    assert summed.kind == KernelKind.RETARDED
    assert summed.meta["method"] == "mode_sum"
    assert_allclose(summed.matrix, kernels.gR.matrix, rtol=0, atol=1e-10)
    # a corrupted recursion no longer matches the mode sum
    assert mode_recursion_agreement(kernels.op, corrupt_kernels(kernels).gR) == pytest.approx(0.5, abs=1e-9)


def test_second_order_convergence():
    assert 3.5 <= convergence_ratio(0.05, 1.0) <= 4.5
    assert continuum_error(0.025) < continuum_error(0.05)


def test_derived_kernel_relations(mink):
    _, kernels = mink
    assert_allclose(kernels.gA.matrix, kernels.gR.matrix.T)
    assert_allclose(kernels.gC.matrix, kernels.gR.matrix - kernels.gA.matrix)
    assert_allclose(kernels.gD.matrix, 0.5 * (kernels.gR.matrix + kernels.gA.matrix))
    assert_allclose(kernels.gPlus.matrix, 0.5j * kernels.gC.matrix + kernels.h.matrix)
    assert_allclose(kernels.gF.matrix, 1j * kernels.gD.matrix + kernels.h.matrix)
    assert kernels.by_kind(KernelKind.FEYNMAN) is kernels.gF


def test_derived_kernels_need_a_retarded_kernel(mink):
    _, kernels = mink
    with pytest.raises(KindMismatch):
        derived_kernels(kernels.gA)


def test_retarded_vanishes_outside_the_cone(mink):
    lat, kernels = mink
    outside = ~lat.precedes.T
    assert np.all(kernels.gR.matrix[outside] == 0.0)


def test_hadamard_positivity(time1d, mink):
    for lat, kernels in (time1d, mink):
        assert hadamard_positivity(lat, kernels.gPlus) > -1e-10


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 16))
def test_two_point_function_is_positive_on_random_test_functions(seed):
    lat = build_lattice(MINK)
    kernels = build_kernels(lat)
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(lat.n_sites) + 1j * rng.standard_normal(lat.n_sites)
    value = lat.weight ** 2 * (f.conj() @ kernels.gPlus.matrix @ f)
    assert value.real >= -1e-10 * max(1.0, np.linalg.norm(f) ** 2)
    assert abs(value.imag) <= 1e-9 * max(1.0, np.linalg.norm(f) ** 2)


def test_causal_propagator_spans_the_solution_space(time1d):
    lat, kernels = time1d
    basis = solution_basis(kernels.op).basis
    assert basis.shape[0] == 2
    # every column of G^C is a combination of the two mode solutions
    coeffs, *_ = np.linalg.lstsq(basis.T, kernels.gC.matrix, rcond=None)
    assert_allclose(basis.T @ coeffs, kernels.gC.matrix, atol=1e-9)


def test_sub_lattice_kernel_is_the_restriction(mink):
    lat, kernels = mink
    sub = sub_lattice(lat, 3, 8)
    sub_kernels = build_kernels(sub)
    idx = np.arange(3 * lat.n_space, 9 * lat.n_space)
    assert_allclose(sub_kernels.gR.matrix, kernels.gR.matrix[np.ix_(idx, idx)], atol=1e-14)


def test_kernels_are_cached_per_lattice():
    assert build_kernels(build_lattice(MINK)) is build_kernels(build_lattice(MINK))


def test_corrupted_kernel_is_detected(time1d):
    _, kernels = time1d
    report = verify_green_identities(kernels.op, corrupt_kernels(kernels))
    assert not report.passed
    assert report.record("green.retarded.delta").status == "fail"
    # the pristine set is untouched
    assert verify_green_identities(kernels.op, kernels).record("green.retarded.delta").status == "pass"
