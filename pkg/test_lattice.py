"""
Lattice and region tests
========================

Lattice validation, the discrete causal order and causally convex regions.

Usage:
    pytest test_lattice.py
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errors import EmptyRegion, InvalidSpec, LengthMismatch, OutOfBounds, SiteOutOfBounds
from lattice import (
    CausalRelation,
    Diamond,
    Interval,
    Site,
    build_lattice,
    causal_relation,
    cauchy_neighborhood,
    full_region,
    general_region,
    is_causally_convex,
    lattice_summary,
    make_region,
    minimal_time_slab,
    pairing,
    region_relations,
)

MINK = {"dimension": "mink2d", "n_time": 40, "n_space": 16, "dt": 0.1, "dx": 0.2, "mass": 1.0}
MINK_LIGHTLIKE = {"dimension": "mink2d", "n_time": 20, "n_space": 15, "dt": 0.1, "dx": 0.1, "mass": 1.0}


def test_build_minkowski_lattice():
    lat = build_lattice(MINK)
    assert lat.n_sites == 640
    assert lat.weight == pytest.approx(0.02)


def test_lattice_summary():
    assert lattice_summary(build_lattice(MINK)) == "mink2d 40x16 dt=0.1 dx=0.2 m=1 w=0.02 cfl=0.5"
    summary = lattice_summary(build_lattice({"dimension": "time1d", "n_time": 100, "dt": 0.05, "mass": 1.0}))
    assert summary.startswith("time1d 100x1 dt=0.05 ")
    assert summary.endswith("cfl=nan")


def test_build_time1d_ignores_spatial_keys():
    lat = build_lattice({"dimension": "time1d", "n_time": 100, "n_space": 7, "dt": 0.05, "dx": 3.0, "mass": 1.0})
    assert lat.n_space == 1
    assert lat.n_sites == 100
    assert lat.weight == pytest.approx(0.05)


@pytest.mark.parametrize("override", [
    {"dt": 0.3},        # CFL dt <= dx violated
    {"mass": 0.0},
    {"mass": -1.0},
    {"dt": -0.1},
    {"n_time": 2},
])
def test_invalid_specs(override):
    with pytest.raises(InvalidSpec):
        build_lattice({**MINK, **override})


def test_imaginary_top_mode_rejected():
    # dt = dx with an even circle realizes the k = n/2 mode, whose frequency is complex
    with pytest.raises(InvalidSpec):
        build_lattice({**MINK_LIGHTLIKE, "n_space": 16})


def test_site_cap():
    with pytest.raises(InvalidSpec):
        build_lattice(MINK, site_cap=100)


def test_index_round_trip_and_bounds():
    lat = build_lattice(MINK)
    assert lat.site(lat.index(Site(3, 7))) == Site(3, 7)
    with pytest.raises(SiteOutOfBounds):
        lat.index(Site(40, 0))
    with pytest.raises(SiteOutOfBounds):
        lat.site(-1)


def test_causal_relations():
    lat = build_lattice(MINK_LIGHTLIKE)
    assert causal_relation(lat, Site(0, 0), Site(2, 5)) == CausalRelation.SPACELIKE
    assert causal_relation(lat, Site(0, 0), Site(2, 2)) == CausalRelation.PAST
    assert causal_relation(lat, Site(2, 2), Site(0, 0)) == CausalRelation.FUTURE
    assert causal_relation(lat, Site(1, 1), Site(1, 1)) == CausalRelation.COINCIDENT
    # periodic wrap: x = 14 is one step from x = 0
    assert causal_relation(lat, Site(0, 0), Site(1, 14)) == CausalRelation.PAST


def test_precedes_is_a_strict_order():
    lat = build_lattice({**MINK, "n_time": 6, "n_space": 5})
    P = lat.precedes
    assert not np.any(np.diag(P))
    assert not np.any(P & P.T)
    # transitivity on the boolean matrix
    composite = (P.astype(int) @ P.astype(int)) > 0
    assert not np.any(composite & ~P)


def test_diamond_site_count():
    lat = build_lattice(MINK_LIGHTLIKE)
    diamond = make_region(lat, Diamond(Site(10, 8), 3))
    assert diamond.size == 1 + 3 + 5 + 7 + 5 + 3 + 1


def test_interval_region():
    lat = build_lattice(MINK)
    slab = make_region(lat, Interval(2, 4))
    assert slab.size == 3 * 16
    assert slab.time_range() == (2, 4)
    # only the middle row has its full stencil inside the slab
    assert len(slab.margin) == 16


@pytest.mark.parametrize("kind, error", [
    (Interval(5, 3), EmptyRegion),
    (Interval(-1, 3), OutOfBounds),
    (Interval(0, 40), OutOfBounds),
    (Diamond(Site(1, 0), 2), OutOfBounds),
    (Diamond(Site(5, 0), -1), EmptyRegion),
])
def test_make_region_errors(kind, error):
    lat = build_lattice(MINK)
    with pytest.raises(error):
        make_region(lat, kind)


@settings(max_examples=25, deadline=None)
@given(t=st.integers(3, 15), x=st.integers(0, 14), r=st.integers(0, 3))
def test_diamonds_are_causally_convex(t, x, r):
    lat = build_lattice(MINK_LIGHTLIKE)
    assert is_causally_convex(lat, make_region(lat, Diamond(Site(t, x), r)))


@settings(max_examples=25, deadline=None)
@given(t0=st.integers(0, 19), width=st.integers(0, 5))
def test_intervals_are_causally_convex(t0, width):
    lat = build_lattice(MINK_LIGHTLIKE)
    t1 = min(t0 + width, lat.n_time - 1)
    assert is_causally_convex(lat, make_region(lat, Interval(t0, t1)))


def test_two_separated_sites_are_not_convex():
    lat = build_lattice(MINK_LIGHTLIKE)
    region = general_region(lat, [lat.index(Site(2, 3)), lat.index(Site(6, 3))])
    assert not is_causally_convex(lat, region)


def test_region_relations():
    lat = build_lattice(MINK)
    left = make_region(lat, Diamond(Site(10, 3), 1))
    right = make_region(lat, Diamond(Site(10, 11), 1))
    later = make_region(lat, Diamond(Site(20, 3), 1))
    rel = region_relations(lat, left, right)
    assert rel["spacelike_separated"]
    assert rel["causally_convex_1"] and rel["causally_convex_2"]
    rel = region_relations(lat, left, later)
    assert not rel["spacelike_separated"]
    assert rel["r1_precedes_r2"]
    assert not rel["r2_precedes_r1"]


def test_region_set_operations():
    lat = build_lattice(MINK)
    a = make_region(lat, Interval(2, 3))
    b = make_region(lat, Interval(3, 5))
    assert not a.is_disjoint(b)
    assert a.union(b).size == 4 * 16
    assert full_region(lat).contains(a)
    assert a.contains(general_region(lat, []))


def test_cauchy_neighborhood_and_slab():
    lat = build_lattice(MINK)
    slab = cauchy_neighborhood(lat, 10, 2)
    assert slab.time_range() == (8, 12)
    with pytest.raises(OutOfBounds):
        cauchy_neighborhood(lat, 1, 2)
    with pytest.raises(OutOfBounds):
        cauchy_neighborhood(lat, 10, 0)
    hull = minimal_time_slab(lat, [lat.index(Site(4, 1)), lat.index(Site(7, 9))])
    assert hull.time_range() == (4, 7)
    assert hull.size == 4 * 16


def test_pairing():
    lat = build_lattice({"dimension": "time1d", "n_time": 10, "dt": 0.5, "mass": 1.0})
    f = np.arange(10.0)
    g = np.ones(10)
    assert pairing(lat, f, g) == pytest.approx(0.5 * 45.0)
    assert pairing(lat, f, g) == pairing(lat, g, f)
    with pytest.raises(LengthMismatch):
        pairing(lat, f, np.ones(9))
