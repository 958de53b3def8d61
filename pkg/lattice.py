"""
Discretized Spacetimes
======================

Finite lattices standing in for globally hyperbolic spacetimes: a time grid
(Time1D) or a time grid times a periodic spatial circle (Minkowski2D). This
module owns the discrete causal order, causally convex regions, Cauchy slabs
and the integration pairing of grid functions.

Site indices are flat: ``index = t_index * n_space + x_index``, so sorting by
index is sorting lexicographically by ``(t_index, x_index)``.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Dict, Iterable, Tuple, Union

import numpy as np

from errors import EmptyRegion, InvalidSpec, LengthMismatch, OutOfBounds, SiteOutOfBounds

logger = logging.getLogger(__name__)

DEFAULT_SITE_CAP = 4096

# A field configuration is a complex value per lattice site.
FieldConfiguration = np.ndarray


class Dimension(str, Enum):
    TIME1D = "time1d"
    MINKOWSKI2D = "mink2d"


class CausalRelation(str, Enum):
    PAST = "past"
    FUTURE = "future"
    SPACELIKE = "spacelike"
    COINCIDENT = "coincident"


class ShapeTag(str, Enum):
    INTERVAL = "interval"
    DIAMOND = "diamond"
    GENERAL = "general"


@dataclass(frozen=True)
class Site:
    t_index: int
    x_index: int = 0


@dataclass(frozen=True)
class Lattice:
    """A validated finite discretization; build it with :func:`build_lattice`."""

    dimension: Dimension
    n_time: int
    n_space: int
    dt: float
    dx: float
    mass: float

    @property
    def n_sites(self) -> int:
        return self.n_time * self.n_space

    @property
    def weight(self) -> float:
        """Uniform cell volume w used by every pairing."""
        if self.dimension == Dimension.TIME1D:
            return self.dt
        return self.dt * self.dx

    @property
    def spatial_cell(self) -> float:
        """Spatial cell factor entering the mode sums (1 for Time1D)."""
        return 1.0 if self.dimension == Dimension.TIME1D else self.dx

    @cached_property
    def t_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_time), self.n_space)

    @cached_property
    def x_of(self) -> np.ndarray:
        return np.tile(np.arange(self.n_space), self.n_time)

    @cached_property
    def precedes(self) -> np.ndarray:
        """Boolean matrix, ``precedes[a, b]`` iff site a strictly causally precedes b."""
        dt_idx = self.t_of[None, :] - self.t_of[:, None]
        if self.dimension == Dimension.TIME1D:
            return dt_idx > 0
        dist = periodic_distance(self.x_of[:, None], self.x_of[None, :], self.n_space)
        return (dt_idx > 0) & (dist <= dt_idx)

    @cached_property
    def mode_frequencies(self) -> np.ndarray:
        """Discrete angular frequencies omega_k per spatial mode k."""
        cos_theta = 1.0 - 0.5 * self.dt ** 2 * (self.mass ** 2 + spatial_eigenvalues(self))
        return np.arccos(cos_theta) / self.dt

    def index(self, site: Site) -> int:
        if not (0 <= site.t_index < self.n_time and 0 <= site.x_index < self.n_space):
            raise SiteOutOfBounds(f"{site} outside {self.n_time}x{self.n_space} lattice")
        return site.t_index * self.n_space + site.x_index

    def site(self, index: int) -> Site:
        if not 0 <= index < self.n_sites:
            raise SiteOutOfBounds(f"site index {index} outside lattice of {self.n_sites} sites")
        return Site(int(index // self.n_space), int(index % self.n_space))

    def neighbors(self, index: int) -> Tuple[int, ...]:
        """Stencil neighbors of a site that exist on the grid."""
        t, x = divmod(int(index), self.n_space)
        out = []
        for dt_step in (-1, 1):
            if 0 <= t + dt_step < self.n_time:
                out.append((t + dt_step) * self.n_space + x)
        if self.dimension == Dimension.MINKOWSKI2D and self.n_space > 1:
            for dx_step in (-1, 1):
                out.append(t * self.n_space + (x + dx_step) % self.n_space)
        return tuple(sorted(set(out)))

    def is_interior(self, index: int) -> bool:
        return 1 <= index // self.n_space <= self.n_time - 2

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dimension": self.dimension.value,
            "n_time": self.n_time,
            "n_space": self.n_space,
            "dt": self.dt,
            "dx": self.dx,
            "mass": self.mass,
        }


def periodic_distance(x_a, x_b, n_space: int):
    """Minimal representative of |x_a - x_b| on the spatial circle."""
    d = np.abs(np.asarray(x_a) - np.asarray(x_b)) % n_space
    return np.minimum(d, n_space - d)


def spatial_eigenvalues(lat: Lattice) -> np.ndarray:
    """Eigenvalues of minus the periodic second difference, one per mode."""
    if lat.dimension == Dimension.TIME1D:
        return np.zeros(1)
    k = np.arange(lat.n_space)
    return (4.0 / lat.dx ** 2) * np.sin(np.pi * k / lat.n_space) ** 2


def build_lattice(spec: Dict[str, Any], site_cap: int = DEFAULT_SITE_CAP) -> Lattice:
    """
    Validate a lattice spec and build the lattice.

    Args:
        spec: mapping with ``dimension``, ``n_time``, ``n_space``, ``dt``,
            ``dx`` and ``mass``; ``n_space``/``dx`` are ignored for Time1D
        site_cap: maximal number of sites

    Returns:
        Validated Lattice with derived caches initialized

    Raises:
        InvalidSpec: for a non-positive mass or step, a CFL violation, an
            imaginary mode frequency or an exceeded size cap
    """
    try:
        dimension = Dimension(spec.get("dimension", Dimension.TIME1D))
        n_time = int(spec["n_time"])
        dt = float(spec["dt"])
        mass = float(spec["mass"])
        if dimension == Dimension.TIME1D:
            n_space, dx = 1, 1.0
        else:
            n_space = int(spec["n_space"])
            dx = float(spec["dx"])
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidSpec(f"malformed lattice spec {spec!r}: {e}") from e

    if mass <= 0:
        raise InvalidSpec(f"mass must be positive, got {mass}")
    if dt <= 0 or dx <= 0:
        raise InvalidSpec(f"steps must be positive, got dt={dt}, dx={dx}")
    if n_time < 3 or n_space < 1:
        raise InvalidSpec(f"need n_time >= 3 and n_space >= 1, got {n_time}x{n_space}")
    if n_time * n_space > site_cap:
        raise InvalidSpec(f"{n_time * n_space} sites exceed the cap of {site_cap}")
    if dimension == Dimension.MINKOWSKI2D and dt > dx:
        raise InvalidSpec(f"CFL violated: dt={dt} > dx={dx}")

    lat = Lattice(dimension, n_time, n_space, dt, dx, mass)

    # every realized spatial mode must have a real, non-degenerate frequency
    stiffness = dt ** 2 * (mass ** 2 + spatial_eigenvalues(lat))
    if np.any(stiffness >= 4.0):
        worst = int(np.argmax(stiffness))
        raise InvalidSpec(f"mode k={worst} has no real frequency (dt^2 (m^2 + lambda_k) = {stiffness[worst]:.4f} >= 4)")

    # warm the caches
    _ = lat.t_of, lat.x_of, lat.mode_frequencies
    logger.info(f"Built lattice {lattice_summary(lat)}")
    return lat


def causal_relation(lat: Lattice, a: Site, b: Site) -> CausalRelation:
    """Discrete causal relation of a with respect to b (Past: a precedes b)."""
    ia, ib = lat.index(a), lat.index(b)
    if ia == ib:
        return CausalRelation.COINCIDENT
    if lat.precedes[ia, ib]:
        return CausalRelation.PAST
    if lat.precedes[ib, ia]:
        return CausalRelation.FUTURE
    return CausalRelation.SPACELIKE


@dataclass(frozen=True)
class Interval:
    t0: int
    t1: int


@dataclass(frozen=True)
class Diamond:
    apex: Site
    radius: int


@dataclass(frozen=True)
class Region:
    """A set of lattice sites, sorted by flat index."""

    lattice: Lattice = field(repr=False)
    indices: Tuple[int, ...]
    shape_tag: ShapeTag = ShapeTag.GENERAL
    parameters: Tuple[Tuple[str, Any], ...] = ()

    @property
    def is_empty(self) -> bool:
        return len(self.indices) == 0

    @property
    def size(self) -> int:
        return len(self.indices)

    @cached_property
    def index_array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=int)

    @cached_property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.lattice.n_sites, dtype=bool)
        m[self.index_array] = True
        return m

    @cached_property
    def margin(self) -> Tuple[int, ...]:
        """Sites with full stencil room inside the region (ext-slot sites)."""
        lat = self.lattice
        return tuple(
            i for i in self.indices
            if lat.is_interior(i) and all(self.mask[j] for j in lat.neighbors(i))
        )

    def sites(self) -> Tuple[Site, ...]:
        return tuple(self.lattice.site(i) for i in self.indices)

    def contains(self, other: "Region") -> bool:
        return bool(np.all(self.mask[other.index_array])) if other.size else True

    def is_disjoint(self, other: "Region") -> bool:
        return not np.any(self.mask & other.mask)

    def time_range(self) -> Tuple[int, int]:
        times = self.lattice.t_of[self.index_array]
        return int(times.min()), int(times.max())

    def union(self, other: "Region") -> "Region":
        if other.contains(self):
            return other
        if self.contains(other):
            return self
        return general_region(self.lattice, set(self.indices) | set(other.indices))

    def to_dict(self) -> Dict[str, Any]:
        return {"shape_tag": self.shape_tag.value, "parameters": dict(self.parameters), "n_sites": self.size}


def general_region(lat: Lattice, indices: Iterable[int]) -> Region:
    idx = tuple(sorted(int(i) for i in set(indices)))
    for i in idx:
        lat.site(i)
    return Region(lat, idx, ShapeTag.GENERAL, (("sites", idx),))


def empty_region(lat: Lattice) -> Region:
    """Sentinel for the support of the zero observable."""
    return Region(lat, (), ShapeTag.GENERAL, ())


def full_region(lat: Lattice) -> Region:
    return make_region(lat, Interval(0, lat.n_time - 1))


def make_region(lat: Lattice, kind: Union[Interval, Diamond]) -> Region:
    """
    Build a causally convex region.

    Args:
        lat: the lattice
        kind: ``Interval(t0, t1)`` (a full time slab) or
            ``Diamond(apex, radius)`` (a discrete double cone)

    Returns:
        Region passing :func:`is_causally_convex`
    """
    if isinstance(kind, Interval):
        if kind.t0 > kind.t1:
            raise EmptyRegion(f"interval [{kind.t0}, {kind.t1}] is empty")
        if kind.t0 < 0 or kind.t1 >= lat.n_time:
            raise OutOfBounds(f"interval [{kind.t0}, {kind.t1}] outside [0, {lat.n_time - 1}]")
        sel = (lat.t_of >= kind.t0) & (lat.t_of <= kind.t1)
        return Region(lat, tuple(int(i) for i in np.flatnonzero(sel)), ShapeTag.INTERVAL,
                      (("t0", kind.t0), ("t1", kind.t1)))

    if isinstance(kind, Diamond):
        apex, r = kind.apex, kind.radius
        if r < 0:
            raise EmptyRegion(f"negative diamond radius {r}")
        lat.index(apex)
        if apex.t_index - r < 0 or apex.t_index + r >= lat.n_time:
            raise OutOfBounds(f"diamond of radius {r} around {apex} leaves the lattice")
        height = r - np.abs(lat.t_of - apex.t_index)
        if lat.dimension == Dimension.TIME1D:
            sel = height >= 0
        else:
            sel = periodic_distance(lat.x_of, apex.x_index, lat.n_space) <= height
        return Region(lat, tuple(int(i) for i in np.flatnonzero(sel)), ShapeTag.DIAMOND,
                      (("apex", (apex.t_index, apex.x_index)), ("radius", r)))

    raise TypeError(f"unknown region kind {kind!r}")


def causal_hull(lat: Lattice, indices: Iterable[int]) -> np.ndarray:
    """Mask of the sites lying on causal segments between sites of the set."""
    mask = np.zeros(lat.n_sites, dtype=bool)
    mask[list(indices)] = True
    future = lat.precedes[mask, :].any(axis=0)
    past = lat.precedes[:, mask].any(axis=1)
    return mask | (future & past)


def is_causally_convex(lat: Lattice, region: Region) -> bool:
    return bool(np.array_equal(causal_hull(lat, region.indices), region.mask))


def region_relations(lat: Lattice, r1: Region, r2: Region) -> Dict[str, bool]:
    """
    Causal relations between two regions.

    ``r1_precedes_r2`` holds when no site of r2 lies in the causal past of
    (or coincides with) a site of r1, i.e. a Cauchy surface can separate them
    with r1 to its past.
    """
    a, b = r1.index_array, r2.index_array
    prec = lat.precedes
    a_before_b = prec[np.ix_(a, b)]
    b_before_a = prec[np.ix_(b, a)]
    overlap = bool(np.any(r1.mask & r2.mask))
    return {
        "spacelike_separated": not overlap and not a_before_b.any() and not b_before_a.any(),
        "causally_convex_1": is_causally_convex(lat, r1),
        "causally_convex_2": is_causally_convex(lat, r2),
        "r1_precedes_r2": not overlap and not b_before_a.any(),
        "r2_precedes_r1": not overlap and not a_before_b.any(),
    }


def pairing(lat: Lattice, f: FieldConfiguration, g: FieldConfiguration) -> complex:
    """Weighted bilinear pairing ``w * sum_s f(s) g(s)``."""
    f, g = np.asarray(f), np.asarray(g)
    if f.shape != g.shape or f.shape != (lat.n_sites,):
        raise LengthMismatch(f"pairing of shapes {f.shape} and {g.shape} on {lat.n_sites} sites")
    return complex(lat.weight * np.dot(f, g))


def cauchy_neighborhood(lat: Lattice, t_star: int, halfwidth: int) -> Region:
    """Time slab ``[t_star - halfwidth, t_star + halfwidth]`` around a constant-time surface."""
    if halfwidth < 1:
        raise OutOfBounds(f"halfwidth must be at least 1, got {halfwidth}")
    if t_star - halfwidth < 0 or t_star + halfwidth >= lat.n_time:
        raise OutOfBounds(f"slab around t={t_star} of halfwidth {halfwidth} leaves the lattice")
    return make_region(lat, Interval(t_star - halfwidth, t_star + halfwidth))


def delta_smearing(lat: Lattice, index: int) -> FieldConfiguration:
    """Test function whose smeared field is the field value at one site."""
    f = np.zeros(lat.n_sites, dtype=complex)
    f[index] = 1.0 / lat.weight
    return f


def minimal_time_slab(lat: Lattice, indices: Iterable[int]) -> Region:
    idx = list(indices)
    times = lat.t_of[idx]
    return make_region(lat, Interval(int(times.min()), int(times.max())))


def lattice_summary(lat: Lattice) -> str:
    return (f"{lat.dimension.value} {lat.n_time}x{lat.n_space} "
            f"dt={lat.dt:g} dx={lat.dx:g} m={lat.mass:g} w={lat.weight:g} "
            f"cfl={lat.dt / lat.dx if lat.dimension == Dimension.MINKOWSKI2D else math.nan:.3g}")
