"""
Models
======

The four free models as executable objects over regions: the classical and
quantum nets (Peierls bracket, star product) and the classical and quantum
factorization algebras (Koszul and BV differentials), with their structure
maps and the net / factorization-algebra axioms: Einstein causality,
multiplicativity, the Weiss cosheaf condition and the time-slice axiom via
beta-transport.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

import bv
from errors import (
    BadOrdering,
    KindMismatch,
    NotContained,
    NotDisjoint,
    PreconditionViolated,
    SupportViolation,
)
from lattice import (
    Dimension,
    Lattice,
    Region,
    ShapeTag,
    cauchy_neighborhood,
    empty_region,
    full_region,
    general_region,
    periodic_distance,
    region_relations,
)
from observables import (
    Bidegree,
    DEFAULT_TRUNCATION,
    PolyObservable,
    Truncation,
    Vector,
    constant,
    extend,
    generator,
    max_abs_difference,
    multiply,
    random_observable,
    restrict,
    support,
)
from products import peierls_observable, shifted_bracket, star, time_ordered
from propagators import KernelSet, build_kernels, numerical_rank
from report_manager import CheckReport

logger = logging.getLogger(__name__)


class ModelTag(str, Enum):
    FR_CLASSICAL = "FRClassical"
    FR_QUANTUM = "FRQuantum"
    CG_CLASSICAL = "CGClassical"
    CG_QUANTUM = "CGQuantum"


class BetaMode(str, Enum):
    PLUS = "plus"
    MINUS = "minus"
    COMBINED = "combined"


@dataclass(frozen=True)
class ObservableSpace:
    """Descriptor of the degree-truncated cochains of a model over one region."""

    region: Region
    truncation: Truncation
    differential: str
    dims: Dict[Bidegree, int] = field(default_factory=dict)

    @property
    def total_dim(self) -> int:
        return sum(self.dims.values())


@dataclass(frozen=True, eq=False)
class ModelHandle:
    """
    Dispatch table of one model on one lattice.

    FR models carry the cochain-level dg model ``(PV, delta_S)`` whose H^0 is
    the on-shell algebra; CG models carry the Koszul or BV differential.
    """

    tag: ModelTag
    lattice: Lattice = field(repr=False)
    kernels: KernelSet = field(repr=False)
    truncation: Truncation = DEFAULT_TRUNCATION
    logger: logging.Logger = field(default_factory=lambda: logging.getLogger(__name__), repr=False)

    @property
    def is_quantum(self) -> bool:
        return self.tag in (ModelTag.FR_QUANTUM, ModelTag.CG_QUANTUM)

    @property
    def is_factorization(self) -> bool:
        return self.tag in (ModelTag.CG_CLASSICAL, ModelTag.CG_QUANTUM)

    @property
    def differential_kind(self) -> bv.Differential:
        return bv.Differential.QUANTUM if self.tag == ModelTag.CG_QUANTUM else bv.Differential.CLASSICAL

    def space(self, region: Region) -> ObservableSpace:
        M = region.size
        E = len(region.margin)
        dims = {}
        for n in range(self.truncation.d_max + 1):
            sym = math.comb(M + n - 1, n) if M else int(n == 0)
            for k in range(self.truncation.a_max + 1):
                dims[(n, k)] = sym * math.comb(E, k)
        return ObservableSpace(region, self.truncation, self.differential_kind.value, dims)

    def differential(self, A: PolyObservable) -> PolyObservable:
        if self.tag == ModelTag.CG_QUANTUM:
            return bv.quantum_differential(A, self.kernels.op)
        return bv.koszul_differential(A, self.kernels.op)

    def product(self, A: PolyObservable, B: PolyObservable) -> PolyObservable:
        """The distinguished product: star for the quantum net, pointwise otherwise."""
        if self.tag == ModelTag.FR_QUANTUM:
            return star(A, B, self.kernels)
        return multiply(A, B)

    def commutative_product(self, A: PolyObservable, B: PolyObservable) -> PolyObservable:
        """Product used by the factorization structure maps (time-ordered for the quantum net)."""
        if self.tag == ModelTag.FR_QUANTUM:
            return time_ordered(A, B, self.kernels)
        return multiply(A, B)

    def bracket(self, A: PolyObservable, B: PolyObservable) -> PolyObservable:
        if self.tag == ModelTag.FR_CLASSICAL:
            return peierls_observable(A, B, self.kernels)
        if self.tag == ModelTag.FR_QUANTUM:
            return star(A, B, self.kernels) - star(B, A, self.kernels)
        return shifted_bracket(A, B)

    def structure_map(self, A: PolyObservable, into: Region) -> PolyObservable:
        return extend(A, into)


def instantiate(tag, lat: Lattice, truncation: Truncation = DEFAULT_TRUNCATION) -> ModelHandle:
    handle = ModelHandle(ModelTag(tag), lat, build_kernels(lat), truncation)
    handle.logger.debug(f"Instantiated {handle.tag.value} on {lat.n_time}x{lat.n_space}")
    return handle


def factorization_product(handle: ModelHandle, inputs: Sequence[Tuple[Region, PolyObservable]],
                          into: Region) -> PolyObservable:
    """
    Structure map for pairwise disjoint regions inside ``into``.

    Args:
        handle: model whose commutative product is used
        inputs: ``(region, observable)`` pairs; each observable must be
            supported in its region
        into: target region

    Returns:
        Product of the extended inputs; inputs are ordered by their first
        site so the result does not depend on the input order

    Raises:
        NotDisjoint: if two input regions overlap
        NotContained: if an input region leaves ``into``
    """
    for (r1, _), (r2, _) in combinations(inputs, 2):
        if not r1.is_disjoint(r2):
            raise NotDisjoint("factorization inputs must live on pairwise disjoint regions")
    for region, _ in inputs:
        if not into.contains(region):
            raise NotContained("factorization input region is not inside the target region")
    if not inputs:
        return extend(constant(handle.lattice, 1.0, handle.truncation), into)

    ordered = sorted(inputs, key=lambda item: item[0].indices[0] if item[0].size else -1)
    result = None
    for region, A in ordered:
        local = extend(extend(A, region), into)
        result = local if result is None else handle.commutative_product(result, local)
    return result


def commutator_deviation(handle: ModelHandle, A: PolyObservable, B: PolyObservable) -> float:
    """Size of the bracket (nets) or of the antibracket (factorization algebras) of A and B."""
    return handle.bracket(A, B).norm()


def einstein_causality_check(handle: ModelHandle, r1: Region, r2: Region, seeds: Sequence[int] = (0, 1, 2),
                             witness_region: Optional[Region] = None) -> CheckReport:
    """
    Brackets of observables from spacelike separated regions vanish exactly.

    Raises:
        PreconditionViolated: if the regions are not spacelike separated
    """
    lat = handle.lattice
    relations = region_relations(lat, r1, r2)
    if not relations["spacelike_separated"]:
        raise PreconditionViolated("einstein causality needs spacelike separated regions")
    report = CheckReport("einstein_causality", {"model": handle.tag.value, "n_sites": [r1.size, r2.size]})
    into = witness_region or r1.union(r2)
    k_max = 1 if handle.is_factorization else 0
    worst = 0.0
    for seed in seeds:
        A = extend(random_observable(lat, r1, seed, n_max=2, k_max=k_max, truncation=handle.truncation), into)
        B = extend(random_observable(lat, r2, seed + 7_000, n_max=2, k_max=k_max,
                                     truncation=handle.truncation), into)
        worst = max(worst, commutator_deviation(handle, A, B))
    report.add("causality.bracket", "Spacelike-separated observables commute", worst, 0.0)
    return report


def _monomial_basis(region: Region, max_degree: int, kernels: KernelSet) -> bv.CochainComplexSlice:
    return bv.ComplexBuilder(region, kernels).build(max_degree, 0)


def extension_matrix(source: Region, target: Region, max_degree: int, kernels: KernelSet,
                     truncation: Truncation = DEFAULT_TRUNCATION) -> np.ndarray:
    """Matrix of ``extend`` on antifield-free monomials of degree at most ``max_degree``."""
    cx_s = _monomial_basis(source, max_degree, kernels)
    cx_t = _monomial_basis(target, max_degree, kernels)
    keys = [(n, 0) for n in range(max_degree + 1)]
    rows = sum(cx_t.dim(key) for key in keys)
    cols = sum(cx_s.dim(key) for key in keys)
    out = np.zeros((rows, cols), dtype=complex)
    r_off = c_off = 0
    for key in keys:
        for i in range(cx_s.dim(key)):
            unit = np.zeros(cx_s.dim(key))
            unit[i] = 1.0
            mono = bv.from_monomials(cx_s, key, unit, truncation)
            out[r_off:r_off + cx_t.dim(key), c_off + i] = bv.to_monomials(extend(mono, target), cx_t, key)
        r_off += cx_t.dim(key)
        c_off += cx_s.dim(key)
    return out


def multiplicativity_check(handle: ModelHandle, v1: Region, v2: Region, max_degree: int = 2,
                           rank_threshold: float = bv.DEFAULT_RANK_THRESHOLD) -> CheckReport:
    """
    ``F(V1) (x) F(V2) -> F(V1 u V2)`` is an isomorphism on degree-truncated functions.

    Raises:
        NotDisjoint: if the regions overlap
    """
    if not v1.is_disjoint(v2):
        raise NotDisjoint("multiplicativity needs disjoint regions")
    lat = handle.lattice
    union = v1.union(v2)
    report = CheckReport("multiplicativity", {"model": handle.tag.value, "sizes": [v1.size, v2.size],
                                              "max_degree": max_degree})
    cx1 = _monomial_basis(v1, max_degree, handle.kernels)
    cx2 = _monomial_basis(v2, max_degree, handle.kernels)
    cxu = _monomial_basis(union, max_degree, handle.kernels)

    expected = sum(cx1.dim((a, 0)) * cx2.dim((b, 0))
                   for a in range(max_degree + 1) for b in range(max_degree + 1 - a))
    actual = sum(cxu.dim((n, 0)) for n in range(max_degree + 1))
    report.add("multiplicativity.dimension", "the structure map of disjoint opens is an isomorphism",
               abs(expected - actual), 0, witness_ref=f"dim={actual}")

    rank = 0
    for total in range(max_degree + 1):
        columns = []
        for a in range(total + 1):
            b = total - a
            for i in range(cx1.dim((a, 0))):
                for j in range(cx2.dim((b, 0))):
                    m1 = bv.from_monomials(cx1, (a, 0), _unit(cx1.dim((a, 0)), i), handle.truncation)
                    m2 = bv.from_monomials(cx2, (b, 0), _unit(cx2.dim((b, 0)), j), handle.truncation)
                    prod = factorization_product(handle, [(v1, m1), (v2, m2)], union)
                    columns.append(bv.to_monomials(prod, cxu, (total, 0)))
        if columns:
            rank += numerical_rank(np.array(columns).T, rank_threshold)
    report.add("multiplicativity.rank", "the image of the structure map spans the target",
               abs(rank - actual), 0, witness_ref=f"rank={rank}")
    return report


def _unit(size: int, i: int) -> np.ndarray:
    e = np.zeros(size)
    e[i] = 1.0
    return e


@dataclass(frozen=True)
class CoverSpec:
    target: Region
    members: Tuple[Region, ...]

    def weiss_degree(self, up_to: Optional[int] = None) -> int:
        """Largest D such that every set of at most D target sites lies in one member."""
        limit = self.target.size if up_to is None else min(up_to, self.target.size)
        masks = [m.mask for m in self.members]
        degree = 0
        for d in range(1, limit + 1):
            for subset in combinations(self.target.indices, d):
                if not any(all(mask[s] for s in subset) for mask in masks):
                    return degree
            degree = d
        return degree


def weiss_cosheaf_check(handle: ModelHandle, cover: CoverSpec, max_degree: int = 2,
                        rank_threshold: float = bv.DEFAULT_RANK_THRESHOLD) -> CheckReport:
    """
    Coequalizer of ``(+) F(U_i n U_j) => (+) F(U_i) -> F(U)`` on degree-truncated functions.

    Raises:
        KindMismatch: for handles that are not factorization algebras
    """
    if not handle.is_factorization:
        raise KindMismatch(f"cosheaf condition is checked for factorization models, got {handle.tag.value}")
    lat = handle.lattice
    U = cover.target
    members = list(cover.members)
    for m in members:
        if not U.contains(m):
            raise NotContained("cover member is not inside the target region")
    report = CheckReport("weiss_cosheaf", {"model": handle.tag.value, "n_sites": U.size,
                                           "n_members": len(members), "max_degree": max_degree})
    degree = cover.weiss_degree(up_to=max_degree)
    report.add_flag("weiss.degree", "every finite set of points lies in a single member",
                    degree >= max_degree, witness_ref=f"weiss_degree={degree}")

    into_u = [extension_matrix(m, U, max_degree, handle.kernels, handle.truncation) for m in members]
    offsets = np.cumsum([0] + [e.shape[1] for e in into_u])
    total_members = int(offsets[-1])
    blocks = []
    for i, j in combinations(range(len(members)), 2):
        inter = general_region(lat, set(members[i].indices) & set(members[j].indices))
        to_i = extension_matrix(inter, members[i], max_degree, handle.kernels, handle.truncation)
        to_j = extension_matrix(inter, members[j], max_degree, handle.kernels, handle.truncation)
        block = np.zeros((total_members, to_i.shape[1]), dtype=complex)
        block[offsets[i]:offsets[i + 1]] = to_i
        block[offsets[j]:offsets[j + 1]] = -to_j
        blocks.append(block)
    difference = np.hstack(blocks) if blocks else np.zeros((total_members, 0))
    summed = np.hstack(into_u) if into_u else np.zeros((0, 0))
    dim_u = summed.shape[0]

    coker = total_members - (numerical_rank(difference, rank_threshold) if difference.size else 0)
    image = numerical_rank(summed, rank_threshold) if summed.size else 0
    composite = float(np.max(np.abs(summed @ difference))) if difference.size and summed.size else 0.0
    report.add("cosheaf.composite", "the two maps agree on overlaps", composite, 1e-12)
    report.add("cosheaf.coequalizer", "the underlying precosheaf is a cosheaf",
               abs(coker - dim_u) + abs(image - dim_u), 0, witness_ref=f"coker={coker}, dim={dim_u}")
    handle.logger.info(f"Weiss check on {U.size} sites: coker {coker}, target {dim_u}, degree {degree}")
    return report


def associativity_check(handle: ModelHandle, inner: Sequence[Region], outer: Region, middle: Region,
                        seed: int = 0, tolerance: float = 1e-12) -> CheckReport:
    """
    Prefactorization associativity for ``inner[0], inner[1] -> middle`` followed by
    ``middle, inner[2] -> outer`` against the direct three-fold map.
    """
    lat = handle.lattice
    report = CheckReport("prefactorization_associativity", {"model": handle.tag.value})
    obs = [random_observable(lat, r, seed + 100 * i, n_max=1, k_max=0, truncation=handle.truncation)
           for i, r in enumerate(inner)]
    nested = factorization_product(handle, [(inner[0], obs[0]), (inner[1], obs[1])], middle)
    two_step = factorization_product(handle, [(middle, nested), (inner[2], obs[2])], outer)
    direct = factorization_product(handle, list(zip(inner, obs)), outer)
    scale = max(direct.norm(), 1.0)
    report.add("prefactorization.associativity", "structure maps compose associatively",
               max_abs_difference(two_step, direct) / scale, tolerance)
    composed = extend(extend(obs[0], middle), outer)
    report.add("prefactorization.functoriality", "structure maps compose",
               max_abs_difference(composed, extend(obs[0], outer)), 0.0)
    return report


def isotony_check(lat: Lattice, U: Region, V: Region, seed: int = 0) -> CheckReport:
    """Extension from U to V is injective on observables."""
    report = CheckReport("isotony", {"sizes": [U.size, V.size]})
    A = random_observable(lat, U, seed, n_max=2, k_max=1)
    back = restrict(extend(A, V), U)
    report.add("isotony.injective", "the structure maps are injective", max_abs_difference(A, back), 0.0)
    return report


# ---------------------------------------------------------------------------
# cutoffs and beta-transport


@dataclass(frozen=True, eq=False)
class CutoffProfile:
    lattice: Lattice = field(repr=False)
    region: Region = field(repr=False)
    sigma_minus: int
    sigma: int
    sigma_plus: int
    values: np.ndarray = field(repr=False)

    def on_sites(self) -> np.ndarray:
        """chi as a grid function."""
        return self.values[self.lattice.t_of]


def smoothstep(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def make_cutoff(lat: Lattice, N: Region, sigma_minus: int, sigma: int, sigma_plus: int,
                values: Optional[Sequence[float]] = None) -> CutoffProfile:
    """
    Monotone cutoff with chi = 1 up to ``sigma_minus`` and chi = 0 from ``sigma_plus`` on.

    Args:
        lat: the lattice
        N: slab the three surfaces must lie in, with one row of margin
        sigma_minus: last row with chi = 1
        sigma: middle surface
        sigma_plus: first row with chi = 0
        values: explicit per-row values instead of the smoothstep

    Raises:
        BadOrdering: if the surfaces are not strictly ordered inside N or the
            explicit values are not a valid cutoff
    """
    t0, t1 = N.time_range()
    if not (t0 < sigma_minus < sigma < sigma_plus < t1):
        raise BadOrdering(f"need {t0} < {sigma_minus} < {sigma} < {sigma_plus} < {t1}")
    t = np.arange(lat.n_time, dtype=float)
    if values is None:
        chi = 1.0 - smoothstep((t - sigma_minus) / (sigma_plus - sigma_minus))
    else:
        chi = np.asarray(values, dtype=float)
        if chi.shape != (lat.n_time,):
            raise BadOrdering(f"cutoff needs one value per time row, got {chi.shape}")
        if np.any(np.diff(chi) > 0.0) or np.any(chi < 0.0) or np.any(chi > 1.0):
            raise BadOrdering("cutoff values must be non-increasing within [0, 1]")
        if np.any(chi[: sigma_minus + 1] != 1.0) or np.any(chi[sigma_plus:] != 0.0):
            raise BadOrdering("cutoff must be 1 up to sigma_minus and 0 from sigma_plus on")
    return CutoffProfile(lat, N, sigma_minus, sigma, sigma_plus, chi)


def beta_generator(chi: CutoffProfile, mode: BetaMode, kernels: Optional[KernelSet] = None,
                   drop_cutoff: bool = False) -> np.ndarray:
    """
    Matrix U with ``beta(f) = f + P^T U f``; ``O_{beta f} - O_f = delta_S(O^#_{U f})``.

    ``drop_cutoff`` replaces chi by 1 (negative control).
    """
    lat = chi.lattice
    kernels = kernels or build_kernels(lat)
    w = lat.weight
    c = np.ones(lat.n_sites) if drop_cutoff else chi.on_sites()
    past = c[:, None] * (w * kernels.gR.matrix)
    future = (1.0 - c)[:, None] * (w * kernels.gA.matrix)
    mode = BetaMode(mode)
    if mode == BetaMode.PLUS:
        return -past
    if mode == BetaMode.MINUS:
        return -future
    return -(past * c[None, :] + future * (1.0 - c)[None, :])


def beta_matrix(chi: CutoffProfile, mode: BetaMode, kernels: Optional[KernelSet] = None,
                drop_cutoff: bool = False) -> np.ndarray:
    kernels = kernels or build_kernels(chi.lattice)
    U = beta_generator(chi, mode, kernels, drop_cutoff)
    return np.eye(chi.lattice.n_sites) + kernels.op.matrix.T @ U


def beta_witness(f: np.ndarray, chi: CutoffProfile, mode: BetaMode,
                 kernels: Optional[KernelSet] = None) -> np.ndarray:
    """Test function u with ``O_{beta f} - O_f = delta_S(O^#_u)``."""
    return beta_generator(chi, mode, kernels) @ np.asarray(f)


def beta_transport(f: np.ndarray, chi: CutoffProfile, mode: BetaMode = BetaMode.PLUS,
                   kernels: Optional[KernelSet] = None) -> np.ndarray:
    """
    Move a test function into the slab of the cutoff.

    Raises:
        SupportViolation: if f violates the support precondition of the mode
            or the result leaves the slab
    """
    lat = chi.lattice
    kernels = kernels or build_kernels(lat)
    f = np.asarray(f)
    mode = BetaMode(mode)
    supp_t = lat.t_of[np.flatnonzero(f)]
    if supp_t.size:
        if mode == BetaMode.PLUS and supp_t.max() >= chi.sigma_plus:
            raise SupportViolation("plus transport needs f supported before sigma_plus")
        if mode == BetaMode.MINUS and supp_t.min() <= chi.sigma_minus:
            raise SupportViolation("minus transport needs f supported after sigma_minus")
    u = beta_witness(f, chi, mode, kernels)
    result = f + kernels.op.apply_to_test_function(u)
    leak = np.abs(result[~chi.region.mask])
    if leak.size and np.max(leak) > 1e-10 * max(1.0, float(np.max(np.abs(f)))):
        raise SupportViolation(f"transported function leaks {np.max(leak):.3e} out of the slab")
    result[~chi.region.mask] = 0.0
    return result


def transport_observable(A: PolyObservable, matrix: np.ndarray) -> PolyObservable:
    """Apply a test-function map to every field slot of an antifield-free observable (result on the full grid)."""
    if A.max_ext_degree() > 0:
        raise KindMismatch("transport acts on antifield-free observables")
    full = extend(A, full_region(A.lattice))
    terms = {}
    for (n, k), t in full.terms.items():
        for axis in range(1, n + 1):
            t = np.moveaxis(np.tensordot(matrix, t, axes=([1], [axis])), 0, axis)
        terms[(n, k)] = t
    return PolyObservable(full.region, terms, A.truncation)


def outside_norm(A: PolyObservable, region: Region) -> float:
    """Largest coefficient of A touching a site outside ``region``."""
    inside = restrict(A, general_region(A.lattice, set(A.region.indices) & set(region.indices)))
    return max_abs_difference(A, inside)


def time_slice_check(handle: ModelHandle, O: Region, N: Region, max_degree: int = 2,
                     drop_cutoff: bool = False, tolerance: float = 1e-9) -> CheckReport:
    """
    Time-slice axiom: extension ``H^0(N) -> H^0(O)`` is bijective and
    beta-transport back into N is the identity on classes.

    ``drop_cutoff`` replaces chi by 1; the transported classes then leak out
    of N and the roundtrip records fail.

    Raises:
        PreconditionViolated: if N is not a slab of halfwidth at least 2 inside O
    """
    lat = handle.lattice
    if N.shape_tag != ShapeTag.INTERVAL or not O.contains(N):
        raise PreconditionViolated("time-slice needs an interval slab N inside O")
    t0, t1 = N.time_range()
    if t1 - t0 < 4:
        raise PreconditionViolated(f"slab [{t0}, {t1}] is thinner than halfwidth 2")
    kernels = handle.kernels
    chi = make_cutoff(lat, N, t0 + 1, (t0 + t1) // 2, t1 - 1)
    B = beta_matrix(chi, BetaMode.COMBINED, kernels, drop_cutoff)
    U = beta_generator(chi, BetaMode.COMBINED, kernels, drop_cutoff)
    report = CheckReport("time_slice", {"model": handle.tag.value, "slab": [t0, t1],
                                        "drop_cutoff": drop_cutoff})

    coh_n = bv.cohomology(N, bv.Differential.CLASSICAL, max_degree, kernels, max_ext_degree=1,
                          truncation=handle.truncation)
    coh_o = bv.cohomology(O, bv.Differential.CLASSICAL, max_degree, kernels, max_ext_degree=1,
                          truncation=handle.truncation, with_representatives=False)
    report.add("time_slice.dimensions", "the map P(N) -> P(O) is a quasi-isomorphism",
               sum(abs(a - b) for a, b in zip(coh_n.h0_by_sym_degree, coh_o.h0_by_sym_degree)), 0,
               witness_ref=f"N={coh_n.h0_by_sym_degree}, O={coh_o.h0_by_sym_degree}")

    # classes gained on top of the coboundaries count the rank of H^0(N) -> H^0(O)
    cx_o = bv.ComplexBuilder(O, kernels).build(max_degree, 1)
    defect = 0
    for n in range(1, max_degree + 1):
        reps = [R for R in coh_n.representatives if R.max_sym_degree() == n]
        if not reps:
            continue
        image = cx_o.koszul.get((n - 1, 1), np.zeros((cx_o.dim((n, 0)), 0)))
        columns = np.array([bv.to_monomials(extend(R, O), cx_o, (n, 0)) for R in reps]).T
        gained = numerical_rank(np.hstack([image, columns])) - numerical_rank(image)
        defect += abs(gained - len(reps)) + abs(gained - coh_o.h0_by_sym_degree[n])
    report.add("time_slice.bijective", "extension induces an isomorphism on H^0", defect, 0)

    leak = roundtrip = explicit = 0.0
    for R in coh_n.representatives:
        moved = transport_observable(extend(R, O), B)
        scale = max(R.norm(), 1e-300)
        this_leak = outside_norm(moved, N) / scale
        leak = max(leak, this_leak)
        if this_leak > tolerance:
            roundtrip = max(roundtrip, this_leak)
            continue
        difference = restrict(moved, N) - R
        witness = bv.exactness_witness(difference, bv.Differential.CLASSICAL, region=N, kernels=kernels)
        roundtrip = max(roundtrip, bv.witness_residual(witness, difference, op=kernels.op) / scale)
        if R.max_sym_degree() == 1:
            f = np.zeros(lat.n_sites, dtype=complex)
            f[N.index_array] = R.terms[(1, 0)][0]
            anti = generator(lat, Vector(U @ f), region=N, truncation=handle.truncation)
            explicit = max(explicit, max_abs_difference(bv.koszul_differential(anti, kernels.op), difference) / scale)
    report.add("time_slice.support", "beta-transport lands in the Cauchy slab", leak, tolerance)
    report.add("time_slice.roundtrip", "beta composed with extension is the identity on H^0", roundtrip, tolerance)
    report.add("time_slice.explicit_witness", "linear classes differ by delta_S of the stated witness",
               explicit, tolerance)
    return report


# ---------------------------------------------------------------------------
# restriction to a Cauchy surface


@dataclass(frozen=True, eq=False)
class CauchyRestriction:
    handle: ModelHandle
    t_star: int
    spatial_sites: Tuple[int, ...]
    slab: Region
    region: Region


def restrict_to_cauchy(handle: ModelHandle, t_star: int, spatial_sites: Sequence[int],
                       halfwidth: int = 2) -> CauchyRestriction:
    """
    The model on the maximal causally convex region of the slab around ``t_star``
    whose footprint on the surface is ``spatial_sites``.

    Raises:
        PreconditionViolated: on a Time1D lattice
        OutOfBounds: if the slab leaves the lattice
    """
    lat = handle.lattice
    if lat.dimension != Dimension.MINKOWSKI2D:
        raise PreconditionViolated("restriction to a Cauchy surface needs a Minkowski2D lattice")
    slab = cauchy_neighborhood(lat, t_star, halfwidth)
    footprint = np.zeros(lat.n_space, dtype=bool)
    footprint[list(spatial_sites)] = True
    keep = []
    for s in slab.indices:
        t, x = int(lat.t_of[s]), int(lat.x_of[s])
        reach = abs(t - t_star)
        cone = periodic_distance(np.arange(lat.n_space), x, lat.n_space) <= reach
        if np.all(footprint[cone]):
            keep.append(s)
    region = general_region(lat, keep) if keep else empty_region(lat)
    handle.logger.debug(f"Cauchy restriction at t={t_star}: {len(keep)} of {slab.size} slab sites")
    return CauchyRestriction(handle, t_star, tuple(sorted(set(int(x) for x in spatial_sites))), slab, region)
