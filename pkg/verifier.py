"""
Suite verifier
==============

Runs the verification suites against one lattice. Each suite collects the
check reports of the modules into one ``CheckReport``; an exception inside a
suite is logged and turned into an error record so the remaining suites
still run.
"""

import logging
import time
from dataclasses import replace
from itertools import combinations
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

import bv
import comparison
import models
from lattice import (
    Diamond,
    Dimension,
    Interval,
    Lattice,
    Region,
    Site,
    build_lattice,
    cauchy_neighborhood,
    general_region,
    make_region,
    region_relations,
)
from models import CoverSpec, ModelTag
from observables import DEFAULT_TRUNCATION, Truncation, max_abs_difference, random_observable
from products import verify_product_identities
from propagators import (
    KernelSet,
    PropagatorKernel,
    build_kernels,
    convergence_ratio,
    exactness_check,
    mode_recursion_agreement,
    verify_green_identities,
)
from report_manager import CheckReport

SUITES = ("propagators", "algebra", "bv", "cohomology", "net", "factorization", "comparison")
FAULTS = ("green", "time_slice")

DEFAULT_BV_SEEDS = 50
DEFAULT_PAIRS = 100


def desk_lattice(lat: Lattice, n_time: int, n_space: Optional[int] = None) -> Lattice:
    """A smaller lattice with the same steps and mass."""
    spec = lat.to_dict()
    spec["n_time"] = n_time
    if n_space is not None and lat.dimension == Dimension.MINKOWSKI2D:
        spec["n_space"] = n_space
    return build_lattice(spec)


def corrupt_kernels(kernels: KernelSet) -> KernelSet:
    """Kernel set with one retarded entry perturbed (negative control)."""
    matrix = kernels.gR.matrix.copy()
    n = matrix.shape[0]
    matrix[n // 2, n // 2 - kernels.op.lattice.n_space] += 0.5
    return replace(kernels, gR=PropagatorKernel(kernels.gR.kind, matrix, {"corrupted": True}))


class SuiteVerifier:
    """Executes the named verification suites on one lattice."""

    def __init__(self, lat: Lattice, seeds: Sequence[int] = range(10),
                 truncation: Truncation = DEFAULT_TRUNCATION, tolerance: float = 1e-9,
                 rank_threshold: float = bv.DEFAULT_RANK_THRESHOLD, inject_fault: Optional[str] = None,
                 bv_seeds: Optional[Sequence[int]] = None, n_pairs: int = DEFAULT_PAIRS):
        self.logger = logging.getLogger(__name__)
        self.lattice = lat
        self.seeds = list(seeds)
        first = self.seeds[0] if self.seeds else 0
        self.bv_seeds = list(bv_seeds) if bv_seeds is not None else list(range(first, first + DEFAULT_BV_SEEDS))
        self.n_pairs = n_pairs
        self.truncation = truncation
        self.tolerance = tolerance
        self.rank_threshold = rank_threshold
        self.inject_fault = inject_fault
        self.kernels = build_kernels(lat)
        self._suites: Dict[str, Callable[[], CheckReport]] = {
            "propagators": self.verify_propagators,
            "algebra": self.verify_algebra,
            "bv": self.verify_bv,
            "cohomology": self.verify_cohomology,
            "net": self.verify_net,
            "factorization": self.verify_factorization,
            "comparison": self.verify_comparison,
        }

    @property
    def is_minkowski(self) -> bool:
        return self.lattice.dimension == Dimension.MINKOWSKI2D

    def run(self, suite: str) -> CheckReport:
        """
        Run one suite, never raising.

        Args:
            suite: one of ``SUITES``

        Returns:
            The suite's report; a failing ``error`` record if the suite raised
        """
        start = time.perf_counter()
        self.logger.info(f"Suite {suite} started")
        try:
            report = self._suites[suite]()
        except Exception as e:
            self.logger.error(f"Suite {suite} raised: {e}")
            report = CheckReport(suite, self._scenario())
            report.add_error(f"{suite}.execution", f"{type(e).__name__}: {e}")
        report.wall_time = time.perf_counter() - start
        self.logger.info(f"Suite {suite} finished in {report.wall_time:.2f}s: {report.summary()}")
        return report

    def run_all(self, suites: Sequence[str]) -> List[CheckReport]:
        names = list(SUITES) if "all" in suites else list(suites)
        return [self.run(name) for name in names]

    def _scenario(self, **extra) -> Dict:
        scenario = {"lattice": self.lattice.to_dict(), "seeds": self.seeds, "inject_fault": self.inject_fault}
        scenario.update(extra)
        return scenario

    def _small_region(self, lat: Optional[Lattice] = None) -> Region:
        """A few sites with an interior margin, centred in time."""
        lat = lat or self.lattice
        t = lat.n_time // 2
        if lat.dimension == Dimension.TIME1D:
            return make_region(lat, Interval(t - 3, t + 2))
        return make_region(lat, Diamond(Site(t, lat.n_space // 2), 1))

    # -- suites -------------------------------------------------------------

    def verify_propagators(self) -> CheckReport:
        lat = self.lattice
        report = CheckReport("propagators", self._scenario())
        kernels = corrupt_kernels(self.kernels) if self.inject_fault == "green" else self.kernels
        report.merge(verify_green_identities(kernels.op, kernels, self.tolerance))
        report.merge(exactness_check(kernels.op, kernels.gC, self.rank_threshold))
        scale = max(float(np.max(np.abs(kernels.gR.matrix))), 1.0)
        report.add("retarded.mode_sum", "leapfrog and mode-sum retarded kernels agree",
                   mode_recursion_agreement(kernels.op, kernels.gR) / scale, self.tolerance)
        if lat.dimension == Dimension.TIME1D:
            ratio = convergence_ratio(lat.dt, lat.mass)
            report.add("continuum.convergence", "second-order convergence to sin(m(t-s))/m",
                       abs(ratio - 4.0), 0.5, witness_ref=f"ratio={ratio:.4f}")
        return report

    def verify_algebra(self) -> CheckReport:
        lat = self.lattice
        report = CheckReport("algebra", self._scenario(n_pairs=self.n_pairs))
        t = lat.n_time // 2
        region = make_region(lat, Interval(t - 4, t + 5)) if lat.dimension == Dimension.TIME1D \
            else make_region(lat, Interval(t - 1, t))
        report.merge(verify_product_identities(lat, self.seeds, region, self.kernels, 1e-12, n_pairs=self.n_pairs))
        if self.is_minkowski:
            report.merge(self._causality(lat, [ModelTag.FR_CLASSICAL, ModelTag.FR_QUANTUM]), "algebra.")
        return report

    def verify_bv(self) -> CheckReport:
        lat = self.lattice
        region = self._small_region()
        report = CheckReport("bv", self._scenario(n_region_sites=region.size, bv_seeds=self.bv_seeds))
        report.merge(bv.nilpotency_check(lat, self.bv_seeds, region, self.kernels))
        report.merge(bv.verify_algebraic_identities(lat, self.bv_seeds, region, self.kernels))
        report.merge(bv.intertwine_check(lat, self.bv_seeds, region, self.kernels))
        report.merge(bv.shifted_jacobi_check(lat, self.bv_seeds, region))
        return report

    def verify_cohomology(self) -> CheckReport:
        from math import comb

        if self.is_minkowski:
            lat = desk_lattice(self.lattice, 8, 4)
            region = make_region(lat, Interval(2, 4))
        else:
            lat = self.lattice
            t = lat.n_time // 2
            region = make_region(lat, Interval(t - 5, t + 4))
        kernels = build_kernels(lat)
        report = CheckReport("cohomology", self._scenario(cohomology_lattice=lat.to_dict(), n_sites=region.size))
        coh = bv.cohomology(region, bv.Differential.QUANTUM, 3, kernels, max_ext_degree=2,
                            rank_threshold=self.rank_threshold, truncation=self.truncation,
                            with_representatives=False)
        report.add("cohomology.negative_degrees", "H^{<0} vanishes", sum(coh.negative_degree_dims()), 0)
        expected = [comb(2 * lat.n_space + n - 1, n) for n in range(4)]
        report.add("cohomology.h0", "dim H^0 in degree n is dim Sym^n of the solution space",
                   sum(abs(a - b) for a, b in zip(coh.h0_by_sym_degree, expected)), 0,
                   witness_ref=f"h0={coh.h0_by_sym_degree}")
        per_order = {k: sum(block.get(k, 0) for block in coh.dims.values()) for k in range(2)}
        defect = 0
        for h, dims in coh.quantum_dims.items():
            defect += sum(abs(dims.get(k, 0) - (h + 1) * per_order[k]) for k in per_order)
        report.add("cohomology.quantum", "quantum and classical cohomology agree at every hbar order", defect, 0,
                   witness_ref=f"quantum={coh.quantum_dims}")
        return report

    def verify_net(self) -> CheckReport:
        lat = self.lattice
        report = CheckReport("net", self._scenario())
        desk = desk_lattice(lat, 16, 4)
        handle = models.instantiate(ModelTag.FR_CLASSICAL, desk, self.truncation)
        O = make_region(desk, Interval(3, desk.n_time - 4))
        drop = self.inject_fault == "time_slice"
        for halfwidth in (2, 3):
            N = cauchy_neighborhood(desk, desk.n_time // 2, halfwidth)
            report.merge(models.time_slice_check(handle, O, N, drop_cutoff=drop), f"halfwidth{halfwidth}.")
        inner = self._small_region(desk)
        report.merge(models.isotony_check(desk, inner, O, seed=self.seeds[0] if self.seeds else 0))

        if self.is_minkowski:
            report.merge(self._causality(lat, list(ModelTag)))
            quantum = models.instantiate(ModelTag.FR_QUANTUM, desk, self.truncation)
            small = models.restrict_to_cauchy(quantum, 5, [1], 2).region
            wide = models.restrict_to_cauchy(quantum, 5, [0, 1, 2], 2).region
            full = models.restrict_to_cauchy(quantum, 5, range(desk.n_space), 2)
            report.add_flag("cauchy.monotone", "the maximal open grows with its footprint", wide.contains(small))
            report.add_flag("cauchy.full_circle", "the full circle restricts to the whole slab",
                            full.region.indices == full.slab.indices)
        return report

    def _causality(self, lat: Lattice, tags: Sequence[ModelTag]) -> CheckReport:
        report = CheckReport("causality", self._scenario())
        t = lat.n_time // 2
        x = lat.n_space // 4
        r1 = make_region(lat, Diamond(Site(t, x), 1))
        r2 = make_region(lat, Diamond(Site(t, x + lat.n_space // 2), 1))
        for tag in tags:
            handle = models.instantiate(tag, lat, self.truncation)
            report.merge(models.einstein_causality_check(handle, r1, r2, self.seeds[:3]), f"{tag.value}.")
        # timelike control: a site and its future neighbour
        handle = models.instantiate(ModelTag.FR_QUANTUM, lat, self.truncation)
        a = general_region(lat, [lat.index(Site(t, x))])
        b = general_region(lat, [lat.index(Site(t + 2, x))])
        if not region_relations(lat, a, b)["spacelike_separated"]:
            A = random_observable(lat, a, 1, n_max=1, k_max=0, truncation=self.truncation)
            B = random_observable(lat, b, 2, n_max=1, k_max=0, truncation=self.truncation)
            deviation = models.commutator_deviation(handle, A, B)
            report.add_flag("causality.timelike_control", "G^C does not vanish inside the cone", deviation > 0.0,
                            witness_ref=f"deviation={deviation:.3e}")
        return report

    def verify_factorization(self) -> CheckReport:
        lat = self.lattice
        report = CheckReport("factorization", self._scenario())
        handle = models.instantiate(ModelTag.CG_CLASSICAL, lat, self.truncation)
        t = lat.n_time // 2
        first = lat.index(Site(t, 0))
        U = general_region(lat, range(first, first + 6)) if self.is_minkowski \
            else make_region(lat, Interval(t, t + 5))

        members = tuple(general_region(lat, sub) for sub in combinations(U.indices, 5))
        report.merge(models.weiss_cosheaf_check(handle, CoverSpec(U, members), 2), "five_subsets.")
        report.merge(models.weiss_cosheaf_check(handle, CoverSpec(U, members), 0), "degree_zero.")
        halves = (general_region(lat, U.indices[:3]), general_region(lat, U.indices[3:]))
        rejected = models.weiss_cosheaf_check(handle, CoverSpec(U, halves), 2)
        report.add_flag("cosheaf.non_weiss_rejected", "is an ordinary cover but not a Weiss cover",
                        not rejected.passed, witness_ref=rejected.summary())

        v1 = general_region(lat, [U.indices[0]])
        v2 = general_region(lat, [U.indices[-1]])
        report.merge(models.multiplicativity_check(handle, v1, v2, 2, self.rank_threshold))

        pieces = [general_region(lat, [s]) for s in U.indices[:3]]
        middle = general_region(lat, U.indices[:2])
        for tag in (ModelTag.CG_CLASSICAL, ModelTag.CG_QUANTUM):
            cg = models.instantiate(tag, lat, self.truncation)
            report.merge(models.associativity_check(cg, pieces, U, middle, seed=self.seeds[0] if self.seeds else 0),
                         f"{tag.value}.")
        obs = [random_observable(lat, r, i, n_max=1, k_max=0, truncation=self.truncation)
               for i, r in enumerate(pieces)]
        forward = models.factorization_product(handle, list(zip(pieces, obs)), U)
        backward = models.factorization_product(handle, list(zip(pieces, obs))[::-1], U)
        report.add("prefactorization.equivariance", "the structure maps are permutation equivariant",
                   max_abs_difference(forward, backward), 0.0)
        return report

    def verify_comparison(self) -> CheckReport:
        lat = self.lattice
        report = CheckReport("comparison", self._scenario())
        # rank-four tensors are extended into V, so Minkowski runs on a narrow copy
        small = desk_lattice(lat, 12, 4) if self.is_minkowski else lat
        kernels = build_kernels(small)
        region = self._small_region(small)
        t = small.n_time // 2
        half = 2 if self.is_minkowski else 4
        V = make_region(small, Interval(t - half, t + half))
        report.merge(comparison.iota_classical(small, region, V, self.seeds, kernels))
        U = make_region(small, Interval(t - 1, t + 1))
        report.merge(comparison.iota_quantum(small, U, V, self.seeds, kernels))

        desk = desk_lattice(lat, 24, 4)
        report.merge(comparison.algebra_comparison_check(desk, self.seeds[:3]))

        line = build_lattice({"dimension": "time1d", "n_time": 24, "dt": lat.dt, "mass": lat.mass})
        rng = np.random.default_rng(self.seeds[0] if self.seeds else 0)
        f = np.zeros(line.n_sites)
        g = np.zeros(line.n_sites)
        f[4:9] = rng.standard_normal(5)
        g[4:9] = rng.standard_normal(5)
        report.merge(comparison.one_dim_commutator_limit(line, f, g, (0, 1, 3)))

        if self.is_minkowski:
            cauchy = desk_lattice(lat, 14, 4)
            report.merge(comparison.cauchy_algebra_comparison(cauchy, 2, [0, 1, 2], 1, self.seeds[:3]))
        return report
