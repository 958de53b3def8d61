"""
Products
========

Products and brackets on polynomial observables: kernel contractions,
exponential products, the normal-ordering automorphisms alpha_G, the star
and time-ordered products, the Peierls bracket, the shifted (anti)bracket,
the sigma map and n-point functions.

Kernel conventions: ``star`` is the exponential product with kernel
``(i/2) G^C``, ``time_ordered`` the one with kernel ``i G^D``.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from functools import reduce
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from lattice import Lattice, Region, general_region
from observables import (
    Bidegree,
    HbarPoly,
    Linear,
    PolyObservable,
    Truncation,
    Vector,
    add_term,
    align,
    check_truncation,
    constant,
    evaluate,
    derivative,
    generator,
    graded_symmetrize,
    max_abs_difference,
    multiply,
    phi_derivative_terms,
    random_observable,
    xi_derivative_terms,
)
from propagators import KernelSet, PropagatorKernel, build_kernels
from report_manager import CheckReport

logger = logging.getLogger(__name__)


class ProductKind(str, Enum):
    POINTWISE = "pointwise"
    EXPONENTIAL = "exponential"
    STAR = "star"
    TIME_ORDERED = "time_ordered"


@dataclass(frozen=True, eq=False)
class ProductSpec:
    kind: ProductKind
    kernel: Optional[PropagatorKernel] = None
    scale: complex = 1.0

    def resolve(self, kernels: KernelSet) -> "ProductSpec":
        if self.kind == ProductKind.STAR:
            return ProductSpec(ProductKind.EXPONENTIAL, kernels.gC, 0.5j)
        if self.kind == ProductKind.TIME_ORDERED:
            return ProductSpec(ProductKind.EXPONENTIAL, kernels.gD, 1j)
        return self

    def apply(self, A: PolyObservable, B: PolyObservable, kernels: Optional[KernelSet] = None) -> PolyObservable:
        spec = self.resolve(kernels or build_kernels(A.lattice))
        if spec.kind == ProductKind.POINTWISE:
            return multiply(A, B)
        return exp_product(spec.kernel, spec.scale, A, B)


def _falling(n: int, j: int) -> int:
    return math.factorial(n) // math.factorial(n - j)


def _local_kernel(kernel: PropagatorKernel, A: PolyObservable) -> np.ndarray:
    idx = A.region.index_array
    return kernel.matrix[np.ix_(idx, idx)]


def _kernel_contraction(ta: np.ndarray, na: int, ka: int, tb: np.ndarray, nb: int, kb: int,
                        kernel: np.ndarray, j: int, n_orders: int) -> np.ndarray:
    """
    Contract the first j field slots of ta against those of tb through the kernel.

    The result keeps hbar convolution and is laid out as
    ``(h, sym_a, sym_b, ext_a, ext_b)``, unsymmetrized.
    """
    ia = list(range(na + ka))
    ib = list(range(na + ka, na + ka + nb + kb))
    out_sub = ia[j:na] + ib[j:nb] + ia[na:] + ib[nb:]
    shape = (n_orders,) + (kernel.shape[0],) * len(out_sub)
    out = np.zeros(shape, dtype=complex)
    for i in range(n_orders):
        if not np.any(ta[i]):
            continue
        for h in range(n_orders - i):
            if not np.any(tb[h]):
                continue
            args = [ta[i], ia, tb[h], ib]
            for l in range(j):
                args += [kernel, [ia[l], ib[l]]]
            out[i + h] += np.einsum(*args, out_sub, optimize=True)
    return out


def cross_contract(G: PropagatorKernel, scale: complex, A: PolyObservable, B: PolyObservable,
                   times: int = 1) -> PolyObservable:
    """
    ``times``-fold contraction of field slots of A against field slots of B.

    Args:
        G: kernel contracted between the two factors
        scale: complex factor applied per contraction
        A: left factor
        B: right factor
        times: number of contracted slot pairs

    Returns:
        The product of the remaining slots, with factor
        ``n_a!/(n_a-j)! * n_b!/(n_b-j)! * (scale * w^2)^j``
    """
    region, a, b = align(A, B)
    lat = A.lattice
    K = _local_kernel(G, a)
    w2 = lat.weight ** 2
    terms: Dict[Bidegree, np.ndarray] = {}
    for (na, ka) in sorted(a.terms):
        for (nb, kb) in sorted(b.terms):
            if na < times or nb < times:
                continue
            n_out, k_out = na + nb - 2 * times, ka + kb
            check_truncation(A.truncation, n_out, k_out)
            factor = _falling(na, times) * _falling(nb, times) * (scale * w2) ** times
            t = _kernel_contraction(a.terms[(na, ka)], na, ka, b.terms[(nb, kb)], nb, kb, K, times,
                                    A.truncation.n_orders)
            add_term(terms, (n_out, k_out), factor * graded_symmetrize(t, n_out, k_out))
    return PolyObservable(region, terms, A.truncation)


def exp_product(G: PropagatorKernel, scale: complex, A: PolyObservable, B: PolyObservable) -> PolyObservable:
    """``sum_j hbar^j / j! * m(j-fold contraction)``; terminates at ``min(deg A, deg B)``."""
    result = multiply(A, B)
    max_j = min(A.max_sym_degree(), B.max_sym_degree())
    for j in range(1, max_j + 1):
        if j > A.truncation.h_max:
            break
        weight = Fraction(1, math.factorial(j))
        term = cross_contract(G, scale, A, B, times=j).shift_hbar(j)
        result = result + float(weight) * term
    return result


def self_contract(G: PropagatorKernel, scale: complex, A: PolyObservable) -> PolyObservable:
    """One pair of field slots contracted with ``scale * G``, pair-count factor ``n(n-1)/2``."""
    lat = A.lattice
    K = _local_kernel(G, A)
    terms: Dict[Bidegree, np.ndarray] = {}
    for (n, k) in sorted(A.terms):
        if n < 2:
            continue
        t = A.terms[(n, k)]
        pairs = Fraction(n * (n - 1), 2)
        contracted = np.einsum("hab...,ab->h...", t, K, optimize=True)
        add_term(terms, (n - 2, k), float(pairs) * scale * lat.weight ** 2 * contracted)
    return PolyObservable(A.region, terms, A.truncation)


def alpha(G: PropagatorKernel, scale: complex, A: PolyObservable) -> PolyObservable:
    """
    Normal-ordering automorphism ``exp(hbar * self_contract)``.

    The inverse is ``alpha(G, -scale, .)``; ``alpha`` of ``O_f^2`` is
    ``O_f^2 + hbar * scale * <f, G f>_w``.
    """
    result = A
    power = A
    j = 1
    while power.max_sym_degree() >= 2 and j <= A.truncation.h_max:
        power = self_contract(G, scale, power)
        result = result + float(Fraction(1, math.factorial(j))) * power.shift_hbar(j)
        j += 1
    return result


def star(A: PolyObservable, B: PolyObservable, kernels: Optional[KernelSet] = None) -> PolyObservable:
    kernels = kernels or build_kernels(A.lattice)
    return exp_product(kernels.gC, 0.5j, A, B)


def wick_star(A: PolyObservable, B: PolyObservable, kernels: Optional[KernelSet] = None) -> PolyObservable:
    """Exponential product with the two-point function G+ (normal-ordered star product)."""
    kernels = kernels or build_kernels(A.lattice)
    return exp_product(kernels.gPlus, 1.0, A, B)


def time_ordered(A: PolyObservable, B: PolyObservable, kernels: Optional[KernelSet] = None) -> PolyObservable:
    kernels = kernels or build_kernels(A.lattice)
    return exp_product(kernels.gD, 1j, A, B)


def time_ordered_via_alpha(A: PolyObservable, B: PolyObservable, kernels: Optional[KernelSet] = None) -> PolyObservable:
    """``alpha_{iG^D}(alpha^-1 A * alpha^-1 B)``, the twisted-product route to the same product."""
    kernels = kernels or build_kernels(A.lattice)
    inv_a = alpha(kernels.gD, -1j, A)
    inv_b = alpha(kernels.gD, -1j, B)
    return alpha(kernels.gD, 1j, multiply(inv_a, inv_b))


def commutator(product, A: PolyObservable, B: PolyObservable, kernels: Optional[KernelSet] = None) -> PolyObservable:
    return product(A, B, kernels) - product(B, A, kernels)


def peierls(A: PolyObservable, B: PolyObservable, phi: np.ndarray,
            kernels: Optional[KernelSet] = None) -> HbarPoly:
    """Pointwise Peierls bracket ``<A'(phi), G^C B'(phi)>_w``."""
    kernels = kernels or build_kernels(A.lattice)
    lat = A.lattice
    _, a, b = align(A, B)
    da = derivative(a, phi, 1)
    db = derivative(b, phi, 1)
    K = _local_kernel(kernels.gC, a)
    values = np.zeros(A.truncation.n_orders, dtype=complex)
    for i in range(A.truncation.n_orders):
        for j in range(A.truncation.n_orders - i):
            values[i + j] += lat.weight ** 2 * (da[i] @ K @ db[j])
    return HbarPoly(values, A.truncation.h_max)


def peierls_observable(A: PolyObservable, B: PolyObservable, kernels: Optional[KernelSet] = None) -> PolyObservable:
    kernels = kernels or build_kernels(A.lattice)
    return cross_contract(kernels.gC, 1.0, A, B, times=1)


def _site_contraction(ta: np.ndarray, na: int, ka: int, tb: np.ndarray, nb: int, kb: int,
                      n_orders: int) -> np.ndarray:
    """``sum_t ta[:, t] (x) tb[:, t]`` laid out as ``(h, sym_a, sym_b, ext_a, ext_b)``."""
    site = 0
    ia = list(range(1, 1 + na + ka))
    ib = list(range(1 + na + ka, 1 + na + ka + nb + kb))
    out_sub = ia[:na] + ib[:nb] + ia[na:] + ib[nb:]
    M = ta.shape[1]
    out = np.zeros((n_orders,) + (M,) * len(out_sub), dtype=complex)
    for i in range(n_orders):
        if not np.any(ta[i]):
            continue
        for h in range(n_orders - i):
            if np.any(tb[h]):
                out[i + h] += np.einsum(ta[i], [site] + ia, tb[h], [site] + ib, out_sub, optimize=True)
    return out


def shifted_bracket(A: PolyObservable, B: PolyObservable) -> PolyObservable:
    """
    Antibracket ``{a, b} = w sum_t [(a d<_xi(t))(d_phi(t) b) - (d_phi(t) a)(d>_xi(t) b)]``.

    On generators ``{O^#_g, O_f} = <g, f>_w`` and ``{O_f, O^#_g} = -<f, g>_w``;
    the bracket has cohomological degree +1.
    """
    region, a, b = align(A, B)
    lat = A.lattice
    n_orders = A.truncation.n_orders
    terms: Dict[Bidegree, np.ndarray] = {}

    right_xi_a = xi_derivative_terms(a, side="right")
    phi_b = phi_derivative_terms(b)
    for (na, ka) in sorted(right_xi_a):
        for (nb, kb) in sorted(phi_b):
            n_out, k_out = na + nb, ka + kb
            check_truncation(A.truncation, n_out, k_out)
            t = _site_contraction(right_xi_a[(na, ka)], na, ka, phi_b[(nb, kb)], nb, kb, n_orders)
            add_term(terms, (n_out, k_out), lat.weight * graded_symmetrize(t, n_out, k_out))

    phi_a = phi_derivative_terms(a)
    left_xi_b = xi_derivative_terms(b, side="left")
    for (na, ka) in sorted(phi_a):
        for (nb, kb) in sorted(left_xi_b):
            n_out, k_out = na + nb, ka + kb
            check_truncation(A.truncation, n_out, k_out)
            t = _site_contraction(phi_a[(na, ka)], na, ka, left_xi_b[(nb, kb)], nb, kb, n_orders)
            add_term(terms, (n_out, k_out), -lat.weight * graded_symmetrize(t, n_out, k_out))

    return PolyObservable(region, terms, A.truncation)


def sigma_unshifted(f: np.ndarray, g: np.ndarray, kernels: KernelSet, tol: float = 1e-12) -> Dict[str, object]:
    """
    The map ``sigma(O_f) = O^#_{G^C f}`` and its bracket with ``O_g``.

    Returns:
        Dict with ``sigma_of``, ``bracket_value`` and ``matches_peierls``
    """
    lat = kernels.op.lattice
    sigma_of = generator(lat, Vector(kernels.gC.act(lat, f), completion=True))
    O_g = generator(lat, Linear(g))
    bracket_value = evaluate(shifted_bracket(sigma_of, O_g), np.zeros(lat.n_sites))[0]
    O_f = generator(lat, Linear(f))
    reference = peierls(O_g, O_f, np.zeros(lat.n_sites), kernels)[0]
    return {
        "sigma_of": sigma_of,
        "bracket_value": bracket_value,
        "peierls_value": reference,
        "matches_peierls": abs(bracket_value - reference) <= tol * max(1.0, abs(reference)),
    }


def n_point(lat: Lattice, fs: Sequence[np.ndarray], kernels: Optional[KernelSet] = None,
            normal_ordered: bool = False, truncation=None) -> HbarPoly:
    """
    Time-ordered n-point function at the zero configuration.

    With ``normal_ordered`` the contractions use the Feynman propagator
    ``G^F = i G^D + H`` instead of ``i G^D``.
    """
    kernels = kernels or build_kernels(lat)
    gens: List[PolyObservable] = [
        generator(lat, Linear(f)) if truncation is None else generator(lat, Linear(f), truncation=truncation)
        for f in fs
    ]
    if not gens:
        return HbarPoly.constant(1.0)
    check_truncation(gens[0].truncation, len(gens), 0)
    if normal_ordered:
        fold = reduce(lambda x, y: exp_product(kernels.gF, 1.0, x, y), gens)
    else:
        fold = reduce(lambda x, y: time_ordered(x, y, kernels), gens)
    return evaluate(fold, np.zeros(lat.n_sites))


def wick_pairings(items: Sequence[int]) -> List[List[tuple]]:
    """All perfect matchings of a sequence of labels."""
    items = list(items)
    if not items:
        return [[]]
    if len(items) % 2:
        return []
    first, rest = items[0], items[1:]
    out = []
    for i, partner in enumerate(rest):
        remaining = rest[:i] + rest[i + 1:]
        for tail in wick_pairings(remaining):
            out.append([(first, partner)] + tail)
    return out


def unit(lat: Lattice, truncation=None) -> PolyObservable:
    return constant(lat, 1.0) if truncation is None else constant(lat, 1.0, truncation)


def _time_split(region: Region) -> Tuple[Region, Region]:
    lat = region.lattice
    t0, t1 = region.time_range()
    mid = (t0 + t1) // 2
    times = lat.t_of[region.index_array]
    return (general_region(lat, region.index_array[times <= mid]),
            general_region(lat, region.index_array[times > mid]))


def _random_test_function(lat: Lattice, region: Region, rng: np.random.Generator) -> np.ndarray:
    f = np.zeros(lat.n_sites)
    f[region.index_array] = rng.standard_normal(region.size)
    return f


def verify_product_identities(lat: Lattice, seeds: Sequence[int], region: Region,
                              kernels: Optional[KernelSet] = None, tolerance: float = 1e-12,
                              n_pairs: Optional[int] = None) -> CheckReport:
    """
    Identities of the products and brackets on random observables over ``region``.

    Covers the canonical commutator relation, associativity of the star and
    time-ordered products, the time-ordered product of time-ordered supports,
    the classical limit, the Peierls Jacobi identity, the Hadamard
    intertwining, Wick's theorem for n-point functions and the sigma map.

    Args:
        seeds: one seed per polynomial sample
        n_pairs: number of random linear pairs ``(f, g)`` for the commutator
            and sigma checks, drawn from all ``seeds`` together; defaults to
            one pair per seed
    """
    kernels = kernels or build_kernels(lat)
    seeds = list(seeds)
    n_pairs = len(seeds) if n_pairs is None else n_pairs
    report = CheckReport("product_identities", {"lattice": lat.to_dict(), "n_sites": region.size,
                                                "n_seeds": len(seeds), "n_pairs": n_pairs})
    trunc = Truncation(d_max=4, a_max=0, h_max=4)
    early, late = _time_split(region)
    worst = {name: 0.0 for name in ("ccr", "star_assoc", "t_assoc", "t_order", "via_alpha", "limit",
                                    "jacobi", "hadamard", "wick_comm", "n_point", "feynman", "sigma")}

    pair_rng = np.random.default_rng(seeds)
    for _ in range(n_pairs):
        f = _random_test_function(lat, region, pair_rng)
        g = _random_test_function(lat, region, pair_rng)
        O_f = generator(lat, Linear(f), region=region, truncation=trunc)
        O_g = generator(lat, Linear(g), region=region, truncation=trunc)
        expected = 1j * kernels.gC.bilinear(lat, f, g)
        comm = star(O_f, O_g, kernels) - star(O_g, O_f, kernels)
        const = comm.terms.get((0, 0), np.zeros(trunc.n_orders))
        rest = max((float(np.max(np.abs(t))) for key, t in comm.terms.items() if key != (0, 0)), default=0.0)
        worst["ccr"] = max(worst["ccr"], (abs(const[1] - expected) + rest) / max(abs(expected), 1.0))

        wick = wick_star(O_f, O_g, kernels) - wick_star(O_g, O_f, kernels)
        worst["wick_comm"] = max(worst["wick_comm"],
                                 max_abs_difference(wick, comm) / max(abs(expected), 1.0))

        sigma = sigma_unshifted(f, g, kernels, tol=tolerance)
        scale = max(abs(sigma["peierls_value"]), 1.0)
        worst["sigma"] = max(worst["sigma"], abs(sigma["bracket_value"] - sigma["peierls_value"]) / scale)

    for seed in seeds:
        rng = np.random.default_rng(seed)
        A, B, C = (random_observable(lat, region, seed + 1000 * i, n_max=1, k_max=0, truncation=trunc,
                                     hbar_order=1) for i in range(3))
        for key, product in (("star_assoc", star), ("t_assoc", time_ordered)):
            left = product(product(A, B, kernels), C, kernels)
            right = product(A, product(B, C, kernels), kernels)
            worst[key] = max(worst[key], max_abs_difference(left, right) / max(left.norm(), 1e-300))
        via = time_ordered_via_alpha(A, B, kernels)
        direct = time_ordered(A, B, kernels)
        worst["via_alpha"] = max(worst["via_alpha"], max_abs_difference(via, direct) / max(direct.norm(), 1e-300))

        if early.size and late.size:
            X = random_observable(lat, early, seed + 1, n_max=2, k_max=0, truncation=trunc)
            Y = random_observable(lat, late, seed + 2, n_max=2, k_max=0, truncation=trunc)
            t_xy = time_ordered(X, Y, kernels)
            t_yx = time_ordered(Y, X, kernels)
            scale = max(t_xy.norm(), 1e-300)
            worst["t_order"] = max(worst["t_order"],
                                   max_abs_difference(t_xy, star(Y, X, kernels)) / scale,
                                   max_abs_difference(t_yx, star(Y, X, kernels)) / scale)

        P, Q, R = (random_observable(lat, region, seed + 2000 * i, n_max=2, k_max=0, truncation=trunc)
                   for i in range(1, 4))
        star_comm = star(P, Q, kernels) - star(Q, P, kernels)
        limit = star_comm.hbar_coefficient(1) * (-1j)
        bracket = peierls_observable(P, Q, kernels).mod_hbar()
        worst["limit"] = max(worst["limit"], max_abs_difference(limit, bracket) / max(bracket.norm(), 1e-300))

        def pb(x, y):
            return peierls_observable(x, y, kernels).mod_hbar()

        jacobi = pb(P, pb(Q, R)) + pb(Q, pb(R, P)) + pb(R, pb(P, Q))
        worst["jacobi"] = max(worst["jacobi"], jacobi.norm() / max(pb(P, pb(Q, R)).norm(), 1e-300))

        h = kernels.h
        lhs = alpha(h, 1.0, star(A, B, kernels))
        rhs = wick_star(alpha(h, 1.0, A), alpha(h, 1.0, B), kernels)
        worst["hadamard"] = max(worst["hadamard"], max_abs_difference(lhs, rhs) / max(lhs.norm(), 1e-300))

        fs = [_random_test_function(lat, region, rng) for _ in range(4)]
        for key, normal_ordered, kernel, factor in (("n_point", False, kernels.gD, 1j),
                                                    ("feynman", True, kernels.gF, 1.0)):
            value = n_point(lat, fs, kernels, normal_ordered=normal_ordered, truncation=trunc)[2]
            oracle = sum(np.prod([factor * kernel.bilinear(lat, fs[a], fs[b]) for a, b in pairing])
                         for pairing in wick_pairings(range(4)))
            worst[key] = max(worst[key], abs(value - oracle) / max(abs(oracle), 1.0))

    report.add("star.commutator", "the product * satisfies the relation [O_f, O_g] = i hbar <f, G^C g>",
               worst["ccr"], tolerance, witness_ref=f"pairs={n_pairs}")
    report.add("star.associativity", "the star product is associative", worst["star_assoc"], tolerance)
    report.add("time_ordered.associativity", "the time-ordered product is associative", worst["t_assoc"], tolerance)
    report.add("time_ordered.time_ordering", "when the observables have disjoint supports ._T = *",
               worst["t_order"], tolerance)
    report.add("time_ordered.via_alpha", "m_T = alpha_{iG^D} of the pointwise product", worst["via_alpha"], 1e-10)
    report.add("classical_limit", "the commutator over i hbar reduces to the Peierls bracket",
               worst["limit"], tolerance)
    report.add("peierls.jacobi", "the Peierls bracket satisfies the Jacobi identity", worst["jacobi"], 1e-10)
    report.add("hadamard.intertwining", "alpha_H maps the star product to the G+ product", worst["hadamard"], 1e-10)
    report.add("wick_star.commutator", "the G+ product has the commutator of the star product",
               worst["wick_comm"], tolerance)
    report.add("n_point.wick", "time-ordered n-point functions are sums over pairings", worst["n_point"], 1e-10)
    report.add("n_point.feynman", "normal-ordered n-point functions pair with G^F", worst["feynman"], 1e-10)
    report.add("sigma.peierls", "{sigma(O_f), O_g} equals the Peierls bracket", worst["sigma"], tolerance,
               witness_ref=f"pairs={n_pairs}")
    return report
