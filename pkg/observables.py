"""
Polynomial Observables
======================

Degree-truncated polynomial polyvector fields ``Sym(D) (x) Lambda(D)`` with
coefficients that are truncated polynomials in a formal hbar.

An observable lives on a Region and stores one dense tensor per bidegree
``(n, k)``: shape ``(h_max + 1,) + (M,) * (n + k)`` over the M region sites,
the hbar order on the leading axis, symmetric in the first n (field) slots
and antisymmetric in the last k (antifield) slots. Its value is

    F(phi, xi) = w^(n+k) * sum C(s_1..s_n; x_1..x_k) phi(s_1)..phi(s_n) xi(x_1)..xi(x_k)

with w the lattice cell volume, so ``Linear(f)`` pairs f with phi exactly like
:func:`lattice.pairing`.
"""

import logging
import math
from dataclasses import dataclass, field
from itertools import permutations
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from errors import LengthMismatch, NotContained, SupportViolation, TruncationOverflow
from lattice import Lattice, Region, empty_region, full_region, general_region

logger = logging.getLogger(__name__)

Bidegree = Tuple[int, int]


@dataclass(frozen=True)
class Truncation:
    d_max: int = 4
    a_max: int = 2
    h_max: int = 4

    @property
    def n_orders(self) -> int:
        return self.h_max + 1


DEFAULT_TRUNCATION = Truncation()


class HbarPoly:
    """Polynomial in hbar truncated at ``h_max``; products drop higher orders silently."""

    def __init__(self, coeffs: Iterable[complex] = (), h_max: int = DEFAULT_TRUNCATION.h_max):
        c = np.zeros(h_max + 1, dtype=complex)
        values = np.asarray(list(coeffs), dtype=complex)[: h_max + 1]
        c[: len(values)] = values
        self.coeffs = c
        self.h_max = h_max

    @classmethod
    def constant(cls, value: complex, h_max: int = DEFAULT_TRUNCATION.h_max) -> "HbarPoly":
        return cls([value], h_max)

    def __getitem__(self, order: int) -> complex:
        return complex(self.coeffs[order]) if order <= self.h_max else 0j

    def __add__(self, other: Union["HbarPoly", complex]) -> "HbarPoly":
        if not isinstance(other, HbarPoly):
            other = HbarPoly.constant(other, self.h_max)
        return HbarPoly(self.coeffs + other.coeffs, self.h_max)

    __radd__ = __add__

    def __neg__(self) -> "HbarPoly":
        return HbarPoly(-self.coeffs, self.h_max)

    def __sub__(self, other: Union["HbarPoly", complex]) -> "HbarPoly":
        return self + (-other)

    def __rsub__(self, other: complex) -> "HbarPoly":
        return (-self) + other

    def __mul__(self, other: Union["HbarPoly", complex]) -> "HbarPoly":
        if not isinstance(other, HbarPoly):
            return HbarPoly(self.coeffs * other, self.h_max)
        out = np.convolve(self.coeffs, other.coeffs)[: self.h_max + 1]
        return HbarPoly(out, self.h_max)

    __rmul__ = __mul__

    def shift(self, orders: int = 1) -> "HbarPoly":
        """Multiply by ``hbar ** orders``."""
        return HbarPoly(np.concatenate([np.zeros(orders), self.coeffs]), self.h_max)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coeffs)))

    def isclose(self, other: Union["HbarPoly", complex], tol: float = 1e-12) -> bool:
        return (self - other).max_abs() <= tol

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, (HbarPoly, int, float, complex)):
            return NotImplemented
        return self.isclose(other)

    __hash__ = None

    def to_list(self) -> List[List[float]]:
        return [[float(c.real), float(c.imag)] for c in self.coeffs]

    def __repr__(self) -> str:
        parts = [f"({c:.6g})*hbar^{i}" for i, c in enumerate(self.coeffs) if c != 0]
        return "HbarPoly(" + (" + ".join(parts) if parts else "0") + ")"


@dataclass(frozen=True, eq=False)
class Linear:
    f: np.ndarray


@dataclass(frozen=True, eq=False)
class Vector:
    g: np.ndarray
    completion: bool = False


@dataclass(frozen=True, eq=False)
class PolyObservable:
    region: Region
    terms: Dict[Bidegree, np.ndarray] = field(default_factory=dict)
    truncation: Truncation = DEFAULT_TRUNCATION

    @property
    def lattice(self) -> Lattice:
        return self.region.lattice

    @property
    def bidegrees(self) -> List[Bidegree]:
        return sorted(self.terms)

    def term(self, n: int, k: int) -> Optional[np.ndarray]:
        return self.terms.get((n, k))

    def max_sym_degree(self) -> int:
        return max((n for n, _ in self.terms), default=-1)

    def max_ext_degree(self) -> int:
        return max((k for _, k in self.terms), default=-1)

    def norm(self) -> float:
        return max((float(np.max(np.abs(t))) for t in self.terms.values() if t.size), default=0.0)

    def is_zero(self, tol: float = 0.0) -> bool:
        return self.norm() <= tol

    def __add__(self, other: "PolyObservable") -> "PolyObservable":
        region, a, b = align(self, other)
        terms = {key: t.copy() for key, t in a.terms.items()}
        for key in sorted(b.terms):
            terms[key] = terms[key] + b.terms[key] if key in terms else b.terms[key].copy()
        return PolyObservable(region, terms, self.truncation)

    def __neg__(self) -> "PolyObservable":
        return PolyObservable(self.region, {key: -t for key, t in self.terms.items()}, self.truncation)

    def __sub__(self, other: "PolyObservable") -> "PolyObservable":
        return self + (-other)

    def __mul__(self, scalar: complex) -> "PolyObservable":
        return PolyObservable(self.region, {key: scalar * t for key, t in self.terms.items()}, self.truncation)

    __rmul__ = __mul__

    def times_hbar_poly(self, poly: HbarPoly) -> "PolyObservable":
        out = {}
        for key, t in self.terms.items():
            acc = np.zeros_like(t, dtype=complex)
            for i in range(self.truncation.n_orders):
                for j in range(self.truncation.n_orders - i):
                    if poly.coeffs[j] != 0:
                        acc[i + j] += poly.coeffs[j] * t[i]
            out[key] = acc
        return PolyObservable(self.region, out, self.truncation)

    def shift_hbar(self, orders: int = 1) -> "PolyObservable":
        """Multiply by ``hbar ** orders``, dropping orders beyond the truncation."""
        out = {}
        for key, t in self.terms.items():
            s = np.zeros_like(t, dtype=complex)
            if orders < t.shape[0]:
                s[orders:] = t[: t.shape[0] - orders]
            out[key] = s
        return PolyObservable(self.region, out, self.truncation)

    def hbar_coefficient(self, order: int) -> "PolyObservable":
        """The coefficient of ``hbar ** order`` as an hbar-free observable."""
        out = {}
        for key, t in self.terms.items():
            s = np.zeros_like(t, dtype=complex)
            s[0] = t[order]
            out[key] = s
        return PolyObservable(self.region, out, self.truncation)

    def mod_hbar(self) -> "PolyObservable":
        return self.hbar_coefficient(0)

    def prune(self) -> "PolyObservable":
        return PolyObservable(self.region, {k: t for k, t in self.terms.items() if np.any(t)}, self.truncation)

    def to_json_terms(self) -> Dict[str, Any]:
        """Serializable term list with global site indices."""
        sites = np.asarray(self.region.indices, dtype=int)
        terms = []
        for (n, k) in self.bidegrees:
            t = self.terms[(n, k)]
            for h in range(t.shape[0]):
                nz = np.argwhere(t[h] != 0)
                entries = [[[int(sites[i]) for i in idx], float(t[h][tuple(idx)].real), float(t[h][tuple(idx)].imag)]
                           for idx in nz]
                if entries:
                    terms.append({"n": n, "k": k, "hbar_order": h, "entries": entries})
        return {"region": self.region.to_dict(), "truncation": vars(self.truncation), "terms": terms}


def zero(lat: Lattice, truncation: Truncation = DEFAULT_TRUNCATION) -> PolyObservable:
    return PolyObservable(empty_region(lat), {}, truncation)


def constant(lat: Lattice, value: Union[complex, HbarPoly], truncation: Truncation = DEFAULT_TRUNCATION) -> PolyObservable:
    if isinstance(value, HbarPoly):
        coeffs = value.coeffs[: truncation.n_orders]
    else:
        coeffs = np.zeros(truncation.n_orders, dtype=complex)
        coeffs[0] = value
    return PolyObservable(empty_region(lat), {(0, 0): np.asarray(coeffs, dtype=complex)}, truncation)


def _support_indices(lat: Lattice, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f)
    if f.shape != (lat.n_sites,):
        raise LengthMismatch(f"grid function of shape {f.shape} on {lat.n_sites} sites")
    return np.flatnonzero(f != 0)


def generator(lat: Lattice, kind: Union[Linear, Vector], region: Optional[Region] = None,
              truncation: Truncation = DEFAULT_TRUNCATION) -> PolyObservable:
    """
    Linear observable ``O_f`` or antifield generator ``O^#_g``.

    Args:
        lat: the lattice
        kind: ``Linear(f)`` (bidegree (1, 0)) or ``Vector(g)`` (bidegree (0, 1));
            ``Vector(g, completion=True)`` lives on the full grid without the
            margin requirement
        region: region to place the generator on; defaults to the support of
            f, or the support of g with its stencil neighbors
        truncation: degree truncations of the result

    Returns:
        The generator observable

    Raises:
        SupportViolation: if the function leaves the region or g touches the
            region boundary
    """
    if isinstance(kind, Linear):
        supp = _support_indices(lat, kind.f)
        if supp.size == 0:
            return zero(lat, truncation)
        region = region or general_region(lat, supp)
        if not np.all(region.mask[supp]):
            raise SupportViolation("linear generator smearing leaves its region")
        coeffs = np.zeros((truncation.n_orders, region.size), dtype=complex)
        coeffs[0] = np.asarray(kind.f, dtype=complex)[region.index_array]
        return PolyObservable(region, {(1, 0): coeffs}, truncation)

    if isinstance(kind, Vector):
        supp = _support_indices(lat, kind.g)
        if supp.size == 0:
            return zero(lat, truncation)
        if kind.completion:
            region = region or full_region(lat)
        else:
            if region is None:
                halo = set(int(s) for s in supp)
                for s in supp:
                    halo.update(lat.neighbors(int(s)))
                region = general_region(lat, halo)
            margin = np.zeros(lat.n_sites, dtype=bool)
            margin[list(region.margin)] = True
            if not np.all(margin[supp]):
                raise SupportViolation("antifield generator must be supported on the interior margin of its region")
        coeffs = np.zeros((truncation.n_orders, region.size), dtype=complex)
        coeffs[0] = np.asarray(kind.g, dtype=complex)[region.index_array]
        return PolyObservable(region, {(0, 1): coeffs}, truncation)

    raise TypeError(f"unknown generator kind {kind!r}")


def _signed_permutations(k: int) -> List[Tuple[Tuple[int, ...], int]]:
    out = []
    for perm in permutations(range(k)):
        inversions = sum(1 for i in range(k) for j in range(i + 1, k) if perm[i] > perm[j])
        out.append((perm, -1 if inversions % 2 else 1))
    return out


def graded_symmetrize(tensor: np.ndarray, n: int, k: int) -> np.ndarray:
    """Symmetrize the n field slots and antisymmetrize the k antifield slots (hbar axis first)."""
    if n <= 1 and k <= 1:
        return tensor
    out = np.zeros_like(tensor, dtype=complex)
    for ps in permutations(range(n)):
        for pe, sign in _signed_permutations(k):
            axes = (0,) + tuple(1 + p for p in ps) + tuple(1 + n + p for p in pe)
            out += sign * np.transpose(tensor, axes)
    return out / (math.factorial(n) * math.factorial(k))


def hbar_outer(a: np.ndarray, b: np.ndarray, n_orders: int) -> np.ndarray:
    """Outer product of two tensors with truncated convolution along the hbar axis."""
    out = np.zeros((n_orders,) + a.shape[1:] + b.shape[1:], dtype=complex)
    for i in range(n_orders):
        if not np.any(a[i]):
            continue
        for j in range(n_orders - i):
            if np.any(b[j]):
                out[i + j] += np.multiply.outer(a[i], b[j])
    return out


def interleave_axes(na: int, ka: int, nb: int, kb: int) -> Tuple[int, ...]:
    """Axis order taking ``(h, sym_a, ext_a, sym_b, ext_b)`` to ``(h, sym_a, sym_b, ext_a, ext_b)``."""
    sym_a = list(range(1, 1 + na))
    ext_a = list(range(1 + na, 1 + na + ka))
    sym_b = list(range(1 + na + ka, 1 + na + ka + nb))
    ext_b = list(range(1 + na + ka + nb, 1 + na + ka + nb + kb))
    return tuple([0] + sym_a + sym_b + ext_a + ext_b)


def check_truncation(truncation: Truncation, n: int, k: int) -> None:
    if n > truncation.d_max or k > truncation.a_max:
        raise TruncationOverflow(f"bidegree ({n}, {k}) exceeds d_max={truncation.d_max}, a_max={truncation.a_max}")


def _position_map(into: Region, region: Region) -> np.ndarray:
    return np.searchsorted(np.asarray(into.indices, dtype=int), region.index_array)


def _embed(tensor: np.ndarray, pos: np.ndarray, size: int) -> np.ndarray:
    rank = tensor.ndim - 1
    out = np.zeros((tensor.shape[0],) + (size,) * rank, dtype=complex)
    if rank == 0:
        out[...] = tensor
    else:
        out[np.ix_(np.arange(tensor.shape[0]), *([pos] * rank))] = tensor
    return out


def _restrict(tensor: np.ndarray, pos: np.ndarray) -> np.ndarray:
    rank = tensor.ndim - 1
    if rank == 0:
        return tensor.copy()
    return tensor[np.ix_(np.arange(tensor.shape[0]), *([pos] * rank))]


def support(A: PolyObservable, atol: float = 0.0) -> Region:
    """Smallest General region holding every site index of a nonzero entry."""
    mask = np.zeros(A.region.size, dtype=bool)
    has_constant = False
    for (n, k), t in A.terms.items():
        big = np.abs(t) > atol
        if n + k == 0:
            has_constant = has_constant or bool(np.any(big))
            continue
        for axis in range(1, n + k + 1):
            other = tuple(a for a in range(big.ndim) if a != axis)
            mask |= np.any(big, axis=other)
    if not mask.any():
        return empty_region(A.lattice)
    return general_region(A.lattice, A.region.index_array[mask])


def extend(A: PolyObservable, into: Region) -> PolyObservable:
    """
    Re-embed an observable into a larger region (extension by zero).

    Raises:
        NotContained: if the support of A is not inside ``into``
    """
    if into.lattice != A.lattice:
        raise NotContained("observable and region live on different lattices")
    source = A
    if not into.contains(A.region):
        supp = support(A)
        if not into.contains(supp):
            raise NotContained(f"support of {supp.size} sites leaks out of the target region")
        source = restrict(A, supp)
    pos = _position_map(into, source.region)
    terms = {key: _embed(t, pos, into.size) for key, t in source.terms.items()}
    return PolyObservable(into, terms, A.truncation)


def restrict(A: PolyObservable, region: Region) -> PolyObservable:
    """Drop all entries outside ``region`` (a sub-region of A's region)."""
    if not A.region.contains(region):
        raise NotContained("restriction target is not inside the observable's region")
    pos = _position_map(A.region, region)
    return PolyObservable(region, {key: _restrict(t, pos) for key, t in A.terms.items()}, A.truncation)


def align(a: PolyObservable, b: PolyObservable) -> Tuple[Region, PolyObservable, PolyObservable]:
    """Bring two observables onto a common region."""
    if a.region == b.region:
        return a.region, a, b
    region = a.region.union(b.region)
    return region, (a if a.region == region else extend(a, region)), (b if b.region == region else extend(b, region))


def _canonical_key(n: int, k: int, t: np.ndarray) -> Tuple[int, int, bytes]:
    return (n, k, t.tobytes())


def multiply_terms(ta: np.ndarray, na: int, ka: int, tb: np.ndarray, nb: int, kb: int,
                   truncation: Truncation) -> np.ndarray:
    """Graded product of two aligned terms; the operands are ordered canonically first."""
    check_truncation(truncation, na + nb, ka + kb)
    sign = 1.0
    if _canonical_key(nb, kb, tb) < _canonical_key(na, ka, ta):
        ta, na, ka, tb, nb, kb = tb, nb, kb, ta, na, ka
        sign = -1.0 if (ka * kb) % 2 else 1.0
    prod = np.transpose(hbar_outer(ta, tb, truncation.n_orders), interleave_axes(na, ka, nb, kb))
    return sign * graded_symmetrize(prod, na + nb, ka + kb)


def add_term(terms: Dict[Bidegree, np.ndarray], key: Bidegree, t: np.ndarray) -> None:
    terms[key] = terms[key] + t if key in terms else t


def multiply(A: PolyObservable, B: PolyObservable) -> PolyObservable:
    """
    Graded-commutative product.

    Raises:
        TruncationOverflow: if a product bidegree exceeds the truncation
    """
    region, a, b = align(A, B)
    contributions = []
    for (na, ka), ta in a.terms.items():
        for (nb, kb), tb in b.terms.items():
            t = multiply_terms(ta, na, ka, tb, nb, kb, A.truncation)
            contributions.append(((na + nb, ka + kb), _canonical_pair(na, ka, ta, nb, kb, tb), t))
    terms: Dict[Bidegree, np.ndarray] = {}
    for key, _, t in sorted(contributions, key=lambda c: (c[0], c[1])):
        add_term(terms, key, t)
    return PolyObservable(region, terms, A.truncation)


def _canonical_pair(na, ka, ta, nb, kb, tb) -> Tuple:
    first, second = sorted([_canonical_key(na, ka, ta), _canonical_key(nb, kb, tb)])
    return (first, second)


def evaluate(A: PolyObservable, phi: np.ndarray) -> HbarPoly:
    """Value at a field configuration; only antifield-free terms contribute."""
    lat = A.lattice
    phi = np.asarray(phi)
    if phi.shape != (lat.n_sites,):
        raise LengthMismatch(f"configuration of shape {phi.shape} on {lat.n_sites} sites")
    local = phi[A.region.index_array].astype(complex)
    total = np.zeros(A.truncation.n_orders, dtype=complex)
    for (n, k), t in A.terms.items():
        if k:
            continue
        value = t
        for _ in range(n):
            value = value @ local
        total += lat.weight ** n * value
    return HbarPoly(total, A.truncation.h_max)


def derivative(A: PolyObservable, phi: np.ndarray, order: int) -> np.ndarray:
    """
    Functional derivative of the antifield-free part at ``phi``.

    Args:
        A: the observable
        phi: field configuration on the whole lattice
        order: derivative order r

    Returns:
        Array of shape ``(h_max + 1,) + (M,) * r`` over the region sites of A,
        ``sum_n n!/(n-r)! w^(n-r) C_n`` contracted with ``phi^(n-r)``; the
        gradient is related to the partial derivatives of :func:`evaluate` by
        ``dF/dphi(s) = w * F'(s)``
    """
    lat = A.lattice
    local = np.asarray(phi)[A.region.index_array].astype(complex)
    out = np.zeros((A.truncation.n_orders,) + (A.region.size,) * order, dtype=complex)
    for (n, k), t in A.terms.items():
        if k or n < order:
            continue
        value = t
        for _ in range(n - order):
            value = value @ local
        out += (math.factorial(n) // math.factorial(n - order)) * lat.weight ** (n - order) * value
    return out


def phi_derivative_terms(A: PolyObservable) -> Dict[Bidegree, np.ndarray]:
    """Field derivatives at every site, site axis placed right after the hbar axis."""
    return {(n - 1, k): n * t for (n, k), t in A.terms.items() if n >= 1}


def xi_derivative_terms(A: PolyObservable, side: str = "left") -> Dict[Bidegree, np.ndarray]:
    """
    Antifield derivatives at every site, site axis placed right after the hbar axis.

    The left derivative acts on the first antifield slot; the right one on the
    last and equals ``(-1)^(k-1)`` times the left one.
    """
    out = {}
    for (n, k), t in A.terms.items():
        if k == 0:
            continue
        axis = 1 + n if side == "left" else n + k
        out[(n, k - 1)] = k * np.moveaxis(t, axis, 1)
    return out


def max_abs_difference(A: PolyObservable, B: PolyObservable) -> float:
    _, a, b = align(A, B)
    worst = 0.0
    for key in set(a.terms) | set(b.terms):
        ta = a.terms.get(key)
        tb = b.terms.get(key)
        diff = ta if tb is None else (-tb if ta is None else ta - tb)
        if diff.size:
            worst = max(worst, float(np.max(np.abs(diff))))
    return worst


def is_graded_symmetric(A: PolyObservable, tol: float = 1e-12) -> bool:
    for (n, k), t in A.terms.items():
        if float(np.max(np.abs(graded_symmetrize(t, n, k) - t), initial=0.0)) > tol:
            return False
    return True


def random_observable(lat: Lattice, region: Region, seed: int, n_max: int, k_max: int,
                      truncation: Truncation = DEFAULT_TRUNCATION, hbar_order: int = 0,
                      n_min: int = 0) -> PolyObservable:
    """
    Reproducible random observable on ``region``.

    Antifield slots only carry margin sites; every bidegree ``n_min <= n <= n_max``,
    ``k <= k_max`` gets a term with hbar orders up to ``hbar_order``.
    """
    check_truncation(truncation, n_max, k_max)
    rng = np.random.default_rng(seed)
    M = region.size
    margin = np.isin(region.index_array, np.asarray(region.margin, dtype=int))
    terms = {}
    for n in range(n_min, n_max + 1):
        for k in range(k_max + 1):
            if k and not margin.any():
                continue
            shape = (truncation.n_orders,) + (M,) * (n + k)
            t = np.zeros(shape, dtype=complex)
            for h in range(min(hbar_order, truncation.h_max) + 1):
                t[h] = rng.standard_normal(shape[1:]) + 1j * rng.standard_normal(shape[1:])
            for axis in range(1 + n, 1 + n + k):
                view = [slice(None)] * t.ndim
                view[axis] = ~margin
                t[tuple(view)] = 0.0
            terms[(n, k)] = graded_symmetrize(t, n, k)
    return PolyObservable(region, terms, truncation)


def parity(A: PolyObservable) -> PolyObservable:
    """The Koszul sign operator ``(-1)^k`` applied term by term."""
    return PolyObservable(A.region, {(n, k): (-t if k % 2 else t) for (n, k), t in A.terms.items()}, A.truncation)


def homogeneous_part(A: PolyObservable, k: int) -> PolyObservable:
    return PolyObservable(A.region, {key: t for key, t in A.terms.items() if key[1] == k}, A.truncation)
