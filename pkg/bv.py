"""
BV Machinery
============

The Koszul differential ``delta_S``, the BV Laplacian, the quantum
differential ``s = delta_S - i hbar Laplacian``, their algebraic identities,
cohomology of the truncated complexes over a region, and exactness witnesses.

Cochain complexes are assembled in a monomial basis: field monomials are
multisets of region sites, antifield monomials are increasing tuples of
margin sites. A monomial ``phi^m xi_X`` stands for the observable with value
``w^(n+k) * phi^m * xi_X`` so that the tensor and monomial pictures agree
under :func:`to_monomials` / :func:`from_monomials`.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations, combinations_with_replacement
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from errors import SizeCap
from lattice import Interval, Lattice, Region, make_region
from observables import (
    Bidegree,
    PolyObservable,
    Truncation,
    add_term,
    check_truncation,
    extend,
    graded_symmetrize,
    homogeneous_part,
    max_abs_difference,
    multiply,
    parity,
    random_observable,
    xi_derivative_terms,
    zero,
)
from products import alpha, shifted_bracket, star, time_ordered
from propagators import DiscreteOperator, KernelSet, PropagatorKernel, build_kernels, numerical_rank
from report_manager import CheckReport

logger = logging.getLogger(__name__)

DEFAULT_RANK_THRESHOLD = 1e-8
DEFAULT_SIZE_CAP = 6_000_000
EXACTNESS_TOLERANCE = 1e-8

# products of two (2, 1) samples followed by delta_S reach (5, 1)
SAMPLE_TRUNCATION = Truncation(d_max=5, a_max=2, h_max=2)

Monomial = Tuple[Tuple[int, ...], Tuple[int, ...]]


class Differential(str, Enum):
    CLASSICAL = "classical"
    QUANTUM = "quantum"


class NotExactType:
    """Sentinel returned when a target is not in the image of the differential."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NotExact"

    def __bool__(self) -> bool:
        return False


NotExact = NotExactType()


def _local_operator(A: PolyObservable, op: Optional[DiscreteOperator]) -> np.ndarray:
    op = op or build_kernels(A.lattice).op
    idx = A.region.index_array
    return op.matrix[np.ix_(idx, idx)]


def koszul_differential(A: PolyObservable, op: Optional[DiscreteOperator] = None) -> PolyObservable:
    """
    ``delta_S``: apply P to each antifield slot in turn, turning it into a field slot.

    ``delta_S(O^#_g) = O_{Pg}`` and ``delta_S(O_f) = 0``.
    """
    P = _local_operator(A, op)
    terms: Dict[Bidegree, np.ndarray] = {}
    for (n, k) in sorted(A.terms):
        if k == 0:
            continue
        check_truncation(A.truncation, n + 1, k - 1)
        t = A.terms[(n, k)]
        rank = n + k
        sub_in = list(range(1, rank + 1))
        t_axis = sub_in[n]
        u_axis = rank + 1
        out_sub = [0, u_axis] + sub_in[:n] + sub_in[n + 1:]
        moved = np.einsum(t, [0] + sub_in, P, [t_axis, u_axis], out_sub, optimize=True)
        add_term(terms, (n + 1, k - 1), k * graded_symmetrize(moved, n + 1, k - 1))
    return PolyObservable(A.region, terms, A.truncation)


def koszul_differential_contraction(A: PolyObservable, op: Optional[DiscreteOperator] = None) -> PolyObservable:
    """
    Independent ``delta_S`` as contraction with ``dS``: ``w sum_t O_{P(t, .)/w} * (d>_xi(t) A)``.
    """
    op = op or build_kernels(A.lattice).op
    lat = A.lattice
    idx = A.region.index_array
    result = zero(lat, A.truncation)
    derivs = xi_derivative_terms(A, side="left")
    for pos, site in enumerate(idx):
        if not lat.is_interior(int(site)):
            continue
        slice_terms = {key: t[:, pos] for key, t in derivs.items() if np.any(t[:, pos])}
        if not slice_terms:
            continue
        row = np.zeros((A.truncation.n_orders, len(idx)), dtype=complex)
        row[0] = op.matrix[site, idx] / lat.weight
        gen = PolyObservable(A.region, {(1, 0): row}, A.truncation)
        part = PolyObservable(A.region, slice_terms, A.truncation)
        result = result + lat.weight * multiply(gen, part)
    return result


def bv_laplacian(A: PolyObservable) -> PolyObservable:
    """Pair the first antifield slot with a field slot: ``n k w sum_t C(t, ..; t, ..)``."""
    w = A.lattice.weight
    terms: Dict[Bidegree, np.ndarray] = {}
    for (n, k) in sorted(A.terms):
        if n == 0 or k == 0:
            continue
        traced = np.trace(A.terms[(n, k)], axis1=1, axis2=1 + n)
        add_term(terms, (n - 1, k - 1), n * k * w * traced)
    return PolyObservable(A.region, terms, A.truncation)


def quantum_differential(A: PolyObservable, op: Optional[DiscreteOperator] = None) -> PolyObservable:
    return koszul_differential(A, op) + (-1j) * bv_laplacian(A).shift_hbar(1)


# ---------------------------------------------------------------------------
# monomial picture


def sym_monomials(n_sites: int, n: int) -> List[Tuple[int, ...]]:
    return list(combinations_with_replacement(range(n_sites), n))


def ext_monomials(margin_positions: Sequence[int], k: int) -> List[Tuple[int, ...]]:
    return list(combinations(sorted(margin_positions), k))


def _multiset_weight(m: Tuple[int, ...]) -> int:
    """``n! / prod(multiplicity!)``: number of orderings of a field multiset."""
    out = math.factorial(len(m))
    for mult in Counter(m).values():
        out //= math.factorial(mult)
    return out


@dataclass
class CochainComplexSlice:
    """Degree-truncated complex over a region: blocks ``(n, k)`` with ``n + k <= D`` and ``k <= K``."""

    region: Region
    max_total_degree: int
    max_ext_degree: int
    blocks: Dict[Bidegree, List[Monomial]] = field(default_factory=dict)
    koszul: Dict[Bidegree, np.ndarray] = field(default_factory=dict)
    laplacian: Dict[Bidegree, np.ndarray] = field(default_factory=dict)

    def index(self, key: Bidegree) -> Dict[Monomial, int]:
        return {mono: i for i, mono in enumerate(self.blocks[key])}

    def dim(self, key: Bidegree) -> int:
        return len(self.blocks.get(key, []))


class ComplexBuilder:
    """Builds monomial bases and differential matrices over one region."""

    def __init__(self, region: Region, kernels: Optional[KernelSet] = None, size_cap: int = DEFAULT_SIZE_CAP):
        self.region = region
        self.lattice = region.lattice
        self.kernels = kernels or build_kernels(self.lattice)
        self.size_cap = size_cap
        self.logger = logging.getLogger(__name__)
        idx = region.index_array
        self.P = self.kernels.op.matrix[np.ix_(idx, idx)]
        margin = set(region.margin)
        self.margin_positions = [pos for pos, s in enumerate(region.indices) if s in margin]

    def build(self, max_total_degree: int, max_ext_degree: int) -> CochainComplexSlice:
        cx = CochainComplexSlice(self.region, max_total_degree, max_ext_degree)
        M = self.region.size
        for total in range(max_total_degree + 1):
            for k in range(min(total, max_ext_degree) + 1):
                n = total - k
                cx.blocks[(n, k)] = [(m, X) for m in sym_monomials(M, n)
                                     for X in ext_monomials(self.margin_positions, k)]
        for (n, k) in cx.blocks:
            if k == 0:
                continue
            if (n + 1, k - 1) in cx.blocks:
                cx.koszul[(n, k)] = self._koszul_block(cx, n, k)
            if n >= 1 and (n - 1, k - 1) in cx.blocks:
                cx.laplacian[(n, k)] = self._laplacian_block(cx, n, k)
        self.logger.debug(f"Complex over {M} sites: blocks {sorted((key, len(b)) for key, b in cx.blocks.items())}")
        return cx

    def _check_size(self, rows: int, cols: int) -> None:
        if rows * cols > self.size_cap:
            raise SizeCap(f"block of {rows}x{cols} exceeds the cap of {self.size_cap} entries")

    def _koszul_block(self, cx: CochainComplexSlice, n: int, k: int) -> np.ndarray:
        source = cx.blocks[(n, k)]
        target = cx.index((n + 1, k - 1))
        self._check_size(len(target), len(source))
        D = np.zeros((len(target), len(source)), dtype=complex)
        for col, (m, X) in enumerate(source):
            for i, x in enumerate(X):
                rest = X[:i] + X[i + 1:]
                sign = -1.0 if i % 2 else 1.0
                for u in np.flatnonzero(self.P[x]):
                    row = target[(tuple(sorted(m + (int(u),))), rest)]
                    D[row, col] += sign * self.P[x, u]
        return D

    def _laplacian_block(self, cx: CochainComplexSlice, n: int, k: int) -> np.ndarray:
        source = cx.blocks[(n, k)]
        target = cx.index((n - 1, k - 1))
        self._check_size(len(target), len(source))
        L = np.zeros((len(target), len(source)), dtype=complex)
        w = self.lattice.weight
        for col, (m, X) in enumerate(source):
            counts = Counter(m)
            for i, x in enumerate(X):
                if counts[x] == 0:
                    continue
                reduced = list(m)
                reduced.remove(x)
                rest = X[:i] + X[i + 1:]
                sign = -1.0 if i % 2 else 1.0
                L[target[(tuple(reduced), rest)], col] += sign * w * counts[x]
        return L


def to_monomials(A: PolyObservable, cx: CochainComplexSlice, key: Bidegree, order: int = 0) -> np.ndarray:
    """Coefficient vector of one bidegree and hbar order in the monomial basis."""
    n, k = key
    t = A.terms.get(key)
    vec = np.zeros(cx.dim(key), dtype=complex)
    if t is None:
        return vec
    if A.region != cx.region:
        t = extend(A, cx.region).terms[key]
    layer = t[order]
    for i, (m, X) in enumerate(cx.blocks[key]):
        vec[i] = layer[m + X] * _multiset_weight(m) * math.factorial(k)
    return vec


def from_monomials(cx: CochainComplexSlice, key: Bidegree, vec: np.ndarray,
                   truncation: Truncation, order: int = 0) -> PolyObservable:
    n, k = key
    M = cx.region.size
    t = np.zeros((truncation.n_orders,) + (M,) * (n + k), dtype=complex)
    for coeff, (m, X) in zip(vec, cx.blocks[key]):
        if coeff != 0:
            t[(order,) + m + X] = coeff
    return PolyObservable(cx.region, {key: graded_symmetrize(t, n, k)}, truncation)


# ---------------------------------------------------------------------------
# cohomology


@dataclass
class CohomologyReport:
    region: Dict
    differential: str
    rank_threshold: float
    dims: Dict[int, Dict[int, int]] = field(default_factory=dict)
    h0_by_sym_degree: List[int] = field(default_factory=list)
    quantum_dims: Dict[int, Dict[int, int]] = field(default_factory=dict)
    representatives: List[PolyObservable] = field(default_factory=list)

    def negative_degree_dims(self) -> List[int]:
        return [d for block in self.dims.values() for k, d in block.items() if k > 0]

    def to_dict(self) -> Dict:
        return {
            "region": self.region,
            "differential": self.differential,
            "rank_threshold": self.rank_threshold,
            "dims": {str(t): {str(k): d for k, d in block.items()} for t, block in sorted(self.dims.items())},
            "h0_by_sym_degree": self.h0_by_sym_degree,
            "quantum_dims": {str(h): {str(k): d for k, d in block.items()}
                             for h, block in sorted(self.quantum_dims.items())},
            "n_representatives": len(self.representatives),
        }


def _rank(matrix: Optional[np.ndarray], threshold: float) -> int:
    return 0 if matrix is None or matrix.size == 0 else numerical_rank(matrix, threshold)


def cohomology(region: Region, differential: Union[Differential, str] = Differential.CLASSICAL,
               up_to_sym_degree: int = 2, kernels: Optional[KernelSet] = None,
               max_ext_degree: int = 3, hbar_orders: int = 2,
               rank_threshold: float = DEFAULT_RANK_THRESHOLD, size_cap: int = DEFAULT_SIZE_CAP,
               truncation: Truncation = Truncation(), with_representatives: bool = True) -> CohomologyReport:
    """
    Cohomology of the degree-truncated complex over a region.

    Classical dims are reported per total degree ``T = n + k`` and antifield
    degree k; the top antifield degree of a truncated block is omitted since
    it only reflects the truncation. The quantum differential is treated over
    ``C[hbar]/hbar^(h+1)`` for ``h < hbar_orders``.

    Raises:
        SizeCap: if a block matrix exceeds ``size_cap`` entries
    """
    builder = ComplexBuilder(region, kernels, size_cap)
    cx = builder.build(up_to_sym_degree, max_ext_degree)
    report = CohomologyReport(region.to_dict(), Differential(differential).value, rank_threshold)

    for total in range(up_to_sym_degree + 1):
        top = min(total, max_ext_degree)
        report.dims[total] = {}
        for k in range(top + 1):
            if k == top and total > max_ext_degree:
                continue
            n = total - k
            outgoing = _rank(cx.koszul.get((n, k)), rank_threshold)
            incoming = _rank(cx.koszul.get((n - 1, k + 1)), rank_threshold) if n >= 1 else 0
            report.dims[total][k] = cx.dim((n, k)) - outgoing - incoming
        report.h0_by_sym_degree.append(report.dims[total][0])

    if with_representatives:
        for n in range(1, up_to_sym_degree + 1):
            image = cx.koszul.get((n - 1, 1))
            if image is None or image.size == 0:
                complement = np.eye(cx.dim((n, 0)))
            else:
                complement = scipy.linalg.null_space(image.conj().T, rcond=rank_threshold)
            for col in complement.T:
                report.representatives.append(from_monomials(cx, (n, 0), col, truncation))

    if Differential(differential) == Differential.QUANTUM:
        for h in range(hbar_orders):
            report.quantum_dims[h] = _quantum_dims(cx, h + 1, rank_threshold, size_cap)
    return report


def _degree_space(cx: CochainComplexSlice, k: int) -> List[Bidegree]:
    return sorted(key for key in cx.blocks if key[1] == k)


def _quantum_block(cx: CochainComplexSlice, k: int, n_orders: int) -> Optional[np.ndarray]:
    """Matrix of ``delta_S - i hbar Laplacian`` from antifield degree k to k-1 over hbar orders."""
    sources = _degree_space(cx, k)
    targets = _degree_space(cx, k - 1)
    if not sources or not targets:
        return None
    s_off, t_off = {}, {}
    pos = 0
    for key in sources:
        s_off[key] = pos
        pos += cx.dim(key)
    n_src = pos
    pos = 0
    for key in targets:
        t_off[key] = pos
        pos += cx.dim(key)
    n_tgt = pos
    block = np.zeros((n_tgt * n_orders, n_src * n_orders), dtype=complex)
    for key in sources:
        n, _ = key
        for h in range(n_orders):
            col = h * n_src + s_off[key]
            if key in cx.koszul and (n + 1, k - 1) in t_off:
                row = h * n_tgt + t_off[(n + 1, k - 1)]
                D = cx.koszul[key]
                block[row:row + D.shape[0], col:col + D.shape[1]] += D
            if key in cx.laplacian and (n - 1, k - 1) in t_off and h + 1 < n_orders:
                row = (h + 1) * n_tgt + t_off[(n - 1, k - 1)]
                L = cx.laplacian[key]
                block[row:row + L.shape[0], col:col + L.shape[1]] += -1j * L
    return block


def _quantum_dims(cx: CochainComplexSlice, n_orders: int, threshold: float, size_cap: int) -> Dict[int, int]:
    K = cx.max_ext_degree
    D = cx.max_total_degree
    dims = {}
    for k in range(min(K, D) + 1):
        if k == K and D > K:
            continue
        out_block = _quantum_block(cx, k, n_orders)
        in_block = _quantum_block(cx, k + 1, n_orders)
        for b in (out_block, in_block):
            if b is not None and b.size > size_cap:
                raise SizeCap(f"quantum block of {b.shape} exceeds the cap")
        space = n_orders * sum(cx.dim(key) for key in _degree_space(cx, k))
        dims[k] = space - _rank(out_block, threshold) - _rank(in_block, threshold)
    return dims


# exactness


def _koszul_homotopy(target: PolyObservable, region: Region, kernels: KernelSet,
                     tol: float) -> Union[PolyObservable, NotExactType]:
    """
    Contracting homotopy for antifield-free targets of the classical differential.

    In coordinates where the first E linear forms are ``(P phi)(x)`` for the
    margin sites x, a monomial of e-degree d > 0 is hit by ``(1/d)`` times the
    sum over its e-factors with that factor traded for the antifield at x.
    The e-degree 0 part is the obstruction.
    """
    idx = region.index_array
    margin = set(region.margin)
    margin_pos = [pos for pos, s in enumerate(region.indices) if s in margin]
    M, E = len(idx), len(margin_pos)
    P = kernels.op.matrix[np.ix_(idx, idx)]
    if E:
        K = P[margin_pos, :].T
        B = np.hstack([K, scipy.linalg.null_space(K.T)])
    else:
        B = np.eye(M)
    B_inv = scipy.linalg.inv(B)
    local = extend(target, region) if target.region != region else target

    def change_basis(t: np.ndarray, matrix: np.ndarray, axes: range) -> np.ndarray:
        for axis in axes:
            t = np.moveaxis(np.tensordot(matrix, t, axes=([1], [axis])), 0, axis)
        return t

    in_e = (np.arange(M) < E).astype(int)
    witness_terms: Dict[Bidegree, np.ndarray] = {}
    obstruction = 0.0
    for (n, _), t in sorted(local.terms.items()):
        if n == 0:
            obstruction = max(obstruction, float(np.max(np.abs(t))))
            continue
        coords = change_basis(t, B_inv, range(1, n + 1))
        e_degree = np.zeros((M,) * n, dtype=int)
        for axis in range(n):
            shape = [1] * n
            shape[axis] = M
            e_degree = e_degree + in_e.reshape(shape)

        base = change_basis(np.where(e_degree == 0, coords, 0.0), B, range(1, n + 1))
        obstruction = max(obstruction, float(np.max(np.abs(base))))
        if E == 0:
            continue

        scaled = np.where(e_degree > 0, coords / np.maximum(e_degree, 1), 0.0)
        # first slot runs over the e-coordinates, the rest go back to sites
        w_coef = change_basis(n * scaled[:, :E], B, range(2, n + 1))
        w_coef = np.moveaxis(w_coef, 1, -1)
        full = np.zeros(w_coef.shape[:-1] + (M,), dtype=complex)
        full[..., margin_pos] = w_coef
        check_truncation(local.truncation, n - 1, 1)
        add_term(witness_terms, (n - 1, 1), full)

    scale = max(local.norm(), 1e-300)
    if obstruction > tol * scale:
        logger.debug(f"homotopy obstruction {obstruction:.3e} against target norm {scale:.3e}")
        return NotExact
    return PolyObservable(region, witness_terms, target.truncation)


def _solve_degree(part: PolyObservable, k: int, region: Region, kernels: KernelSet, n_orders: int,
                  tol: float, size_cap: int) -> Union[PolyObservable, NotExactType]:
    """Least-squares preimage of the antifield-degree-k part under the block from degree k + 1."""
    total = max(n + kk for n, kk in part.terms)
    cx = ComplexBuilder(region, kernels, size_cap).build(total, k + 1)
    targets = _degree_space(cx, k)
    sources = _degree_space(cx, k + 1)
    rhs = np.concatenate([to_monomials(part, cx, key, h) for h in range(n_orders) for key in targets])
    rhs_norm = float(np.linalg.norm(rhs))
    matrix = _quantum_block(cx, k + 1, n_orders)
    if matrix is None:
        return NotExact if rhs_norm > 0.0 else zero(region.lattice, part.truncation)
    if matrix.size > size_cap:
        raise SizeCap(f"exactness block of {matrix.shape} exceeds the cap of {size_cap} entries")
    sol, *_ = scipy.linalg.lstsq(matrix, rhs)
    residual = float(np.linalg.norm(matrix @ sol - rhs))
    if residual > tol * rhs_norm:
        logger.debug(f"degree {k} block residual {residual:.3e} against {rhs_norm:.3e}")
        return NotExact

    witness = zero(region.lattice, part.truncation)
    n_src = sum(cx.dim(key) for key in sources)
    for h in range(n_orders):
        offset = h * n_src
        for key in sources:
            chunk = sol[offset:offset + cx.dim(key)]
            offset += cx.dim(key)
            if np.any(chunk):
                witness = witness + from_monomials(cx, key, chunk, part.truncation, order=h)
    return witness


def _block_solve(target: PolyObservable, region: Region, kernels: KernelSet, kind: Differential,
                 tol: float, size_cap: int) -> Union[PolyObservable, NotExactType]:
    local = extend(target, region) if target.region != region else target
    if kind == Differential.CLASSICAL:
        # delta_S is hbar-linear: solve order by order
        witness = zero(region.lattice, target.truncation)
        for h in range(target.truncation.n_orders):
            layer = local.hbar_coefficient(h).prune()
            if layer.is_zero():
                continue
            for k in sorted({kk for _, kk in layer.terms}):
                sol = _solve_degree(homogeneous_part(layer, k), k, region, kernels, 1, tol, size_cap)
                if sol is NotExact:
                    return NotExact
                witness = witness + sol.shift_hbar(h)
        return witness

    witness = zero(region.lattice, target.truncation)
    for k in sorted({kk for _, kk in local.terms}):
        sol = _solve_degree(homogeneous_part(local, k), k, region, kernels,
                            target.truncation.n_orders, tol, size_cap)
        if sol is NotExact:
            return NotExact
        witness = witness + sol
    return witness


def exactness_witness(target: PolyObservable, differential: Union[Differential, str] = Differential.CLASSICAL,
                      region: Optional[Region] = None, kernels: Optional[KernelSet] = None,
                      tol: float = EXACTNESS_TOLERANCE,
                      size_cap: int = DEFAULT_SIZE_CAP) -> Union[PolyObservable, NotExactType]:
    """
    Find w with ``differential(w) = target``.

    Args:
        target: observable to write as a coboundary
        differential: classical (delta_S) or quantum
        region: region the witness may live on; defaults to the target's region
        kernels: propagators of the lattice
        tol: admissible residual relative to the target norm

    Returns:
        The witness, or ``NotExact`` when the residual exceeds ``tol * |target|``

    Raises:
        SizeCap: if the least-squares block exceeds ``size_cap`` entries
        TruncationOverflow: if the witness would need more antifields than ``a_max``
    """
    kind = Differential(differential)
    lat = target.lattice
    kernels = kernels or build_kernels(lat)
    region = region or target.region
    target = target.prune()
    if target.is_zero():
        return zero(lat, target.truncation)
    check_truncation(target.truncation, 0, target.max_ext_degree() + 1)

    if kind == Differential.CLASSICAL and target.max_ext_degree() == 0:
        return _koszul_homotopy(target, region, kernels, tol)
    witness = _block_solve(target, region, kernels, kind, tol, size_cap)
    if witness is NotExact:
        return NotExact
    # monomial and tensor coefficients differ by factorials of the degrees
    residual = witness_residual(witness, target, kind)
    if residual > 1e2 * tol * target.norm():
        logger.warning(f"exactness witness leaves a residual of {residual:.3e}")
        return NotExact
    return witness


def witness_residual(witness: Union[PolyObservable, NotExactType], target: PolyObservable,
                     differential: Union[Differential, str] = Differential.CLASSICAL,
                     op: Optional[DiscreteOperator] = None) -> float:
    if witness is NotExact:
        return float("inf")
    if Differential(differential) == Differential.QUANTUM:
        return max_abs_difference(quantum_differential(witness, op), target)
    return max_abs_difference(koszul_differential(witness, op), target)


# ---------------------------------------------------------------------------
# verification


def nilpotency_check(lat: Lattice, seeds: Sequence[int], region: Region, kernels: Optional[KernelSet] = None,
                     tolerance: float = 1e-12) -> CheckReport:
    """``delta_S^2``, ``Laplacian^2``, their anticommutator and ``s^2`` on random inputs."""
    kernels = kernels or build_kernels(lat)
    report = CheckReport("nilpotency", {"region": region.to_dict(), "seeds": len(seeds)})
    worst = {"koszul": 0.0, "laplacian": 0.0, "anticommutator": 0.0, "quantum": 0.0}
    trunc = Truncation(d_max=4, a_max=3)
    for seed in seeds:
        A = random_observable(lat, region, seed, n_max=2, k_max=2, truncation=trunc, hbar_order=1)
        scale = max(A.norm(), 1.0) * max(1.0, np.max(np.abs(kernels.op.matrix))) ** 2
        d = koszul_differential(A, kernels.op)
        lap = bv_laplacian(A)
        worst["koszul"] = max(worst["koszul"], koszul_differential(d, kernels.op).norm() / scale)
        worst["laplacian"] = max(worst["laplacian"], bv_laplacian(lap).norm() / scale)
        worst["anticommutator"] = max(worst["anticommutator"],
                                      (koszul_differential(lap, kernels.op) + bv_laplacian(d)).norm() / scale)
        s = quantum_differential(A, kernels.op)
        worst["quantum"] = max(worst["quantum"], quantum_differential(s, kernels.op).norm() / scale)
    anchors = {
        "koszul": "delta_S squares to zero",
        "laplacian": "the BV Laplacian squares to zero",
        "anticommutator": "delta_S and the Laplacian anticommute",
        "quantum": "the quantum differential squares to zero",
    }
    for name, value in worst.items():
        report.add(f"nilpotency.{name}", anchors[name], value, tolerance)
    return report


def verify_algebraic_identities(lat: Lattice, seeds: Sequence[int], region: Region,
                                kernels: Optional[KernelSet] = None, tolerance: float = 1e-10,
                                laplacian_sign: float = 1.0) -> CheckReport:
    """
    BV and BD Leibniz relations, delta_S as a star derivation and the
    time-ordered Leibniz defect.

    Args:
        lat: the lattice
        seeds: random seeds, one sample triple per seed
        region: region the random samples live on
        kernels: propagators of the lattice
        tolerance: admissible relative residual
        laplacian_sign: -1 flips the Laplacian sign (negative control)
    """
    kernels = kernels or build_kernels(lat)
    op = kernels.op
    report = CheckReport("algebraic_identities", {"region": region.to_dict(), "seeds": len(seeds)})
    trunc = SAMPLE_TRUNCATION
    worst = {"bv_leibniz": 0.0, "bd_leibniz": 0.0, "star_derivation": 0.0,
             "time_ordered_disjoint": 0.0, "time_ordered_defect": 0.0}

    def lap(X):
        return laplacian_sign * bv_laplacian(X)

    def s_hat(X):
        return koszul_differential(X, op) + (-1j) * lap(X).shift_hbar(1)

    t0, t1 = region.time_range()
    mid = (t0 + t1) // 2
    early = make_region(lat, Interval(t0, mid))
    late = make_region(lat, Interval(mid + 1, t1))

    for seed in seeds:
        a = random_observable(lat, region, seed, n_max=2, k_max=1, truncation=trunc, hbar_order=1)
        b = random_observable(lat, region, seed + 10_000, n_max=2, k_max=1, truncation=trunc, hbar_order=1)
        scale = max(a.norm() * b.norm(), 1.0) * max(1.0, np.max(np.abs(op.matrix)))
        pa = parity(a)

        lhs = lap(multiply(a, b))
        rhs = multiply(lap(a), b) + multiply(pa, lap(b)) - shifted_bracket(pa, b)
        worst["bv_leibniz"] = max(worst["bv_leibniz"], max_abs_difference(lhs, rhs) / scale)

        lhs = s_hat(multiply(a, b))
        rhs = multiply(s_hat(a), b) + multiply(pa, s_hat(b)) + 1j * shifted_bracket(pa, b).shift_hbar(1)
        worst["bd_leibniz"] = max(worst["bd_leibniz"], max_abs_difference(lhs, rhs) / scale)

        x = random_observable(lat, region, seed + 20_000, n_max=1, k_max=1, truncation=trunc)
        y = random_observable(lat, region, seed + 30_000, n_max=1, k_max=1, truncation=trunc)
        lhs = koszul_differential(star(x, y, kernels), op)
        rhs = star(koszul_differential(x, op), y, kernels) + star(parity(x), koszul_differential(y, op), kernels)
        worst["star_derivation"] = max(worst["star_derivation"], max_abs_difference(lhs, rhs) / scale)

        xd = random_observable(lat, early, seed + 40_000, n_max=2, k_max=1, truncation=trunc)
        yd = random_observable(lat, late, seed + 50_000, n_max=1, k_max=1, truncation=trunc)
        defect = _time_ordered_leibniz_defect(xd, yd, kernels)
        worst["time_ordered_disjoint"] = max(worst["time_ordered_disjoint"], defect.norm() / scale)

        defect = _time_ordered_leibniz_defect(x, y, kernels)
        expected = _time_ordered_bracket_term(x, y, kernels)
        worst["time_ordered_defect"] = max(worst["time_ordered_defect"],
                                           max_abs_difference(defect, expected) / scale)

    anchors = {
        "bv_leibniz": "the Laplacian fails to be a derivation by the antibracket",
        "bd_leibniz": "the quantum differential satisfies the BD relation",
        "star_derivation": "delta_S is a derivation of the star product",
        "time_ordered_disjoint": "delta_S acts like a derivation for arguments with disjoint support",
        "time_ordered_defect": "delta_S fails the time-ordered Leibniz rule by the time-ordered antibracket",
    }
    for name, value in worst.items():
        report.add(f"identities.{name}", anchors[name], value, tolerance)
    return report


def _time_ordered_leibniz_defect(x: PolyObservable, y: PolyObservable, kernels: KernelSet) -> PolyObservable:
    op = kernels.op
    return (koszul_differential(time_ordered(x, y, kernels), op)
            - time_ordered(koszul_differential(x, op), y, kernels)
            - time_ordered(parity(x), koszul_differential(y, op), kernels))


def _time_ordered_bracket_term(x: PolyObservable, y: PolyObservable, kernels: KernelSet) -> PolyObservable:
    """``i hbar (-1)^|x| alpha({alpha^-1 x, alpha^-1 y})`` with ``alpha = alpha_{iG^D}``."""
    inv_x = alpha(kernels.gD, -1j, x)
    inv_y = alpha(kernels.gD, -1j, y)
    bracket = shifted_bracket(parity(inv_x), inv_y)
    return 1j * alpha(kernels.gD, 1j, bracket).shift_hbar(1)


def intertwine_residual(A: PolyObservable, kernel: PropagatorKernel, op: DiscreteOperator) -> float:
    """Deviation of ``s A`` from ``alpha^-1 delta_S alpha A`` with ``alpha = alpha_{i G}``."""
    lhs = quantum_differential(A, op)
    rhs = alpha(kernel, -1j, koszul_differential(alpha(kernel, 1j, A), op))
    return max_abs_difference(lhs, rhs)


def intertwine_check(lat: Lattice, seeds: Sequence[int], region: Region, kernels: Optional[KernelSet] = None,
                     tolerance: float = 1e-10) -> CheckReport:
    """``s = alpha_{iG^D}^-1 delta_S alpha_{iG^D}``, with the causal propagator as negative control."""
    kernels = kernels or build_kernels(lat)
    report = CheckReport("intertwining", {"region": region.to_dict(), "seeds": len(seeds)})
    worst = 0.0
    control = 0.0
    for seed in seeds:
        A = random_observable(lat, region, seed, n_max=2, k_max=1)
        scale = max(A.norm(), 1.0) * max(1.0, np.max(np.abs(kernels.op.matrix)))
        worst = max(worst, intertwine_residual(A, kernels.gD, kernels.op) / scale)
        control = max(control, intertwine_residual(A, kernels.gC, kernels.op) / scale)
    report.add("intertwining.dirac", "the deformed BV differential is alpha-conjugate to delta_S", worst, tolerance)
    report.add_flag("intertwining.causal_control", "the identity fails for the causal propagator",
                    control > 1e3 * tolerance, witness_ref=f"residual={control:.3e}")
    return report


def shifted_jacobi_check(lat: Lattice, seeds: Sequence[int], region: Region, tolerance: float = 1e-10) -> CheckReport:
    """Graded Jacobi identity of the antibracket on random polyvector fields."""
    report = CheckReport("shifted_jacobi", {"region": region.to_dict(), "seeds": len(seeds)})
    worst = 0.0
    for seed in seeds:
        a = random_observable(lat, region, seed, n_max=1, k_max=1)
        b = random_observable(lat, region, seed + 1, n_max=1, k_max=1)
        c = random_observable(lat, region, seed + 2, n_max=1, k_max=1)
        defect = _jacobi_defect(a, b, c)
        worst = max(worst, defect / max(a.norm() * b.norm() * c.norm(), 1.0))
    report.add("jacobi.antibracket", "the shifted bracket satisfies the graded Jacobi identity", worst, tolerance)
    return report


def _jacobi_defect(a: PolyObservable, b: PolyObservable, c: PolyObservable) -> float:
    """
    ``{a,{b,c}} - {{a,b},c} - (-1)^{(|a|+1)(|b|+1)} {b,{a,c}}`` summed over
    homogeneous components (degree of an antifield monomial is -k).
    """
    total = None
    for ka in sorted({k for _, k in a.terms}):
        for kb in sorted({k for _, k in b.terms}):
            ah, bh = homogeneous_part(a, ka), homogeneous_part(b, kb)
            sign = -1.0 if ((ka + 1) * (kb + 1)) % 2 else 1.0
            term = (shifted_bracket(ah, shifted_bracket(bh, c))
                    - shifted_bracket(shifted_bracket(ah, bh), c)
                    - sign * shifted_bracket(bh, shifted_bracket(ah, c)))
            total = term if total is None else total + term
    return 0.0 if total is None else total.norm()
