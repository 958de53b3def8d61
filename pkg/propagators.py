"""
Propagators
===========

The discrete Klein-Gordon operator ``P = box + m^2`` and its propagators:
retarded, advanced, causal, Dirac, the symmetric Hadamard part H, the
two-point function G+ and the Feynman propagator, together with the
identity, positivity and exactness verifications.

Kernels act on grid functions as integral operators with the uniform cell
volume ``w``: ``(G f)(a) = w * sum_b G(a, b) f(b)``. Columns of the retarded
kernel solve ``P G(., b) = delta_b / w``.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Any, Dict, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sparse

from errors import KindMismatch, ModeSingular
from lattice import Dimension, Lattice, build_lattice, spatial_eigenvalues
from report_manager import CheckReport

logger = logging.getLogger(__name__)


class KernelKind(str, Enum):
    RETARDED = "retarded"
    ADVANCED = "advanced"
    CAUSAL = "causal"
    DIRAC = "dirac"
    HADAMARD_SYM = "hadamard_sym"
    HADAMARD_TWO_POINT = "hadamard_two_point"
    FEYNMAN = "feynman"


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """
    Klein-Gordon stencil on a lattice.

    ``stencil`` is the full symmetric second-difference matrix (grid values
    outside the lattice treated as zero); ``matrix`` is the same with rows at
    non-interior sites zeroed. Test functions are acted on by ``matrix.T``,
    which agrees with the full stencil on interior-supported arguments.
    """

    lattice: Lattice
    stencil: np.ndarray = field(repr=False)
    matrix: np.ndarray = field(repr=False)
    interior: Tuple[int, ...] = field(repr=False)
    kind: str = "KleinGordon"

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.matrix @ f

    def apply_to_test_function(self, g: np.ndarray) -> np.ndarray:
        return self.matrix.T @ g

    def apply_full(self, f: np.ndarray) -> np.ndarray:
        return self.stencil @ f


@dataclass(frozen=True, eq=False)
class PropagatorKernel:
    kind: KernelKind
    matrix: np.ndarray = field(repr=False)
    meta: Dict[str, Any] = field(default_factory=dict)

    def act(self, lat: Lattice, f: np.ndarray) -> np.ndarray:
        """Integral-operator action ``w * G @ f``."""
        return lat.weight * (self.matrix @ f)

    def bilinear(self, lat: Lattice, f: np.ndarray, g: np.ndarray) -> complex:
        """Weighted double pairing ``<f, G g>_w``."""
        return complex(lat.weight ** 2 * (f @ self.matrix @ g))


@dataclass(frozen=True, eq=False)
class SolutionSpace:
    basis: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return int(self.basis.shape[0])


@dataclass(frozen=True, eq=False)
class KernelSet:
    """All propagators of one operator, bundled for the model layers."""

    op: DiscreteOperator
    gR: PropagatorKernel
    gA: PropagatorKernel
    gC: PropagatorKernel
    gD: PropagatorKernel
    h: PropagatorKernel
    gPlus: PropagatorKernel
    gF: PropagatorKernel

    def by_kind(self, kind: KernelKind) -> PropagatorKernel:
        table = {
            KernelKind.RETARDED: self.gR,
            KernelKind.ADVANCED: self.gA,
            KernelKind.CAUSAL: self.gC,
            KernelKind.DIRAC: self.gD,
            KernelKind.HADAMARD_SYM: self.h,
            KernelKind.HADAMARD_TWO_POINT: self.gPlus,
            KernelKind.FEYNMAN: self.gF,
        }
        return table[KernelKind(kind)]


def _second_difference(n: int, step: float, periodic: bool) -> sparse.csr_matrix:
    main = -2.0 * np.ones(n)
    off = np.ones(n - 1)
    d2 = sparse.diags([off, main, off], [-1, 0, 1], shape=(n, n), format="lil")
    if periodic and n > 2:
        d2[0, n - 1] = 1.0
        d2[n - 1, 0] = 1.0
    elif periodic and n == 2:
        d2[0, 1] = d2[1, 0] = 2.0
    elif periodic and n == 1:
        d2[0, 0] = 0.0
    return d2.tocsr() / step ** 2


def build_operator(lat: Lattice) -> DiscreteOperator:
    """
    Build the Klein-Gordon stencil ``(f(t+1) - 2f(t) + f(t-1))/dt^2 - D_xx f + m^2 f``.

    Args:
        lat: a validated lattice

    Returns:
        DiscreteOperator with zero rows on the first and last time slice
    """
    d_tt = _second_difference(lat.n_time, lat.dt, periodic=False)
    eye_t = sparse.identity(lat.n_time)
    eye_x = sparse.identity(lat.n_space)
    full = sparse.kron(d_tt, eye_x)
    if lat.dimension == Dimension.MINKOWSKI2D:
        full = full - sparse.kron(eye_t, _second_difference(lat.n_space, lat.dx, periodic=True))
    full = full + lat.mass ** 2 * sparse.identity(lat.n_sites)
    stencil = full.toarray()

    interior = tuple(int(i) for i in np.flatnonzero((lat.t_of >= 1) & (lat.t_of <= lat.n_time - 2)))
    matrix = np.zeros_like(stencil)
    matrix[list(interior), :] = stencil[list(interior), :]
    return DiscreteOperator(lat, stencil, matrix, interior)


def retarded_profile(lat: Lattice) -> np.ndarray:
    """
    Retarded Green's function of the time-unbounded lattice by leapfrog.

    Returns:
        Array ``g[dt_index, dx_index]`` for a source at the origin; the
        retarded kernel is ``G(a, b) = g(t_a - t_b, x_a - x_b mod N)``.
    """
    n, N = lat.n_time, lat.n_space
    g = np.zeros((n, N))
    if n > 1:
        g[1, 0] = lat.dt ** 2 / lat.weight
    lap = _second_difference(N, lat.dx, periodic=True).toarray() if lat.dimension == Dimension.MINKOWSKI2D else np.zeros((1, 1))
    for t in range(1, n - 1):
        g[t + 1] = 2.0 * g[t] - g[t - 1] + lat.dt ** 2 * (lap @ g[t] - lat.mass ** 2 * g[t])
    return g


def _mode_data(lat: Lattice) -> Tuple[np.ndarray, np.ndarray]:
    cos_theta = 1.0 - 0.5 * lat.dt ** 2 * (lat.mass ** 2 + spatial_eigenvalues(lat))
    if np.any(np.abs(cos_theta) >= 1.0):
        raise ModeSingular(f"mode with cos(theta) = {cos_theta[np.abs(cos_theta) >= 1.0][0]:.6f}")
    theta = np.arccos(cos_theta)
    s = np.sin(theta) / lat.dt
    return theta, s


def mode_profile(lat: Lattice, which: str) -> np.ndarray:
    """
    Mode-sum profiles ``[dt_index, dx_index]``.

    ``which`` is ``"retarded"`` (zero for non-positive time offsets) or
    ``"hadamard"`` (the symmetric part H).
    """
    theta, s = _mode_data(lat)
    N = lat.n_space
    steps = np.arange(lat.n_time)[:, None, None]
    k = np.arange(N)[None, None, :]
    shifts = np.arange(N)[None, :, None]
    spatial = np.cos(2.0 * np.pi * k * shifts / N) / (N * lat.spatial_cell)
    if which == "retarded":
        return np.sum(spatial * np.sin(theta * steps) / s, axis=2)
    if which == "hadamard":
        return np.sum(spatial * np.cos(theta * steps) / (2.0 * s), axis=2)
    raise ValueError(f"unknown profile {which!r}")


def _kernel_from_profile(lat: Lattice, profile: np.ndarray, retarded: bool) -> np.ndarray:
    d_t = lat.t_of[:, None] - lat.t_of[None, :]
    d_x = (lat.x_of[:, None] - lat.x_of[None, :]) % lat.n_space
    values = profile[np.abs(d_t), d_x]
    if retarded:
        return np.where(d_t > 0, values, 0.0)
    return values


def retarded(op: DiscreteOperator) -> PropagatorKernel:
    lat = op.lattice
    matrix = _kernel_from_profile(lat, retarded_profile(lat), retarded=True)
    logger.debug(f"Retarded kernel built on {lat.n_sites} sites")
    return PropagatorKernel(KernelKind.RETARDED, matrix, {"method": "leapfrog", "n_sites": lat.n_sites})


def retarded_mode_sum(op: DiscreteOperator) -> PropagatorKernel:
    """Independent mode-sum construction of the retarded kernel."""
    lat = op.lattice
    matrix = _kernel_from_profile(lat, mode_profile(lat, "retarded"), retarded=True)
    return PropagatorKernel(KernelKind.RETARDED, matrix, {"method": "mode_sum", "n_sites": lat.n_sites})


def derived_kernels(gR: PropagatorKernel) -> Dict[str, PropagatorKernel]:
    """Advanced, causal and Dirac propagators from the retarded one."""
    if gR.kind != KernelKind.RETARDED:
        raise KindMismatch(f"expected a retarded kernel, got {gR.kind.value}")
    gA = gR.matrix.T.copy()
    return {
        "gA": PropagatorKernel(KernelKind.ADVANCED, gA, {"from": "transpose"}),
        "gC": PropagatorKernel(KernelKind.CAUSAL, gR.matrix - gA, {"from": "gR - gA"}),
        "gD": PropagatorKernel(KernelKind.DIRAC, 0.5 * (gR.matrix + gA), {"from": "(gR + gA)/2"}),
    }


def hadamard_family(op: DiscreteOperator, gC: PropagatorKernel, gD: PropagatorKernel) -> Dict[str, PropagatorKernel]:
    """
    Build H, G+ = (i/2) G^C + H and G^F = i G^D + H.

    Args:
        op: the discrete operator
        gC: causal propagator of ``op``
        gD: Dirac propagator of ``op``

    Returns:
        Dict with keys ``h``, ``gPlus`` and ``gF``
    """
    if gC.kind != KernelKind.CAUSAL or gD.kind != KernelKind.DIRAC:
        raise KindMismatch(f"expected causal and Dirac kernels, got {gC.kind.value}, {gD.kind.value}")
    lat = op.lattice
    h = _kernel_from_profile(lat, mode_profile(lat, "hadamard"), retarded=False)
    h = 0.5 * (h + h.T)
    return {
        "h": PropagatorKernel(KernelKind.HADAMARD_SYM, h, {"method": "mode_sum"}),
        "gPlus": PropagatorKernel(KernelKind.HADAMARD_TWO_POINT, 0.5j * gC.matrix + h, {"from": "(i/2) gC + H"}),
        "gF": PropagatorKernel(KernelKind.FEYNMAN, 1j * gD.matrix + h, {"from": "i gD + H"}),
    }


@lru_cache(maxsize=8)
def build_kernels(lat: Lattice) -> KernelSet:
    """Operator and every propagator for a lattice, cached per lattice."""
    op = build_operator(lat)
    gR = retarded(op)
    derived = derived_kernels(gR)
    family = hadamard_family(op, derived["gC"], derived["gD"])
    logger.info(f"Built propagators on {lat.dimension.value} {lat.n_time}x{lat.n_space}")
    return KernelSet(op, gR, derived["gA"], derived["gC"], derived["gD"],
                     family["h"], family["gPlus"], family["gF"])


def sub_lattice(lat: Lattice, t0: int, t1: int) -> Lattice:
    """The lattice truncated to the time rows ``t0..t1``."""
    spec = lat.to_dict()
    spec["n_time"] = t1 - t0 + 1
    return build_lattice(spec)


def solution_basis(op: DiscreteOperator) -> SolutionSpace:
    """Real mode solutions ``cos/sin(theta_k t) * c_k(x)``, two per spatial mode."""
    lat = op.lattice
    theta, _ = _mode_data(lat)
    N = lat.n_space
    rows = []
    for k in range(N):
        phase = 2.0 * np.pi * k * lat.x_of / N
        spatial = np.cos(phase) if 2 * k <= N else np.sin(phase)
        rows.append(np.cos(theta[k] * lat.t_of) * spatial)
        rows.append(np.sin(theta[k] * lat.t_of) * spatial)
    return SolutionSpace(np.array(rows))


def numerical_rank(matrix: np.ndarray, rel_threshold: float = 1e-8) -> int:
    """Rank by SVD with a threshold relative to the largest singular value."""
    if matrix.size == 0:
        return 0
    sv = scipy.linalg.svd(matrix, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rel_threshold * sv[0]))


def verify_green_identities(op: DiscreteOperator, kernels: KernelSet, tolerance: float = 1e-9) -> CheckReport:
    """
    Green identities, support laws and symmetry defects of every kernel.

    Residuals are taken over interior rows; identities of ``delta/w`` type are
    scaled by ``w`` so that the tolerance is relative to unit deltas.
    """
    lat = op.lattice
    report = CheckReport("green_identities", {"lattice": lat.to_dict()})
    interior = list(op.interior)
    w = lat.weight
    eye = np.eye(lat.n_sites)[interior, :]

    for name, kern in (("retarded", kernels.gR), ("advanced", kernels.gA), ("dirac", kernels.gD)):
        residual = np.max(np.abs(w * (op.stencil[interior, :] @ kern.matrix) - eye))
        report.add(f"green.{name}.delta", "P composed with G^R, G^A, G^D is the delta function", residual, tolerance)

    for name, kern in (("causal", kernels.gC), ("hadamard", kernels.h)):
        scale = max(np.max(np.abs(kern.matrix)), 1.0)
        residual = np.max(np.abs(w * (op.stencil[interior, :] @ kern.matrix))) / scale
        report.add(f"green.{name}.bisolution", "P composed with G^C and H vanishes", residual, tolerance)

    # support laws are exact
    prec = lat.precedes
    report.add("support.retarded", "G^R vanishes unless the source lies in the causal past",
               float(np.max(np.abs(np.where(prec.T, 0.0, kernels.gR.matrix)))), 0.0)
    report.add("support.advanced", "G^A vanishes unless the source lies in the causal future",
               float(np.max(np.abs(np.where(prec, 0.0, kernels.gA.matrix)))), 0.0)

    report.add("symmetry.advanced_transpose", "G^A is the transpose of G^R",
               float(np.max(np.abs(kernels.gA.matrix - kernels.gR.matrix.T))), 1e-12)
    report.add("symmetry.causal", "G^C is antisymmetric",
               float(np.max(np.abs(kernels.gC.matrix + kernels.gC.matrix.T))), 1e-12)
    for name, kern in (("dirac", kernels.gD), ("hadamard", kernels.h), ("feynman", kernels.gF)):
        report.add(f"symmetry.{name}", "G^D, H and G^F are symmetric",
                   float(np.max(np.abs(kern.matrix - kern.matrix.T))), 1e-12)

    report.add("hadamard.imaginary_part", "2 Im G+ = G^C",
               float(np.max(np.abs(2.0 * kernels.gPlus.matrix.imag - kernels.gC.matrix))), 1e-12)
    report.add("hadamard.real_part", "H is real", float(np.max(np.abs(np.imag(kernels.h.matrix)))), 0.0)

    eig_min = hadamard_positivity(lat, kernels.gPlus)
    report.add("hadamard.positivity", "G+ is of positive type", max(0.0, -eig_min), 1e-10)
    return report


def hadamard_positivity(lat: Lattice, gPlus: PropagatorKernel) -> float:
    """Smallest eigenvalue of the Hermitian part of the weighted two-point kernel."""
    weighted = lat.weight ** 2 * gPlus.matrix
    hermitian = 0.5 * (weighted + weighted.conj().T)
    return float(scipy.linalg.eigh(hermitian, eigvals_only=True)[0])


def mode_recursion_agreement(op: DiscreteOperator, gR: Optional[PropagatorKernel] = None) -> float:
    """Max deviation between the leapfrog (or given) and mode-sum retarded kernels."""
    if gR is None:
        gR = retarded(op)
    return float(np.max(np.abs(gR.matrix - retarded_mode_sum(op).matrix)))


def continuum_error(dt: float, mass: float = 1.0, span: float = 5.0) -> float:
    """Max deviation of the Time1D retarded kernel from ``theta(t-s) sin(m(t-s))/m``."""
    n_time = int(round(span / dt)) + 1
    lat = build_lattice({"dimension": "time1d", "n_time": n_time, "dt": dt, "mass": mass})
    profile = retarded_profile(lat)[:, 0]
    times = np.arange(n_time) * dt
    exact = np.sin(mass * times) / mass
    return float(np.max(np.abs(profile[1:] - exact[1:])))


def convergence_ratio(dt: float = 0.05, mass: float = 1.0, span: float = 5.0) -> float:
    """Error ratio of the retarded kernel under halving of the time step."""
    return continuum_error(dt, mass, span) / continuum_error(dt / 2.0, mass, span)


def exactness_check(op: DiscreteOperator, gC: PropagatorKernel, rel_threshold: float = 1e-8) -> CheckReport:
    """
    Rank form of the exact sequence ``0 -> D -P-> D0 -G^C-> E -P-> E``.

    ``D`` are interior-supported functions, ``D0`` all grid functions.
    """
    lat = op.lattice
    report = CheckReport("exactness", {"lattice": lat.to_dict(), "rank_threshold": rel_threshold})
    interior = list(op.interior)
    p_on_interior = op.stencil[:, interior]
    rank_p = numerical_rank(p_on_interior, rel_threshold)
    rank_gc = numerical_rank(gC.matrix, rel_threshold)
    rank_p_all = numerical_rank(op.matrix, rel_threshold)
    n_sol = 2 * lat.n_space

    report.add("exactness.injective", "P is injective on compactly supported functions",
               abs(rank_p - len(interior)), 0, witness_ref=f"rank={rank_p}")
    scale = max(np.max(np.abs(gC.matrix)), 1.0)
    report.add("exactness.composite_first", "G^C annihilates the image of P",
               float(np.max(np.abs(gC.matrix @ p_on_interior))) / scale, 1e-9)
    report.add("exactness.middle", "image of P equals the kernel of G^C",
               abs((lat.n_sites - rank_gc) - rank_p), 0, witness_ref=f"rank_gc={rank_gc}")
    report.add("exactness.composite_second", "P annihilates the image of G^C",
               float(np.max(np.abs(op.matrix @ gC.matrix))) / scale, 1e-9)
    report.add("exactness.last", "image of G^C equals the solution space",
               abs((lat.n_sites - rank_p_all) - rank_gc) + abs(rank_gc - n_sol), 0,
               witness_ref=f"dim_sol={n_sol}")
    return report


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    demo = build_lattice({"dimension": "time1d", "n_time": 100, "dt": 0.05, "mass": 1.0})
    ks = build_kernels(demo)
    print(verify_green_identities(ks.op, ks).summary())
    print(f"convergence ratio: {convergence_ratio():.3f}")
