"""Compression and reconstruction: lag packing, the scaled-unitary operator
``U`` linking subsampled RS values to lag values, random AF measurements,
basis-pursuit recovery and the (symmetrized) compressive RS estimators.

Vectorization conventions
-------------------------
The packed lag matrix ``A`` is ``dm x dl`` and is vectorized row by row,
``a[m*dl + l] = A[m, l]``. The subsampled RS matrix ``R`` is ``dl x dm`` and
is vectorized column by column, ``r[q*dl + p] = R[p, q]``. With these
orderings ``U r = a``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .core import LagSupport, TfMatrix, as_grid, make_lag_support, symplectic_dft
from .solver import BpConfig, BpSolution, basis_pursuit
from .spectra import as_signal, masked_af

__all__ = [
    "PackedLagMatrix",
    "SubsampledRs",
    "CsProblem",
    "CompressiveResult",
    "build_u",
    "u_apply",
    "u_adjoint",
    "pack_lags",
    "unpack_lags",
    "rs_from_packed",
    "lags_from_rs",
    "subsample_rs",
    "sample_indices",
    "sample_measurements",
    "measurement_matrix",
    "measurement_operator",
    "reconstruct_rs",
    "compressive_eaf",
    "solve_problem",
    "compressive_estimate",
    "compressive_estimates",
    "symmetrize_eaf",
    "symmetrized_compressive_estimate",
    "symmetrized_rs_explicit",
    "DENSE_LIMIT",
]

# above this S' the measurement operator is applied via FFTs instead of densely
DENSE_LIMIT = 4096


@dataclass(frozen=True)
class PackedLagMatrix:
    """Lag values on the enlarged support, ``a_mat[m, l] = value at (m-M, l-L)``."""

    a_mat: np.ndarray
    sup: LagSupport

    def vec(self) -> np.ndarray:
        return self.a_mat.reshape(-1)

    @classmethod
    def from_vec(cls, a: np.ndarray, sup: LagSupport) -> "PackedLagMatrix":
        return cls(np.asarray(a, dtype=np.complex128).reshape(sup.dm, sup.dl), sup)


@dataclass(frozen=True)
class SubsampledRs:
    """``r_mat[p, q]`` is N times the windowed RS estimate at ``(p*dn, q*dk)``."""

    r_mat: np.ndarray
    sup: LagSupport

    def vec(self) -> np.ndarray:
        return self.r_mat.reshape(-1, order="F")

    @classmethod
    def from_vec(cls, r: np.ndarray, sup: LagSupport) -> "SubsampledRs":
        return cls(np.asarray(r, dtype=np.complex128).reshape(sup.dl, sup.dm, order="F"), sup)


@dataclass(frozen=True)
class CsProblem:
    """``P`` randomly chosen lag positions and the AF values measured there.

    ``indices`` are flat positions into the row-major packed lag vector; the
    lag pair of flat index ``i`` is ``(i // dl - M, i % dl - L)``.
    """

    sup: LagSupport
    indices: np.ndarray
    a_p: np.ndarray
    seed: object = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size < 1:
            raise ValueError("a CsProblem needs at least one measurement")
        if idx.size > self.sup.s_prime:
            raise ValueError(f"P={idx.size} exceeds S'={self.sup.s_prime}")
        if np.unique(idx).size != idx.size:
            raise ValueError("measurement indices must be distinct")
        if idx.min() < 0 or idx.max() >= self.sup.s_prime:
            raise ValueError("measurement index out of range")
        a_p = np.asarray(self.a_p, dtype=np.complex128).reshape(-1)
        if a_p.size != idx.size:
            raise ValueError("one measurement value per index is required")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "a_p", a_p)

    @property
    def p_count(self) -> int:
        return int(self.indices.size)

    @property
    def compression_factor(self) -> float:
        return self.sup.s_prime / self.p_count

    def lag_pairs(self) -> list[tuple[int, int]]:
        dl = self.sup.dl
        return [(int(i // dl) - self.sup.m_half, int(i % dl) - self.sup.l_half) for i in self.indices]

    def to_json(self) -> str:
        return json.dumps(
            {
                "support": self.sup.to_dict(),
                "seed": self.seed,
                "p": self.p_count,
                "indices": [int(i) for i in self.indices],
                "values": [[float(v.real), float(v.imag)] for v in self.a_p],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "CsProblem":
        doc = json.loads(text)
        s = doc["support"]
        sup = make_lag_support(s["n"], s["m_half"], s["l_half"])
        vals = np.array([complex(re, im) for re, im in doc["values"]], dtype=np.complex128)
        prob = cls(sup, np.array(doc["indices"], dtype=np.int64), vals, doc.get("seed"))
        if prob.p_count != doc["p"]:
            raise ValueError("CsProblem JSON: 'p' disagrees with the index list")
        return prob


# -- the U operator ---------------------------------------------------------


def _phases(sup: LagSupport):
    q = np.arange(sup.dm)
    p = np.arange(sup.dl)
    return np.exp(2j * np.pi * q * sup.m_half / sup.dm), np.exp(-2j * np.pi * p * sup.l_half / sup.dl)


def rs_from_packed(packed: PackedLagMatrix) -> SubsampledRs:
    """``R[p, q] = sum_{m,l} A[m, l] exp(-j2pi(q(m-M)/dm - p(l-L)/dl))``."""
    sup = packed.sup
    ph_q, ph_p = _phases(sup)
    stage = np.fft.fft(packed.a_mat, axis=0) * ph_q[:, None]
    stage = sup.dl * np.fft.ifft(stage, axis=1) * ph_p[None, :]
    return SubsampledRs(stage.T, sup)


def lags_from_rs(r_hat: SubsampledRs) -> PackedLagMatrix:
    """Inverse of :func:`rs_from_packed`:
    ``A[m, l] = (1/S') sum_{p,q} R[p, q] exp(j2pi((m-M)q/dm - (l-L)p/dl))``.
    """
    sup = r_hat.sup
    ph_q, ph_p = _phases(sup)
    rt = np.asarray(r_hat.r_mat).T * np.conj(ph_q)[:, None]
    stage = np.fft.ifft(rt, axis=0) * np.conj(ph_p)[None, :]
    a_mat = np.fft.fft(stage, axis=1) / sup.dl
    return PackedLagMatrix(a_mat, sup)


def u_apply(sup: LagSupport, r: np.ndarray) -> np.ndarray:
    """``U r`` without forming ``U``."""
    return lags_from_rs(SubsampledRs.from_vec(r, sup)).vec()


def u_adjoint(sup: LagSupport, a: np.ndarray) -> np.ndarray:
    """``U^H a``; since ``U^H U = I/S'`` this is the forward map divided by S'."""
    return rs_from_packed(PackedLagMatrix.from_vec(a, sup)).vec() / sup.s_prime


def build_u(sup: LagSupport) -> np.ndarray:
    """Dense ``S' x S'`` matrix with ``U r = a``.

    ``U[m*dl + l, q*dl + p] = exp(j2pi(m-M)q/dm) exp(-j2pi(l-L)p/dl) / S'``.
    """
    m = np.arange(sup.dm)[:, None]
    q = np.arange(sup.dm)[None, :]
    l = np.arange(sup.dl)[:, None]
    p = np.arange(sup.dl)[None, :]
    time_part = np.exp(2j * np.pi * (m - sup.m_half) * q / sup.dm)
    freq_part = np.exp(-2j * np.pi * (l - sup.l_half) * p / sup.dl)
    return np.kron(time_part, freq_part) / sup.s_prime


# -- packing and subsampling -------------------------------------------------


def pack_lags(masked, sup: LagSupport) -> PackedLagMatrix:
    """Copy one period of lag values, ``A[m, l] = masked[m-M, l-L]`` (periodic)."""
    grid = as_grid(masked)
    n = sup.n_size
    rows = (np.arange(sup.dm) - sup.m_half) % n
    cols = (np.arange(sup.dl) - sup.l_half) % n
    return PackedLagMatrix(grid[np.ix_(rows, cols)].copy(), sup)


def unpack_lags(packed: PackedLagMatrix) -> TfMatrix:
    """Place packed lag values back on the N-grid, zero outside the enlarged support."""
    sup = packed.sup
    n = sup.n_size
    out = np.zeros((n, n), dtype=np.complex128)
    rows = (np.arange(sup.dm) - sup.m_half) % n
    cols = (np.arange(sup.dl) - sup.l_half) % n
    out[np.ix_(rows, cols)] = packed.a_mat
    return TfMatrix(out)


def subsample_rs(x, sup: LagSupport) -> SubsampledRs:
    """N times the windowed RS estimate on the ``dl x dm`` subsampling grid."""
    v = as_signal(x, sup.n_size)
    return rs_from_packed(pack_lags(masked_af(v, sup), sup))


# -- measurements ------------------------------------------------------------


def sample_indices(s_prime: int, p_count: int, seed) -> np.ndarray:
    """First ``P`` entries of a seeded uniform permutation of ``0..S'-1``."""
    p_count = int(p_count)
    if not 1 <= p_count <= s_prime:
        raise ValueError(f"P={p_count} must lie in 1..{s_prime}")
    rng = np.random.default_rng(seed)
    return rng.permutation(s_prime)[:p_count]


def sample_measurements(x, sup: LagSupport, p_count: int, seed) -> CsProblem:
    """Measure the windowed AF of ``x`` at ``P`` random lag positions."""
    v = as_signal(x, sup.n_size)
    idx = sample_indices(sup.s_prime, p_count, seed)
    a = pack_lags(masked_af(v, sup), sup).vec()
    if isinstance(seed, np.random.SeedSequence):
        seed = {"entropy": int(seed.entropy), "spawn_key": [int(k) for k in seed.spawn_key]}
    return CsProblem(sup, idx, a[idx], seed)


def measurement_matrix(prob: CsProblem) -> np.ndarray:
    """Rows ``indices`` of :func:`build_u`."""
    sup = prob.sup
    dl = sup.dl
    m = (prob.indices // dl)[:, None]
    l = (prob.indices % dl)[:, None]
    cols = np.arange(sup.s_prime)
    q = (cols // dl)[None, :]
    p = (cols % dl)[None, :]
    phase = (m - sup.m_half) * q / sup.dm - (l - sup.l_half) * p / dl
    return np.exp(2j * np.pi * phase) / sup.s_prime


def measurement_operator(prob: CsProblem) -> LinearOperator:
    """Matrix-free version of :func:`measurement_matrix`."""
    sup = prob.sup
    idx = prob.indices

    def matvec(r):
        return u_apply(sup, np.ravel(r))[idx]

    def rmatvec(y):
        full = np.zeros(sup.s_prime, dtype=np.complex128)
        full[idx] = np.ravel(y)
        return u_adjoint(sup, full)

    return LinearOperator((prob.p_count, sup.s_prime), matvec=matvec, rmatvec=rmatvec, dtype=np.complex128)


def solve_problem(prob: CsProblem, solver_cfg: BpConfig | None = None) -> tuple[SubsampledRs, BpSolution]:
    """Basis-pursuit estimate of the subsampled RS from a measurement set."""
    if prob.sup.s_prime <= DENSE_LIMIT:
        op = measurement_matrix(prob)
    else:
        op = measurement_operator(prob)
    sol = basis_pursuit(op, prob.a_p, solver_cfg)
    return SubsampledRs.from_vec(sol.z_hat, prob.sup), sol


# -- reconstruction ----------------------------------------------------------


def compressive_eaf(r_hat: SubsampledRs) -> TfMatrix:
    """Lag-domain estimate on the enlarged support, zero elsewhere."""
    return unpack_lags(lags_from_rs(r_hat))


def reconstruct_rs(r_hat: SubsampledRs) -> TfMatrix:
    """Map subsampled RS values to the full RS grid (lag inversion, then a
    symplectic DFT)."""
    return symplectic_dft(compressive_eaf(r_hat))


def symmetrize_eaf(a_cs) -> TfMatrix:
    """``out[m, l] = (in[m, l] + conj(in[-m, -l]) exp(-j2pi m l/N)) / 2``."""
    a = as_grid(a_cs)
    n = a.shape[0]
    idx = np.arange(n)
    neg = (-idx) % n
    mirrored = np.conj(a[np.ix_(neg, neg)]) * np.exp(-2j * np.pi * np.outer(idx, idx) / n)
    return TfMatrix(0.5 * (a + mirrored))


@dataclass(frozen=True)
class CompressiveResult:
    """Both compressive estimates from a single basis-pursuit solve."""

    plain: TfMatrix
    symmetrized: TfMatrix
    r_hat: SubsampledRs
    solution: BpSolution
    problem: CsProblem = field(repr=False)


def compressive_estimates(x, sup: LagSupport, p_count: int, seed, solver_cfg: BpConfig | None = None) -> CompressiveResult:
    """Measure, solve, reconstruct and symmetrize."""
    prob = sample_measurements(x, sup, p_count, seed)
    r_hat, sol = solve_problem(prob, solver_cfg)
    eaf = compressive_eaf(r_hat)
    return CompressiveResult(
        plain=symplectic_dft(eaf),
        symmetrized=symplectic_dft(symmetrize_eaf(eaf)),
        r_hat=r_hat,
        solution=sol,
        problem=prob,
    )


def compressive_estimate(x, sup: LagSupport, p_count: int, seed, solver_cfg: BpConfig | None = None) -> TfMatrix:
    """Compressive RS estimate from ``P`` random AF measurements.

    Raises
    ------
    rihaczek_cs.solver.SolverError
        If basis pursuit fails to converge.
    """
    return compressive_estimates(x, sup, p_count, seed, solver_cfg).plain


def symmetrized_compressive_estimate(x, sup: LagSupport, p_count: int, seed, solver_cfg: BpConfig | None = None) -> TfMatrix:
    """Compressive RS estimate after projecting the lag-domain estimate onto
    the AF symmetry ``A[m, l] = conj(A[-m, -l]) exp(-j2pi m l/N)``.

    The projection is applied on the full N-grid, so its l2 distance to any
    symmetric target never exceeds that of the plain estimate.
    """
    return compressive_estimates(x, sup, p_count, seed, solver_cfg).symmetrized


def symmetrized_rs_explicit(r_hat: SubsampledRs) -> TfMatrix:
    """Closed-form double sum for the symmetrized estimate, evaluated term by
    term with the mirrored lag taken inside the ``dm x dl`` period.

    Agrees with :func:`symmetrized_compressive_estimate`'s reconstruction
    when the enlarged support is symmetric (``dm = 2M+1`` and ``dl = 2L+1``).
    Cost is ``O(S'^2 + S' N^2)``; meant for checks on small grids.
    """
    sup = r_hat.sup
    n = sup.n_size
    r = np.asarray(r_hat.r_mat)
    m = np.arange(sup.dm) - sup.m_half
    l = np.arange(sup.dl) - sup.l_half
    p = np.arange(sup.dl)
    q = np.arange(sup.dm)
    # kernel[m, l, p, q] = exp(j2pi(m q/dm - l p/dl))
    kern = np.exp(2j * np.pi * (m[:, None, None, None] * q[None, None, None, :] / sup.dm
                                - l[None, :, None, None] * p[None, None, :, None] / sup.dl))
    twist = np.exp(-2j * np.pi * np.outer(m, l) / n)
    inner = np.einsum("mlpq,pq->ml", kern, r) + twist * np.einsum("mlpq,pq->ml", kern, np.conj(r))
    nn = np.arange(n)
    outer_k = np.exp(-2j * np.pi * np.outer(nn, m) / n)   # [k, m]
    outer_n = np.exp(2j * np.pi * np.outer(nn, l) / n)    # [n, l]
    out = outer_n @ inner.T @ outer_k.T / (2 * n * sup.s_prime)
    return TfMatrix(out)
