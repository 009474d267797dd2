"""Equality-constrained complex l1 minimization (basis pursuit) by ADMM.

Solves ``min ||z||_1  s.t.  M z = b`` for complex ``z`` using the split
``min ||w||_1  s.t.  z in {M z = b}, w = z``. The z-update is the exact
projection onto the affine set, the w-update is complex soft-thresholding.

ADMM identifies the active set quickly but can take tens of thousands of
iterations to reach high accuracy when the minimizer is degenerate. When
the iterates are close, a Newton active-set refinement of the optimality
conditions is tried; its result is accepted only when a dual certificate
shows the relative duality gap is within tolerance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator

__all__ = [
    "BpConfig",
    "BpSolution",
    "SolverError",
    "MaxIterationsError",
    "RankDeficientError",
    "soft_threshold",
    "basis_pursuit",
]

log = logging.getLogger(__name__)

# the Newton finisher forms dense (2P + k)-square systems; skip it above this size
POLISH_MAX_COLUMNS = 4096


@dataclass(frozen=True)
class BpConfig:
    """Basis-pursuit stopping rules and penalty parameter.

    Parameters
    ----------
    feas_tol : float
        Tolerance on the consensus residual ``||z - w||``, relative to the
        problem scale set by ``b``.
    rel_obj_tol : float
        Tolerance on the dual residual and on the relative duality gap.
    max_iters : int
        Iteration budget before :class:`MaxIterationsError` is raised.
    rho : float
        Initial ADMM penalty.
    adaptive_rho : bool
        Double or halve ``rho`` when one residual exceeds the other tenfold.
    """

    feas_tol: float = 1e-8
    rel_obj_tol: float = 1e-8
    max_iters: int = 50_000
    rho: float = 1.0
    adaptive_rho: bool = True

    def __post_init__(self):
        if not (self.feas_tol > 0 and self.rel_obj_tol > 0):
            raise ValueError("solver tolerances must be positive")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.rho > 0:
            raise ValueError("rho must be positive")

    def to_dict(self) -> dict:
        return {
            "feas_tol": self.feas_tol,
            "rel_obj_tol": self.rel_obj_tol,
            "max_iters": int(self.max_iters),
            "rho": self.rho,
            "adaptive_rho": self.adaptive_rho,
        }


@dataclass(frozen=True)
class BpSolution:
    """Result of :func:`basis_pursuit`.

    ``z_hat`` satisfies the constraint to rounding error; ``feasibility``
    reports ``||M z_hat - b|| / ||b||``. ``primal_residual`` and
    ``dual_residual`` are the final ADMM residuals in the units of ``b``,
    and ``duality_gap`` is the certified relative gap to the optimum.
    """

    z_hat: np.ndarray
    iters: int
    primal_residual: float
    dual_residual: float
    objective: float
    feasibility: float
    duality_gap: float


class SolverError(RuntimeError):
    """Base class for basis-pursuit failures."""


class MaxIterationsError(SolverError):
    def __init__(self, iters, primal_residual, dual_residual, duality_gap):
        self.iters = iters
        self.primal_residual = primal_residual
        self.dual_residual = dual_residual
        self.duality_gap = duality_gap
        super().__init__(
            f"basis pursuit did not converge in {iters} iterations "
            f"(primal residual {primal_residual:.3e}, dual residual {dual_residual:.3e}, "
            f"relative gap {duality_gap:.3e})"
        )


class RankDeficientError(SolverError):
    pass


def soft_threshold(v: np.ndarray, tau: float) -> np.ndarray:
    """Complex soft-thresholding: shrink moduli by ``tau``, keep phases."""
    mag = np.abs(v)
    scale = np.maximum(mag - tau, 0.0) / np.where(mag > 0, mag, 1.0)
    return v * scale


class _AffineProjector:
    """Projection onto ``{z : M z = b}`` and onto ``range(M^H)``."""

    def __init__(self, m_rows):
        if isinstance(m_rows, LinearOperator):
            self.shape = m_rows.shape
            self._apply = m_rows.matvec
            self._adjoint = m_rows.rmatvec
            self._gram_scale = self._probe_scalar_gram(m_rows)
            self._chol = None
            self.dense = None
        else:
            mat = np.asarray(m_rows, dtype=np.complex128)
            if mat.ndim != 2:
                raise ValueError("measurement matrix must be 2D")
            self.shape = mat.shape
            if mat.shape[0] > mat.shape[1]:
                raise ValueError(f"more measurements ({mat.shape[0]}) than unknowns ({mat.shape[1]})")
            self.dense = mat
            self._apply = mat.__matmul__
            self._adjoint = mat.conj().T.__matmul__
            gram = mat @ mat.conj().T
            diag = np.real(np.diag(gram))
            scale = float(np.mean(diag)) if diag.size else 0.0
            if scale > 0 and np.max(np.abs(gram - scale * np.eye(gram.shape[0]))) <= 1e-10 * scale:
                self._gram_scale = scale
                self._chol = None
            else:
                eig = np.linalg.eigvalsh(gram)
                if eig.size == 0 or eig[0] <= 1e-12 * max(eig[-1], np.finfo(float).tiny):
                    raise RankDeficientError("measurement matrix does not have full row rank")
                self._gram_scale = None
                self._chol = scipy.linalg.cho_factor(gram)
        p, n = self.shape
        if p > n:
            raise ValueError(f"more measurements ({p}) than unknowns ({n})")

    @staticmethod
    def _probe_scalar_gram(op) -> float:
        # matrix-free operators must have M M^H proportional to I
        rng = np.random.default_rng(12345)
        p = op.shape[0]
        probe = rng.standard_normal(p) + 1j * rng.standard_normal(p)
        out = op.matvec(op.rmatvec(probe))
        scale = float(np.real(np.vdot(probe, out)) / np.real(np.vdot(probe, probe)))
        if scale <= 0:
            raise RankDeficientError("matrix-free measurement operator has zero Gram matrix")
        if np.linalg.norm(out - scale * probe) > 1e-9 * scale * np.linalg.norm(probe):
            raise ValueError("matrix-free operators are supported only when M M^H is a multiple of I")
        return scale

    def gram_solve(self, y):
        if self._gram_scale is not None:
            return y / self._gram_scale
        return scipy.linalg.cho_solve(self._chol, y)

    def apply(self, z):
        return self._apply(z)

    def adjoint(self, y):
        return self._adjoint(y)

    def least_norm(self, b):
        return self.adjoint(self.gram_solve(b))

    def project_affine(self, v, b):
        return v - self.adjoint(self.gram_solve(self.apply(v) - b))

    def project_range(self, v):
        return self.adjoint(self.gram_solve(self.apply(v)))


def _relative_gap(proj, z, y) -> float:
    """Certified relative duality gap for a feasible ``z`` and subgradient guess ``y``."""
    primal = float(np.sum(np.abs(z)))
    if primal == 0.0:
        return 0.0
    return _certified_gap(z, proj.project_range(y))


def _certified_gap(z, dual_vec) -> float:
    """Relative gap for feasible ``z`` and ``dual_vec`` in ``range(M^H)``."""
    primal = float(np.sum(np.abs(z)))
    if primal == 0.0:
        return 0.0
    peak = float(np.max(np.abs(dual_vec)))
    if peak > 1.0:
        dual_vec = dual_vec / peak
    return max(primal - float(np.real(np.vdot(dual_vec, z))), 0.0) / primal


def _real_block(a: np.ndarray) -> np.ndarray:
    """Real ``2p x 2k`` form of a complex ``p x k`` matrix acting on ``[Re; Im]``."""
    return np.block([[a.real, -a.imag], [a.imag, a.real]])


def _kkt_newton(m_act, b, y, lam, max_newton=25):
    """Damped Newton on the optimality system of a fixed active set.

    Unknowns are the dual vector ``y`` and multipliers ``lam`` (the moduli
    of the active entries); equations are ``M_A (lam * c) = b`` and
    ``|c_i| = 1`` with ``c = M_A^H y``. The system is polynomial, so it
    stays smooth when an entry of the minimizer approaches zero.
    """
    p = m_act.shape[0]
    k = m_act.shape[1]
    adj = m_act.conj().T
    b_scale = 1.0 + np.linalg.norm(b)

    def residual(y, lam):
        c = adj @ y
        f1 = m_act @ (lam * c) - b
        return np.concatenate([f1.real, f1.imag, np.abs(c) ** 2 - 1.0]), c

    f, c = residual(y, lam)
    zero_kk = np.zeros((k, k))
    for _ in range(max_newton):
        norm0 = np.linalg.norm(f)
        if norm0 <= 1e-14 * b_scale:
            break
        jac = np.block([
            [_real_block(m_act @ (lam[:, None] * adj)), np.vstack([(m_act * c).real, (m_act * c).imag])],
            [np.hstack([2 * (c.conj()[:, None] * adj).real, 2 * (1j * c.conj()[:, None] * adj).real]), zero_kk],
        ])
        step = np.linalg.lstsq(jac, -f, rcond=None)[0]
        dy = step[:p] + 1j * step[p: 2 * p]
        dlam = step[2 * p:]
        t = 1.0
        while True:
            f_new, c_new = residual(y + t * dy, lam + t * dlam)
            if np.linalg.norm(f_new) < (1 - 1e-4 * t) * norm0 or t < 1e-4:
                break
            t *= 0.5
        if np.linalg.norm(f_new) >= norm0:
            break
        y, lam, f, c = y + t * dy, lam + t * dlam, f_new, c_new
    return y, lam


def _polish(m_dense, proj, b, w, y, max_rounds=8):
    """Active-set refinement of an ADMM iterate.

    Starting from the support of ``w`` and the dual guess ``y``, solve the
    optimality system with :func:`_kkt_newton`, drop entries whose
    multiplier turned negative and add entries whose dual constraint is
    violated, until the active set is consistent. Returns a feasible
    ``(z, dual_vector)`` for the caller to certify, or ``None``.
    """
    n = m_dense.shape[1]
    active = np.flatnonzero(w)
    if active.size == 0:
        return None
    lam = np.abs(w[active])
    for _ in range(max_rounds):
        y, lam = _kkt_newton(m_dense[:, active], b, y, lam)
        c = m_dense.conj().T @ y
        negative = lam < 0
        violated = np.setdiff1d(np.flatnonzero(np.abs(c) > 1.0 + 1e-9), active)
        if not negative.any() and violated.size == 0:
            z = np.zeros(n, dtype=np.complex128)
            z[active] = lam * c[active]
            return proj.project_affine(z, b), proj.project_range(c)
        keep = ~negative
        active = np.concatenate([active[keep], violated])
        lam = np.concatenate([lam[keep], np.zeros(violated.size)])
        if active.size == 0:
            return None
    return None


def basis_pursuit(m_rows, b, cfg: BpConfig | None = None) -> BpSolution:
    """Minimize ``sum |z_i|`` subject to ``M z = b``.

    Parameters
    ----------
    m_rows : ndarray or scipy.sparse.linalg.LinearOperator
        ``P x n`` measurement matrix with full row rank. A matrix-free
        operator must provide ``matvec``/``rmatvec`` and satisfy
        ``M M^H = c I``.
    b : array_like
        Length-``P`` measurement vector.
    cfg : BpConfig, optional

    Returns
    -------
    BpSolution

    Raises
    ------
    RankDeficientError
        If ``M M^H`` is singular.
    MaxIterationsError
        If the residuals and duality gap do not meet the tolerances in
        ``cfg.max_iters`` iterations.
    """
    cfg = cfg or BpConfig()
    proj = _AffineProjector(m_rows)
    p, n = proj.shape
    b = np.asarray(b, dtype=np.complex128).reshape(-1)
    if b.size != p:
        raise ValueError(f"b has length {b.size}, expected {p}")

    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return BpSolution(np.zeros(n, dtype=np.complex128), 0, 0.0, 0.0, 0.0, 0.0, 0.0)

    z0 = proj.least_norm(b)
    if p == n:
        # the feasible set is a single point
        return BpSolution(z0, 0, 0.0, 0.0, float(np.sum(np.abs(z0))),
                          float(np.linalg.norm(proj.apply(z0) - b)) / b_norm, 0.0)

    # work on a problem whose least-norm solution has unit mean modulus, so
    # rho and the tolerances mean the same thing for every input scale
    scale = float(np.mean(np.abs(z0)))
    bs = b / scale
    z = z0 / scale
    w = soft_threshold(z, 1.0 / cfg.rho)
    u = np.zeros(n, dtype=np.complex128)
    rho = cfg.rho

    r_norm = s_norm = gap = np.inf
    tried_support = None
    m_dense = proj.dense if proj.dense is not None and n <= POLISH_MAX_COLUMNS else None
    it = 0
    for it in range(1, int(cfg.max_iters) + 1):
        z = proj.project_affine(w - u, bs)
        w_old = w
        w = soft_threshold(z + u, 1.0 / rho)
        u = u + z - w

        r_norm = float(np.linalg.norm(z - w))
        s_norm = rho * float(np.linalg.norm(w - w_old))
        eps_pri = cfg.feas_tol * max(np.linalg.norm(z), np.linalg.norm(w), 1.0)
        eps_dual = cfg.rel_obj_tol * max(rho * np.linalg.norm(u), 1.0)

        if r_norm <= eps_pri and s_norm <= eps_dual:
            gap = _relative_gap(proj, z, rho * u)
            if gap <= cfg.rel_obj_tol:
                break

        # once ADMM is in the right neighbourhood, try to finish with Newton
        if m_dense is not None and it % 25 == 0 and r_norm <= 1e-2 * max(np.linalg.norm(z), 1.0):
            key = np.flatnonzero(w).tobytes()
            if key != tried_support or it % 1000 == 0:
                tried_support = key
                polished = _polish(m_dense, proj, bs, w, proj.gram_solve(proj.apply(rho * u)))
                if polished is not None:
                    z_pol, dual_vec = polished
                    gap_pol = _certified_gap(z_pol, dual_vec)
                    if gap_pol <= cfg.rel_obj_tol:
                        z, w, gap = z_pol, z_pol, gap_pol
                        r_norm, s_norm = 0.0, 0.0
                        break

        if cfg.adaptive_rho and it % 10 == 0:
            if r_norm > 10.0 * s_norm:
                rho *= 2.0
                u /= 2.0
            elif s_norm > 10.0 * r_norm:
                rho /= 2.0
                u *= 2.0
    else:
        gap = _relative_gap(proj, z, rho * u)
        raise MaxIterationsError(it, r_norm * scale, s_norm * scale, gap)

    z_hat = z * scale
    feas = float(np.linalg.norm(proj.apply(z_hat) - b)) / b_norm
    log.debug("basis pursuit converged in %d iterations (gap %.2e)", it, gap)
    return BpSolution(
        z_hat=z_hat,
        iters=it,
        primal_residual=r_norm * scale,
        dual_residual=s_norm * scale,
        objective=float(np.sum(np.abs(z_hat))),
        feasibility=feas,
        duality_gap=gap,
    )
