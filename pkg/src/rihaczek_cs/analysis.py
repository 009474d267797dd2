"""Mean-square-error analysis of the windowed and compressive RS estimators.

Contents
--------
* TF shift matrices ``J[m, l]`` and the twisted convolution of their
  expansion coefficients (used as algebraic oracles).
* Bias, variance and MSE of the windowed estimator for circular complex
  Gaussian processes, with a trace-formula oracle for small grids.
* The per-position second moments ``h[p, q]`` of the subsampled RS, exact
  (trace form) and approximate (smoothing-kernel form), the TF sparsity
  profile built from them, and the resulting excess-MSE and combined bounds.

The constant ``D`` of the recovery guarantee has no known numeric value;
it is an explicit argument everywhere and defaults to 1 in reports.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import LagSupport, TfMatrix, as_grid, symplectic_dft
from .spectra import (
    CorrelationMatrix,
    eaf_from_corr,
    expected_mvu,
    mvu_smoothing_kernel,
    mvu_window,
    rs_from_corr,
)

__all__ = [
    "TRACE_ORACLE_MAX_N",
    "tf_shift_matrix",
    "expand_tf_shifts",
    "tf_shift_coefficients",
    "twisted_convolution",
    "chi_kernel",
    "variance_mvu_chi",
    "variance_mvu_trace",
    "variance_mvu_exact",
    "bias_sq_mvu",
    "MseBreakdown",
    "mse_mvu",
    "basic_mse_bound",
    "tf_sparsity_moment",
    "eaf_moment",
    "subsampled_smoothed_rs",
    "rank_positions",
    "h_exact",
    "h_exact_all",
    "h_approx",
    "h_approx_all",
    "SecondMomentProfile",
    "second_moment_profile",
    "sparsity_profile",
    "excess_mse_bounds",
    "combined_mse_bounds",
    "BoundReport",
    "bound_report",
]

# the trace-formula variance oracle costs O(N^7); keep it to small grids
TRACE_ORACLE_MAX_N = 24


def _gamma(g) -> np.ndarray:
    if isinstance(g, CorrelationMatrix):
        return g.gamma
    return as_grid(g)


def _corr(g) -> CorrelationMatrix:
    return g if isinstance(g, CorrelationMatrix) else CorrelationMatrix(g)


# -- TF shift matrices ------------------------------------------------------


def tf_shift_matrix(n_size: int, m: int, l: int) -> np.ndarray:
    """``(J x)[n] = x[(n - m) mod N] exp(j2pi l n/N) / sqrt(N)``."""
    n = np.arange(n_size)
    out = np.zeros((n_size, n_size), dtype=np.complex128)
    out[n, (n - m) % n_size] = np.exp(2j * np.pi * l * n / n_size) / np.sqrt(n_size)
    return out


def expand_tf_shifts(coeffs) -> np.ndarray:
    """``sum_{m,l} coeffs[m, l] J[m, l]`` in ``O(N^2 log N)``."""
    c = as_grid(coeffs)
    n = c.shape[0]
    # diag_vals[m, a] = sum_l c[m, l] exp(j2pi l a/N) / sqrt(N)
    diag_vals = np.fft.ifft(c, axis=1) * (n / np.sqrt(n))
    a = np.arange(n)
    out = np.zeros((n, n), dtype=np.complex128)
    for m in range(n):
        out[a, (a - m) % n] += diag_vals[m]
    return out


def tf_shift_coefficients(mat) -> np.ndarray:
    """Expansion coefficients ``<H, J[m, l]> = tr(H J[m, l]^H)``."""
    h = as_grid(mat)
    n = h.shape[0]
    a = np.arange(n)
    lag_rows = h[a[None, :], (a[None, :] - a[:, None]) % n]
    return np.fft.fft(lag_rows, axis=1) / np.sqrt(n)


def twisted_convolution(a_coeffs, b_coeffs, n_size: int | None = None) -> np.ndarray:
    """Coefficients of the product of two TF-shift expansions.

    ``c[m, l] = (1/sqrt(N)) sum_{m',l'} a[m', l'] b[m-m', l-l'] exp(-j2pi m'(l-l')/N)``.
    Direct ``O(N^4)`` evaluation.
    """
    a = as_grid(a_coeffs)
    b = as_grid(b_coeffs)
    n = a.shape[0] if n_size is None else int(n_size)
    if a.shape != (n, n) or b.shape != (n, n):
        raise ValueError("coefficient grids must both be N x N")
    idx = np.arange(n)
    out = np.zeros((n, n), dtype=np.complex128)
    for mp in range(n):
        for lp in range(n):
            if a[mp, lp] == 0:
                continue
            shifted = b[np.ix_((idx - mp) % n, (idx - lp) % n)]
            out += a[mp, lp] * shifted * np.exp(-2j * np.pi * mp * ((idx - lp) % n) / n)[None, :]
    return out / np.sqrt(n)


# -- variance, bias and MSE of the windowed estimator -------------------------


def chi_kernel(sup: LagSupport) -> TfMatrix:
    """``chi[m, l] = (1/N) sum_{|m'|<=M, |l'|<=L} exp(j2pi(l m' - m l')/N)``."""
    return TfMatrix(np.conj(np.asarray(symplectic_dft(mvu_window(sup)))))


def variance_mvu_chi(g, sup: LagSupport) -> float:
    """Variance ``sum |EAF|^2 chi`` of the windowed estimate (Gaussian case)."""
    eaf = np.asarray(eaf_from_corr(g))
    return float(np.real(np.sum(np.abs(eaf) ** 2 * np.asarray(chi_kernel(sup)))))


def _window_lags(sup: LagSupport):
    for m in range(-sup.m_half, sup.m_half + 1):
        for l in range(-sup.l_half, sup.l_half + 1):
            yield m, l


def variance_mvu_trace(g, sup: LagSupport) -> float:
    """Variance from the Hermitian-form trace formula, summed over the grid.

    Builds ``C[n, k] = N^{-1/2} sum_{(m,l) in window} exp(j2pi(k m - n l)/N) J[m, l]``
    for every TF point literally from :func:`tf_shift_matrix`. Only for
    ``N <= TRACE_ORACLE_MAX_N``.
    """
    gam = _gamma(g)
    n = gam.shape[0]
    if n > TRACE_ORACLE_MAX_N:
        raise ValueError(f"trace-formula variance is limited to N <= {TRACE_ORACLE_MAX_N}")
    if np.max(np.abs(gam - gam.conj().T)) > 1e-12 * max(np.abs(gam).max(), 1.0):
        raise ValueError("correlation matrix is not Hermitian")
    shifts = [(m, l, tf_shift_matrix(n, m, l)) for m, l in _window_lags(sup)]
    total = 0.0
    for tn in range(n):
        for tk in range(n):
            c = np.zeros((n, n), dtype=np.complex128)
            for m, l, j in shifts:
                c += np.exp(2j * np.pi * (tk * m - tn * l) / n) * j
            c /= np.sqrt(n)
            c_re = (c.conj().T + c) / 2
            c_im = (c.conj().T - c) / 2j
            total += np.real(np.trace(c_re @ gam @ c_re @ gam) + np.trace(c_im @ gam @ c_im @ gam))
    return float(total)


def variance_mvu_exact(g, sup: LagSupport, check: bool = True, rtol: float = 1e-9) -> float:
    """Variance ``E||R_mvu - E R_mvu||^2`` for a circular Gaussian process.

    Returns the chi-kernel value. When ``check`` is set and the grid is small
    enough, the trace formula is evaluated as well and the two must agree.
    """
    gam = _gamma(g)
    if np.max(np.abs(gam - gam.conj().T)) > 1e-12 * max(np.abs(gam).max(), 1.0):
        raise ValueError("correlation matrix is not Hermitian")
    v = variance_mvu_chi(gam, sup)
    if check and gam.shape[0] <= TRACE_ORACLE_MAX_N:
        v_trace = variance_mvu_trace(gam, sup)
        if abs(v - v_trace) > rtol * max(abs(v), abs(v_trace), 1e-300):
            raise AssertionError(f"variance paths disagree: chi {v!r} vs trace {v_trace!r}")
    return v


def bias_sq_mvu(eaf_true, sup: LagSupport) -> float:
    """Squared bias: EAF energy outside the window."""
    eaf = as_grid(eaf_true)
    outside = 1.0 - np.asarray(mvu_window(sup)).real
    return float(np.sum(outside * np.abs(eaf) ** 2))


@dataclass(frozen=True)
class MseBreakdown:
    bias_sq: float
    variance: float

    @property
    def mse(self) -> float:
        return self.bias_sq + self.variance


def mse_mvu(g, sup: LagSupport, check: bool = False) -> MseBreakdown:
    """Exact bias/variance split of the windowed estimator's MSE."""
    gam = _gamma(g)
    out = MseBreakdown(bias_sq_mvu(eaf_from_corr(gam), sup), variance_mvu_exact(gam, sup, check=check))
    bound = basic_mse_bound(gam, sup)
    if out.mse > bound * (1 + 1e-9) + 1e-300:
        raise AssertionError(f"MSE {out.mse!r} exceeds its bound {bound!r}")
    return out


def basic_mse_bound(g, sup: LagSupport) -> float:
    """``||R||^2 (m + S/N)`` with ``m`` the EAF energy fraction outside the window."""
    eaf = np.asarray(eaf_from_corr(g))
    energy = float(np.sum(np.abs(eaf) ** 2))
    return bias_sq_mvu(eaf, sup) + energy * sup.s / sup.n_size


def tf_sparsity_moment(rs_true, w) -> float:
    """``(sum w |R|)^2 / ||R||^2`` for a nonnegative weight ``w``."""
    r = np.abs(as_grid(rs_true))
    w = np.asarray(w, dtype=float) if not isinstance(w, TfMatrix) else np.real(np.asarray(w))
    if np.any(w < 0):
        raise ValueError("weight must be nonnegative")
    norm_sq = float(np.sum(r**2))
    if norm_sq == 0:
        raise ValueError("RS has zero norm")
    return float(np.sum(w * r)) ** 2 / norm_sq


def eaf_moment(eaf_true, psi) -> float:
    """``sum psi |A|^2 / ||A||^2`` for a nonnegative weight ``psi``."""
    a2 = np.abs(as_grid(eaf_true)) ** 2
    psi = np.real(np.asarray(psi))
    if np.any(psi < 0):
        raise ValueError("weight must be nonnegative")
    norm_sq = float(np.sum(a2))
    if norm_sq == 0:
        raise ValueError("EAF has zero norm")
    return float(np.sum(psi * a2)) / norm_sq


# -- second moments of the subsampled RS ------------------------------------


def subsampled_smoothed_rs(rs_true, sup: LagSupport) -> np.ndarray:
    """``dl x dm`` matrix of the smoothed RS on the subsampling grid."""
    smooth = np.asarray(expected_mvu(rs_true, sup))
    return smooth[:: sup.dn, :: sup.dk]


def rank_positions(smoothed: np.ndarray) -> np.ndarray:
    """Flat positions ``q*dl + p`` sorted by descending magnitude.

    Magnitudes are compared after rounding to 12 significant digits relative
    to the largest one, so ties from symmetric models resolve by ascending
    flat position rather than by rounding noise.
    """
    mag = np.abs(np.asarray(smoothed)).reshape(-1, order="F")
    top = mag.max() if mag.size else 0.0
    if top > 0:
        mag = np.round(mag / top, 12)
    flat = np.arange(mag.size)
    return np.lexsort((flat, -mag))


def _check_pq(sup: LagSupport, p: int, q: int):
    if not (0 <= p < sup.dl and 0 <= q < sup.dm):
        raise ValueError(f"(p, q) = ({p}, {q}) outside [0, {sup.dl}) x [0, {sup.dm})")


def _psd_factor(gam: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(gam)
    keep = w > 1e-13 * max(w[-1], 0.0)
    return v[:, keep] * np.sqrt(w[keep])[None, :]


def _t_matrix(sup: LagSupport, p: int, q: int) -> np.ndarray:
    n = sup.n_size
    coeffs = np.zeros((n, n), dtype=np.complex128)
    for m, l in _window_lags(sup):
        coeffs[m % n, l % n] = np.exp(2j * np.pi * (q * m / sup.dm - p * l / sup.dl))
    return np.sqrt(n) * expand_tf_shifts(coeffs)


def _h_from_factor(sup: LagSupport, factor: np.ndarray, p: int, q: int) -> float:
    t = _t_matrix(sup, p, q)
    t_re = (t.conj().T + t) / 2
    t_im = (t.conj().T - t) / 2j
    # tr(A G A G) = ||B^H A B||_F^2 for Hermitian A and G = B B^H
    var = np.linalg.norm(factor.conj().T @ t_re @ factor) ** 2
    var += np.linalg.norm(factor.conj().T @ t_im @ factor) ** 2
    mean = np.trace(factor.conj().T @ t.conj().T @ factor)
    return float(var + abs(mean) ** 2)


def h_exact(g, sup: LagSupport, p: int, q: int) -> float:
    """``E|r[p, q]|^2`` for a circular Gaussian process, with ``r[p, q]`` the
    subsampled RS entry (N times the windowed estimate at ``(p*dn, q*dk)``)."""
    _check_pq(sup, p, q)
    gam = _gamma(g)
    if not np.any(gam):
        return 0.0
    return _h_from_factor(sup, _psd_factor(gam), p, q)


def h_exact_all(g, sup: LagSupport) -> np.ndarray:
    """:func:`h_exact` for every position, as a ``dl x dm`` array."""
    gam = _gamma(g)
    out = np.zeros((sup.dl, sup.dm))
    if not np.any(gam):
        return out
    factor = _psd_factor(gam)
    for p in range(sup.dl):
        for q in range(sup.dm):
            out[p, q] = _h_from_factor(sup, factor, p, q)
    return out


def _h_approx_grid(rs: np.ndarray, phi: np.ndarray, sup: LagSupport, p: int, q: int) -> float:
    n = sup.n_size
    kern = np.roll(phi, (p * sup.dn, q * sup.dk), axis=(0, 1))
    prod = rs * kern
    return float(n * np.sum(np.abs(prod) ** 2) + abs(np.sum(prod)) ** 2)


def h_approx(rs_true, sup: LagSupport, p: int, q: int) -> float:
    """Smoothing-kernel approximation of :func:`h_exact` for underspread processes."""
    _check_pq(sup, p, q)
    return _h_approx_grid(as_grid(rs_true), np.asarray(mvu_smoothing_kernel(sup)), sup, p, q)


def h_approx_all(rs_true, sup: LagSupport) -> np.ndarray:
    rs = as_grid(rs_true)
    phi = np.asarray(mvu_smoothing_kernel(sup))
    out = np.zeros((sup.dl, sup.dm))
    for p in range(sup.dl):
        for q in range(sup.dm):
            out[p, q] = _h_approx_grid(rs, phi, sup, p, q)
    return out


@dataclass(frozen=True)
class SecondMomentProfile:
    """Everything the sparsity profile and excess-MSE bounds need.

    Arrays indexed ``[p, q]`` are ``dl x dm``; ``order`` lists flat positions
    ``q*dl + p`` by descending smoothed-RS magnitude.
    """

    sup: LagSupport
    rs_norm_sq: float
    smoothed: np.ndarray
    h_exact: np.ndarray
    h_approx: np.ndarray | None
    order: np.ndarray
    rs_abs: np.ndarray = field(repr=False)

    def complement(self, k: int) -> np.ndarray:
        """Flat positions outside the ``k`` largest."""
        if not 1 <= k <= self.sup.s_prime:
            raise ValueError(f"K={k} must lie in 1..{self.sup.s_prime}")
        return self.order[k:]

    def sigma_tilde(self, k: int) -> float:
        rest = self.complement(k)
        h = self.h_exact.reshape(-1, order="F")
        return float(np.sum(h[rest])) / self.rs_norm_sq

    def weight_phi(self, k: int) -> np.ndarray:
        """``w[n, k] = sum_{(p,q) outside G(K)} |Phi[n - p dn, k - q dk]|``."""
        sup = self.sup
        phi = np.abs(np.asarray(mvu_smoothing_kernel(sup)))
        w = np.zeros_like(phi)
        for flat in self.complement(k):
            p, q = flat % sup.dl, flat // sup.dl
            w += np.roll(phi, (p * sup.dn, q * sup.dk), axis=(0, 1))
        return w

    def sparsity_moment(self, k: int) -> float:
        return tf_sparsity_moment(self.rs_abs, self.weight_phi(k))


def second_moment_profile(g, sup: LagSupport, with_approx: bool = True) -> SecondMomentProfile:
    gam = _gamma(g)
    rs = np.asarray(rs_from_corr(gam))
    norm_sq = float(np.sum(np.abs(rs) ** 2))
    if norm_sq == 0:
        raise ValueError("RS has zero norm")
    smoothed = subsampled_smoothed_rs(rs, sup)
    return SecondMomentProfile(
        sup=sup,
        rs_norm_sq=norm_sq,
        smoothed=smoothed,
        h_exact=h_exact_all(gam, sup),
        h_approx=h_approx_all(rs, sup) if with_approx else None,
        order=rank_positions(smoothed),
        rs_abs=np.abs(rs),
    )


def sparsity_profile(g, sup: LagSupport, k: int, profile: SecondMomentProfile | None = None) -> float:
    """Normalized second-moment mass outside the ``K`` dominant positions."""
    profile = profile or second_moment_profile(g, sup, with_approx=False)
    return profile.sigma_tilde(k)


def _excess_factor(sup: LagSupport, k: int, d: float) -> float:
    if d < 0:
        raise ValueError("D must be nonnegative")
    return (sup.s_prime - k) * d**2 / (sup.s_prime * k)


def excess_mse_bounds(g, sup: LagSupport, k: int, d: float, profile: SecondMomentProfile | None = None):
    """``(tight, simple)`` bounds on the MSE added by compression.

    ``tight`` uses the exact second moments; ``simple`` replaces them by the
    kernel-weighted sparsity moment, which must dominate.
    """
    profile = profile or second_moment_profile(g, sup, with_approx=False)
    factor = _excess_factor(sup, k, d)
    if factor == 0:
        return 0.0, 0.0
    tight = factor * profile.rs_norm_sq * profile.sigma_tilde(k)
    simple = factor * (sup.n_size + 1) * profile.rs_norm_sq * profile.sparsity_moment(k)
    if tight > simple * (1 + 1e-9):
        raise AssertionError(f"tight excess bound {tight!r} exceeds the simple one {simple!r}")
    return tight, simple


def combined_mse_bounds(g, sup: LagSupport, k: int, d: float, profile: SecondMomentProfile | None = None):
    """Bounds on the compressive estimator's MSE for both excess variants."""
    gam = _gamma(g)
    profile = profile or second_moment_profile(gam, sup, with_approx=False)
    basic = basic_mse_bound(gam, sup) / profile.rs_norm_sq
    tight, simple = excess_mse_bounds(gam, sup, k, d, profile)
    return tuple(
        profile.rs_norm_sq * (np.sqrt(basic) + np.sqrt(ex / profile.rs_norm_sq)) ** 2 for ex in (tight, simple)
    )


@dataclass(frozen=True)
class BoundReport:
    """Itemized MSE-bound terms for one model and support.

    ``sparsity_profile`` and ``sparsity_moment`` map K to the corresponding
    terms; the bound methods take the symbolic recovery constant ``d``.
    """

    rs_norm_sq: float
    eaf_moment: float
    s_over_n: float
    s_prime: int
    sparsity_profile: dict
    sparsity_moment: dict
    n_size: int
    d_default: float = 1.0

    @property
    def basic_bound(self) -> float:
        return self.rs_norm_sq * (self.eaf_moment + self.s_over_n)

    def _factor(self, k, d):
        return (self.s_prime - k) * d**2 / (self.s_prime * k)

    def excess_bound(self, k: int, d: float | None = None) -> float:
        d = self.d_default if d is None else d
        return self._factor(k, d) * self.rs_norm_sq * self.sparsity_profile[k]

    def excess_bound_simple(self, k: int, d: float | None = None) -> float:
        d = self.d_default if d is None else d
        return self._factor(k, d) * (self.n_size + 1) * self.rs_norm_sq * self.sparsity_moment[k]

    def _combine(self, excess):
        return self.rs_norm_sq * (np.sqrt(self.eaf_moment + self.s_over_n) + np.sqrt(excess / self.rs_norm_sq)) ** 2

    def combined(self, k: int, d: float | None = None) -> float:
        return float(self._combine(self.excess_bound(k, d)))

    def combined_simple(self, k: int, d: float | None = None) -> float:
        return float(self._combine(self.excess_bound_simple(k, d)))

    def to_dict(self, d: float | None = None) -> dict:
        d = self.d_default if d is None else d
        per_k = {}
        for k in sorted(self.sparsity_profile):
            per_k[str(k)] = {
                "sparsity_profile": self.sparsity_profile[k],
                "sparsity_moment": self.sparsity_moment[k],
                "excess_bound": self.excess_bound(k, d),
                "excess_bound_simple": self.excess_bound_simple(k, d),
                "combined": self.combined(k, d),
                "combined_simple": self.combined_simple(k, d),
            }
        return {
            "rs_norm_sq": self.rs_norm_sq,
            "eaf_moment": self.eaf_moment,
            "s_over_n": self.s_over_n,
            "basic_bound": self.basic_bound,
            "normalized_basic_bound": self.eaf_moment + self.s_over_n,
            "d": d,
            "d_note": "symbolic recovery constant; no numeric value is known",
            "per_k": per_k,
        }

    def to_json(self, d: float | None = None) -> str:
        return json.dumps(self.to_dict(d), indent=2)


def bound_report(g, sup: LagSupport, k_values, d_default: float = 1.0,
                 profile: SecondMomentProfile | None = None) -> BoundReport:
    gam = _gamma(g)
    eaf = np.asarray(eaf_from_corr(gam))
    profile = profile or second_moment_profile(gam, sup, with_approx=False)
    outside = 1.0 - np.asarray(mvu_window(sup)).real
    ks = sorted({int(k) for k in k_values})
    return BoundReport(
        rs_norm_sq=profile.rs_norm_sq,
        eaf_moment=eaf_moment(eaf, outside),
        s_over_n=sup.s / sup.n_size,
        s_prime=sup.s_prime,
        sparsity_profile={k: profile.sigma_tilde(k) for k in ks},
        sparsity_moment={k: profile.sparsity_moment(k) for k in ks},
        n_size=sup.n_size,
        d_default=d_default,
    )
