"""Signal- and correlation-domain TF representations and the windowed
(minimum-variance unbiased) Rihaczek-spectrum estimator.

All lag-domain maps use ``[m, l]`` indexing and all TF-domain maps use
``[n, k]`` indexing on the periodic grid of :mod:`rihaczek_cs.core`.
"""

from __future__ import annotations

import numpy as np

from .core import LagSupport, TfMatrix, as_grid, symplectic_dft

__all__ = [
    "CorrelationMatrix",
    "as_signal",
    "ambiguity_function",
    "rihaczek_distribution",
    "eaf_from_corr",
    "rs_from_corr",
    "mvu_window",
    "mvu_smoothing_kernel",
    "mvu_estimate",
    "masked_af",
    "expected_mvu",
    "dirichlet",
]


def as_signal(x, n_size: int | None = None) -> np.ndarray:
    """Validate a length-N complex signal vector."""
    v = np.asarray(x, dtype=np.complex128)
    if v.ndim != 1 or v.size < 2:
        raise ValueError(f"signal must be a 1D vector of length >= 2, got shape {v.shape}")
    if n_size is not None and v.size != n_size:
        raise ValueError(f"signal length {v.size} does not match grid length {n_size}")
    return v


class CorrelationMatrix:
    """Hermitian positive-semidefinite correlation matrix ``Gamma``.

    ``gamma[n1, n2] = E{X[n1] X*[n2]}``. Validation happens once at
    construction (Hermitian to 1e-12 relative, smallest eigenvalue
    ``>= -1e-10 * ||Gamma||``).
    """

    __slots__ = ("_gamma", "_eig")

    def __init__(self, gamma, check: bool = True):
        g = np.array(gamma, dtype=np.complex128, copy=True)
        if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] < 2:
            raise ValueError(f"correlation matrix must be square with N >= 2, got {g.shape}")
        self._eig = None
        if check:
            scale = max(np.linalg.norm(g, 2), np.finfo(float).tiny)
            herm_err = np.max(np.abs(g - g.conj().T))
            if herm_err > 1e-12 * scale:
                raise ValueError(f"correlation matrix is not Hermitian (max |G - G^H| = {herm_err:.3e})")
            g = 0.5 * (g + g.conj().T)
            w, v = np.linalg.eigh(g)
            if w[0] < -1e-10 * scale:
                raise ValueError(f"correlation matrix is not PSD (min eigenvalue {w[0]:.3e})")
            self._eig = (w, v)
        g.setflags(write=False)
        self._gamma = g

    @property
    def gamma(self) -> np.ndarray:
        return self._gamma

    @property
    def n_size(self) -> int:
        return self._gamma.shape[0]

    def eigh(self):
        """Cached Hermitian eigendecomposition ``(w, v)``."""
        if self._eig is None:
            self._eig = np.linalg.eigh(self._gamma)
        return self._eig

    def __array__(self, dtype=None, copy=None):
        return self._gamma if dtype is None else self._gamma.astype(dtype)

    def __repr__(self):
        return f"CorrelationMatrix(N={self.n_size})"


def _as_gamma(g) -> np.ndarray:
    if isinstance(g, CorrelationMatrix):
        return g.gamma
    return as_grid(g)


def _lag_rows(gamma: np.ndarray) -> np.ndarray:
    """``out[m, n] = gamma[n, (n - m) mod N]``."""
    n = gamma.shape[0]
    idx = np.arange(n)
    return gamma[idx[None, :], (idx[None, :] - idx[:, None]) % n]


def ambiguity_function(x) -> TfMatrix:
    """``A[m, l] = sum_n x[n] x*[(n-m) mod N] exp(-j2pi l n/N)``."""
    v = as_signal(x)
    n = v.size
    idx = np.arange(n)
    prod = v[None, :] * np.conj(v[(idx[None, :] - idx[:, None]) % n])
    return TfMatrix(np.fft.fft(prod, axis=1))


def rihaczek_distribution(x) -> TfMatrix:
    """``R[n, k] = x[n] conj(X[k]) exp(-j2pi n k/N)`` with ``X = DFT(x)``."""
    v = as_signal(x)
    n = v.size
    spec = np.fft.fft(v)
    idx = np.arange(n)
    phase = np.exp(-2j * np.pi * np.outer(idx, idx) / n)
    return TfMatrix(v[:, None] * np.conj(spec)[None, :] * phase)


def eaf_from_corr(g) -> TfMatrix:
    """Expected ambiguity function ``sum_n gamma[n, n-m] exp(-j2pi l n/N)``."""
    return TfMatrix(np.fft.fft(_lag_rows(_as_gamma(g)), axis=1))


def rs_from_corr(g) -> TfMatrix:
    """Rihaczek spectrum ``sum_m gamma[n, n-m] exp(-j2pi k m/N)``."""
    return TfMatrix(np.fft.fft(_lag_rows(_as_gamma(g)).T, axis=1))


def _centered_indicator(n: int, half: int) -> np.ndarray:
    idx = np.arange(n)
    return (np.minimum(idx, n - idx) <= half).astype(float)


def mvu_window(sup: LagSupport) -> TfMatrix:
    """Indicator of the periodized lag rectangle ``{-M..M} x {-L..L}``."""
    n = sup.n_size
    return TfMatrix(np.outer(_centered_indicator(n, sup.m_half), _centered_indicator(n, sup.l_half)))


def dirichlet(half: int, arg, n_size: int) -> np.ndarray:
    """``sum_{i=-half..half} exp(j2pi i arg/N)``, real valued."""
    arg = np.asarray(arg, dtype=float)
    num = np.sin(np.pi * (2 * half + 1) * arg / n_size)
    den = np.sin(np.pi * arg / n_size)
    small = np.abs(den) < 1e-12
    safe = np.where(small, 1.0, den)
    # the sum is N-periodic, so every zero of the denominator gives 2*half+1
    return np.where(small, float(2 * half + 1), num / safe)


def mvu_smoothing_kernel(sup: LagSupport) -> TfMatrix:
    """``Phi[n, k] = (1/N) sum_{|m|<=M, |l|<=L} exp(-j2pi(k m - n l)/N)``."""
    return symplectic_dft(mvu_window(sup))


def masked_af(x, sup: LagSupport) -> TfMatrix:
    """Ambiguity function zeroed outside the lag rectangle."""
    v = as_signal(x, sup.n_size)
    return TfMatrix(np.asarray(mvu_window(sup)) * np.asarray(ambiguity_function(v)))


def mvu_estimate(x, sup: LagSupport) -> TfMatrix:
    """Windowed Rihaczek-spectrum estimate from a single realization."""
    return symplectic_dft(masked_af(x, sup))


def expected_mvu(rs_true, sup: LagSupport) -> TfMatrix:
    """Mean of :func:`mvu_estimate`: the RS smoothed by the window kernel.

    Computed in the lag domain (transform, mask, transform back), which is
    the same circular convolution ``(1/N) sum Phi[n-n', k-k'] R[n', k']``.
    """
    lag = symplectic_dft(rs_true)
    return symplectic_dft(np.asarray(mvu_window(sup)) * np.asarray(lag))
