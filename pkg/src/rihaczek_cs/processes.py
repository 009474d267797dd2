"""Test processes: a single cyclic-prefix OFDM symbol with random QPSK
subcarrier symbols, a two-pulse Gaussian chirp process, and a generic
circular complex Gaussian sampler for any correlation matrix.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass

import numpy as np

from .core import TfMatrix
from .spectra import CorrelationMatrix

__all__ = [
    "OfdmParams",
    "ChirpParams",
    "trial_seed",
    "ofdm_realization",
    "ofdm_correlation",
    "ofdm_closed_rs",
    "ofdm_closed_eaf",
    "dir_kernel",
    "chirp_pulses",
    "chirp_correlation",
    "chirp_realization",
    "gaussian_realization",
]

log = logging.getLogger(__name__)

_QPSK = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2)


def trial_seed(master_seed: int, *keys: int) -> np.random.SeedSequence:
    """Independent, replayable stream for ``(master_seed, *keys)``."""
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys))


@dataclass(frozen=True)
class OfdmParams:
    """One OFDM symbol of ``2Q`` samples plus cyclic prefix, observed on an
    ``N``-sample window.

    Parameters
    ----------
    q : int
        Number of active subcarriers Q; the symbol length is ``2Q``
        (twofold oversampling).
    n_size : int
        Observation length N.
    n_cp : int, optional
        Cyclic-prefix length, default ``2Q/8``.
    n0 : int, optional
        Start of the symbol proper; the prefix starts at ``n0 - n_cp``.
        Default ``n_cp``.
    """

    q: int
    n_size: int
    n_cp: int | None = None
    n0: int | None = None

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("Q must be positive")
        if self.n_cp is None:
            if (2 * self.q) % 8:
                raise ValueError("default cyclic prefix 2Q/8 needs Q divisible by 4; pass n_cp")
            object.__setattr__(self, "n_cp", (2 * self.q) // 8)
        if self.n0 is None:
            object.__setattr__(self, "n0", self.n_cp)
        if self.n_cp < 0:
            raise ValueError("cyclic prefix length must be nonnegative")
        if not self.active_length < self.n_size / 2:
            raise ValueError(
                f"symbol plus prefix ({self.active_length}) must be shorter than N/2 = {self.n_size / 2}"
            )

    @property
    def n_s(self) -> int:
        return 2 * self.q

    @property
    def active_length(self) -> int:
        return self.n_s + self.n_cp

    def support(self) -> np.ndarray:
        """Grid indices carrying the symbol, in transmit order."""
        return (self.n0 - self.n_cp + np.arange(self.active_length)) % self.n_size

    def _modulation(self) -> np.ndarray:
        # basis[t, i] = exp(j2pi (t - n_cp) i / 2Q) for position t of the active window
        t = np.arange(self.active_length) - self.n_cp
        return np.exp(2j * np.pi * np.outer(t, np.arange(self.q)) / self.n_s)


def ofdm_realization(p: OfdmParams, seed) -> np.ndarray:
    """Draw i.i.d. QPSK symbols and return the time-domain OFDM signal."""
    rng = np.random.default_rng(seed)
    symbols = _QPSK[rng.integers(0, 4, size=p.q)]
    x = np.zeros(p.n_size, dtype=np.complex128)
    x[p.support()] = p._modulation() @ symbols
    return x


def ofdm_correlation(p: OfdmParams) -> CorrelationMatrix:
    """Exact correlation ``sum_i b_i b_i^H`` over the subcarrier waveforms."""
    basis = np.zeros((p.n_size, p.q), dtype=np.complex128)
    basis[p.support()] = p._modulation()
    return CorrelationMatrix(basis @ basis.conj().T)


def dir_kernel(length: int, theta) -> np.ndarray:
    """``sum_{t=0}^{length-1} exp(j2pi theta t)`` in closed form."""
    theta = np.asarray(theta, dtype=float)
    den = np.sin(np.pi * theta)
    near_int = np.abs(den) < 1e-12
    safe = np.where(near_int, 1.0, den)
    val = np.exp(1j * np.pi * theta * (length - 1)) * np.sin(np.pi * theta * length) / safe
    # at integer theta every term is exp(j2pi theta t) = 1
    return np.where(near_int, complex(length), val)


def ofdm_closed_rs(p: OfdmParams) -> TfMatrix:
    """Closed-form Rihaczek spectrum of the OFDM process.

    For the sample at position ``t`` of the active window,
    ``R[n, k] = sum_i dir(Ns+Ncp, k/N - i/2Q) exp(j2pi t (i/2Q - k/N))``;
    zero off the window.
    """
    n = p.n_size
    length = p.active_length
    k = np.arange(n)
    i = np.arange(p.q)
    theta = k[:, None] / n - i[None, :] / p.n_s          # [k, i]
    kern = dir_kernel(length, theta)
    t = np.arange(length)
    rows = np.einsum("ki,tki->tk", kern, np.exp(-2j * np.pi * t[:, None, None] * theta[None, :, :]))
    out = np.zeros((n, n), dtype=np.complex128)
    out[p.support()] = rows
    return TfMatrix(out)


def ofdm_closed_eaf(p: OfdmParams) -> TfMatrix:
    """Closed-form expected ambiguity function of the OFDM process.

    For ``-(Ns+Ncp) < m <= 0``,
    ``A[m, l] = exp(-j2pi l s/N) dir(Ns+Ncp+m, -l/N) sum_i exp(j2pi m i/2Q)``
    with ``s = n0 - Ncp`` the window start; positive lags follow from
    ``A[m, l] = conj(A[-m, -l]) exp(-j2pi m l/N)``; all other lags are zero.
    """
    n = p.n_size
    length = p.active_length
    start = p.n0 - p.n_cp
    l = np.arange(n)
    out = np.zeros((n, n), dtype=np.complex128)
    lags = np.arange(-length + 1, 1)
    sub_sum = np.exp(2j * np.pi * np.outer(lags, np.arange(p.q)) / p.n_s).sum(axis=1)
    for m, carrier in zip(lags, sub_sum):
        out[m % n] = np.exp(-2j * np.pi * l * start / n) * dir_kernel(length + m, -l / n) * carrier
    neg_l = (-l) % n
    for m in range(1, length):
        out[m] = np.conj(out[(-m) % n, neg_l]) * np.exp(-2j * np.pi * m * l / n)
    return TfMatrix(out)


@dataclass(frozen=True)
class ChirpParams:
    """Two Gaussian-windowed linear chirps ``s(t - t1)`` and ``s(t - t2)`` with
    ``s(t) = exp(-(t/t0)^2/2) exp(-j pi beta t^2)``, all in sample units."""

    n_size: int = 512
    t1: float = 128.0
    t2: float = 384.0
    t0: float = 60.0
    beta: float = 1.0 / 600.0

    def __post_init__(self):
        if self.n_size < 2 or self.t0 <= 0:
            raise ValueError("chirp needs N >= 2 and a positive pulse width")

    def tail_fraction(self) -> float:
        """Largest fraction of a pulse's energy that falls outside ``[0, N)``."""
        worst = 0.0
        wide = np.arange(-4 * self.n_size, 5 * self.n_size)
        for center in (self.t1, self.t2):
            energy = np.exp(-(((wide - center) / self.t0) ** 2))
            inside = (wide >= 0) & (wide < self.n_size)
            worst = max(worst, float(energy[~inside].sum() / energy.sum()))
        return worst


@functools.lru_cache(maxsize=32)
def _warn_tail(p: ChirpParams) -> None:
    # once per parameter set, not once per realization
    frac = p.tail_fraction()
    if frac > 1e-6:
        log.warning("chirp pulses leak %.2e of their energy outside the %d-sample grid", frac, p.n_size)


def chirp_pulses(p: ChirpParams) -> tuple[np.ndarray, np.ndarray]:
    """The two sampled pulses, truncated to the grid (no periodic wrap)."""
    _warn_tail(p)
    n = np.arange(p.n_size)

    def pulse(center):
        t = n - center
        return np.exp(-((t / p.t0) ** 2) / 2) * np.exp(-1j * np.pi * p.beta * t**2)

    return pulse(p.t1), pulse(p.t2)


def chirp_correlation(p: ChirpParams) -> CorrelationMatrix:
    """``s1 s1^H + s2 s2^H`` (independent unit-variance amplitudes)."""
    s1, s2 = chirp_pulses(p)
    return CorrelationMatrix(np.outer(s1, s1.conj()) + np.outer(s2, s2.conj()))


def chirp_realization(p: ChirpParams, seed) -> np.ndarray:
    """``a1 s1 + a2 s2`` with circular complex Gaussian amplitudes, ``E|a|^2 = 1``."""
    rng = np.random.default_rng(seed)
    amps = (rng.standard_normal(2) + 1j * rng.standard_normal(2)) / np.sqrt(2)
    s1, s2 = chirp_pulses(p)
    return amps[0] * s1 + amps[1] * s2


def gaussian_realization(g, seed, size: int | None = None) -> np.ndarray:
    """Circular complex Gaussian draw(s) with correlation ``g``.

    Uses ``Gamma^(1/2) w`` with ``w`` i.i.d. ``CN(0, 1)`` and the square root
    from the eigendecomposition (negative eigenvalues clipped to zero).
    With ``size`` given, returns a ``(size, N)`` array of draws.
    """
    if not isinstance(g, CorrelationMatrix):
        g = CorrelationMatrix(g)
    w, v = g.eigh()
    root = v * np.sqrt(np.clip(w, 0.0, None))[None, :]
    rng = np.random.default_rng(seed)
    shape = (g.n_size,) if size is None else (size, g.n_size)
    noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    return noise @ root.T
