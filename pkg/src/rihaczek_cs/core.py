"""Periodic time-frequency grid container, lag-support geometry and the
symplectic 2D DFT pair used throughout the package.

Index conventions
-----------------
A :class:`TfMatrix` stores an ``N x N`` complex array for indices ``0..N-1``.
Lag-domain quantities use ``[m, l]`` (time lag, frequency lag) and TF-domain
quantities use ``[n, k]`` (time, frequency). Negative or centered indices are
resolved modulo ``N`` by :meth:`TfMatrix.get`; data is never duplicated.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TfMatrix",
    "LagSupport",
    "make_lag_support",
    "symplectic_dft",
    "symplectic_idft",
    "as_grid",
]


class TfMatrix:
    """Immutable ``N x N`` complex matrix, periodic in both indices.

    Parameters
    ----------
    data : array_like
        Square complex array. A private read-only copy is kept.

    Notes
    -----
    ``np.asarray(tfm)`` returns the stored (read-only) array, so NumPy
    functions accept a :class:`TfMatrix` directly.
    """

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.complex128, copy=True)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"TfMatrix needs a square 2D array, got shape {arr.shape}")
        if arr.shape[0] < 2:
            raise ValueError("TfMatrix grid length must be at least 2")
        arr.setflags(write=False)
        self._data = arr

    @property
    def n_size(self) -> int:
        return self._data.shape[0]

    @property
    def data(self) -> np.ndarray:
        return self._data

    def get(self, i: int, j: int) -> complex:
        """Periodic accessor: ``get(i, j) == get(i mod N, j mod N)``."""
        n = self.n_size
        return complex(self._data[i % n, j % n])

    def centered(self) -> np.ndarray:
        """Copy of the data with index 0 moved to the middle (for display)."""
        return np.fft.fftshift(self._data)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._data
        return self._data.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, TfMatrix):
            return NotImplemented
        return np.array_equal(self._data, other._data)

    __hash__ = None

    def __repr__(self):
        return f"TfMatrix(N={self.n_size}, norm={np.linalg.norm(self._data):.6g})"

    # -- serialization -----------------------------------------------------

    def to_csv(self) -> str:
        """Row-major CSV text with header ``N=<n>`` and ``re,im`` cell pairs.

        Values are written with ``repr`` precision so the text form
        round-trips exactly as well.
        """
        out = io.StringIO()
        out.write(f"N={self.n_size}\n")
        for row in self._data:
            cells = []
            for v in row:
                cells.append(repr(float(v.real)))
                cells.append(repr(float(v.imag)))
            out.write(",".join(cells))
            out.write("\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TfMatrix":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("N="):
            raise ValueError("TfMatrix CSV must start with a 'N=<n>' header line")
        n = int(lines[0][2:])
        rows = lines[1:]
        if len(rows) != n:
            raise ValueError(f"expected {n} data rows, found {len(rows)}")
        vals = np.array([[float(c) for c in r.split(",")] for r in rows])
        if vals.shape != (n, 2 * n):
            raise ValueError(f"expected {2 * n} numbers per row, got shape {vals.shape}")
        return cls(vals[:, 0::2] + 1j * vals[:, 1::2])

    def to_bytes(self) -> bytes:
        """Little-endian ``u64 N`` followed by ``N*N`` interleaved ``f64`` re/im pairs."""
        body = np.ascontiguousarray(self._data).astype("<c16").tobytes()
        return struct.pack("<Q", self.n_size) + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "TfMatrix":
        if len(blob) < 8:
            raise ValueError("binary TfMatrix is truncated")
        (n,) = struct.unpack_from("<Q", blob, 0)
        expected = 8 + 16 * n * n
        if len(blob) != expected:
            raise ValueError(f"binary TfMatrix of N={n} needs {expected} bytes, got {len(blob)}")
        arr = np.frombuffer(blob, dtype="<c16", offset=8).reshape(n, n)
        return cls(arr)

    def save(self, path) -> None:
        """Write to ``path``; ``.csv`` selects the text form, anything else binary."""
        path = str(path)
        if path.endswith(".csv"):
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(self.to_csv())
        else:
            with open(path, "wb") as fh:
                fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "TfMatrix":
        path = str(path)
        if path.endswith(".csv"):
            with open(path, encoding="utf-8") as fh:
                return cls.from_csv(fh.read())
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def as_grid(x) -> np.ndarray:
    """Return a square complex ndarray view of a TfMatrix or array-like."""
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"expected a square 2D grid, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class LagSupport:
    """Effective lag rectangle ``{-M..M} x {-L..L}`` and its divisor-aligned
    enlargement of size ``dm x dl``.

    Attributes
    ----------
    n_size : int
        Grid length N.
    m_half, l_half : int
        Half-widths M (time lag) and L (frequency lag).
    dm, dl : int
        Smallest divisors of N with ``dm >= 2M+1`` and ``dl >= 2L+1``.
    dn, dk : int
        Subsampling steps ``N/dl`` (time) and ``N/dm`` (frequency).
    s, s_prime : int
        Sizes ``(2M+1)(2L+1)`` and ``dm*dl``.
    """

    n_size: int
    m_half: int
    l_half: int
    dm: int
    dl: int
    dn: int
    dk: int
    s: int
    s_prime: int

    def time_lags(self) -> np.ndarray:
        """Time lags of the enlarged support, ``-M .. -M+dm-1``."""
        return np.arange(self.dm) - self.m_half

    def freq_lags(self) -> np.ndarray:
        """Frequency lags of the enlarged support, ``-L .. -L+dl-1``."""
        return np.arange(self.dl) - self.l_half

    def to_dict(self) -> dict:
        return {"n": self.n_size, "m_half": self.m_half, "l_half": self.l_half}


def _smallest_divisor_at_least(n: int, lower: int) -> int:
    for d in range(max(lower, 1), n + 1):
        if n % d == 0:
            return d
    raise ValueError(f"no divisor of {n} is >= {lower}")


def make_lag_support(n: int, m_half: int, l_half: int) -> LagSupport:
    """Build the lag-support geometry for grid length ``n``.

    Raises
    ------
    ValueError
        If ``n < 2`` or a half-width is negative or not below ``n // 2``.
    """
    n, m_half, l_half = int(n), int(m_half), int(l_half)
    if n < 2:
        raise ValueError("grid length N must be at least 2")
    for name, val in (("M", m_half), ("L", l_half)):
        if val < 0 or val >= n // 2:
            raise ValueError(f"{name}={val} must satisfy 0 <= {name} < floor(N/2) = {n // 2}")
    dm = _smallest_divisor_at_least(n, 2 * m_half + 1)
    dl = _smallest_divisor_at_least(n, 2 * l_half + 1)
    return LagSupport(
        n_size=n,
        m_half=m_half,
        l_half=l_half,
        dm=dm,
        dl=dl,
        dn=n // dl,
        dk=n // dm,
        s=(2 * m_half + 1) * (2 * l_half + 1),
        s_prime=dm * dl,
    )


def symplectic_dft(eaf_like) -> TfMatrix:
    """Lag domain to TF domain.

    ``out[n, k] = (1/N) sum_{m,l} in[m, l] exp(-j2pi(k m - n l)/N)``.
    """
    a = as_grid(eaf_like)
    # sum over l with +phase, then over m with -phase; the N and 1/N cancel
    stage = np.fft.ifft(a, axis=1)
    return TfMatrix(np.fft.fft(stage, axis=0).T)


def symplectic_idft(rs_like) -> TfMatrix:
    """TF domain to lag domain.

    ``out[m, l] = (1/N) sum_{n,k} in[n, k] exp(+j2pi(m k - l n)/N)``.
    The transform is an involution, so this shares the FFT route of
    :func:`symplectic_dft`.
    """
    r = as_grid(rs_like)
    stage = np.fft.ifft(r, axis=1)
    return TfMatrix(np.fft.fft(stage, axis=0).T)
