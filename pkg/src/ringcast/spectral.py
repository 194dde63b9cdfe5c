"""Real-signal discrete Fourier transform and inverse, as pure operations.

Convention (0-indexed, n, k in 0..N-1):

    A[k] = sum_n s[n] cos(2 pi k n / N)
    B[k] = sum_n s[n] sin(2 pi k n / N)

so the complex spectrum is S = A - iB, and the inverse is

    s[n] = (1/N) sum_k (A[k] cos(2 pi n k / N) + B[k] sin(2 pi n k / N))
         = Re[(1/N) sum_k S[k] e^{+2 pi i n k / N}].

naive_dft / naive_idft are the O(N^2) summation ground truth and ship
in-tree; dft / idft are the fast path and must agree with them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import StructuralError


@dataclass
class Spectrum:
    """Paired real/imaginary coefficient arrays of a real signal.

    For matrix-valued spectra, row h holds the transform of row h of the
    input; the transform length is the trailing dimension.
    """

    real_part: np.ndarray
    imag_part: np.ndarray

    def __post_init__(self):
        self.real_part = np.asarray(self.real_part, dtype=float)
        self.imag_part = np.asarray(self.imag_part, dtype=float)
        if self.real_part.shape != self.imag_part.shape:
            raise StructuralError(
                f"real part shape {self.real_part.shape} != imag part shape {self.imag_part.shape}")
        if self.real_part.size == 0:
            raise StructuralError("empty spectrum")

    @property
    def length(self) -> int:
        return self.real_part.shape[-1]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.real_part, self.imag_part)


def _check_signal(signal) -> np.ndarray:
    s = np.asarray(signal, dtype=float)
    if s.size == 0:
        raise StructuralError("empty signal")
    return s


def naive_dft(signal) -> Spectrum:
    """Direct double-loop summation. Ground truth for the fast path."""
    s = _check_signal(signal)
    if s.ndim != 1:
        raise StructuralError("naive_dft expects a 1-d signal")
    n = s.size
    a = np.empty(n)
    b = np.empty(n)
    for k in range(n):
        ca = sb = 0.0
        for j in range(n):
            ang = 2.0 * math.pi * k * j / n
            ca += s[j] * math.cos(ang)
            sb += s[j] * math.sin(ang)
        a[k] = ca
        b[k] = sb
    return Spectrum(a, b)


def naive_idft(spec: Spectrum) -> np.ndarray:
    """Direct double-loop inverse summation."""
    a, b = spec.real_part, spec.imag_part
    if a.ndim != 1:
        raise StructuralError("naive_idft expects a 1-d spectrum")
    n = a.size
    out = np.empty(n)
    for j in range(n):
        acc = 0.0
        for k in range(n):
            ang = 2.0 * math.pi * j * k / n
            acc += a[k] * math.cos(ang) + b[k] * math.sin(ang)
        out[j] = acc / n
    return out


def dft(signal) -> Spectrum:
    """Fast transform of a real vector (or of each row of a matrix)."""
    s = _check_signal(signal)
    f = np.fft.fft(s, axis=-1)
    return Spectrum(f.real, -f.imag)


def idft(spec: Spectrum) -> np.ndarray:
    """Fast inverse; idft(dft(s)) == s for real s."""
    return np.fft.ifft(spec.real_part - 1j * spec.imag_part, axis=-1).real


def dft_rows(mat) -> Spectrum:
    """Row-wise transform of an (H, D) matrix; row h is dft(mat[h])."""
    m = _check_signal(mat)
    if m.ndim != 2:
        raise StructuralError("dft_rows expects a 2-d matrix")
    return dft(m)


def idft_rows(spec: Spectrum) -> np.ndarray:
    """Row-wise inverse of dft_rows."""
    if spec.real_part.ndim != 2:
        raise StructuralError("idft_rows expects a 2-d spectrum")
    return idft(spec)


def dft_basis(n: int, dtype=float) -> tuple[np.ndarray, np.ndarray]:
    """Forward basis matrices: A = s @ cos_b, B = s @ sin_b.

    cos_b[j, k] = cos(2 pi k j / n); both are symmetric.  The same pair
    serves the inverse: s = (A @ cos_b + B @ sin_b) / n.
    """
    j = np.arange(n)
    ang = 2.0 * np.pi * np.outer(j, j) / n
    return np.cos(ang).astype(dtype), np.sin(ang).astype(dtype)
