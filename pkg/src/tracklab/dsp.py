"""Spectral helpers shared by every solver in the package.

All transforms are unitary (norm="ortho"), so Parseval holds with unit
constant and filter energies mean the same thing in either domain.  Grids
are 2-D float64 arrays; spectra are 2-D complex128 arrays of the same shape.
"""

from __future__ import annotations

import numpy as np

# Tolerance for the imaginary residual allowed when a real inverse is requested.
REAL_RESIDUAL_TOL = 1e-9

# Relative epsilon below which a denominator entry counts as zero.
DIVISION_EPS = 1e-12


def _as_grid(a, name="grid"):
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def dft2(grid):
    """Unitary 2-D DFT of a real or complex grid."""
    return np.fft.fft2(_as_grid(grid), norm="ortho")


def idft2(spectrum, require_real=True):
    """Unitary 2-D inverse DFT.

    With ``require_real`` the input must be conjugate-symmetric (the spectrum
    of a real grid); a large imaginary residual raises instead of being
    silently dropped.
    """
    out = np.fft.ifft2(_as_grid(spectrum, "spectrum"), norm="ortho")
    if not require_real:
        return out
    scale = max(np.max(np.abs(out)), 1.0)
    resid = np.max(np.abs(out.imag)) / scale
    if resid > REAL_RESIDUAL_TOL:
        raise ValueError(
            f"idft2: imaginary residual {resid:.3e} exceeds {REAL_RESIDUAL_TOL:.1e}; "
            "input spectrum is not conjugate-symmetric"
        )
    return out.real


def circ_correlate(filt, base):
    """Cyclic cross-correlation: out[s] = <filt, base cyclically shifted by s>.

    ``out[r, c] = sum_t filt[t] * base[(t + (r, c)) mod shape]``, computed in
    the Fourier domain.  Both grids must share one shape.
    """
    f = _as_grid(filt, "filt")
    b = _as_grid(base, "base")
    if f.shape != b.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs {b.shape}")
    out = np.fft.ifft2(np.conj(np.fft.fft2(f)) * np.fft.fft2(b))
    if np.isrealobj(f) and np.isrealobj(b):
        return out.real
    return out


def hann2(h, w):
    """Separable 2-D Hann window, values in [0, 1], peak at the grid center."""
    if h < 1 or w < 1:
        raise ValueError(f"window dims must be >= 1, got {(h, w)}")
    return np.outer(np.hanning(h), np.hanning(w))


def pointwise(a, b, op="multiply"):
    """Entrywise product-family ops on same-shape grids or spectra.

    op is one of "multiply", "conjugate_multiply" (conj(a) * b) and "divide".
    Division refuses denominators whose magnitude falls below DIVISION_EPS
    relative to the largest denominator entry, and names the offending
    frequency index.
    """
    a = _as_grid(a, "a")
    b = _as_grid(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if op == "multiply":
        return a * b
    if op == "conjugate_multiply":
        return np.conj(a) * b
    if op == "divide":
        mag = np.abs(b)
        floor = DIVISION_EPS * max(mag.max(), 1e-300)
        bad = mag < floor
        if np.any(bad):
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise ZeroDivisionError(
                f"pointwise divide: denominator at index {idx} has magnitude "
                f"{mag[idx]:.3e}, below {floor:.3e} (relative eps {DIVISION_EPS:.1e})"
            )
        return a / b
    raise ValueError(f"unknown op {op!r}")
