"""Dense bivariate polynomial utilities.

A polynomial P(z1, z2) is stored as a 2-D complex array ``c`` with
``c[i, j]`` multiplying ``z1**i * z2**j``.
"""

from __future__ import annotations

import numpy as np


def as_coeffs(c) -> np.ndarray:
    c = np.atleast_2d(np.asarray(c, dtype=complex))
    if c.ndim != 2:
        raise ValueError("coefficient array must be 2-D")
    return c


def trim(c, rel_tol: float = 0.0) -> np.ndarray:
    """Drop negligible coefficients and trailing zero rows/columns."""
    c = as_coeffs(c).copy()
    scale = np.max(np.abs(c)) if c.size else 0.0
    if scale == 0.0:
        raise ValueError("zero polynomial")
    c[np.abs(c) <= rel_tol * scale] = 0.0
    rows = np.nonzero(np.abs(c).sum(axis=1))[0]
    cols = np.nonzero(np.abs(c).sum(axis=0))[0]
    return c[: rows[-1] + 1, : cols[-1] + 1]


def total_degree(c) -> int:
    c = as_coeffs(c)
    deg = -1
    for i in range(c.shape[0]):
        for j in range(c.shape[1]):
            if c[i, j] != 0:
                deg = max(deg, i + j)
    return deg


def polyval2(c, z1, z2):
    """Evaluate P at (z1, z2), broadcasting over array inputs."""
    c = as_coeffs(c)
    z1 = np.asarray(z1, dtype=complex)
    z2 = np.asarray(z2, dtype=complex)
    # Horner in z2; inner evaluation in z1.
    out = np.zeros(np.broadcast(z1, z2).shape, dtype=complex)
    for j in range(c.shape[1] - 1, -1, -1):
        out = out * z2 + np.polynomial.polynomial.polyval(z1, c[:, j])
    return out


def dz1(c) -> np.ndarray:
    c = as_coeffs(c)
    if c.shape[0] == 1:
        return np.zeros((1, c.shape[1]), dtype=complex)
    i = np.arange(1, c.shape[0])
    return c[1:, :] * i[:, None]


def dz2(c) -> np.ndarray:
    c = as_coeffs(c)
    if c.shape[1] == 1:
        return np.zeros((c.shape[0], 1), dtype=complex)
    j = np.arange(1, c.shape[1])
    return c[:, 1:] * j[None, :]


def z2_coeffs_at(c, z1):
    """Coefficients (ascending in z2) of the univariate slice P(z1, .).

    For scalar z1 returns shape (nj,); for a vector of z1 values returns
    shape (len(z1), nj).
    """
    c = as_coeffs(c)
    z1 = np.asarray(z1, dtype=complex)
    cols = [np.polynomial.polynomial.polyval(z1, c[:, j]) for j in range(c.shape[1])]
    return np.stack(cols, axis=-1)


def roots_z2(c, z1, newton_steps: int = 2) -> np.ndarray:
    """All z2 roots of P(z1, .) for scalar z1, polished by Newton steps."""
    co = z2_coeffs_at(c, complex(z1))
    co = np.asarray(co, dtype=complex).ravel()
    r = np.polynomial.polynomial.polyroots(co)
    if newton_steps:
        cd2 = dz2(c)
        for _ in range(newton_steps):
            p = polyval2(c, z1, r)
            dp = polyval2(cd2, z1, r)
            ok = np.abs(dp) > 1e-300
            r = np.where(ok, r - p / np.where(ok, dp, 1.0), r)
    return r


def newton_polish_z2(c, z1, z2, steps: int = 2) -> np.ndarray:
    """Polish z2 so that P(z1, z2) ~ 0, z1 held fixed (vectorized)."""
    cd2 = dz2(c)
    z2 = np.asarray(z2, dtype=complex).copy()
    for _ in range(steps):
        p = polyval2(c, z1, z2)
        dp = polyval2(cd2, z1, z2)
        ok = np.abs(dp) > 1e-300
        z2 = np.where(ok, z2 - p / np.where(ok, dp, 1.0), z2)
    return z2


def newton_polish_z1(c, z1, z2, steps: int = 2) -> np.ndarray:
    """Polish z1 so that P(z1, z2) ~ 0, z2 held fixed (vectorized)."""
    cd1 = dz1(c)
    z1 = np.asarray(z1, dtype=complex).copy()
    for _ in range(steps):
        p = polyval2(c, z1, z2)
        dp = polyval2(cd1, z1, z2)
        ok = np.abs(dp) > 1e-300
        z1 = np.where(ok, z1 - p / np.where(ok, dp, 1.0), z1)
    return z1
