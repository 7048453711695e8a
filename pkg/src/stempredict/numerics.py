"""Complex special functions, Hermitian solves and the sphere-quadrature oracle.

The spherical Bessel functions are only needed for orders 0..3.  Everything
downstream works with the *reduced* functions ``J_n(s) = j_n(z) / z**n``,
``s = z**2``, which are entire and even in ``z``; that removes any branch
choice for the square root and keeps the small-argument regime exact.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
import scipy.linalg as la

from .errors import InvalidArgument, NotPositiveDefinite

# |z| below which the Taylor series replaces the closed forms
SERIES_SWITCH = 0.5
SERIES_TERMS = 12

_ORDERS = (0, 1, 2, 3)


def _double_factorial_odd(m: int) -> float:
    # (2m+1)!! for m >= 0
    out = 1.0
    for k in range(3, 2 * m + 2, 2):
        out *= k
    return out


# _SERIES_COEF[n][k] = 1 / (k! 2^k (2n+2k+1)!!), sign handled by (-s)^k
_SERIES_COEF = np.array(
    [
        [
            1.0 / (math.factorial(k) * 2.0**k * _double_factorial_odd(n + k))
            for k in range(SERIES_TERMS)
        ]
        for n in _ORDERS
    ]
)


def _reduced_series(n: int, s):
    """Horner evaluation of sum_k (-s/2)^k / (k! (2n+2k+1)!!)."""
    coef = _SERIES_COEF[n]
    acc = np.zeros_like(s) + coef[-1]
    for c in coef[-2::-1]:
        acc = acc * (-s) + c
    return acc


def principal_sqrt(z):
    """Square root with Re >= 0, and Im >= 0 when Re == 0.

    ``numpy.sqrt`` already follows the principal branch except for the sign
    of zero in the imaginary part of negative reals, which is normalized here.
    """
    r = np.sqrt(np.asarray(z, dtype=complex))
    flip = (r.real < 0) | ((r.real == 0) & (r.imag < 0))
    return np.where(flip, -r, r)


def reduced_bessel(s):
    """Return ``(J0, J1, J2, J3)`` for ``s = z**2`` (array or scalar).

    ``J_n = j_n(z) / z**n``.  Uses the 12-term series for ``|z| < 0.5`` and the
    trigonometric closed forms elsewhere.
    """
    s = np.asarray(s, dtype=complex)
    small = np.abs(s) < SERIES_SWITCH**2
    out = [np.empty_like(s) for _ in _ORDERS]

    if np.any(small):
        ss = s[small]
        for n in _ORDERS:
            out[n][small] = _reduced_series(n, ss)

    big = ~small
    if np.any(big):
        z = principal_sqrt(s[big])
        sn, cs = np.sin(z), np.cos(z)
        iz = 1.0 / z
        iz2 = iz * iz
        j0 = sn * iz
        j1 = (sn * iz - cs) * iz
        j2 = (3.0 * iz2 - 1.0) * sn * iz - 3.0 * cs * iz2
        j3 = (15.0 * iz2 * iz - 6.0 * iz) * sn * iz - (15.0 * iz2 - 1.0) * cs * iz
        out[0][big] = j0
        out[1][big] = j1 * iz
        out[2][big] = j2 * iz2
        out[3][big] = j3 * iz2 * iz
    return tuple(out)


def spherical_bessel_j(n: int, z):
    """Spherical Bessel function of the first kind ``j_n(z)`` for complex ``z``.

    Parameters
    ----------
    n : int
        Order, one of 0, 1, 2, 3.
    z : complex or array_like
        Argument.

    Returns
    -------
    complex or ndarray
        ``j_n(z)``; scalar input gives a Python complex.
    """
    if n not in _ORDERS:
        raise InvalidArgument(f"order must be in 0..3, got {n!r}")
    z_arr = np.asarray(z, dtype=complex)
    red = reduced_bessel(z_arr * z_arr)[n]
    val = red * z_arr**n
    if val.ndim == 0:
        return complex(val)
    return val


def complex_pseudonorm(v) -> complex:
    """``sqrt(v^T v)`` with the unconjugated transpose, principal branch."""
    v = np.asarray(v, dtype=complex)
    s = np.sum(v * v, axis=-1)
    r = principal_sqrt(s)
    return complex(r) if r.ndim == 0 else r


def sinhc(x):
    """``sinh(x)/x`` with the removable singularity filled (value 1 at 0)."""
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(np.abs(x) < 1e-4, 1.0 + x * x / 6.0, np.sinh(x) / np.where(x == 0, 1.0, x))
    return float(out) if out.ndim == 0 else out


def sinhc_deriv_over_x(x):
    """``S'(x)/x`` for ``S = sinhc``; tends to 1/3 at 0."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-2
    safe = np.where(small, 1.0, x)
    with np.errstate(invalid="ignore", over="ignore"):
        direct = (safe * np.cosh(safe) - np.sinh(safe)) / safe**3
    x2 = x * x
    series = 1.0 / 3.0 + x2 / 30.0 + x2 * x2 / 840.0
    out = np.where(small, series, direct)
    return float(out) if out.ndim == 0 else out


class HermitianSolve(NamedTuple):
    logdet: float
    x: np.ndarray
    jitter: float


def hermitian_logdet_and_solve(K, B, *, max_jitter: float = 1e-3) -> HermitianSolve:
    """Cholesky-based ``log det K`` and ``K^{-1} B`` for Hermitian PD ``K``.

    On a failed factorization the diagonal is loaded with ``eps * I``, where
    ``eps`` starts at ``1e-12 * trace(K)/dim`` and grows tenfold until it
    exceeds ``max_jitter * trace(K)/dim``.

    Returns
    -------
    HermitianSolve
        ``(logdet, x, jitter)``; ``jitter`` is the absolute diagonal load
        actually applied (0.0 if none was needed).

    Raises
    ------
    NotPositiveDefinite
        If the jitter cap is reached without a successful factorization.
    """
    K = np.asarray(K)
    n = K.shape[0]
    scale = float(np.real(np.trace(K))) / n
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    jitter = 0.0
    eps = 1e-12 * scale
    eye = np.eye(n)
    while True:
        try:
            Kj = K + jitter * eye if jitter else K
            c, lower = la.cho_factor(Kj, lower=True, check_finite=False)
            diag = np.real(np.diag(c))
            if not np.all(diag > 0) or not np.all(np.isfinite(diag)):
                raise la.LinAlgError("non-positive pivot")
            break
        except la.LinAlgError:
            if eps > max_jitter * scale:
                raise NotPositiveDefinite(
                    f"matrix of size {n} not positive definite after jitter {jitter:.3g}"
                ) from None
            jitter = eps
            eps *= 10.0
    logdet = 2.0 * float(np.sum(np.log(diag)))
    x = la.cho_solve((c, lower), B, check_finite=False)
    return HermitianSolve(logdet, x, jitter)


def fibonacci_sphere(npoints: int) -> np.ndarray:
    """Deterministic, near-uniform points on S^2, shape ``(npoints, 3)``."""
    i = np.arange(npoints) + 0.5
    z = 1.0 - 2.0 * i / npoints
    rho = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - math.sqrt(5.0)) * i
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def sphere_quadrature_emcf(shift, delta, zeta2: float = 1.0, npoints: int = 20000) -> np.ndarray:
    """Brute-force electromagnetic correlation integral over the unit sphere.

    Evaluates ``zeta2/(8 pi) * int (I - k k^T) exp(i k.shift) exp(k.delta) dS``
    divided by ``sinhc(|delta|)``, with equal-weight Fibonacci nodes.

    Parameters
    ----------
    shift : array_like, shape (3,)
        Dimensionless real lag ``k0 * (dx + v dt)``.
    delta : array_like, shape (3,)
        Real von Mises-Fisher concentration vector.
    zeta2 : float
        Channel energy.
    npoints : int
        Number of nodes, at least 1000.
    """
    if npoints < 1000:
        raise InvalidArgument(f"npoints must be >= 1000, got {npoints}")
    shift = np.asarray(shift, dtype=float)
    delta = np.asarray(delta, dtype=float)
    kappa = fibonacci_sphere(npoints)
    dmag = float(np.linalg.norm(delta))
    # subtract |delta| in the exponent, fold it back through the normalizer
    weight = np.exp(1j * (kappa @ shift) + kappa @ delta - dmag)
    outer = np.einsum("n,ni,nj->ij", weight, kappa, kappa)
    total = weight.sum()
    integral = (total * np.eye(3) - outer) * (4.0 * np.pi / npoints)
    # exp(-|d|) / sinhc(|d|) = 2|d| / (1 - exp(-2|d|))
    if dmag < 1e-8:
        norm = 1.0
    else:
        norm = 2.0 * dmag / -np.expm1(-2.0 * dmag)
    return zeta2 / (8.0 * np.pi) * integral * norm
