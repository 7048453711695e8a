# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pairwise kernel assembly; same contract as ``_kernels_py.stem_entries``."""

import numpy as np

from libc.math cimport sin, cos, sinh, cosh, sqrt, hypot, fabs, copysign

from .errors import DegenerateInput
from .numerics import _SERIES_COEF, SERIES_SWITCH, SERIES_TERMS

FORM_ALT = 0
FORM_INTEGRAL = 1

cdef double COEF[4][32]
cdef int NTERMS = SERIES_TERMS
cdef double SWITCH2 = SERIES_SWITCH * SERIES_SWITCH

for _n in range(4):
    for _k in range(NTERMS):
        COEF[_n][_k] = _SERIES_COEF[_n, _k]


cdef inline double complex c_sqrt(double complex z) noexcept nogil:
    cdef double x = z.real, y = z.imag, r, t
    r = hypot(x, y)
    if r == 0.0:
        return 0.0
    t = sqrt(0.5 * (r + fabs(x)))
    if x >= 0.0:
        return t + 1j * (y / (2.0 * t))
    return fabs(y) / (2.0 * t) + 1j * copysign(t, y)


cdef inline void c_sincos(double complex z, double complex* sn, double complex* cs) noexcept nogil:
    cdef double x = z.real, y = z.imag
    cdef double sx = sin(x), cx = cos(x), shy = sinh(y), chy = cosh(y)
    sn[0] = sx * chy + 1j * (cx * shy)
    cs[0] = cx * chy - 1j * (sx * shy)


cdef inline void reduced(double complex s, double complex* J) noexcept nogil:
    cdef int n, k
    cdef double complex acc, z, iz, iz2, sn, cs
    if s.real * s.real + s.imag * s.imag < SWITCH2 * SWITCH2:
        for n in range(4):
            acc = COEF[n][NTERMS - 1]
            for k in range(NTERMS - 2, -1, -1):
                acc = acc * (-s) + COEF[n][k]
            J[n] = acc
        return
    z = c_sqrt(s)
    c_sincos(z, &sn, &cs)
    iz = 1.0 / z
    iz2 = iz * iz
    J[0] = sn * iz
    J[1] = (sn * iz - cs) * iz * iz
    J[2] = ((3.0 * iz2 - 1.0) * sn * iz - 3.0 * cs * iz2) * iz2
    J[3] = ((15.0 * iz2 * iz - 6.0 * iz) * sn * iz - (15.0 * iz2 - 1.0) * cs * iz) * iz2 * iz


cdef inline int coefficients(double complex s, int form, bint grad, double complex* c) noexcept nogil:
    """Fill c = (a, beta, da, dbeta); return 1 when beta has its pole (alt form, s == 0)."""
    cdef double complex J[4]
    reduced(s, J)
    if form == 0:
        c[0] = (4.0 * J[0] - s * J[2]) / 6.0
        if grad:
            c[2] = (-4.0 * J[1] - 2.0 * J[2] + s * J[3]) / 6.0
        if s == 0:
            c[1] = 0.0
            c[3] = 0.0
            return 1
        c[1] = 0.5 * J[2] - J[0] / s
        if grad:
            c[3] = -0.5 * J[3] + J[1] / s + 2.0 * J[0] / (s * s)
    else:
        c[0] = (2.0 * J[0] - s * J[2]) / 6.0
        c[1] = 0.5 * J[2]
        if grad:
            c[2] = (-2.0 * J[1] - 2.0 * J[2] + s * J[3]) / 6.0
            c[3] = -0.5 * J[3]
    return 0


def stem_entries(xp, tp, up, xq, tq, uq, delta, v, double k0, int form, bint hermitian, bint need_grad):
    cdef const double[:, ::1] Xp = np.ascontiguousarray(xp, dtype=np.float64)
    cdef const double[::1] Tp = np.ascontiguousarray(tp, dtype=np.float64)
    cdef const double[:, ::1] Up = np.ascontiguousarray(up, dtype=np.float64)
    cdef const double[:, ::1] Xq = np.ascontiguousarray(xq, dtype=np.float64)
    cdef const double[::1] Tq = np.ascontiguousarray(tq, dtype=np.float64)
    cdef const double[:, ::1] Uq = np.ascontiguousarray(uq, dtype=np.float64)
    cdef const double[::1] D = np.ascontiguousarray(delta, dtype=np.float64)
    cdef const double[::1] V = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t P = Xp.shape[0], Q = Xq.shape[0], i, j, j0, m
    E_arr = np.empty((P, Q), dtype=np.complex128)
    cdef double complex[:, ::1] E = E_arr
    G_arr = np.empty((3 if need_grad else 1, P, Q), dtype=np.complex128)
    cdef double complex[:, :, ::1] G = G_arr
    cdef double complex w[3]
    cdef double complex c[4]
    cdef double complex s, ap, aq, prod, val
    cdef double dt, uu
    cdef bint coincident, pole
    cdef int status = 0

    with nogil:
        for i in range(P):
            j0 = i if hermitian else 0
            for j in range(j0, Q):
                dt = Tp[i] - Tq[j]
                coincident = True
                s = 0.0
                ap = 0.0
                aq = 0.0
                uu = 0.0
                for m in range(3):
                    w[m] = k0 * ((Xp[i, m] - Xq[j, m]) + dt * V[m]) - 1j * D[m]
                    if w[m] != 0:
                        coincident = False
                    s = s + w[m] * w[m]
                    ap = ap + Up[i, m] * w[m]
                    aq = aq + Uq[j, m] * w[m]
                    uu = uu + Up[i, m] * Uq[j, m]
                prod = ap * aq
                pole = coefficients(s, form, need_grad, c)
                if form == 0 and coincident:
                    c[0] = 1.0 / 3.0
                if pole and prod != 0:
                    status = 1
                val = c[0] * uu
                if prod != 0:
                    val = val + c[1] * prod
                E[i, j] = val
                if need_grad:
                    if form == 0 and coincident:
                        status = 2
                    if pole and (ap != 0 or aq != 0):
                        status = 1
                    for m in range(3):
                        val = c[2] * w[m] * uu
                        if prod != 0:
                            val = val + c[3] * w[m] * prod
                        val = val + c[1] * (Up[i, m] * aq + ap * Uq[j, m])
                        G[m, i, j] = val
                if hermitian and j > i:
                    E[j, i] = E[i, j].conjugate()
                    if need_grad:
                        for m in range(3):
                            G[m, j, i] = -G[m, i, j].conjugate()
    if status == 1:
        raise DegenerateInput("xi^T xi = 0 with non-zero polarization projection")
    if status == 2:
        raise DegenerateInput("derivative undefined at xi = 0")
    return E_arr, (G_arr if need_grad else None)
