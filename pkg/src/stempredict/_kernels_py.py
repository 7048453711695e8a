"""Vectorized numpy implementation of the pairwise kernel assembly.

Mirrors ``_kernels.pyx`` exactly; used when the compiled extension is absent
or ``STEMPREDICT_PURE_PYTHON=1`` is set.

For a pair ``(p, q)`` with ``xi = k0 * (x_p - x_q + v (t_p - t_q)) - i delta``
the projected matrix ``u_p^T Sigma(xi) u_q`` is written as

    a(s) (u_p.u_q) + beta(s) (u_p.xi)(u_q.xi),       s = xi^T xi

and its gradient with respect to ``xi[m]`` as

    da(s) xi[m] (u_p.u_q) + dbeta(s) xi[m] (u_p.xi)(u_q.xi)
        + beta(s) (u_p[m] (u_q.xi) + (u_p.xi) u_q[m])

where ``da = a'(xi)/xi`` and ``dbeta = beta'(xi)/xi``.  All four coefficient
functions are built from the reduced Bessel functions of ``s``.
"""

import numpy as np

from .errors import DegenerateInput
from .numerics import reduced_bessel

FORM_ALT = 0
FORM_INTEGRAL = 1


def coefficients(s, form, need_grad):
    """Return ``(a, beta, da, dbeta)`` arrays (gradient terms ``None`` if unused).

    ``beta``/``dbeta`` of the alt form have a pole at ``s == 0``; entries
    there are left as ``nan`` and resolved by the caller.
    """
    J0, J1, J2, J3 = reduced_bessel(s)
    if form == FORM_ALT:
        a = (4.0 * J0 - s * J2) / 6.0
        zero = s == 0
        s_safe = np.where(zero, 1.0, s)
        beta = np.where(zero, np.nan, 0.5 * J2 - J0 / s_safe)
        if need_grad:
            da = (-4.0 * J1 - 2.0 * J2 + s * J3) / 6.0
            dbeta = np.where(zero, np.nan, -0.5 * J3 + J1 / s_safe + 2.0 * J0 / s_safe**2)
            return a, beta, da, dbeta
    else:
        a = (2.0 * J0 - s * J2) / 6.0
        beta = 0.5 * J2
        if need_grad:
            da = (-2.0 * J1 - 2.0 * J2 + s * J3) / 6.0
            dbeta = -0.5 * J3
            return a, beta, da, dbeta
    return a, beta, None, None


def stem_entries(xp, tp, up, xq, tq, uq, delta, v, k0, form, hermitian, need_grad):
    """Projected Sigma entries (and xi-gradients) for all pairs.

    Returns
    -------
    E : ndarray (P, Q) complex
    G : ndarray (3, P, Q) complex or None
    """
    delta = np.asarray(delta, dtype=float)
    v = np.asarray(v, dtype=float)
    dt = tp[:, None] - tq[None, :]
    w = k0 * ((xp[:, None, :] - xq[None, :, :]) + dt[..., None] * v) - 1j * delta
    s = np.einsum("pqi,pqi->pq", w, w)
    ap = np.einsum("pi,pqi->pq", up, w)
    aq = np.einsum("qi,pqi->pq", uq, w)
    uu = up @ uq.T
    prod = ap * aq

    a, beta, da, dbeta = coefficients(s, form, need_grad)
    coincident = np.all(w == 0, axis=-1)
    if form == FORM_ALT:
        # exact coincidence with delta = 0 takes the isotropic integral value
        a = np.where(coincident, 1.0 / 3.0, a)
    pole = np.isnan(beta)
    drop = prod == 0
    if np.any(pole & ~drop):
        raise DegenerateInput("xi^T xi = 0 with non-zero polarization projection")
    E = a * uu + np.where(drop, 0.0, beta * prod)

    G = None
    if need_grad:
        if form == FORM_ALT and np.any(coincident):
            raise DegenerateInput("derivative undefined at xi = 0")
        if np.any(pole & ((ap != 0) | (aq != 0))):
            raise DegenerateInput("xi^T xi = 0 with non-zero polarization projection")
        dbeta = np.where(drop, 0.0, dbeta)
        beta_g = np.where(pole, 0.0, beta)
        G = np.empty((3,) + s.shape, dtype=complex)
        for m in range(3):
            wm = w[..., m]
            G[m] = (
                da * wm * uu
                + np.where(drop, 0.0, dbeta * wm * prod)
                + beta_g * (up[:, None, m] * aq + ap * uq[None, :, m])
            )
    if hermitian:
        E, G = _mirror(E, G)
    return E, G


def _mirror(E, G):
    iu = np.triu_indices(E.shape[0], 1)
    E = E.copy()
    E[(iu[1], iu[0])] = np.conj(E[iu])
    if G is not None:
        G = G.copy()
        for m in range(3):
            G[m][(iu[1], iu[0])] = -np.conj(G[m][iu])
    return E, G
