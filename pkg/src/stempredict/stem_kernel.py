"""Spatio-temporal electromagnetic (STEM) correlation kernel and its mixtures.

The 3x3 matrix kernel between space-time points ``p`` and ``q`` is

    K(p, q) = zeta2 / sinhc(|delta|) * Sigma(xi),
    xi = k0 * (x_p - x_q + v (t_p - t_q)) - i delta,

and a scalar channel entry is its projection ``u_p^T K u_q`` on the antenna
polarizations.  ``Sigma`` is available in two forms:

``"integral"`` (default)
    ``(2 j0 - j2)/6 I + j2/2 xihat xihat^T``, the closed form of the
    plane-wave integral that :func:`~stempredict.numerics.sphere_quadrature_emcf`
    evaluates by brute force.  Positive semi-definite as a kernel.
``"alt"``
    ``(4 j0 - j2)/6 I + (j2 - 2 j0)/2 xihat xihat^T`` with the isotropic
    value ``I/3`` at exact coincidence ``xi = 0``.  Generally indefinite;
    kept so the two coefficient choices can be compared.

Both share ``trace Sigma = j0``.  They coincide on the polarization
projection whenever ``j0 = 0``; elsewhere they differ by the traceless term
``j0 (I/3 - xihat xihat^T)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import _backend
from ._kernels_py import FORM_INTEGRAL, FORM_ALT, coefficients
from .errors import DegenerateInput, InvalidArgument
from .numerics import principal_sqrt, sinhc, sinhc_deriv_over_x, spherical_bessel_j

CARRIER_WAVELENGTH = 0.0857
K0_DEFAULT = 2.0 * np.pi / CARRIER_WAVELENGTH
# sinh overflow guard for the concentration magnitude
DELTA_MAX = 50.0

_FORMS = {"alt": FORM_ALT, "integral": FORM_INTEGRAL}


def _form_code(form: str) -> int:
    try:
        return _FORMS[form]
    except KeyError:
        raise InvalidArgument(f"unknown kernel form {form!r}; use 'integral' or 'alt'") from None


def _vec3(value, name):
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} must be a finite real 3-vector, got {value!r}")
    return arr


@dataclass(frozen=True)
class SpacetimePoint:
    x: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", _vec3(self.x, "x"))
        if not np.isfinite(self.t):
            raise InvalidArgument("t must be finite")
        object.__setattr__(self, "t", float(self.t))


@dataclass(frozen=True)
class StemHyper:
    """Single-kernel hyperparameters.

    ``zeta2`` is the channel energy, ``delta`` the real von Mises-Fisher
    concentration vector, ``v`` the velocity (m/s) and ``k0`` the wavenumber.
    """

    zeta2: float
    delta: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    k0: float = K0_DEFAULT
    form: str = "integral"

    def __post_init__(self):
        object.__setattr__(self, "delta", _vec3(self.delta, "delta"))
        object.__setattr__(self, "v", _vec3(self.v, "v"))
        if not (self.zeta2 >= 0 and np.isfinite(self.zeta2)):
            raise InvalidArgument(f"zeta2 must be >= 0, got {self.zeta2!r}")
        if not self.k0 > 0:
            raise InvalidArgument(f"k0 must be > 0, got {self.k0!r}")
        _form_code(self.form)
        object.__setattr__(self, "zeta2", float(self.zeta2))
        object.__setattr__(self, "k0", float(self.k0))

    @property
    def scale(self) -> float:
        """``zeta2 / sinhc(|delta|)``."""
        return self.zeta2 / sinhc(np.linalg.norm(self.delta))

    def replace(self, **kw) -> "StemHyper":
        vals = dict(zeta2=self.zeta2, delta=self.delta, v=self.v, k0=self.k0, form=self.form)
        vals.update(kw)
        return StemHyper(**vals)


@dataclass(frozen=True)
class GemHyper:
    """Grid of fixed ``(delta_n, v_n)`` sub-kernels with simplex weights."""

    deltas: np.ndarray
    vs: np.ndarray
    weights: np.ndarray
    zeta2: float = 1.0
    k0: float = K0_DEFAULT
    form: str = "integral"

    def __post_init__(self):
        deltas = np.atleast_2d(np.asarray(self.deltas, dtype=float))
        vs = np.atleast_2d(np.asarray(self.vs, dtype=float))
        c = np.asarray(self.weights, dtype=float).reshape(-1)
        if deltas.shape[1:] != (3,) or vs.shape != deltas.shape or c.shape != (deltas.shape[0],):
            raise InvalidArgument("deltas, vs and weights must describe the same N_k >= 1 sub-kernels")
        if deltas.shape[0] < 1:
            raise InvalidArgument("at least one sub-kernel is required")
        if np.any(c < 0) or abs(c.sum() - 1.0) > 1e-9:
            raise InvalidArgument("weights must be non-negative and sum to 1")
        if not (self.zeta2 >= 0 and self.k0 > 0):
            raise InvalidArgument("zeta2 must be >= 0 and k0 > 0")
        _form_code(self.form)
        for name, arr in (("deltas", deltas), ("vs", vs), ("weights", c)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "zeta2", float(self.zeta2))

    @property
    def n_kernels(self) -> int:
        return self.deltas.shape[0]

    def subkernel(self, n: int) -> StemHyper:
        return StemHyper(self.zeta2, self.deltas[n], self.vs[n], self.k0, self.form)

    def replace(self, **kw) -> "GemHyper":
        vals = dict(deltas=self.deltas, vs=self.vs, weights=self.weights,
                    zeta2=self.zeta2, k0=self.k0, form=self.form)
        vals.update(kw)
        return GemHyper(**vals)


@dataclass(frozen=True)
class Coords:
    """Stacked space-time sample locations with per-sample polarization."""

    x: np.ndarray
    t: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        t = np.asarray(self.t, dtype=float).reshape(-1)
        u = np.atleast_2d(np.asarray(self.u, dtype=float))
        if u.shape == (1, 3) and x.shape[0] > 1:
            u = np.repeat(u, x.shape[0], axis=0)
        if x.shape[1:] != (3,) or u.shape != x.shape or t.shape != (x.shape[0],):
            raise InvalidArgument("x (N,3), t (N,) and u (N,3) shapes disagree")
        if x.shape[0] == 0:
            raise InvalidArgument("coordinates must be non-empty")
        if np.any(np.abs(np.linalg.norm(u, axis=1) - 1.0) > 1e-9):
            raise InvalidArgument("polarization vectors must have unit norm")
        for name, arr in (("x", x), ("t", t), ("u", u)):
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.x.shape[0]

    def __getitem__(self, idx):
        idx = np.atleast_1d(np.arange(len(self))[idx])
        return Coords(self.x[idx], self.t[idx], self.u[idx])

    @classmethod
    def from_points(cls, items: Sequence[tuple[SpacetimePoint, Sequence[float]]]) -> "Coords":
        items = list(items)
        if not items:
            raise InvalidArgument("coordinates must be non-empty")
        return cls(
            np.array([p.x for p, _ in items]),
            np.array([p.t for p, _ in items]),
            np.array([np.asarray(u, dtype=float) for _, u in items]),
        )

    def shifted(self, dx=(0.0, 0.0, 0.0), dt=0.0) -> "Coords":
        return Coords(self.x + np.asarray(dx, dtype=float), self.t + dt, self.u)

    def same_as(self, other: "Coords") -> bool:
        return other is self or (
            len(other) == len(self)
            and np.array_equal(other.x, self.x)
            and np.array_equal(other.t, self.t)
            and np.array_equal(other.u, self.u)
        )


@dataclass(frozen=True)
class AntennaArray:
    positions: np.ndarray
    polarization: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        pol = np.asarray(self.polarization, dtype=float)
        if pol.ndim == 1:
            pol = np.tile(pol, (pos.shape[0], 1))
        if pos.shape[1:] != (3,) or pol.shape != pos.shape:
            raise InvalidArgument("positions and polarization shapes disagree")
        if np.any(np.abs(np.linalg.norm(pol, axis=1) - 1.0) > 1e-9):
            raise InvalidArgument("polarization vectors must have unit norm")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "polarization", pol)

    @property
    def n_elements(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def ula(cls, n_bs: int, spacing: float = CARRIER_WAVELENGTH / 2,
            polarization=(0.0, 1.0, 0.0)) -> "AntennaArray":
        """Uniform linear array on the x-axis, element indices ``-n/2 .. n/2 - 1``."""
        if n_bs < 1:
            raise InvalidArgument("n_bs must be >= 1")
        idx = np.arange(n_bs) - n_bs // 2
        pos = np.zeros((n_bs, 3))
        pos[:, 0] = idx * spacing
        return cls(pos, np.asarray(polarization, dtype=float))

    def coords(self, times) -> Coords:
        """Time-major stacking: all elements at ``times[0]``, then ``times[1]``, ..."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        n = self.n_elements
        return Coords(
            np.tile(self.positions, (times.size, 1)),
            np.repeat(times, n),
            np.tile(self.polarization, (times.size, 1)),
        )


# ---------------------------------------------------------------------------
# 3x3 matrix forms


def sigma_matrix(xi, form: str = "integral") -> np.ndarray:
    """``Sigma(xi)`` for a complex 3-vector ``xi``."""
    code = _form_code(form)
    xi = np.asarray(xi, dtype=complex).reshape(3)
    if np.all(xi == 0):
        return np.eye(3, dtype=complex) / 3.0
    s = np.sum(xi * xi)
    a, beta, _, _ = coefficients(np.array([s]), code, False)
    a, beta = complex(a[0]), complex(beta[0])
    if np.isnan(beta):
        raise DegenerateInput("xi^T xi = 0 for non-zero xi; outer-product term undefined")
    return a * np.eye(3) + beta * np.outer(xi, xi)


def _xi(p: SpacetimePoint, q: SpacetimePoint, h: StemHyper) -> np.ndarray:
    return h.k0 * ((p.x - q.x) + h.v * (p.t - q.t)) - 1j * h.delta


def stem_cf(p: SpacetimePoint, q: SpacetimePoint, h: StemHyper) -> np.ndarray:
    """3x3 STEM correlation matrix ``K(p, q)``."""
    return h.scale * sigma_matrix(_xi(p, q, h), h.form)


def _check_unit(u, name):
    u = np.asarray(u, dtype=float).reshape(3)
    if abs(np.linalg.norm(u) - 1.0) > 1e-9:
        raise InvalidArgument(f"{name} must be a unit vector")
    return u


def scalar_entry(p, q, u_p, u_q, h: StemHyper) -> complex:
    """Polarization-projected kernel value ``u_p^T K(p, q) u_q``."""
    u_p = _check_unit(u_p, "u_p")
    u_q = _check_unit(u_q, "u_q")
    return complex(u_p @ stem_cf(p, q, h) @ u_q)


def gem_entry(p, q, u_p, u_q, g: GemHyper) -> complex:
    """Mixed-kernel value ``u_p^T (sum_n c_n K_n(p, q)) u_q``."""
    if not isinstance(g, GemHyper):
        raise InvalidArgument("gem_entry expects a GemHyper")
    return sum(
        float(c) * scalar_entry(p, q, u_p, u_q, g.subkernel(n))
        for n, c in enumerate(g.weights)
        if c != 0
    ) + 0j


def dsigma_dxi(xi, m: int, form: str = "integral") -> np.ndarray:
    """Derivative of ``Sigma`` with respect to component ``m`` of ``xi``.

    Written out from the Bessel recurrences in terms of ``xihat`` and
    ``d xihat / d xi[m] = (e_m - xihat[m] xihat) / xi``.
    """
    code = _form_code(form)
    if m not in (0, 1, 2):
        raise InvalidArgument("m must be 0, 1 or 2")
    xi = np.asarray(xi, dtype=complex).reshape(3)
    r = principal_sqrt(np.sum(xi * xi))
    r = complex(r)
    if r == 0:
        raise DegenerateInput("dSigma/dxi is undefined at xi^T xi = 0")
    j0, j1, j2, j3 = (spherical_bessel_j(n, r) for n in range(4))
    xh = xi / r
    e_m = np.zeros(3)
    e_m[m] = 1.0
    dxh = (e_m - xh[m] * xh) / r
    outer = np.outer(xh, xh)
    sym = np.outer(dxh, xh) + np.outer(xh, dxh)
    if code == FORM_ALT:
        c_i = (-4 * j1 - 2 * j2 / r + j3) / 6
        c_o = (2 * j1 + 2 * j2 / r - j3) / 2
        c_s = (-2 * j0 + j2) / 2
    else:
        c_i = (-2 * j1 - 2 * j2 / r + j3) / 6
        c_o = (2 * j2 / r - j3) / 2
        c_s = j2 / 2
    return c_i * xh[m] * np.eye(3) + c_o * xh[m] * outer + c_s * sym


class StemGrad(NamedTuple):
    ddelta: np.ndarray  # (3, 3, 3): derivative matrix per delta component
    dv: np.ndarray      # (3, 3, 3)
    dzeta2: np.ndarray  # (3, 3)


def _delta_ratio(delta) -> float:
    """``S'(|d|) / (S(|d|) |d|)`` so that ``dK/d delta_m = -ratio * delta_m * K + ...``."""
    d = float(np.linalg.norm(delta))
    return sinhc_deriv_over_x(d) / sinhc(d)


def stem_cf_grad(p: SpacetimePoint, q: SpacetimePoint, h: StemHyper) -> StemGrad:
    """Analytic derivatives of :func:`stem_cf` w.r.t. ``delta``, ``v`` and ``zeta2``."""
    xi = _xi(p, q, h)
    sig = sigma_matrix(xi, h.form)
    K = h.scale * sig
    ratio = _delta_ratio(h.delta)
    dsig = np.array([dsigma_dxi(xi, m, h.form) for m in range(3)])
    ddelta = np.array([-ratio * h.delta[m] * K - 1j * h.scale * dsig[m] for m in range(3)])
    dv = h.scale * h.k0 * (p.t - q.t) * dsig
    return StemGrad(ddelta, dv, sig / sinhc(np.linalg.norm(h.delta)))


# ---------------------------------------------------------------------------
# matrix assembly


def _as_coords(P) -> Coords:
    if isinstance(P, Coords):
        return P
    return Coords.from_points(P)


def _entries(P: Coords, Q: Coords, delta, v, k0, form, need_grad, backend=None):
    impl = _backend.get(backend)
    herm = Q is P or P.same_as(Q)
    return impl.stem_entries(P.x, P.t, P.u, Q.x, Q.t, Q.u,
                             np.asarray(delta, float), np.asarray(v, float),
                             float(k0), _form_code(form), herm, need_grad)


def correlation_matrix(P, Q, hyper, *, backend: str | None = None) -> np.ndarray:
    """Channel correlation matrix between coordinate sets ``P`` and ``Q``.

    ``hyper`` is a :class:`StemHyper` or a :class:`GemHyper`.  When ``P`` and
    ``Q`` are the same set only the upper triangle is evaluated and the lower
    one is its conjugate mirror, so the result is exactly Hermitian.
    """
    P, Q = _as_coords(P), _as_coords(Q)
    if isinstance(hyper, StemHyper):
        E, _ = _entries(P, Q, hyper.delta, hyper.v, hyper.k0, hyper.form, False, backend)
        return hyper.scale * E
    if isinstance(hyper, GemHyper):
        out = np.zeros((len(P), len(Q)), dtype=complex)
        for n, c in enumerate(hyper.weights):
            if c > 0:
                out += c * subkernel_matrix(P, Q, hyper, n, backend=backend)
        return out
    raise InvalidArgument(f"unsupported hyperparameter type {type(hyper).__name__}")


def subkernel_matrix(P, Q, g: GemHyper, n: int, *, backend: str | None = None) -> np.ndarray:
    h = g.subkernel(n)
    E, _ = _entries(_as_coords(P), _as_coords(Q), h.delta, h.v, h.k0, h.form, False, backend)
    return h.scale * E


def subkernel_stack(P, g: GemHyper, *, backend: str | None = None) -> np.ndarray:
    """All sub-kernel matrices ``K_n(P, P)`` without weights, shape ``(N_k, |P|, |P|)``."""
    P = _as_coords(P)
    return np.stack([subkernel_matrix(P, P, g, n, backend=backend) for n in range(g.n_kernels)])


@dataclass(frozen=True)
class LagStack:
    """Sub-kernel matrices stored once per distinct (lag, polarization pair).

    Every kernel entry depends on its pair of samples only through
    ``(x_p - x_q, t_p - t_q, u_p, u_q)``.  Array snapshots repeat these lags
    heavily, so ``values[n, inverse].reshape(N, N)`` reproduces ``K_n`` from
    far fewer evaluations.
    """

    values: np.ndarray  # (N_k, U)
    inverse: np.ndarray  # (N*N,) group of every matrix entry
    size: int

    @property
    def n_kernels(self) -> int:
        return self.values.shape[0]

    def mix(self, weights) -> np.ndarray:
        K = (np.asarray(weights, dtype=float) @ self.values)[self.inverse].reshape(self.size, self.size)
        return 0.5 * (K + K.conj().T)

    def contract(self, W) -> np.ndarray:
        """``sum_ij W[i, j] K_n[i, j]`` for every ``n``."""
        flat = np.asarray(W).reshape(-1)
        U = self.values.shape[1]
        agg = np.bincount(self.inverse, flat.real, U) + 1j * np.bincount(self.inverse, flat.imag, U)
        return self.values @ agg

    def dense(self) -> np.ndarray:
        return self.values[:, self.inverse].reshape(-1, self.size, self.size)


def lag_stack(P, g: GemHyper, *, backend: str | None = None) -> LagStack:
    P = _as_coords(P)
    n = len(P)
    dx = (P.x[:, None, :] - P.x[None, :, :]).reshape(-1, 3)
    dt = (P.t[:, None] - P.t[None, :]).reshape(-1)
    up = np.repeat(P.u, n, axis=0)
    uq = np.tile(P.u, (n, 1))
    # quantize so round-off in the differences does not split groups
    key = np.column_stack([dx * 1e12, dt * 1e15, up * 1e12, uq * 1e12])
    _, first, inverse = np.unique(np.rint(key).astype(np.int64), axis=0,
                                  return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    rep_dx, rep_dt, rep_up, rep_uq = dx[first], dt[first], up[first], uq[first]
    values = np.empty((g.n_kernels, first.size), dtype=complex)
    pol_q, pol_idx = np.unique(rep_uq, axis=0, return_inverse=True)
    pol_idx = pol_idx.reshape(-1)
    for k, u in enumerate(pol_q):
        sel = np.nonzero(pol_idx == k)[0]
        lags = Coords(rep_dx[sel], rep_dt[sel], rep_up[sel])
        origin = Coords(np.zeros((1, 3)), np.zeros(1), u[None, :])
        for m in range(g.n_kernels):
            values[m, sel] = subkernel_matrix(lags, origin, g, m, backend=backend)[:, 0]
    return LagStack(values, inverse, n)


def correlation_matrix_grad(P, h: StemHyper, *, backend: str | None = None):
    """``K(P, P)`` and its derivatives.

    Returns
    -------
    K : ndarray (N, N)
    dK : ndarray (7, N, N)
        Derivatives with respect to ``delta[0..2]``, ``v[0..2]`` and ``zeta2``;
        each slice is Hermitian.
    """
    P = _as_coords(P)
    E, G = _entries(P, P, h.delta, h.v, h.k0, h.form, True, backend)
    scale = h.scale
    K = scale * E
    ratio = _delta_ratio(h.delta)
    dt = P.t[:, None] - P.t[None, :]
    dK = np.empty((7,) + K.shape, dtype=complex)
    for m in range(3):
        dK[m] = -ratio * h.delta[m] * K - 1j * scale * G[m]
        dK[3 + m] = (scale * h.k0) * dt * G[m]
    dK[6] = E / sinhc(np.linalg.norm(h.delta))
    return K, dK
