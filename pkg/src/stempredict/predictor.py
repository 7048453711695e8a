"""Gaussian-process channel prediction and baseline predictors.

The GPR predictor forms all future means from one solve against the pilot
covariance.  The baselines (AR, PVEC, no prediction) recurse over past
channel estimates and feed their own outputs back for multi-step horizons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .channel_sim import ChannelTrace
from .errors import InvalidArgument, SingularSystem
from .learning import Observations
from .numerics import hermitian_logdet_and_solve
from .stem_kernel import Coords, correlation_matrix

RIDGE = 1e-10


@dataclass
class PredictionResult:
    mean: np.ndarray
    posterior_cov: np.ndarray | None
    predictor_id: str


def gpr_predict(obs: Observations, future_coords: Coords, hyper, *, return_cov: bool = True,
                predictor_id: str = "gpr") -> PredictionResult:
    """Zero-mean GP posterior at ``future_coords`` given noisy pilots ``obs``."""
    if len(future_coords) == 0:
        raise InvalidArgument("future_coords must be non-empty")
    K_LL = correlation_matrix(obs.coords, obs.coords, hyper)
    K_FL = correlation_matrix(future_coords, obs.coords, hyper)
    Ky = K_LL + obs.noise_var * np.eye(obs.size)
    rhs = np.column_stack([obs.y, K_FL.conj().T]) if return_cov else obs.y[:, None]
    sol = hermitian_logdet_and_solve(Ky, rhs).x
    mean = K_FL @ sol[:, 0]
    cov = None
    if return_cov:
        K_FF = correlation_matrix(future_coords, future_coords, hyper)
        cov = K_FF - K_FL @ sol[:, 1:]
        cov = 0.5 * (cov + cov.conj().T)
    return PredictionResult(mean, cov, predictor_id)


def ls_estimate(y_t):
    """Least-squares channel estimate from unit pilots: the pilot vector itself."""
    return np.asarray(y_t)


def mmse_estimate(y_t, prior_cov, noise_var: float) -> np.ndarray:
    """``Sigma_h (Sigma_h + noise_var I)^{-1} y``."""
    y_t = np.asarray(y_t, dtype=complex)
    S = np.asarray(prior_cov, dtype=complex)
    x = hermitian_logdet_and_solve(S + noise_var * np.eye(S.shape[0]), y_t).x
    return S @ x


def slot_channel_assign(frame_channels, n: int, n_slots: int):
    """Channel used in slot ``n`` (1-based) of a frame of ``n_slots`` slots.

    The first half of the frame (inclusive) uses the frame's own channel,
    the rest uses the next frame's.
    """
    h_t, h_next = frame_channels
    if not 1 <= n <= n_slots:
        raise InvalidArgument(f"slot index {n} outside 1..{n_slots}")
    return h_t if n <= n_slots / 2 else h_next


def _snapshots(trace) -> np.ndarray:
    if isinstance(trace, ChannelTrace):
        return trace.snapshots
    arr = np.asarray(trace, dtype=complex)
    return arr[:, None] if arr.ndim == 1 else arr


def ar_fit(trace, order: int) -> np.ndarray:
    """AR(p) coefficients per antenna from Yule-Walker normal equations.

    For each element the lag products ``r(i, j) = sum_t h[t-i] conj(h[t-j])``
    over ``t = p..T-1`` form the normal equations ``R a = r``, solved with a
    relative ridge of ``1e-10``.  Returns shape ``(N, p)``; ``a[:, k]``
    multiplies ``h[t-1-k]``.
    """
    H = _snapshots(trace)
    T, N = H.shape
    p = int(order)
    if p < 1 or T <= p:
        raise InvalidArgument("trace length must exceed the AR order p >= 1")
    # lagged design, shape (T - p, N, p): column k holds h[t-1-k]
    past = np.stack([H[p - 1 - k:T - 1 - k] for k in range(p)], axis=-1)
    target = H[p:]
    R = np.einsum("tni,tnj->nij", past.conj(), past)
    r = np.einsum("tni,tn->ni", past.conj(), target)
    coeffs = np.empty((N, p), dtype=complex)
    eye = np.eye(p)
    for n in range(N):
        scale = float(np.real(np.trace(R[n]))) / p
        if not scale > 0:
            raise SingularSystem(f"antenna {n}: zero autocorrelation")
        A = R[n] + RIDGE * scale * eye
        if np.linalg.cond(A) > 1e14:
            raise SingularSystem(f"antenna {n}: autocorrelation matrix singular")
        coeffs[n] = la.solve(A, r[n], assume_a="her")
    return coeffs


def ar_predict(coeffs, trace, horizon: int) -> np.ndarray:
    """Sequential ``horizon``-step AR recursion; shape ``(horizon, N)``."""
    H = _snapshots(trace)
    a = np.asarray(coeffs, dtype=complex)
    if a.ndim == 1:
        a = np.broadcast_to(a, (H.shape[1], a.size))
    p = a.shape[1]
    if H.shape[0] < p:
        raise InvalidArgument("trace shorter than AR order")
    hist = [H[-1 - k] for k in range(p)]  # hist[k] = h[t-k]
    out = []
    for _ in range(int(horizon)):
        nxt = sum(a[:, k] * hist[k] for k in range(p))
        out.append(nxt)
        hist = [nxt] + hist[:-1]
    return np.array(out).reshape(int(horizon), H.shape[1])


def pvec_fit_predict(trace, order: int | None = None, horizon: int = 1) -> np.ndarray:
    """Vector linear prediction with ``order`` weights shared by all antennas.

    Solves ``h[t] ~ sum_k w_k h[t-1-k]`` in least squares over every antenna
    and every complete window of the trace, then recurses ``horizon`` steps.
    ``order`` defaults to ``min(T - 1, 4)``.
    """
    H = _snapshots(trace)
    T, N = H.shape
    M = min(T - 1, 4) if order is None else int(order)
    if M < 1 or T < M + 1:
        raise InvalidArgument(f"PVEC order {M} needs at least {M + 1} snapshots, got {T}")
    past = np.stack([H[M - 1 - k:T - 1 - k] for k in range(M)], axis=-1).reshape(-1, M)
    target = H[M:].reshape(-1)
    A = past.conj().T @ past
    scale = float(np.real(np.trace(A))) / M
    if not scale > 0:
        raise SingularSystem("PVEC: zero-energy trace")
    A = A + RIDGE * scale * np.eye(M)
    if np.linalg.cond(A) > 1e14:
        raise SingularSystem("PVEC: normal equations singular")
    w = la.solve(A, past.conj().T @ target, assume_a="her")
    return ar_predict(np.broadcast_to(w, (N, M)), H, horizon)


def no_prediction(trace, horizon: int) -> np.ndarray:
    """Repeat the latest snapshot ``horizon`` times."""
    H = _snapshots(trace)
    return np.repeat(H[-1:], int(horizon), axis=0)
