"""Maximum-likelihood kernel learning.

Two learners are provided:

* :func:`fit_stem_kl` -- gradient ascent with Armijo backtracking over the
  single-kernel hyperparameters ``(delta, v, zeta2)``.
* :func:`fit_gem_kl` -- majorization-minimization over the simplex weights of
  a fixed grid of sub-kernels.  ``ln det`` is linearized at the current
  weights, which yields a convex surrogate that upper-bounds
  ``l_r(c) = ln det K_y(c) + y^H K_y(c)^{-1} y`` and touches it at the
  expansion point, so ``l_r`` never increases.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateInput, InvalidArgument
from .numerics import hermitian_logdet_and_solve
from .stem_kernel import (
    DELTA_MAX,
    K0_DEFAULT,
    Coords,
    GemHyper,
    StemHyper,
    correlation_matrix,
    LagStack,
    correlation_matrix_grad,
    lag_stack,
    subkernel_stack,
)

log = logging.getLogger(__name__)

PARAM_NAMES = ("delta_x", "delta_y", "delta_z", "v_x", "v_y", "v_z", "zeta2")


@dataclass(frozen=True)
class Observations:
    """Stacked pilots ``y`` observed at ``coords`` with noise variance ``noise_var``."""

    y: np.ndarray
    coords: Coords
    noise_var: float

    def __post_init__(self):
        y = np.asarray(self.y, dtype=complex).reshape(-1)
        if len(self.coords) != y.size:
            raise InvalidArgument(f"{y.size} pilots but {len(self.coords)} coordinates")
        if not self.noise_var > 0:
            raise InvalidArgument("noise_var must be > 0")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "noise_var", float(self.noise_var))

    @property
    def size(self) -> int:
        return self.y.size


@dataclass
class FitReport:
    hyper: StemHyper | GemHyper
    loglik_trace: list[float]
    iterations: int
    jitter_events: int
    converged: bool
    weights_trace: list[np.ndarray] = field(default_factory=list)


class _Posterior:
    """Cholesky-derived quantities of ``K_y = K + noise_var I`` reused by gradients."""

    __slots__ = ("logdet", "g", "Kinv", "quad", "jitter")

    def __init__(self, K, y, noise_var, need_inverse=True):
        Ky = K + noise_var * np.eye(K.shape[0])
        n = K.shape[0]
        rhs = np.column_stack([y, np.eye(n)]) if need_inverse else y[:, None]
        res = hermitian_logdet_and_solve(Ky, rhs)
        self.logdet = res.logdet
        self.g = res.x[:, 0]
        self.Kinv = res.x[:, 1:] if need_inverse else None
        self.quad = float(np.real(np.vdot(y, self.g)))
        self.jitter = res.jitter


def _kernel(obs: Observations, hyper) -> np.ndarray:
    return correlation_matrix(obs.coords, obs.coords, hyper)


def log_likelihood(obs: Observations, hyper) -> float:
    """``-ln det K_y - L_N ln(pi) - y^H K_y^{-1} y``."""
    post = _Posterior(_kernel(obs, hyper), obs.y, obs.noise_var, need_inverse=False)
    return -post.logdet - obs.size * math.log(math.pi) - post.quad


def _trace_grad(W, dK):
    # tr(W dK) for Hermitian W and Hermitian dK slices
    return np.real(np.einsum("ij,kji->k", W, dK))


def loglik_grad_stem(obs: Observations, h: StemHyper) -> np.ndarray:
    """Gradient of :func:`log_likelihood` over ``(delta[0..2], v[0..2], zeta2)``.

    Each component is ``tr((g g^H - K_y^{-1}) dK/d omega)`` with
    ``g = K_y^{-1} y``.
    """
    K, dK = correlation_matrix_grad(obs.coords, h)
    post = _Posterior(K, obs.y, obs.noise_var)
    W = np.outer(post.g, post.g.conj()) - post.Kinv
    return _trace_grad(W, dK)


# ---------------------------------------------------------------------------
# STEM-KL


@dataclass
class StemFitOptions:
    max_iter: int = 100
    tol: float = 1e-6
    # initial step in the scaled parameter space; adapted between iterations
    step: float = 1e-2
    armijo: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 40
    # longest trial step in the scaled parameter space; keeps BB steps from leaving the float range
    max_move: float = 5.0
    # velocity is optimized as v / v_scale to balance its gradient against delta's
    v_scale: float = 10.0
    free: Sequence[bool] = (True,) * 7


def _pack(h: StemHyper, v_scale: float) -> np.ndarray:
    return np.concatenate([h.delta, h.v / v_scale, [math.log(max(h.zeta2, 1e-300))]])


def _unpack(theta, h: StemHyper, v_scale: float) -> StemHyper:
    delta = theta[:3]
    nrm = np.linalg.norm(delta)
    if nrm > DELTA_MAX:
        delta = delta * (DELTA_MAX / nrm)
    return h.replace(delta=delta, v=theta[3:6] * v_scale, zeta2=math.exp(min(theta[6], 700.0)))  # exp overflows past ~709


def _bb_ascent_step(s, dg, last):
    """Barzilai-Borwein trial step ``s.s / -(s.dg)`` for ascent; doubles ``last`` if curvature is not negative."""
    curv = -float(s @ dg)
    if curv > 0 and np.isfinite(curv):
        return float(s @ s) / curv
    return 2.0 * last


def fit_stem_kl(obs: Observations, init: StemHyper, opts: StemFitOptions | None = None) -> FitReport:
    """Gradient-ascent maximum likelihood over ``(delta, v, ln zeta2)``."""
    opts = opts or StemFitOptions()
    free = np.asarray(opts.free, dtype=bool)
    if free.shape != (7,):
        raise InvalidArgument("free must have 7 entries")
    if init.zeta2 <= 0:
        raise InvalidArgument("STEM-KL needs zeta2 > 0 for its log-parameterization")
    h = init
    theta = _pack(h, opts.v_scale)
    chain = np.array([1, 1, 1, opts.v_scale, opts.v_scale, opts.v_scale, 0.0])
    jitter_events = 0

    def objective_and_grad(hh):
        nonlocal jitter_events
        K, dK = correlation_matrix_grad(obs.coords, hh)
        post = _Posterior(K, obs.y, obs.noise_var)
        jitter_events += post.jitter > 0
        W = np.outer(post.g, post.g.conj()) - post.Kinv
        grad = _trace_grad(W, dK)
        c = chain.copy()
        c[6] = hh.zeta2
        value = -post.logdet - obs.size * math.log(math.pi) - post.quad
        return value, np.where(free, grad * c, 0.0)

    def objective(hh):
        nonlocal jitter_events
        post = _Posterior(_kernel(obs, hh), obs.y, obs.noise_var, need_inverse=False)
        jitter_events += post.jitter > 0
        return -post.logdet - obs.size * math.log(math.pi) - post.quad

    value, grad = objective_and_grad(h)
    trace = [value]
    step = opts.step
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        gnorm = float(np.linalg.norm(grad))
        t = min(step, opts.max_move / gnorm) if gnorm > 0 else step
        accepted = False
        for _ in range(opts.max_backtracks):
            cand_theta = theta + t * grad
            cand = _unpack(cand_theta, h, opts.v_scale)
            moved = _pack(cand, opts.v_scale) - theta
            try:
                cand_value = objective(cand)
            except (np.linalg.LinAlgError, DegenerateInput):
                cand_value = -np.inf
            if cand_value >= value + opts.armijo * float(grad @ moved):
                accepted = True
                break
            t *= opts.shrink
        if not accepted:
            converged = True  # no ascent direction left at working precision
            it -= 1
            break
        try:
            new_value, new_grad = objective_and_grad(cand)
        except DegenerateInput:
            log.debug("stem-kl stopped: candidate hit a degenerate kernel derivative")
            break
        gain = new_value - value
        new_theta = _pack(cand, opts.v_scale)
        step = _bb_ascent_step(new_theta - theta, new_grad - grad, t)
        h, theta, value, grad = cand, new_theta, new_value, new_grad
        trace.append(value)
        if abs(gain) < opts.tol:
            converged = True
            break
    return FitReport(h, trace, it if opts.max_iter else 0, jitter_events, converged)


# ---------------------------------------------------------------------------
# GEM-KL


def zeta2_closed_form(obs: Observations) -> float:
    """Channel-energy estimate ``2 sum |y|^2 / (L_N (1 + noise_var))``."""
    return 2.0 * float(np.sum(np.abs(obs.y) ** 2)) / (obs.size * (1.0 + obs.noise_var))


def _unit_rows(vectors, name):
    arr = np.atleast_2d(np.asarray(vectors, dtype=float))
    if arr.size == 0:
        raise InvalidArgument(f"{name} must be non-empty")
    nrm = np.linalg.norm(arr, axis=1)
    if np.any(nrm == 0):
        raise InvalidArgument(f"{name} must be non-zero directions")
    return arr / nrm[:, None]


def build_grid(delta_mags, delta_dirs, speeds, headings, *, zeta2: float = 1.0,
               k0: float = K0_DEFAULT, form: str = "integral") -> GemHyper:
    """Cartesian grid of sub-kernels with uniform weights ``1/N_k``.

    A zero magnitude (or speed) makes the direction (or heading) irrelevant,
    so it contributes a single entry rather than one per direction.
    """
    mags = np.asarray(delta_mags, dtype=float).reshape(-1)
    spd = np.asarray(speeds, dtype=float).reshape(-1)
    if mags.size == 0 or spd.size == 0:
        raise InvalidArgument("delta_mags and speeds must be non-empty")
    dirs = _unit_rows(delta_dirs, "delta_dirs")
    heads = _unit_rows(headings, "headings")

    def expand(values, directions):
        out = []
        for val in values:
            if val == 0:
                out.append(np.zeros(3))
            else:
                out.extend(val * d for d in directions)
        return out

    deltas, vs = [], []
    for d in expand(mags, dirs):
        for v in expand(spd, heads):
            deltas.append(d)
            vs.append(v)
    n = len(deltas)
    return GemHyper(np.array(deltas), np.array(vs), np.full(n, 1.0 / n), zeta2, k0, form)


def fan_directions(angles_deg) -> np.ndarray:
    """Unit vectors in the x-z plane at the given angles from the z axis (broadside)."""
    a = np.radians(np.asarray(angles_deg, dtype=float))
    return np.column_stack([np.sin(a), np.zeros_like(a), np.cos(a)])


DEFAULT_DELTA_MAGS = (0.0, 15.0, 50.0)
DEFAULT_DELTA_ANGLES = tuple(range(-65, 66, 10))
# pedestrian to urban-vehicle speeds; faster entries mostly fit pilot noise at L = 2
DEFAULT_SPEEDS = (0.0, 3.0, 6.0, 10.0, 15.0)


def default_grid(*, zeta2=1.0, k0=K0_DEFAULT, form="integral") -> GemHyper:
    """Concentration fan over +-65 deg of broadside crossed with axis-aligned velocities."""
    ex, ez = np.array([1.0, 0, 0]), np.array([0, 0, 1.0])
    return build_grid(DEFAULT_DELTA_MAGS, fan_directions(DEFAULT_DELTA_ANGLES),
                      DEFAULT_SPEEDS, [ex, -ex, ez, -ez], zeta2=zeta2, k0=k0, form=form)


def project_simplex(c) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-and-threshold)."""
    c = np.asarray(c, dtype=float).reshape(-1)
    u = np.sort(c)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, c.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(c - tau, 0.0)


def _mix(stack, weights):
    return np.tensordot(weights, stack, axes=1)


def _lr_from(post: _Posterior) -> float:
    return post.logdet + post.quad


def lr_value(obs: Observations, g: GemHyper) -> float:
    """Negated log-likelihood without constants: ``ln det K_y + y^H K_y^{-1} y``."""
    post = _Posterior(_kernel(obs, g), obs.y, obs.noise_var, need_inverse=False)
    return _lr_from(post)


def _surrogate(stack, weights, ref: _Posterior, y, noise_var, K_ref):
    K = _mix(stack, weights)
    post = _Posterior(K, y, noise_var, need_inverse=False)
    lin = float(np.real(np.einsum("ij,ji->", ref.Kinv, K - K_ref)))
    return post.quad + ref.logdet + lin, post


def surrogate_value(obs: Observations, g: GemHyper, c_ref, *, weights=None) -> float:
    """MM surrogate ``y^H K_y^{-1} y + ln det K_ref + tr(K_ref^{-1} (K_y - K_ref))``.

    ``K_y`` uses ``weights`` (default ``g.weights``) and ``K_ref`` uses
    ``c_ref``.  ``weights`` need not lie on the simplex, which lets finite
    differences probe every coordinate.
    """
    stack = subkernel_stack(obs.coords, g)
    c_ref = np.asarray(c_ref, dtype=float)
    K_ref = _mix(stack, c_ref)
    ref = _Posterior(K_ref, obs.y, obs.noise_var)
    c = g.weights if weights is None else np.asarray(weights, dtype=float)
    value, _ = _surrogate(stack, c, ref, obs.y, obs.noise_var, K_ref)
    return value


def _surrogate_grad(stack, ref_Kinv, g_vec):
    # tr(K_n (K_ref^{-1} - g g^H)) for every sub-kernel n
    return np.einsum("nij,ji->n", stack, ref_Kinv) - np.einsum("i,nij,j->n", g_vec.conj(), stack, g_vec)


def surrogate_grad(obs: Observations, g: GemHyper, c_ref, *, weights=None, return_imag: bool = False):
    """Gradient of :func:`surrogate_value` over the weights, at ``weights`` (default ``g.weights``)."""
    stack = subkernel_stack(obs.coords, g)
    K_ref = _mix(stack, np.asarray(c_ref, dtype=float))
    ref = _Posterior(K_ref, obs.y, obs.noise_var)
    c = g.weights if weights is None else np.asarray(weights, dtype=float)
    post = _Posterior(_mix(stack, c), obs.y, obs.noise_var, need_inverse=False)
    raw = _surrogate_grad(stack, ref.Kinv, post.g)
    if return_imag:
        return np.real(raw), float(np.max(np.abs(np.imag(raw))))
    return np.real(raw)


@dataclass
class GemFitOptions:
    max_iter: int = 50
    tol: float = 1e-6
    # projected-gradient Armijo passes on the surrogate per MM iteration
    inner_steps: int = 1
    armijo: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 50
    zeta2: float | None = None  # None: closed-form estimate from the pilots


class _MixedProblem:
    """Weights-only view of the objective: mixing and trace contractions."""

    def __init__(self, stack, y, noise_var):
        if not isinstance(stack, LagStack):
            stack = np.asarray(stack)
            nk, n = stack.shape[0], stack.shape[1]
            stack = LagStack(stack.reshape(nk, -1), np.arange(n * n), n)
        self.stack = stack
        self.nk = stack.n_kernels
        self.y = y
        self.nv = noise_var

    def posterior(self, c, need_inverse):
        return _Posterior(self.stack.mix(c), self.y, self.nv, need_inverse)

    def linear_terms(self, Kinv):
        # tr(K_ref^{-1} K_n) for every n
        return np.real(self.stack.contract(Kinv.T))

    def quad_terms(self, g):
        # g^H K_n g for every n
        return np.real(self.stack.contract(np.outer(g.conj(), g)))


def fit_gem_kl(obs: Observations, grid: GemHyper, opts: GemFitOptions | None = None,
               *, stack: LagStack | np.ndarray | None = None) -> FitReport:
    """Majorization-minimization of ``l_r`` over the simplex weights of ``grid``.

    ``zeta2`` is fixed before the loop by :func:`zeta2_closed_form` (it does
    not depend on the weights) and shared by all sub-kernels.  The returned
    ``loglik_trace`` holds ``l_r`` at every MM iterate.

    Each MM iteration takes ``opts.inner_steps`` projected-gradient steps on
    the surrogate with Armijo backtracking.  The trial step is the
    Barzilai-Borwein ratio of the two most recent ``l_r`` gradients (the
    surrogate's gradient at its expansion point equals that of ``l_r``).
    """
    opts = opts or GemFitOptions()
    zeta2 = zeta2_closed_form(obs) if opts.zeta2 is None else float(opts.zeta2)
    grid = grid.replace(zeta2=zeta2)
    if stack is None:
        stack = lag_stack(obs.coords, grid)
    prob = _MixedProblem(stack, obs.y, obs.noise_var)

    c = np.asarray(grid.weights, dtype=float).copy()
    ref = prob.posterior(c, True)
    jitter_events = int(ref.jitter > 0)
    lr = _lr_from(ref)
    trace, weights_trace = [lr], [c.copy()]
    converged = prob.nk == 1
    it = 0
    bb = _StepMemory()
    if prob.nk > 1:
        for it in range(1, opts.max_iter + 1):
            c_new, post_new = _mm_step(prob, c, ref, opts, bb)
            if c_new is None:
                converged = True
                it -= 1
                break
            jitter_events += int(post_new.jitter > 0)
            lr_new = _lr_from(post_new)
            gain = lr - lr_new
            c, ref, lr = c_new, post_new, lr_new
            trace.append(lr)
            weights_trace.append(c.copy())
            if gain < opts.tol:
                converged = True
                break
    hyper = grid.replace(weights=c)
    return FitReport(hyper, trace, it, jitter_events, converged, weights_trace)


class _StepMemory:
    __slots__ = ("c", "grad")

    def __init__(self):
        self.c = None
        self.grad = None

    def propose(self, c, grad):
        step = None
        if self.c is not None:
            s = c - self.c
            d = grad - self.grad
            sd = float(s @ d)
            if sd > 0:
                step = float(s @ s) / sd
        if step is None:
            step = 1.0 / max(float(np.max(np.abs(grad - grad.mean()))), 1e-300)
        self.c, self.grad = c.copy(), grad.copy()
        return step


def _mm_step(prob: _MixedProblem, c, ref: _Posterior, opts: GemFitOptions, bb: _StepMemory):
    """Decrease the surrogate expanded at ``c``.

    Returns the new weights and their posterior (with inverse, ready to be
    the next expansion point), or ``(None, None)`` when no step is accepted.
    """
    lin = prob.linear_terms(ref.Kinv)
    base = ref.logdet - float(lin @ c)
    cur, cur_val, cur_g = c, ref.quad + ref.logdet, ref.g
    moved = False
    for inner in range(max(1, opts.inner_steps)):
        grad = lin - prob.quad_terms(cur_g)
        t = bb.propose(cur, grad) if inner == 0 else t
        accepted = None
        for _ in range(opts.max_backtracks):
            cand = project_simplex(cur - t * grad)
            d = cand - cur
            if not np.any(d):
                break
            try:
                post = prob.posterior(cand, False)
            except np.linalg.LinAlgError:
                t *= opts.shrink
                continue
            val = post.quad + base + float(lin @ cand)
            if val <= cur_val + opts.armijo * float(grad @ d):
                accepted = (cand, val, post)
                break
            t *= opts.shrink
        if accepted is None:
            break
        cur, cur_val, post = accepted
        cur_g = post.g
        moved = True
    if not moved:
        return None, None
    return cur, prob.posterior(cur, True)
