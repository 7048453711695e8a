"""Fast oracle and invariant checks runnable from an installed package."""

from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np

from .channel_sim import doppler_shift
from .learning import (
    Observations,
    build_grid,
    fit_gem_kl,
    log_likelihood,
    loglik_grad_stem,
    lr_value,
    surrogate_grad,
    surrogate_value,
)
from .numerics import sphere_quadrature_emcf
from .predictor import ar_fit, gpr_predict, mmse_estimate, pvec_fit_predict
from .stem_kernel import (
    AntennaArray,
    SpacetimePoint,
    StemHyper,
    correlation_matrix,
    stem_cf,
)


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def _rng():
    return np.random.default_rng(12345)


def _trace_identity():
    rng = _rng()
    worst = 0.0
    p = SpacetimePoint(np.zeros(3), 0.0)
    for i in range(20):
        delta = np.zeros(3) if i == 0 else rng.normal(size=3) * rng.uniform(0, 20)
        z2 = rng.uniform(0.1, 5)
        worst = max(worst, abs(np.trace(stem_cf(p, p, StemHyper(z2, delta))).real - z2))
    return worst < 1e-10, f"max |tr K - zeta2| = {worst:.1e}"


def _quadrature():
    rng = _rng()
    k0 = 2 * math.pi / 0.0857
    errs = []
    for _ in range(5):
        dx = rng.normal(size=3) * 0.05
        delta = rng.normal(size=3) * rng.uniform(0, 10)
        h = StemHyper(1.0, delta, np.zeros(3), k0)
        K = stem_cf(SpacetimePoint(dx, 0.0), SpacetimePoint(np.zeros(3), 0.0), h)
        Q = sphere_quadrature_emcf(k0 * dx, delta, 1.0, 20000)
        errs.append(np.linalg.norm(K - Q) / np.linalg.norm(Q))
    worst = max(errs)
    return worst < 1e-3, f"max relative Frobenius error {worst:.1e}"


def _small_obs(rng, n_el=4, n_t=2):
    coords = AntennaArray.ula(n_el, 0.0857 / 2).coords(np.arange(n_t) * 0.625e-3)
    y = rng.normal(size=len(coords)) + 1j * rng.normal(size=len(coords))
    return Observations(y, coords, 0.3)


def _stem_gradient():
    rng = _rng()
    obs = _small_obs(rng)
    h = StemHyper(1.3, [3.0, -1.0, 4.0], [2.0, 0.0, -5.0])
    g = loglik_grad_stem(obs, h)
    eps = 1e-6
    fd = []
    for k in range(7):
        def shifted(s):
            d, v, z = h.delta.copy(), h.v.copy(), h.zeta2
            if k < 3:
                d[k] += s
            elif k < 6:
                v[k - 3] += s
            else:
                z += s
            return log_likelihood(obs, StemHyper(z, d, v))
        fd.append((shifted(eps) - shifted(-eps)) / (2 * eps))
    fd = np.array(fd)
    err = float(np.linalg.norm(g - fd) / np.linalg.norm(fd))
    return err < 1e-5, f"relative error {err:.1e}"


def _grid():
    dirs = [(0, 0, 1), (1, 0, 0)]
    return build_grid((0.0, 8.0), dirs, (0.0, 10.0), [(0, 0, 1)], zeta2=1.0)


def _surrogate_gradient():
    rng = _rng()
    obs = _small_obs(rng)
    g = _grid()
    c_ref = np.full(g.n_kernels, 1.0 / g.n_kernels)
    c = rng.dirichlet(np.ones(g.n_kernels))
    grad = surrogate_grad(obs, g, c_ref, weights=c)
    eps = 1e-6
    fd = np.empty_like(grad)
    for k in range(c.size):
        e = np.zeros_like(c)
        e[k] = eps
        fd[k] = (surrogate_value(obs, g, c_ref, weights=c + e)
                 - surrogate_value(obs, g, c_ref, weights=c - e)) / (2 * eps)
    err = float(np.linalg.norm(grad - fd) / np.linalg.norm(fd))
    return err < 1e-5, f"relative error {err:.1e}"


def _mm_monotone():
    rng = _rng()
    obs = _small_obs(rng)
    rep = fit_gem_kl(obs, _grid())
    tr = np.asarray(rep.loglik_trace)
    rise = float(np.max(np.diff(tr))) if tr.size > 1 else 0.0
    return rise <= 1e-9, f"largest step change {rise:.1e} over {tr.size} values"


def _gpr_mmse():
    rng = _rng()
    obs = _small_obs(rng)
    h = StemHyper(1.0, [0.0, 0.0, 5.0], [0.0, 0.0, 3.0])
    mean = gpr_predict(obs, obs.coords, h, return_cov=False).mean
    ref = mmse_estimate(obs.y, correlation_matrix(obs.coords, obs.coords, h), obs.noise_var)
    err = float(np.max(np.abs(mean - ref)))
    return err < 1e-10, f"max deviation {err:.1e}"


def _baselines():
    a = 0.9 * np.exp(0.4j)
    h = a ** np.arange(8) * (1 + 0.5j)
    err_ar = abs(ar_fit(h, 1)[0, 0] - a)
    t = np.arange(12)
    H = (np.exp(0.3j * t) + 0.5 * np.exp(-1.1j * t))[:, None] * np.ones((1, 3))
    pred = pvec_fit_predict(H[:8], 2, 4)
    err_pv = float(np.sum(np.abs(pred - H[8:]) ** 2) / np.sum(np.abs(H[8:]) ** 2))
    return err_ar < 1e-8 and err_pv < 1e-8, f"AR coefficient error {err_ar:.1e}, PVEC NMSE {err_pv:.1e}"


def _doppler():
    a, b = doppler_shift(10, 0.0857), doppler_shift(20, 0.0857)
    ok = abs(a - 116.69) < 0.01 and abs(b - 233.37) < 0.01
    return ok, f"{a:.2f} Hz, {b:.2f} Hz"


def _lr_finite():
    rng = _rng()
    obs = _small_obs(rng)
    val = lr_value(obs, _grid())
    return math.isfinite(val), f"l_r at uniform weights {val:.3f}"


CHECKS: tuple[tuple[str, Callable[[], tuple[bool, str]]], ...] = (
    ("kernel trace equals channel energy", _trace_identity),
    ("closed form matches sphere quadrature", _quadrature),
    ("log-likelihood gradient vs finite differences", _stem_gradient),
    ("surrogate gradient vs finite differences", _surrogate_gradient),
    ("MM objective non-increasing", _mm_monotone),
    ("GPR equals MMSE at observed points", _gpr_mmse),
    ("AR and PVEC exact on noiseless models", _baselines),
    ("Doppler helper values", _doppler),
    ("mixture objective finite", _lr_finite),
)


def run_selftest() -> list[CheckResult]:
    out = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # report, never abort the suite
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail))
    return out
