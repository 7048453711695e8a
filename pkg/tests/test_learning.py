import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from stempredict.channel_sim import grf_sample
from stempredict.errors import InvalidArgument
from stempredict.learning import (
    GemFitOptions,
    Observations,
    StemFitOptions,
    _pack,
    build_grid,
    default_grid,
    fit_gem_kl,
    fit_stem_kl,
    log_likelihood,
    loglik_grad_stem,
    lr_value,
    project_simplex,
    surrogate_grad,
    surrogate_value,
    zeta2_closed_form,
)
from stempredict.stem_kernel import AntennaArray, Coords, GemHyper, StemHyper, correlation_matrix

EZ, EX = (0.0, 0.0, 1.0), (1.0, 0.0, 0.0)


def _obs(rng, n_el=4, n_t=2, noise_var=0.3, y=None):
    coords = AntennaArray.ula(n_el).coords(np.arange(n_t) * 0.625e-3)
    if y is None:
        y = rng.normal(size=len(coords)) + 1j * rng.normal(size=len(coords))
    return Observations(y, coords, noise_var)


def _small_grid():
    return build_grid((0.0, 8.0), [EZ, EX], (0.0, 10.0), [EZ])


def _hyper_fd(obs, h, eps=1e-6):
    out = []
    for k in range(7):
        def at(s):
            d, v, z = h.delta.copy(), h.v.copy(), h.zeta2
            if k < 3:
                d[k] += s
            elif k < 6:
                v[k - 3] += s
            else:
                z += s
            return log_likelihood(obs, StemHyper(z, d, v))
        out.append((at(eps) - at(-eps)) / (2 * eps))
    return np.array(out)


class TestObservations:
    def test_size_mismatch(self):
        coords = AntennaArray.ula(2).coords([0.0])
        with pytest.raises(InvalidArgument):
            Observations(np.ones(3), coords, 1.0)

    def test_noise_must_be_positive(self):
        coords = AntennaArray.ula(2).coords([0.0])
        with pytest.raises(InvalidArgument):
            Observations(np.ones(2), coords, 0.0)


class TestLogLikelihood:
    def test_zero_energy(self):
        rng = np.random.default_rng(0)
        obs = _obs(rng, noise_var=1.0)
        expected = -obs.size * math.log(math.pi) - np.sum(np.abs(obs.y) ** 2)
        assert log_likelihood(obs, StemHyper(0.0)) == pytest.approx(expected)

    def test_scalar_case(self):
        coords = Coords(np.zeros((1, 3)), np.zeros(1), (0, 1, 0))
        obs = Observations([1.0 + 2.0j], coords, 0.4)
        k = 2.5  # isotropic self-entry is zeta2 / 3 for a single polarization: zeta2 = 7.5
        expected = -math.log(k + 0.4) - math.log(math.pi) - 5.0 / (k + 0.4)
        assert log_likelihood(obs, StemHyper(7.5)) == pytest.approx(expected)

    def test_real_and_finite(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            obs = _obs(rng, n_el=int(rng.integers(1, 6)), n_t=int(rng.integers(1, 4)))
            h = StemHyper(rng.uniform(0.1, 4), rng.normal(size=3) * 10, rng.normal(size=3) * 10)
            assert math.isfinite(log_likelihood(obs, h))

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            obs = _obs(rng, n_el=int(rng.integers(2, 5)), n_t=2)
            h = StemHyper(rng.uniform(0.5, 2), rng.normal(size=3) * 5, rng.normal(size=3) * 8)
            g, fd = loglik_grad_stem(obs, h), _hyper_fd(obs, h)
            assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)

    def test_no_velocity_gradient_at_one_timestamp(self):
        rng = np.random.default_rng(3)
        obs = _obs(rng, n_el=6, n_t=1)
        g = loglik_grad_stem(obs, StemHyper(1.0, [0, 0, 4.0], [3.0, 0, 5.0]))
        np.testing.assert_allclose(g[3:6], 0.0, atol=1e-14)

    def test_energy_gradient_vanishes_at_maximum(self):
        rng = np.random.default_rng(4)
        obs = _obs(rng, n_el=4, n_t=2)
        base = StemHyper(1.0, [1.0, 0, 3.0], [2.0, 0, 4.0])
        res = minimize_scalar(lambda z: -log_likelihood(obs, base.replace(zeta2=z)),
                              bounds=(1e-3, 100.0), method="bounded", options={"xatol": 1e-10})
        g = loglik_grad_stem(obs, base.replace(zeta2=res.x))
        assert abs(g[6]) < 1e-6


class TestStemKl:
    def test_fit_at_least_as_good_as_truth(self):
        rng = np.random.default_rng(5)
        coords = AntennaArray.ula(16).coords(np.arange(4) * 0.625e-3)
        truth = StemHyper(2.0, [0.0, 0.0, 12.0], [0.0, 0.0, 10.0])
        noise_var = 0.01
        h = grf_sample(coords, truth, rng)[0]
        y = h + math.sqrt(noise_var / 2) * (rng.normal(size=h.size) + 1j * rng.normal(size=h.size))
        obs = Observations(y, coords, noise_var)
        assert obs.size == 64
        init = StemHyper(zeta2_closed_form(obs), [2.0, 0.0, 8.0], [0.0, 0.0, 6.0])
        rep = fit_stem_kl(obs, init, StemFitOptions(max_iter=300))
        assert rep.loglik_trace[-1] >= log_likelihood(obs, truth) - 1e-3

    def test_zero_iterations(self):
        rng = np.random.default_rng(6)
        obs = _obs(rng)
        init = StemHyper(1.0, [0, 0, 1.0])
        rep = fit_stem_kl(obs, init, StemFitOptions(max_iter=0))
        assert rep.hyper is init and not rep.converged and rep.iterations == 0

    def test_trace_monotone(self):
        rng = np.random.default_rng(7)
        obs = _obs(rng, n_el=6)
        rep = fit_stem_kl(obs, StemHyper(1.0, [0, 0, 1.0]), StemFitOptions(max_iter=40))
        assert np.all(np.diff(rep.loglik_trace) >= -1e-12)

    def test_step_capped(self):
        rng = np.random.default_rng(9)
        obs = _obs(rng)
        init = StemHyper(1.0, [0, 0, 1.0])
        rep = fit_stem_kl(obs, init, StemFitOptions(max_iter=1, step=1e4, max_move=0.5))
        move = np.linalg.norm(_pack(rep.hyper, 10.0) - _pack(init, 10.0))
        assert np.isfinite(rep.loglik_trace).all() and move <= 0.5 + 1e-9

    def test_huge_step_without_cap_backtracks(self):
        rng = np.random.default_rng(9)
        obs = _obs(rng)
        rep = fit_stem_kl(obs, StemHyper(1.0, [0, 0, 1.0]), StemFitOptions(max_iter=3, step=1e4, max_move=1e9))
        assert np.all(np.diff(rep.loglik_trace) >= -1e-12)

    def test_frozen_parameters_stay_put(self):
        rng = np.random.default_rng(8)
        obs = _obs(rng)
        free = (True, True, True, False, False, False, True)
        init = StemHyper(1.0, [0, 0, 1.0], [1.0, 2.0, 3.0])
        rep = fit_stem_kl(obs, init, StemFitOptions(max_iter=10, free=free))
        np.testing.assert_allclose(rep.hyper.v, init.v)


class TestClosedFormEnergy:
    def test_zero(self):
        coords = AntennaArray.ula(4).coords([0.0])
        assert zeta2_closed_form(Observations(np.zeros(4), coords, 1.0)) == 0.0

    def test_ones(self):
        coords = AntennaArray.ula(4).coords([0.0])
        assert zeta2_closed_form(Observations(np.ones(4), coords, 1.0)) == pytest.approx(1.0)

    def test_quadratic_scaling(self):
        rng = np.random.default_rng(9)
        obs = _obs(rng)
        scaled = Observations(3.0 * obs.y, obs.coords, obs.noise_var)
        assert zeta2_closed_form(scaled) == pytest.approx(9.0 * zeta2_closed_form(obs))


class TestGrid:
    def test_trivial(self):
        g = build_grid([5.0], [EZ], [2.0], [EX])
        assert g.n_kernels == 1 and g.weights[0] == 1.0

    def test_product_count(self):
        g = build_grid([5.0, 10.0], [EZ], [1.0, 2.0, 3.0], [EX])
        assert g.n_kernels == 6
        np.testing.assert_allclose(g.weights, 1 / 6)

    def test_zero_magnitudes_collapse(self):
        g = build_grid([0.0, 5.0], [EZ, EX], [0.0, 2.0], [EX, EZ])
        assert g.n_kernels == (1 + 2) * (1 + 2)

    def test_default_grid_on_simplex(self):
        g = default_grid()
        assert g.weights.min() >= 0 and g.weights.sum() == pytest.approx(1.0)

    def test_empty_factor(self):
        with pytest.raises(InvalidArgument):
            build_grid([], [EZ], [1.0], [EX])


class TestSimplexProjection:
    @pytest.mark.parametrize("c, expected", [((0.2, 0.8), (0.2, 0.8)), ((2.0, 0.0), (1.0, 0.0)),
                                             ((0.6, 0.6), (0.5, 0.5))])
    def test_examples(self, c, expected):
        np.testing.assert_allclose(project_simplex(c), expected)

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=20))
    @settings(max_examples=100, deadline=None)
    def test_properties(self, values):
        c = np.array(values)
        p = project_simplex(c)
        assert p.min() >= 0 and abs(p.sum() - 1) < 1e-9
        np.testing.assert_allclose(project_simplex(p), p, atol=1e-12)
        # no random simplex point is closer to c
        rng = np.random.default_rng(len(values))
        others = rng.dirichlet(np.ones(c.size), size=20)
        assert np.all(np.linalg.norm(others - c, axis=1) >= np.linalg.norm(p - c) - 1e-9)


class TestSurrogate:
    def test_tangency(self):
        rng = np.random.default_rng(10)
        obs, g = _obs(rng), _small_grid()
        c = rng.dirichlet(np.ones(g.n_kernels))
        gc = g.replace(weights=c)
        assert surrogate_value(obs, gc, c) == pytest.approx(lr_value(obs, gc), abs=1e-10)

    def test_majorization(self):
        rng = np.random.default_rng(11)
        obs, g = _obs(rng), _small_grid()
        c_ref = rng.dirichlet(np.ones(g.n_kernels))
        for _ in range(20):
            gc = g.replace(weights=rng.dirichlet(np.ones(g.n_kernels)))
            assert surrogate_value(obs, gc, c_ref) >= lr_value(obs, gc) - 1e-9

    def test_single_kernel_constant(self):
        rng = np.random.default_rng(12)
        obs = _obs(rng)
        g = build_grid([5.0], [EZ], [3.0], [EX])
        assert surrogate_value(obs, g, [1.0]) == pytest.approx(lr_value(obs, g))

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(13)
        obs, g = _obs(rng), _small_grid()
        c_ref = rng.dirichlet(np.ones(g.n_kernels))
        c = rng.dirichlet(np.ones(g.n_kernels))
        grad, imag = surrogate_grad(obs, g, c_ref, weights=c, return_imag=True)
        assert imag < 1e-12
        eps = 1e-6
        fd = np.array([(surrogate_value(obs, g, c_ref, weights=c + eps * e)
                        - surrogate_value(obs, g, c_ref, weights=c - eps * e)) / (2 * eps)
                       for e in np.eye(c.size)])
        assert np.linalg.norm(grad - fd) <= 1e-5 * np.linalg.norm(fd)

    def test_identical_subkernels_equal_gradient(self):
        rng = np.random.default_rng(14)
        obs = _obs(rng)
        d, v = [0, 0, 5.0], [4.0, 0, 0]
        g = GemHyper([d] * 3, [v] * 3, np.full(3, 1 / 3))
        grad = surrogate_grad(obs, g, [0.2, 0.3, 0.5])
        np.testing.assert_allclose(grad, grad[0], rtol=1e-12)


class TestGemKl:
    def test_single_kernel(self):
        rng = np.random.default_rng(15)
        obs = _obs(rng)
        rep = fit_gem_kl(obs, build_grid([5.0], [EZ], [3.0], [EX]))
        np.testing.assert_array_equal(rep.hyper.weights, [1.0])
        assert rep.hyper.zeta2 == pytest.approx(zeta2_closed_form(obs))

    def test_monotone_and_on_simplex(self):
        rng = np.random.default_rng(16)
        obs = _obs(rng, n_el=6)
        rep = fit_gem_kl(obs, _small_grid(), GemFitOptions(max_iter=50, tol=0.0))
        assert np.all(np.diff(rep.loglik_trace) <= 1e-9)
        c = rep.hyper.weights
        assert c.min() >= 0 and c.sum() == pytest.approx(1.0)

    def test_lag_stack_and_dense_stack_agree(self):
        from stempredict.stem_kernel import subkernel_stack

        rng = np.random.default_rng(17)
        obs = _obs(rng, n_el=4)
        grid = _small_grid()
        z2 = zeta2_closed_form(obs)
        dense = subkernel_stack(obs.coords, grid.replace(zeta2=z2))
        a = fit_gem_kl(obs, grid, GemFitOptions(max_iter=20))
        b = fit_gem_kl(obs, grid, GemFitOptions(max_iter=20), stack=dense)
        np.testing.assert_allclose(a.hyper.weights, b.hyper.weights, atol=1e-8)

    def test_recover_dominant_subkernel(self):
        rng = np.random.default_rng(18)
        coords = AntennaArray.ula(16).coords(np.arange(4) * 0.625e-3)
        grid = build_grid([20.0], [EZ, EX], [5.0], [EZ, (-1.0, 0, 0)])
        truth = grid.subkernel(2)
        h = grf_sample(coords, truth, rng)[0]
        obs = Observations(h + 0.07 * (rng.normal(size=h.size) + 1j * rng.normal(size=h.size)), coords, 0.01)
        rep = fit_gem_kl(obs, grid)
        assert int(np.argmax(rep.hyper.weights)) == 2

    def test_mixture_kernel_positive_semidefinite(self):
        g = default_grid(zeta2=2.0)
        P = AntennaArray.ula(8).coords([0.0, 0.625e-3])
        K = correlation_matrix(P, P, g)
        assert np.linalg.eigvalsh(K).min() > -1e-10
