import cmath
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stempredict.errors import InvalidArgument, NotPositiveDefinite
from stempredict.numerics import (
    complex_pseudonorm,
    fibonacci_sphere,
    hermitian_logdet_and_solve,
    principal_sqrt,
    reduced_bessel,
    sinhc,
    sphere_quadrature_emcf,
    spherical_bessel_j,
)


def _mp_spherical_jn(n, z):
    # j_n(-z) = (-1)^n j_n(z) keeps the half-integer Bessel form off its branch cut
    sign = 1
    if z.real < 0 or (z.real == 0 and z.imag < 0):
        z, sign = -z, (-1) ** n
    with mpmath.workdps(40):
        zz = mpmath.mpc(z)
        if zz == 0:
            return 1.0 if n == 0 else 0.0
        return sign * complex(mpmath.sqrt(mpmath.pi / (2 * zz)) * mpmath.besselj(n + 0.5, zz))


class TestSphericalBessel:
    def test_values_at_zero(self):
        assert spherical_bessel_j(0, 0) == pytest.approx(1.0)
        assert spherical_bessel_j(1, 0) == 0
        assert spherical_bessel_j(2, 0) == 0

    def test_zero_of_j0(self):
        assert abs(spherical_bessel_j(0, math.pi)) < 1e-15

    def test_imaginary_argument_is_sinhc(self):
        assert spherical_bessel_j(0, 2j) == pytest.approx(math.sinh(2) / 2, rel=1e-13)
        assert math.sinh(2) / 2 == pytest.approx(1.8134302039, abs=1e-10)

    def test_recurrence(self):
        z = 1.7 + 0.3j
        lhs = spherical_bessel_j(0, z) + spherical_bessel_j(2, z)
        assert lhs == pytest.approx(3 * spherical_bessel_j(1, z) / z, rel=1e-13)

    @given(st.floats(-40, 40), st.floats(-8, 8), st.integers(0, 3))
    @settings(max_examples=200, deadline=None)
    def test_matches_arbitrary_precision(self, re, im, n):
        z = complex(re, im)
        ref = _mp_spherical_jn(n, z)
        got = spherical_bessel_j(n, z)
        assert abs(got - ref) <= 1e-11 * max(1.0, abs(ref))

    def test_reduced_series_near_origin(self):
        # j_n(r) / r^n on a tiny argument uses the series, not the closed form
        s = np.array([1e-12 + 0j, 1e-6 + 1e-6j])
        J0, J1, J2, J3 = reduced_bessel(s)
        np.testing.assert_allclose(J0, 1.0, atol=1e-6)
        np.testing.assert_allclose(J1, 1 / 3, atol=1e-6)
        np.testing.assert_allclose(J2, 1 / 15, atol=1e-6)
        np.testing.assert_allclose(J3, 1 / 105, atol=1e-6)

    def test_reduced_continuous_across_switch(self):
        r = np.array([0.09, 0.11, 0.5, 2.0, -3.0 + 1.0j]) ** 2
        J = reduced_bessel(r)
        for n in range(4):
            root = np.sqrt(r.astype(complex))
            ref = [_mp_spherical_jn(n, complex(z)) / complex(z) ** n for z in root]
            np.testing.assert_allclose(J[n], ref, rtol=1e-10)


class TestPseudonorm:
    def test_real_unit(self):
        assert complex_pseudonorm([1, 0, 0]) == pytest.approx(1.0)

    def test_pure_imaginary(self):
        assert complex_pseudonorm([0, 0, -2.5j]) == pytest.approx(2.5j)

    def test_negative_square(self):
        assert complex_pseudonorm([3, 4j, 0]) == pytest.approx(1j * math.sqrt(7))

    def test_principal_branch(self):
        for z in (-4.0, -1 - 1e-20j, 2 + 3j):
            assert principal_sqrt(z) == pytest.approx(cmath.sqrt(z))
            assert principal_sqrt(z).real >= 0


def test_sinhc():
    assert sinhc(0.0) == 1.0
    assert sinhc(1e-9) == pytest.approx(1.0)
    assert sinhc(3.0) == pytest.approx(math.sinh(3) / 3)


class TestHermitianSolve:
    def test_identity(self):
        b = np.array([1.0, 2.0, 3.0])
        res = hermitian_logdet_and_solve(np.eye(3), b)
        assert res.logdet == pytest.approx(0.0)
        np.testing.assert_allclose(res.x, b)

    def test_scaled_identity(self):
        res = hermitian_logdet_and_solve(2 * np.eye(2), np.eye(2))
        assert res.logdet == pytest.approx(2 * math.log(2))
        np.testing.assert_allclose(res.x, 0.5 * np.eye(2))

    def test_random_hermitian_residual(self):
        rng = np.random.default_rng(3)
        A = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        K = A @ A.conj().T + 0.5 * np.eye(8)
        B = rng.normal(size=(8, 3)) + 1j * rng.normal(size=(8, 3))
        res = hermitian_logdet_and_solve(K, B)
        assert np.linalg.norm(K @ res.x - B) / np.linalg.norm(B) < 1e-10
        assert res.logdet == pytest.approx(np.linalg.slogdet(K)[1], rel=1e-12)
        assert res.jitter == 0

    def test_jitter_rescues_semidefinite(self):
        v = np.array([1.0, 1.0j, 0.5])
        K = np.outer(v, v.conj())  # rank one
        res = hermitian_logdet_and_solve(K, np.ones(3))
        assert res.jitter > 0

    def test_indefinite_raises(self):
        with pytest.raises(NotPositiveDefinite):
            hermitian_logdet_and_solve(np.diag([1.0, -1.0]), np.ones(2))


class TestSphereQuadrature:
    def test_fibonacci_points_are_unit(self):
        pts = fibonacci_sphere(500)
        np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0)
        assert np.linalg.norm(pts.mean(axis=0)) < 1e-2

    def test_isotropic_zero_lag(self):
        Q = sphere_quadrature_emcf(np.zeros(3), np.zeros(3), 1.0, 10000)
        np.testing.assert_allclose(Q, np.eye(3) / 3, atol=1e-3)

    @pytest.mark.parametrize("delta", [(0, 0, 0), (0, 0, 4.0), (3.0, -1.0, 2.0)])
    def test_zero_lag_trace(self, delta):
        for n in (10000, 20000):
            Q = sphere_quadrature_emcf(np.zeros(3), np.array(delta), 1.0, n)
            assert abs(np.trace(Q) - 1.0) < 1e-3

    def test_resolution_convergence(self):
        shift, delta = np.array([2.0, -1.0, 0.5]), np.array([0.0, 1.0, 3.0])
        a = sphere_quadrature_emcf(shift, delta, 1.0, 10000)
        b = sphere_quadrature_emcf(shift, delta, 1.0, 20000)
        assert np.linalg.norm(a - b) < 1e-4

    def test_too_few_points(self):
        with pytest.raises(InvalidArgument):
            sphere_quadrature_emcf(np.zeros(3), np.zeros(3), 1.0, 10)
