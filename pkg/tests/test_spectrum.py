import json
import math

import numpy as np
import pytest
from numpy.polynomial import polynomial as P
from numpy.testing import assert_allclose
from scipy import integrate

from ovilab.errors import InputError, SpectrumAccuracyError
from ovilab.kernels import DecayClass, sphere_normalize
from ovilab.spectrum import (SphericalSpectrum, area_ratio, beta_fixed_point, bt_schedule,
                             covering_bound, funk_hecke_eigenvalue, funk_hecke_quadrature,
                             gamma_bound, harmonic_multiplicity, legendre_sphere,
                             misspecification_proxy, ntk_closed_form, ntk_decay, ntk_kfun,
                             parse_activation, poly_exponents, relu_ks, relu_ks_monte_carlo,
                             rodrigues_eigenvalue, sphere_area, spherical_spectrum)


def _fh_scipy(kfun, d, j):
    """Funk-Hecke integral by adaptive quadrature (independent of Gauss-Jacobi)."""
    f = lambda u: kfun(u) * legendre_sphere(j, u, d) * (1 - u * u) ** ((d - 3) / 2)  # noqa: E731
    val, _ = integrate.quad(f, -1.0, 1.0, limit=200, epsabs=1e-13, epsrel=1e-12)
    return sphere_area(d - 1) / sphere_area(d) * val


def test_multiplicity_examples():
    assert harmonic_multiplicity(3, 0) == 1
    assert harmonic_multiplicity(7, 0) == 1
    assert harmonic_multiplicity(3, 1) == 3
    assert harmonic_multiplicity(3, 2) == 5
    assert harmonic_multiplicity(2, 5) == 2


def test_multiplicity_matches_polynomial_space_dimension():
    # N(d, j) = dim P_j - dim P_{j-2} for homogeneous polynomials in d variables
    for d in range(2, 8):
        for j in range(2, 10):
            hom = lambda k: math.comb(k + d - 1, d - 1)  # noqa: E731
            assert harmonic_multiplicity(d, j) == hom(j) - hom(j - 2)


def test_multiplicity_guards():
    with pytest.raises(InputError):
        harmonic_multiplicity(1, 0)
    with pytest.raises(OverflowError):
        harmonic_multiplicity(400, 400)


def test_area_ratio():
    for d in (3, 4, 7, 12):
        assert_allclose(area_ratio(d), sphere_area(d - 1) / sphere_area(d), rtol=1e-12)


def test_legendre_normalization():
    for d in (3, 5):
        for j in range(6):
            assert_allclose(legendre_sphere(j, 1.0, d), 1.0)
    assert_allclose(legendre_sphere(2, 0.3, 3), 0.5 * (3 * 0.09 - 1))


@pytest.mark.parametrize("d", [3, 4, 5])
def test_quadratic_ntk_spectrum(d):
    k = ntk_kfun("quadratic", d)
    rho = [funk_hecke_eigenvalue(k, d, j) for j in range(8)]
    assert abs(rho[1]) < 1e-12
    assert all(abs(r) < 1e-12 for r in rho[3:])
    assert rho[0] > 0 and rho[2] > 0
    assert_allclose(rho[0], _fh_scipy(k, d, 0), rtol=1e-10)
    assert_allclose(rho[2], _fh_scipy(k, d, 2), rtol=1e-10)
    spec = spherical_spectrum(k, d, 8)
    assert spec.nonzero_count() == d * (d + 1) // 2
    assert_allclose(spec.trace(), 4.0 / d, rtol=1e-10)


def test_routes_agree_on_polynomials(rng):
    for d in (3, 4, 6):
        for deg in range(0, 9):
            k = P.Polynomial(rng.uniform(-1, 1, deg + 1))
            for j in range(0, deg + 2):
                a = funk_hecke_quadrature(k, d, j)[0]
                b = rodrigues_eigenvalue(k, d, j)
                assert abs(a - b) < 1e-6 * max(1.0, abs(a))


def test_sine_spectrum_decays():
    k = ntk_kfun("sine", 3)
    spec = spherical_spectrum(k, 3, 6)
    rho = [r for _, r, _ in spec.eigenvalues]
    assert all(r > 0 for r in rho)
    assert all(rho[j + 1] < rho[j] for j in range(1, 6))
    assert_allclose(spec.trace() + sum(
        harmonic_multiplicity(3, j) * funk_hecke_eigenvalue(k, 3, j) for j in range(7, 40)), 1.0,
        atol=1e-8)
    assert_allclose(rho[3], _fh_scipy(k, 3, 3), rtol=1e-9)


def test_sine_routes_agree():
    k = ntk_kfun("sine", 4)
    for j in range(6):
        assert abs(funk_hecke_eigenvalue(k, 4, j, cross_check=True) - _fh_scipy(k, 4, j)) < 1e-9


def test_cross_check_detects_disagreement():
    # a kink at 0 defeats the Chebyshev derivative route at high degree
    with pytest.raises(SpectrumAccuracyError):
        funk_hecke_eigenvalue(lambda u: np.abs(u) ** 0.5, 3, 6, cross_check=True)


def test_spectrum_json_round_trip():
    spec = spherical_spectrum(ntk_kfun("quadratic", 3), 3, 4, kernel="ntk_quadratic")
    data = json.loads(spec.to_json())
    assert set(data) == {"d", "kernel", "eigenvalues", "quadrature_order"}
    back = SphericalSpectrum.from_dict(data)
    assert back.nonzero_count() == 6
    assert [m for _, _, m in back.eigenvalues] == [1, 3, 5, 7, 9]


def test_closed_form_values():
    z = np.array([[1.0, 0.0]])
    assert_allclose(ntk_closed_form("quadratic", 2)(z, z), [[2.0]])
    z3 = np.array([[0.0, 1.0, 0.0]])
    assert_allclose(ntk_closed_form("sine", 3)(z3, z3), [[1.0]])
    assert_allclose(ntk_closed_form("sine", 3)(z3, -z3), [[-math.exp(-2.0)]], rtol=1e-12)


def test_relu_power_quadrature_vs_monte_carlo():
    for d, s in ((3, 1), (4, 2)):
        for u in (-0.5, 0.2, 0.9):
            mean, se = relu_ks_monte_carlo(u, d, s, n_samples=400_000, seed=1)
            assert abs(float(relu_ks(u, d, s)) - mean) < 4 * se + 1e-12


def test_relu_power_rejects_small_exponent():
    with pytest.raises(InputError):
        parse_activation("relu_power:0.5")
    with pytest.raises(InputError):
        ntk_closed_form("tanh", 3)


def test_relu_power_kernel_psd(rng):
    X = sphere_normalize(rng.standard_normal((40, 3)))
    K = ntk_closed_form("relu_power:1", 3)(X, X)
    assert np.linalg.eigvalsh(0.5 * (K + K.T)).min() > -1e-8


def test_decay_classes():
    assert ntk_decay("quadratic", 4).gamma == 10
    assert ntk_decay("sine", 4).kind == "exponential"
    relu = ntk_decay("relu_power:2", 5)
    assert_allclose(relu.gamma, 1 + 5 / 4)
    assert_allclose(relu.tau, 3 / 18)


def test_gamma_bound_examples():
    assert_allclose(float(gamma_bound(DecayClass.finite(4), math.e)), 4.0)
    assert float(gamma_bound(DecayClass.finite(4), 1)) == 0.0
    assert float(gamma_bound(DecayClass.exponential(2.0), 1)) == 0.0
    assert_allclose(float(gamma_bound(DecayClass.exponential(1.0), math.e ** 2)), 4.0)
    assert not gamma_bound(DecayClass.polynomial(1.5, d=2), 100).feasible
    assert gamma_bound(DecayClass.polynomial(3.0, d=2), 100).feasible


def test_covering_bound_examples():
    eps = 0.1
    assert_allclose(float(covering_bound(DecayClass.finite(1), eps, eps, eps)), 2.0)
    assert_allclose(float(covering_bound(DecayClass.exponential(1.0), math.e * eps, math.e * eps, eps)),
                    12.0)
    assert not covering_bound(DecayClass.polynomial(1.5, tau=0.4, d=2), 1.0, 1.0, 0.1).feasible
    with pytest.raises(InputError):
        covering_bound(DecayClass.finite(1), 1.0, 1.0, 0.5)


def test_covering_bound_monotone_in_eps():
    for decay in (DecayClass.finite(3), DecayClass.exponential(0.5), DecayClass.polynomial(6.0, d=2)):
        vals = [float(covering_bound(decay, 2.0, 3.0, e)) for e in np.linspace(0.01, 0.36, 30)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_bt_schedule_examples():
    assert_allclose(float(bt_schedule(DecayClass.finite(4), 2, 100)), 8 * math.sqrt(math.log(800)),
                    rtol=1e-12)
    assert_allclose(float(bt_schedule(DecayClass.exponential(1.0), 1, math.e)), 1.0)
    kappa, xi = poly_exponents(DecayClass.polynomial(10.0, d=1))
    assert_allclose(xi, 1 / 11)
    assert_allclose(kappa, 2 / 7)
    sched = bt_schedule(DecayClass.polynomial(10.0, d=1), 2, 100)
    assert sched.kappa == kappa and sched.feasible
    assert_allclose(sched.value, 2 * math.log(200) * 100 ** (2 / 7))
    assert not bt_schedule(DecayClass.polynomial(4.0, d=3), 2, 100).feasible
    with pytest.raises(InputError):
        bt_schedule(DecayClass.finite(4), 2, 100, C_b=0.0)


@pytest.mark.parametrize("decay", [DecayClass.finite(6), DecayClass.exponential(0.5),
                                   DecayClass.polynomial(10.0, d=2)])
def test_schedules_monotone_in_T(decay):
    Ts = [1, 2, 5, 10, 100, 1000, 10 ** 5]
    b = [float(bt_schedule(decay, 3, T)) for T in Ts]
    g = [float(gamma_bound(decay, T)) for T in Ts]
    assert all(y >= x for x, y in zip(b, b[1:]))
    assert all(y >= x for x, y in zip(g, g[1:]))


def test_beta_fixed_point():
    B = beta_fixed_point(DecayClass.finite(6), 3, 500)
    assert B.feasible and np.isfinite(B.value)
    # the returned value solves the fixed-point equation it iterates
    B2 = beta_fixed_point(DecayClass.finite(6), 3, 500, max_iter=1000, tol=1e-13)
    assert_allclose(B.value, B2.value, rtol=1e-8)
    assert float(beta_fixed_point(DecayClass.finite(6), 3, 500, neural=True, lam=2.0)) > 0


def test_misspecification_proxy():
    assert_allclose(misspecification_proxy(1, 1, math.e), math.e ** (-1 / 12))
    assert misspecification_proxy(100, 2, 4096) > misspecification_proxy(100, 2, 8192)
