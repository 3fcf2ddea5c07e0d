import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smve.errors import InvalidBias, InvalidInput, OrderTooLarge, TruncationWarning
from smve.estimators import constant, hard_threshold, least_squares
from smve.mc import McConfig, simulate
from smve.model import SparseProblem, build_model
from smve.ssnm_exact import (
    DiagonalBiasSpec,
    barankin_diag,
    barankin_from_estimator,
    hermite,
    hermite_orthonormal,
    is_first_case,
    lmv_estimate,
    ml_coefficients,
    phi_factor,
    psi_factor,
    support_order,
)

PHI_10DB_S5 = 0.00022697903821194092741  # 1 - (1 - e^-10)^5, 40 digits
HT2_SECOND_MOMENT_AT_1 = 1.0503543258955423485


def test_hermite_low_orders():
    x = np.linspace(-2, 2, 5)
    assert np.allclose(hermite(0, x), 1)
    assert np.allclose(hermite(3, x), x**3 - 3 * x)
    assert np.allclose(hermite(4, x), x**4 - 6 * x**2 + 3)
    with pytest.raises(OrderTooLarge):
        hermite(501, 0.0)
    with pytest.raises(InvalidInput):
        hermite(-1, 0.0)


def test_orthonormal_hermite_is_orthonormal():
    u, w = np.polynomial.hermite_e.hermegauss(60)
    w = w / np.sqrt(2 * np.pi)
    h = hermite_orthonormal(20, u)
    assert np.allclose((h * w) @ h.T, np.eye(21), atol=1e-10)


def test_first_case_and_ordering():
    x0 = np.array([0.0, 2.0, -3.0, 0.0, 2.0])
    assert is_first_case(x0, 1, 3)
    assert not is_first_case(x0, 0, 3)
    assert is_first_case(x0, 0, 4)
    assert np.array_equal(support_order(x0), [2, 1, 4])


def test_phi_reference_and_order_independence():
    x0 = np.zeros(50)
    x0[:5] = math.sqrt(10.0)
    assert phi_factor(x0, 7, 5, 1.0) == pytest.approx(PHI_10DB_S5, rel=1e-12)
    assert phi_factor(x0, 2, 5, 1.0) == 1.0
    x1 = np.array([0.3, -1.2, 0.7, 0.0])
    ref = 1 - np.prod(1 - np.exp(-x1[:3] ** 2 / 0.5))
    assert phi_factor(x1, 3, 3, 0.5) == pytest.approx(ref, rel=1e-14)


def test_psi_mean_is_phi(rng):
    x0 = np.array([1.0, -0.5, 0.0, 0.0])
    S, s2 = 2, 0.8
    y = x0 + math.sqrt(s2) * rng.standard_normal((400_000, 4))
    psi = psi_factor(y, x0, 3, S, s2)
    assert psi.mean() == pytest.approx(phi_factor(x0, 3, S, s2), rel=5e-3)
    # psi ignores y_k
    y2 = y.copy()
    y2[:, 3] += 5.0
    assert np.array_equal(psi_factor(y2, x0, 3, S, s2), psi)


def test_barankin_ls_equals_sigma2_in_first_case():
    x0 = np.array([1.0, 0.0, 0.0])
    r = barankin_from_estimator(least_squares(), x0, 1, 2, 0.6)
    assert r.value == 0.6 and r.phi == 1.0


def test_barankin_constant_estimator_is_zero():
    x0 = np.array([1.0, 2.0, 0.0])
    r = barankin_from_estimator(constant(0.7), x0, 2, 2, 1.0)
    assert r.value == 0.0
    # scaling the full second moment would go negative here
    assert r.naive_value < 0


def test_barankin_diag_from_coefficients():
    # gamma(x) = x around x0k = 0.5: m = [0.5, 1]
    spec = DiagonalBiasSpec([0.5, 1.0])
    x0 = np.array([2.0, 0.0])
    r = barankin_diag(spec, x0, 1, 1, 1.0)
    assert r.value == pytest.approx(phi_factor(x0, 1, 1, 1.0) * 1.0)
    assert spec.B_c(1.0) == pytest.approx(1.25)


def test_growing_coefficients_are_rejected():
    m = [math.sqrt(math.factorial(l)) * 2.0**l for l in range(12)]
    with pytest.raises(InvalidBias):
        barankin_diag(DiagonalBiasSpec(m), np.array([1.0, 0.0]), 0, 1, 1.0)
    with pytest.raises(InvalidBias):
        DiagonalBiasSpec([])


def test_ml_coefficients_ls_exact():
    spec = ml_coefficients(least_squares(), 0.7, 1.0)
    assert spec.m[0] == pytest.approx(0.7, abs=1e-12)
    assert spec.m[1] == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(spec.m[2:10])) < 1e-9
    assert spec.converged


def test_ml_coefficients_ht_truncates_with_warning():
    with pytest.warns(TruncationWarning):
        spec = ml_coefficients(hard_threshold(2.0), 1.0, 1.0)
    assert spec.L_max == 256 and not spec.converged
    assert spec.m[0] == pytest.approx(hard_threshold(2.0).moments(1.0, 1.0)[0], rel=1e-10)
    # partial sums increase towards the exact second moment from below
    assert spec.B_c(1.0) < HT2_SECOND_MOMENT_AT_1
    assert spec.B_c(1.0) > 0.97 * HT2_SECOND_MOMENT_AT_1


def test_ml_coefficients_smooth_mean_converges():
    # the derivative of the mean of HT matches m_1
    ht = hard_threshold(1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        spec = ml_coefficients(ht, 0.4, 0.5, L_max=40)
    assert spec.m[1] == pytest.approx(ht.mean_derivative(0.4, 0.5), rel=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(-3.0, 3.0), st.floats(0.3, 2.0))
def test_lmv_exact_moments_by_quadrature(T, a, s2):
    # one support entry, k off the support, S = 1: LMV variance equals M exactly
    ht = hard_threshold(T)
    x0 = np.array([a, 0.0])
    r = barankin_from_estimator(ht, x0, 1, 1, s2)
    u, w = np.polynomial.hermite_e.hermegauss(120)
    w = w / np.sqrt(2 * np.pi)
    y0 = a + math.sqrt(s2) * u
    psi = psi_factor(np.stack([y0, np.zeros_like(y0)], axis=1), x0, 1, 1, s2)
    e_psi = w @ psi
    e_psi2 = w @ psi**2
    g0, var = ht.moments(0.0, s2)
    # x_hat_k and psi are independent, gamma0 = 0 for an odd estimator
    lmv_var = (var + g0 * g0) * e_psi2 - (g0 * e_psi) ** 2
    assert e_psi == pytest.approx(r.phi, rel=1e-8, abs=1e-300)
    assert lmv_var == pytest.approx(r.value, rel=1e-8, abs=1e-300)


def test_lmv_constant_estimator_keeps_mean(rng):
    x0 = np.array([1.2, 0.0, 0.0])
    est = constant(0.4)
    y = x0 + rng.standard_normal((1000, 3))
    out = lmv_estimate(est, y, x0, 2, 1, 1.0)
    assert np.all(out == 0.4)


def test_lmv_simulation_small():
    N, S, s2 = 6, 2, 1.0
    x0 = np.array([1.5, -1.0, 0, 0, 0, 0])
    ht = hard_threshold(1.0)
    p = SparseProblem(build_model(np.eye(N), s2), S=S)
    fn = lambda Y: np.stack([lmv_estimate(ht, Y, x0, k, S, s2) for k in range(N)], axis=1)
    mom = simulate(fn, p, x0, McConfig(seed=3, trials=60_000))
    M = np.array([barankin_from_estimator(ht, x0, k, S, s2).value for k in range(N)])
    mean = np.array([ht.moments(float(x0[k]), s2)[0] for k in range(N)])
    assert np.all(np.abs(mom.mean - mean) <= 4 * mom.se_mean)
    assert abs(mom.total_variance - M.sum()) <= 4 * mom.se_total_variance


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_phi_sum_product_ignores_ordering(seed):
    from smve.ssnm_exact import _sum_product

    g = np.random.default_rng(seed)
    p = np.exp(-g.uniform(0, 4, size=g.integers(1, 8)) ** 2)
    ref = _sum_product(p)
    assert _sum_product(g.permutation(p)) == pytest.approx(ref, rel=1e-13)
    assert ref == pytest.approx(1 - np.prod(1 - p), rel=1e-13)
