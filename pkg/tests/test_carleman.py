import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degctrl import carleman, model
from degctrl.errors import IntegralDiverged, NoFeasibleParameters, OutOfDomain


def _coef(alpha, c=1.0):
    return model.coefficient_from_family(model.PowerCoefficient(alpha, c))


@pytest.mark.parametrize("alpha,c,expected", [(1.0, 1.0, 1.0), (0.5, 1.0, 2 / 3), (1.0, 2.0, 0.5), (1.5, 1.0, 2.0)])
def test_c0_closed_forms(alpha, c, expected):
    # int_0^1 x^(1 - alpha) / c dx = 1 / (c (2 - alpha))
    assert carleman.compute_c0(_coef(alpha, c)) == pytest.approx(expected, rel=1e-9)


def test_c0_diverges_at_k_two():
    with pytest.raises(IntegralDiverged):
        carleman.compute_c0(lambda x: np.asarray(x, dtype=float) ** 2)


def test_cumulative_integral_derivative():
    a = _coef(1.0)
    cum = carleman.CumulativeIntegral(a)
    x = np.linspace(0.05, 0.95, 19)
    np.testing.assert_allclose(cum(x), x, rtol=1e-9)
    assert cum(0.0) == 0.0


def test_sigma_shape():
    sig, cert = carleman.build_sigma((0.45, 0.55), (0.3, 0.8))
    assert sig(0.0) == pytest.approx(0.0, abs=1e-15) and sig(1.0) == pytest.approx(0.0, abs=1e-15)
    assert sig(0.5) == pytest.approx(1.0)
    assert cert.critical_point == 0.5
    assert cert.min_abs_slope_outside > 0
    assert cert.c2_jump < 1e-10
    x = np.linspace(0, 1, 2001)
    assert np.max(sig(x)) == pytest.approx(1.0)
    assert np.all(np.diff(sig(x[x <= 0.5])) > 0) and np.all(np.diff(sig(x[x >= 0.5])) < 0)


def test_sigma_derivative_matches_finite_difference():
    sig, _ = carleman.build_sigma((0.2, 0.3))
    x = np.linspace(0.01, 0.99, 50)
    h = 1e-6
    np.testing.assert_allclose(sig.derivative(x), (sig(x + h) - sig(x - h)) / (2 * h), atol=1e-6)
    np.testing.assert_allclose(sig.second_derivative(x), (sig.derivative(x + h) - sig.derivative(x - h)) / (2 * h),
                               rtol=1e-5, atol=1e-3)  # third derivative jumps at the peak


def test_sigma_domain_errors():
    with pytest.raises(ValueError):
        carleman.build_sigma((0.5, 0.4))
    with pytest.raises(ValueError):
        carleman.build_sigma((0.2, 0.9), (0.3, 0.8))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_parameters_satisfy_all_inequalities(n):
    sig, _ = carleman.build_sigma((0.5, 0.6))
    p = carleman.select_parameters(n, 1.0, sig)
    assert len(p.slacks) == 5
    assert min(p.slacks.values()) >= 1e-9
    b = p.bounds()
    assert p.c > b["c_min"] and p.rho > b["rho_min"] and b["lambda_lo"] < p.lambda_w < b["lambda_hi"]


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(1, 3))
def test_parameters_feasible_for_any_c0(c0, n):
    sig, _ = carleman.build_sigma((0.4, 0.6))
    p = carleman.select_parameters(n, c0, sig)
    assert min(p.slacks.values()) >= 1e-9


def test_parameter_argument_checks():
    sig, _ = carleman.build_sigma((0.4, 0.6))
    with pytest.raises(ValueError):
        carleman.select_parameters(0, 1.0, sig)
    with pytest.raises(ValueError):
        carleman.select_parameters(2, 0.0, sig)
    with pytest.raises(NoFeasibleParameters):
        carleman.select_parameters(2, 1.0, sig, min_slack=1e6)


def test_theta():
    assert carleman.theta(0.25, 0.5) == pytest.approx(1 / (0.25**8))
    assert carleman.theta(0.125, 0.5) / carleman.theta(0.25, 0.5) == pytest.approx(256 / 81)
    with pytest.raises(OutOfDomain):
        carleman.theta(0.0, 0.5)
    with pytest.raises(OutOfDomain):
        carleman.theta(0.6, 0.5)


def test_weights_signs_and_psi_slope(jordan):
    sig, _ = carleman.build_sigma((0.5, 0.6), jordan.omega)
    p = carleman.select_parameters(2, carleman.compute_c0(jordan.a), sig)
    rep = carleman.verify_weights(p, jordan.a, jordan.T)
    assert rep.passed, rep.failures
    assert rep.theta_ratio == pytest.approx(256 / 81)
    # psi_x a / x = lambda
    x = np.linspace(0.1, 0.9, 9)
    h = 1e-6
    w1 = carleman.weights_eval(p, jordan.a, 0.25, x + h, jordan.T).psi
    w0 = carleman.weights_eval(p, jordan.a, 0.25, x - h, jordan.T).psi
    np.testing.assert_allclose((w1 - w0) / (2 * h) * jordan.a(x) / x, p.lambda_w, rtol=1e-6)
