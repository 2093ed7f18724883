import numpy as np
import pytest

from degctrl import hum, semilinear, spectral
from degctrl.dynamics import TimeGrid
from degctrl.errors import NoConvergence, RankLostAtIterate, ValidationError


@pytest.fixture(scope="module")
def setup(jordan):
    basis = spectral.compute_basis(jordan, N=1000, M=8)
    grid = TimeGrid(64, jordan.T)
    Y0 = np.zeros((8, 2))
    Y0[0] = 1.0
    return jordan, basis, grid, Y0


def test_nonlinearity_validation():
    with pytest.raises(ValidationError):
        semilinear.NonlinearitySpec(lambda y: np.asarray(y) + 1.0, lambda y: np.eye(2), 1.0, 2)
    with pytest.raises(ValidationError):
        semilinear.NonlinearitySpec(lambda y: np.sin(np.asarray(y)), lambda y: 2 * np.eye(2), 1.0, 2)
    F = semilinear.sine_coupling(0.1)
    assert F.lipschitz == 0.1


def test_linearize_mean_value():
    F = semilinear.sine_coupling(0.3)
    y = np.array([0.7, -1.1])
    A = semilinear.linearize(F, y)
    np.testing.assert_allclose(A @ y, F.F(y), rtol=1e-12)


def test_zero_nonlinearity_matches_linear_bitwise(setup):
    spec, basis, grid, Y0 = setup
    hist, fp = semilinear.fixed_point_control(spec, basis, semilinear.zero_nonlinearity(2), Y0, 1e-3, grid)
    lin = hum.minimize_dual(spec, basis, 1e-3, Y0, grid)
    assert len(hist) == 1 and fp.converged_by == "coupling repeated"
    assert np.array_equal(fp.result.state.coeffs, lin.state.coeffs)
    assert np.array_equal(fp.result.control.values, lin.control.values)


def test_linear_nonlinearity_is_absorbed(setup):
    spec, basis, grid, Y0 = setup
    A0 = np.array([[0.0, 0.2], [0.0, 0.0]])
    _, fp = semilinear.fixed_point_control(spec, basis, semilinear.linear_nonlinearity(A0), Y0, 1e-3, grid)
    np.testing.assert_allclose(fp.coupling, np.asarray(spec.A) + A0, atol=1e-14)


def test_sine_coupling_converges(setup):
    spec, basis, grid, Y0 = setup
    hist, fp = semilinear.fixed_point_control(spec, basis, semilinear.sine_coupling(0.1), Y0, 1e-3, grid)
    lin = hum.minimize_dual(spec, basis, 1e-3, Y0, grid)
    assert len(hist) <= 20
    assert fp.result.terminal_norm <= 2 * lin.terminal_norm
    assert fp.semilinear_terminal_norm <= 2 * lin.terminal_norm
    assert all(h.kalman_verdict == "pass" for h in hist)


def test_strong_nonlinearity_reports_history(setup):
    spec, basis, grid, _ = setup
    Y0 = np.zeros((8, 2))
    Y0[0] = 1.0
    with pytest.raises(NoConvergence) as exc:
        semilinear.fixed_point_control(spec, basis, semilinear.sine_coupling(50.0), Y0, 1e-3, grid,
                                       semilinear.FixedPointOptions(max_outer=6))
    assert len(exc.value.history) == 6
    assert "monoton" in str(exc.value)


def test_rank_loss_is_reported(rankdef, rankdef_basis8, grid64):
    Y0 = np.ones((8, 2))
    with pytest.raises(RankLostAtIterate) as exc:
        semilinear.fixed_point_control(rankdef, rankdef_basis8, semilinear.zero_nonlinearity(2), Y0, 1e-3, grid64)
    assert exc.value.iterate == 1


def test_dimension_check(setup):
    spec, basis, grid, Y0 = setup
    with pytest.raises(ValidationError):
        semilinear.fixed_point_control(spec, basis, semilinear.zero_nonlinearity(3), Y0, 1e-3, grid)


def test_simulation_reduces_to_linear(setup):
    spec, basis, grid, Y0 = setup
    traj = semilinear.simulate_semilinear(spec, basis, semilinear.zero_nonlinearity(2), Y0, grid)
    free = hum.free_terminal(spec, basis, Y0, grid)
    np.testing.assert_allclose(traj.terminal, free, rtol=1e-13, atol=1e-16)


def test_two_phase(setup):
    spec, basis, grid, Y0 = setup
    lin = hum.minimize_dual(spec, basis, 1e-3, Y0, grid)
    tp = semilinear.two_phase_control(spec, basis, semilinear.sine_coupling(0.1), Y0, 0.1, 1e-3, grid)
    assert tp.k0 == round(0.1 / grid.dt) and tp.t0 == pytest.approx(tp.k0 * grid.dt)
    assert tp.state.coeffs.shape == (8, grid.L + 1, 2)
    assert not np.any(tp.control.values[: tp.k0])
    assert tp.terminal_norm <= 2 * lin.terminal_norm
    with pytest.raises(ValueError):
        semilinear.two_phase_control(spec, basis, semilinear.sine_coupling(0.1), Y0, 0.3, 1e-3, grid)


def test_xt_norm():
    c = np.zeros((2, 3, 1))
    c[0, :, 0] = 1.0
    assert semilinear.xt_norm(c, np.array([2.0, 5.0]), 0.5) == pytest.approx(np.sqrt(1.0 + 2.0 * 1.0))
