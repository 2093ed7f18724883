import numpy as np
import pytest

from degctrl import dynamics, model, spectral
from degctrl.dynamics import TimeGrid
from degctrl.errors import DimensionMismatch


def _random_control(prop, rng):
    return rng.standard_normal((prop.grid.L, prop.injection.P, prop.spec.m))


def test_duality_on_random_triples(jordan, jordan_basis8, grid64, rng):
    prop = dynamics.propagator(jordan, jordan_basis8, grid64)
    for _ in range(5):
        V = _random_control(prop, rng)
        Y0 = rng.standard_normal((8, 2))
        ZT = rng.standard_normal((8, 2))
        assert dynamics.duality_residual(jordan, jordan_basis8, V, Y0, ZT, grid64) <= 1e-10


def test_duality_without_control(jordan, jordan_basis8, grid64, rng):
    Y0, ZT = rng.standard_normal((2, 8, 2))
    assert dynamics.duality_residual(jordan, jordan_basis8, None, Y0, ZT, grid64) <= 1e-12
    assert dynamics.duality_residual(jordan, jordan_basis8, None, np.zeros((8, 2)), ZT, grid64) == 0.0


def test_semigroup_property(jordan, jordan_basis8, rng):
    Y0 = rng.standard_normal((8, 2))
    full = dynamics.solve_forward(jordan, jordan_basis8, None, Y0, TimeGrid(64, jordan.T))
    half = TimeGrid(32, jordan.T / 2)
    spec_half = jordan.with_horizon(jordan.T / 2)
    a = dynamics.solve_forward(spec_half, jordan_basis8, None, Y0, half)
    b = dynamics.solve_forward(spec_half, jordan_basis8, None, a.terminal, half)
    np.testing.assert_array_equal(b.terminal, full.terminal)
    np.testing.assert_array_equal(a.coeffs, full.coeffs[:, :33])


def test_scalar_mode_decays_exactly():
    p = model.make_problem(np.eye(1), [[0.0]], [[1.0]], model.PowerCoefficient(1.0), (0.3, 0.8), 0.5)
    basis = spectral.compute_basis(p, N=500, M=4)
    grid = TimeGrid(16, 0.5)
    Y0 = np.ones((4, 1))
    traj = dynamics.solve_forward(p, basis, None, Y0, grid)
    expected = np.exp(-basis.eigenvalues[:, None] * grid.times[None, :])
    np.testing.assert_allclose(traj.coeffs[..., 0], expected, rtol=1e-12)


def test_jordan_mode_has_polynomial_factor(jordan, jordan_basis8):
    # D = [[1,1],[0,1]], A = [[0,0],[1,0]]: each mode is exp(t G_j), G_j = -lam D + A
    grid = TimeGrid(8, jordan.T)
    Y0 = np.zeros((8, 2))
    Y0[2] = [0.3, -1.2]
    traj = dynamics.solve_forward(jordan, jordan_basis8, None, Y0, grid)
    lam = jordan_basis8.eigenvalues[2]
    G = -lam * np.array([[1.0, 1.0], [0.0, 1.0]]) + np.array([[0.0, 0.0], [1.0, 0.0]])
    import scipy.linalg

    np.testing.assert_allclose(traj.terminal[2], scipy.linalg.expm(jordan.T * G) @ Y0[2], rtol=1e-10)
    np.testing.assert_array_equal(traj.terminal[0], 0.0)


def test_energy_ratio_bounded(jordan, jordan_basis8, grid64, rng):
    prop = dynamics.propagator(jordan, jordan_basis8, grid64)
    V = _random_control(prop, rng)
    traj = dynamics.solve_forward(jordan, jordan_basis8, V, rng.standard_normal((8, 2)), grid64)
    rep = dynamics.energy_report(traj, jordan_basis8, jordan, V)
    assert 0 < rep.ratio < 50
    free = dynamics.solve_forward(jordan, jordan_basis8, None, np.zeros((8, 2)), grid64)
    assert dynamics.energy_report(free, jordan_basis8, jordan).ratio == 0.0


def test_adjoint_observation_shape(jordan, jordan_basis8, grid64, rng):
    traj = dynamics.solve_adjoint(jordan, jordan_basis8, rng.standard_normal((8, 2)), grid64)
    sig = dynamics.adjoint_observation(jordan, jordan_basis8, traj)
    prop = dynamics.propagator(jordan, jordan_basis8, grid64)
    assert sig.values.shape == (64, prop.injection.P, 1)
    x = jordan_basis8.mesh.nodes[sig.node_index]
    assert x.min() >= 0.3 and x.max() <= 0.8


def test_nodal_initial_datum_is_projected(jordan, jordan_basis8, grid64):
    nodal = np.stack([jordan_basis8.eigenvectors[:, 1], np.zeros(jordan_basis8.eigenvectors.shape[0])], axis=1)
    traj = dynamics.solve_forward(jordan, jordan_basis8, None, nodal, grid64)
    np.testing.assert_allclose(traj.initial[:, 0], np.eye(8)[1], atol=1e-12)


def test_control_shape_checked(jordan, jordan_basis8, grid64):
    with pytest.raises(DimensionMismatch):
        dynamics.solve_forward(jordan, jordan_basis8, np.zeros((3, 3, 1)), np.zeros((8, 2)), grid64)


def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(0, 1.0)
    assert TimeGrid(4, 1.0).times[-1] == 1.0


def test_free_flow_is_contractive_without_coupling(rng):
    p = model.make_problem([[1.0, 1.0], [0.0, 1.0]], np.zeros((2, 2)), [[1.0], [0.0]], model.PowerCoefficient(1.0),
                           (0.3, 0.8), 0.5)
    basis = spectral.compute_basis(p, N=500, M=8)
    traj = dynamics.solve_forward(p, basis, None, rng.standard_normal((8, 2)), TimeGrid(64, 0.5))
    n = traj.norms()
    assert np.all(n[1:] <= n[:-1] * (1 + 1e-12))


def test_terminal_value_refinement(jordan):
    Y0 = np.zeros((32, 2))
    Y0[:4] = [[1.0, 1.0], [0.5, -0.2], [0.1, 0.3], [-0.2, 0.1]]
    out = []
    for M, L in ((16, 128), (32, 256)):
        b = spectral.compute_basis(jordan, N=2000, M=M)
        out.append(dynamics.solve_forward(jordan, b, None, Y0[:M], TimeGrid(L, jordan.T)).terminal[:16])
    assert np.linalg.norm(out[1] - out[0]) <= 1e-4 * np.linalg.norm(out[1])


def test_mismatched_quadrature_is_detected(jordan, jordan_basis8, grid64, rng, monkeypatch):
    prop = dynamics.propagator(jordan, jordan_basis8, grid64)
    V = _random_control(prop, rng)
    Y0, ZT = rng.standard_normal((2, 8, 2))
    exact = dynamics.Propagator.adjoint

    def left_point(self, Z):
        coeffs, _ = exact(self, Z)
        return coeffs, coeffs[:, :-1]  # endpoint values in place of step averages

    monkeypatch.setattr(dynamics.Propagator, "adjoint", left_point)
    assert dynamics.duality_residual(jordan, jordan_basis8, V, Y0, ZT, grid64) > 1e3 * 1e-10


def test_energy_constant_stable_across_modes(jordan):
    rng = np.random.default_rng(7)
    Y0 = rng.standard_normal((8, 2))
    grid = TimeGrid(64, jordan.T)
    V = None
    ratios = []
    for M in (8, 16, 32):
        b = spectral.compute_basis(jordan, N=1000, M=M)
        prop = dynamics.propagator(jordan, b, grid)
        if V is None:
            V = rng.standard_normal((grid.L, prop.injection.P, 1))
        Y = np.zeros((M, 2))
        Y[:8] = Y0
        traj = dynamics.solve_forward(jordan, b, V, Y, grid)
        ratios.append(dynamics.energy_report(traj, b, jordan, V).ratio)
    assert max(ratios) <= 1.2 * min(ratios)
