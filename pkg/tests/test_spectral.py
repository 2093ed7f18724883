import numpy as np
import pytest
import scipy.special
from hypothesis import given, settings
from hypothesis import strategies as st

from degctrl import model, spectral
from oracles import hand_p1_stiffness

# independent shooting oracle, frozen (tests/oracles.py recomputes them)
SHOOT_X = [1.4457964907371896, 7.617815585916129, 18.72175169767594, 34.760071106616586, 55.73307590441219]
SHOOT_SQRT = [4.739066397842919, 20.47164584453312, 47.30523332325753]


def test_uniform_mesh():
    m = spectral.build_graded_mesh(4, 0.0)
    assert m.gamma == 1.0
    np.testing.assert_allclose(m.nodes, [0, 0.25, 0.5, 0.75, 1.0])


def test_graded_mesh_exponents():
    m = spectral.build_graded_mesh(100, 1.0)
    assert m.gamma == 2.0
    assert m.nodes[1] == pytest.approx(1e-4)
    assert spectral.build_graded_mesh(100, 1.5).gamma == pytest.approx(4.0)


def test_two_element_forms_match_hand_integration():
    mesh = spectral.build_graded_mesh(2, 0.0)
    a = lambda x: np.asarray(x, dtype=float)
    K_hand = hand_p1_stiffness(mesh.nodes, a)
    sd = spectral.assemble_forms(mesh, a, "SD")
    wd = spectral.assemble_forms(mesh, a, "WD")
    np.testing.assert_allclose(sd.stiffness_full.toarray(), K_hand, atol=1e-15)
    assert sd.stiffness.shape == (2, 2)
    assert wd.stiffness.shape == (1, 1)
    # int_0^1 x phi_1'^2 = 4 (1/8 + 3/8)
    assert wd.stiffness.toarray()[0, 0] == pytest.approx(2.0)


def test_bessel_zeros_against_scipy():
    np.testing.assert_allclose(spectral.bessel_zeros(0.0, 6), scipy.special.jn_zeros(0, 6), rtol=1e-13)
    np.testing.assert_allclose(spectral.bessel_zeros(1.0, 4), scipy.special.jn_zeros(1, 4), rtol=1e-13)


def test_benchmark_matches_shooting():
    np.testing.assert_allclose(spectral.power_law_eigenvalues(1.0, 1.0, 5), SHOOT_X, rtol=1e-11)
    np.testing.assert_allclose(spectral.power_law_eigenvalues(0.5, 1.0, 3), SHOOT_SQRT, rtol=1e-11)


@pytest.mark.slow
def test_shooting_oracle_reproduces_frozen_values():
    from oracles import shooting_eigenvalues

    np.testing.assert_allclose(shooting_eigenvalues(1.0, 2), SHOOT_X[:2], rtol=1e-10)


def test_linear_coefficient_first_eigenvalue(jordan):
    b = spectral.compute_basis(jordan, N=2000, M=10)
    assert abs(b.eigenvalues[0] - SHOOT_X[0]) / SHOOT_X[0] < 1e-4
    assert b.eigenvalues[0] == pytest.approx(1.445796, abs=1e-6)


def test_sqrt_coefficient_weak_degeneracy():
    # Dirichlet eigenfunctions behave like x^(1/2) at 0; with the 2/(2-K) grading
    # the first element limits the eigenvalue error to about N^(-2/3)
    p = model.make_problem(np.eye(1), [[0.0]], [[1.0]], model.PowerCoefficient(0.5), (0.2, 0.6), 1.0)
    assert p.boundary == "WD"
    errs = []
    for N in (500, 2000):
        b = spectral.compute_basis(p, N=N, M=3)
        errs.append(np.abs(b.eigenvalues / SHOOT_SQRT - 1))
        assert np.all(b.eigenvalues > SHOOT_SQRT)
    assert np.all(errs[1] < 3e-3)
    rate = np.log(errs[0][0] / errs[1][0]) / np.log(4)
    assert 0.6 < rate < 0.75


def test_spectral_gaps_and_quality(jordan):
    b = spectral.compute_basis(jordan, N=1000, M=32)
    assert np.all(np.diff(b.eigenvalues) > 0)
    assert spectral.orthonormality_error(b) < 1e-10
    assert np.all(spectral.rayleigh_residuals(b) <= 1e-8 * b.eigenvalues)


def test_dense_and_sparse_paths_agree(jordan, monkeypatch):
    mesh = spectral.build_graded_mesh(600, jordan.a.K)
    forms = spectral.assemble_forms(mesh, jordan.a, "SD")
    dense = spectral.eigensolve(forms, 6)
    monkeypatch.setattr(spectral, "DENSE_LIMIT", 10)
    sparse = spectral.eigensolve(forms, 6)
    np.testing.assert_allclose(dense.eigenvalues, sparse.eigenvalues, rtol=1e-10)
    np.testing.assert_allclose(dense.eigenvectors, sparse.eigenvectors, atol=1e-7)


def test_project_reconstruct(jordan_basis8):
    b = jordan_basis8
    np.testing.assert_allclose(spectral.project(b, b.eigenvectors[:, 3]), np.eye(8)[3], atol=1e-12)
    assert not np.any(spectral.reconstruct(b, np.zeros(8)))
    nodal = spectral.reconstruct(b, np.eye(8)[0], nodal=True)
    assert nodal[-1] == 0.0 and nodal.shape == (b.mesh.N + 1,)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_parseval_tail_nonnegative_and_decreasing(jordan_basis8, seed):
    b = jordan_basis8
    u = np.random.default_rng(seed).standard_normal(b.eigenvectors.shape[0])
    total = spectral.mass_norm(b, u) ** 2
    tails = [total - np.sum(spectral.project(b.truncate(M), u) ** 2) for M in (2, 4, 8)]
    assert all(t >= -1e-10 * total for t in tails)
    assert tails[0] >= tails[1] >= tails[2] - 1e-12 * total


def test_mass_rows_and_constant_kernel(jordan):
    mesh = spectral.build_graded_mesh(50, 1.0)
    forms = spectral.assemble_forms(mesh, jordan.a, "SD")
    h = np.diff(mesh.nodes)
    lumped = np.zeros(mesh.N + 1)
    lumped[:-1] += 0.5 * h
    lumped[1:] += 0.5 * h
    np.testing.assert_allclose(np.asarray(forms.mass_full.sum(axis=1)).ravel(), lumped, rtol=1e-13)
    np.testing.assert_allclose(forms.stiffness_full @ np.ones(mesh.N + 1), 0.0, atol=1e-12)
