import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degctrl import model
from degctrl.errors import ConfigError, NotCoercive, NotDegenerate, TooDegenerate, ValidationError


def test_identity_is_coercive_and_diagonalizable():
    D = model.validate_diffusion(np.eye(2))
    assert D.alpha0 == pytest.approx(1.0)
    assert D.diagonalizable


def test_jordan_block_summary():
    D = model.validate_diffusion([[1.0, 1.0], [0.0, 1.0]])
    assert D.alpha0 == pytest.approx(0.5)
    assert not D.diagonalizable
    [(mu, mult, block)] = D.eigen_info
    assert mu == pytest.approx(1.0) and mult == 2 and block == 2


def test_large_off_diagonal_breaks_coercivity():
    with pytest.raises(NotCoercive) as exc:
        model.validate_diffusion([[1.0, -3.0], [0.0, 1.0]])
    assert exc.value.field == "D"


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.floats(0.5, 3.0), st.integers(0, 10_000))
def test_quadratic_form_bounded_below_by_alpha0(offdiag, shift, seed):
    mat = np.array(offdiag).reshape(2, 2) + (shift + 2.5) * np.eye(2)
    try:
        D = model.validate_diffusion(mat)
    except ValidationError:
        return
    xi = np.random.default_rng(seed).standard_normal((20, 2))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    q = np.einsum("ki,ij,kj->k", xi, D.entries, xi)
    assert np.all(q >= D.alpha0 - 1e-12)


def test_sqrt_coefficient_is_weakly_degenerate():
    a = model.coefficient_from_family(model.PowerCoefficient(0.5))
    assert a.cls == "WD"
    assert a.K == pytest.approx(0.5, abs=1e-9)


def test_linear_coefficient_is_strongly_degenerate_with_theta_half():
    a = model.coefficient_from_family(model.PowerCoefficient(1.0))
    assert a.cls == "SD"
    assert a.K == pytest.approx(1.0, abs=1e-9)
    assert a.theta == 0.5


def test_quadratic_coefficient_rejected():
    with pytest.raises(TooDegenerate):
        model.coefficient_from_family(model.PowerCoefficient(2.0))


def test_nonvanishing_coefficient_rejected():
    fam = model.TableCoefficient(((0.0, 1.0), (1.0, 2.0)))
    with pytest.raises(NotDegenerate):
        model.coefficient_from_family(fam)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 1.8), st.floats(1e-3, 1e3))
def test_classification_is_scale_equivariant(alpha, c):
    a1 = model.coefficient_from_family(model.PowerCoefficient(alpha))
    a2 = model.coefficient_from_family(model.PowerCoefficient(alpha, c))
    assert a1.cls == a2.cls
    assert a1.K == pytest.approx(a2.K, rel=1e-12, abs=1e-12)


def test_presets():
    jc = model.preset("jordan-cascade")
    assert jc.D.alpha0 == pytest.approx(0.5)
    assert jc.boundary == "SD"
    rd = model.preset("rank-deficient")
    assert rd.n == 2 and rd.m == 1


def test_inverted_interval_names_omega():
    with pytest.raises(ValidationError) as exc:
        model.build_problem("preset = jordan-cascade\nomega = 0.9, 0.8\n")
    assert exc.value.field == "omega"
    assert "omega" in str(exc.value)


def test_config_round_trip_and_determinism():
    text = """
[problem]
n = 2
D = 1, 1, 0, 1
A = 0, 0, 1, 0
B = 1, 0
omega = 0.3, 0.8
T = 0.5
name = custom-cascade

[coefficient]
family = power
exponent = 0.5
"""
    p1, p2 = model.build_problem(text), model.build_problem(text)
    assert p1.to_dict() == p2.to_dict()
    assert p1.boundary == "WD" and p1.name == "custom-cascade"


def test_config_errors():
    with pytest.raises(ConfigError):
        model.build_problem("preset = nope\n")
    with pytest.raises(ConfigError):
        model.build_problem("D = 1\n")
