"""Problem ingredients: diffusion matrix, degenerate coefficient, full problem.

Everything here is validated once at construction and then treated as
immutable; the numerical modules never re-check these invariants.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    ConfigError,
    NoAdmissibleTheta,
    NonPositiveSpectrum,
    NotCoercive,
    NotDegenerate,
    TooDegenerate,
    ValidationError,
)

# geometric certification grid for a(x)
GRID_DENSITY = 10_000
GRID_XMIN = 1e-10
K_MARGIN = 1.01
# a(x)/x**theta must be nondecreasing on (0, NEAR_ZERO]
NEAR_ZERO = 0.1


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


# --------------------------------------------------------------------------
# diffusion matrix


@dataclass(frozen=True, eq=False)
class DiffusionMatrix:
    entries: np.ndarray
    alpha0: float
    eigen_info: tuple  # ((eigenvalue, algebraic multiplicity, largest block), ...)
    diagonalizable: bool

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def _numerical_rank(mat: np.ndarray, scale: float, rtol: float = 1e-7) -> int:
    if mat.size == 0:
        return 0
    s = np.linalg.svd(mat, compute_uv=False)
    return int(np.sum(s > rtol * max(scale, 1.0)))


def jordan_summary(entries: np.ndarray, cluster_tol: float = 1e-5) -> list[tuple[complex, int, int]]:
    """Cluster eigenvalues and read block sizes off the rank sequence of (D - mu I)^k.

    Defective eigenvalues split by O(sqrt(eps)) in floating point, hence the
    loose clustering tolerance.
    """
    n = entries.shape[0]
    scale = max(np.linalg.norm(entries, 2), 1.0)
    eigs = np.linalg.eigvals(entries)
    clusters: list[list[complex]] = []
    for ev in sorted(eigs, key=lambda z: (z.real, z.imag)):
        for cl in clusters:
            if abs(ev - np.mean(cl)) <= cluster_tol * scale:
                cl.append(ev)
                break
        else:
            clusters.append([ev])
    info = []
    eye = np.eye(n)
    for cl in clusters:
        mu = complex(np.mean(cl))
        if abs(mu.imag) <= cluster_tol * scale:
            mu = complex(mu.real, 0.0)
        mult = len(cl)
        shifted = entries - mu * eye
        power = eye.astype(complex)
        block = mult
        for k in range(1, mult + 1):
            power = power @ shifted
            if _numerical_rank(power, scale**k) == n - mult:
                block = k
                break
        info.append((mu, mult, block))
    return info


def validate_diffusion(entries) -> DiffusionMatrix:
    """Check coercivity and spectrum of a diffusion matrix.

    ``alpha0`` is the smallest eigenvalue of the symmetric part; the Jordan
    summary lists ``(eigenvalue, algebraic multiplicity, largest block)``.
    """
    mat = np.atleast_2d(np.asarray(entries, dtype=float))
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValidationError(f"diffusion matrix must be square, got shape {mat.shape}", field="D")
    if not np.all(np.isfinite(mat)):
        raise ValidationError("diffusion matrix has non-finite entries", field="D")
    sym = 0.5 * (mat + mat.T)
    alpha0 = float(np.linalg.eigvalsh(sym)[0])
    if alpha0 <= 0:
        raise NotCoercive(
            f"symmetric part has eigenvalue {alpha0:.6g} <= 0", field="D"
        )
    eigs = np.linalg.eigvals(mat)
    if np.any(eigs.real <= 0):
        raise NonPositiveSpectrum(f"eigenvalues {eigs} include Re <= 0", field="D")
    info = jordan_summary(mat)
    diagonalizable = all(block == 1 for _, _, block in info)
    return DiffusionMatrix(_frozen(mat), alpha0, tuple(info), diagonalizable)


# --------------------------------------------------------------------------
# degenerate coefficient families


@dataclass(frozen=True)
class PowerCoefficient:
    """a(x) = scale * x**exponent."""

    exponent: float
    scale: float = 1.0

    def __call__(self, x):
        return self.scale * np.power(np.asarray(x, dtype=float), self.exponent)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.scale * self.exponent * np.power(x, self.exponent - 1.0)

    def describe(self) -> dict:
        return {"family": "power", "exponent": self.exponent, "scale": self.scale}


@dataclass(frozen=True)
class TableCoefficient:
    """Piecewise-linear a(x) through ``breakpoints`` ((x0, a0), ..., (1, a_last))."""

    breakpoints: tuple

    def __post_init__(self):
        xs = [p[0] for p in self.breakpoints]
        if len(xs) < 2 or xs[0] != 0.0 or xs[-1] != 1.0 or np.any(np.diff(xs) <= 0):
            raise ValidationError(
                "table breakpoints must be strictly increasing from 0 to 1", field="a"
            )

    @property
    def _xy(self):
        arr = np.asarray(self.breakpoints, dtype=float)
        return arr[:, 0], arr[:, 1]

    def __call__(self, x):
        xs, ys = self._xy
        return np.interp(np.asarray(x, dtype=float), xs, ys)

    def derivative(self, x):
        xs, ys = self._xy
        slopes = np.diff(ys) / np.diff(xs)
        idx = np.clip(np.searchsorted(xs, np.asarray(x, dtype=float), side="right") - 1, 0, len(slopes) - 1)
        return slopes[idx]

    def describe(self) -> dict:
        return {"family": "table", "breakpoints": [list(p) for p in self.breakpoints]}


@dataclass(frozen=True)
class DegeneracyCoefficient:
    evaluator: Callable
    derivative_evaluator: Callable
    cls: str  # "WD" or "SD"
    K: float  # grid maximum of x a'(x) / a(x)
    K_certified: float  # K with safety margin, used for the class decision
    theta: float | None
    grid: np.ndarray = field(repr=False, compare=False)

    def __call__(self, x):
        return self.evaluator(x)

    def derivative(self, x):
        return self.derivative_evaluator(x)

    @property
    def boundary(self) -> str:
        return self.cls


def certification_grid(density: int = GRID_DENSITY) -> np.ndarray:
    return np.geomspace(GRID_XMIN, 1.0, density)


def _theta_candidates(lo: float, hi: float, count: int = 41) -> np.ndarray:
    cands = np.round(np.linspace(lo, hi, count), 12)
    mid = 0.5 * (lo + hi)
    return cands[np.argsort(np.abs(cands - mid), kind="stable")]


def classify_degeneracy(evaluator, derivative_evaluator, grid_density: int = GRID_DENSITY) -> DegeneracyCoefficient:
    """Assign the WD/SD class of ``a`` from its log-derivative on a geometric grid."""
    grid = certification_grid(grid_density)
    vals = np.asarray(evaluator(grid), dtype=float)
    ders = np.asarray(derivative_evaluator(grid), dtype=float)
    if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(ders))):
        raise ValidationError("coefficient or its derivative is not finite on (0,1]", field="a")
    if np.any(vals <= 0):
        raise ValidationError("coefficient must be positive on (0,1]", field="a")
    amax = float(vals.max())
    try:
        a0 = float(evaluator(np.array([0.0]))[0])
        bad = not np.isfinite(a0) or abs(a0) > 1e-8 * amax
    except (ValueError, ZeroDivisionError, FloatingPointError):
        # no value at 0: fall back to the smallest grid point
        a0 = float(vals[0])
        bad = a0 > 1e-3 * amax
    if bad:
        raise NotDegenerate(f"a(0) = {a0:.3g} is not zero relative to max a = {amax:.3g}", field="a")

    ratio = grid * ders / vals
    k_raw = max(float(ratio.max()), 0.0)
    k_cert = k_raw * K_MARGIN
    if k_cert >= 2.0:
        raise TooDegenerate(f"x a'/a reaches {k_raw:.6g} (certified {k_cert:.6g}) >= 2", field="a")
    if k_cert < 1.0:
        return DegeneracyCoefficient(evaluator, derivative_evaluator, "WD", k_raw, k_cert, None, grid)

    near = ratio[grid <= NEAR_ZERO]
    # (a / x^theta)' >= 0  <=>  x a' / a >= theta
    floor = float(near.min())
    if abs(k_raw - 1.0) <= K_MARGIN - 1.0:
        cands = _theta_candidates(0.05, 0.95, 19)
    else:
        cands = _theta_candidates(1.0 + 1e-3, k_raw)
    for theta in cands:
        if floor >= theta - 1e-12:
            return DegeneracyCoefficient(
                evaluator, derivative_evaluator, "SD", k_raw, k_cert, float(theta), grid
            )
    raise NoAdmissibleTheta(
        f"a/x^theta is not nondecreasing near 0 for any sampled theta (min x a'/a = {floor:.4g})",
        field="a",
    )


def coefficient_from_family(family) -> DegeneracyCoefficient:
    return classify_degeneracy(family, family.derivative)


# --------------------------------------------------------------------------
# problem


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    n: int
    m: int
    D: DiffusionMatrix
    A: np.ndarray
    B: np.ndarray
    a: DegeneracyCoefficient
    omega: tuple
    T: float
    name: str = "custom"

    @property
    def boundary(self) -> str:
        """'WD': Dirichlet at both ends; 'SD': Dirichlet at 1, natural at 0."""
        return self.a.cls

    def with_coupling(self, A) -> "ProblemSpec":
        A = _frozen(A)
        return ProblemSpec(self.n, self.m, self.D, A, self.B, self.a, self.omega, self.T, self.name)

    def with_horizon(self, T: float) -> "ProblemSpec":
        return ProblemSpec(self.n, self.m, self.D, self.A, self.B, self.a, self.omega, float(T), self.name)

    def to_dict(self) -> dict:
        family = self.a.evaluator
        return {
            "name": self.name,
            "n": self.n,
            "m": self.m,
            "D": self.D.entries.tolist(),
            "alpha0": self.D.alpha0,
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "a": family.describe() if hasattr(family, "describe") else repr(family),
            "class": self.a.cls,
            "K": self.a.K,
            "theta": self.a.theta,
            "omega": list(self.omega),
            "T": self.T,
        }


def make_problem(D, A, B, a_family, omega, T, name="custom") -> ProblemSpec:
    """Validate every ingredient; errors carry the offending field name."""
    Dm = validate_diffusion(D)
    n = Dm.n
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape != (n, n):
        raise ValidationError(f"expected shape ({n}, {n}), got {A.shape}", field="A")
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(n, -1) if B.size % n == 0 else B
    if B.ndim != 2 or B.shape[0] != n or B.shape[1] < 1:
        raise ValidationError(f"expected shape ({n}, m) with m >= 1, got {B.shape}", field="B")
    try:
        w1, w2 = (float(v) for v in omega)
    except (TypeError, ValueError):
        raise ValidationError("must be a pair (w1, w2)", field="omega") from None
    if not (0.0 <= w1 < w2 <= 1.0):
        raise ValidationError(f"need 0 <= w1 < w2 <= 1, got ({w1}, {w2})", field="omega")
    T = float(T)
    if not (T > 0 and np.isfinite(T)):
        raise ValidationError(f"final time must be positive, got {T}", field="T")
    coef = coefficient_from_family(a_family)
    return ProblemSpec(n, B.shape[1], Dm, _frozen(A), _frozen(B), coef, (w1, w2), T, name)


PRESETS = {
    "jordan-cascade": dict(
        D=[[1.0, 1.0], [0.0, 1.0]],
        A=[[0.0, 0.0], [1.0, 0.0]],
        B=[[1.0], [0.0]],
        a=PowerCoefficient(1.0),
        omega=(0.3, 0.8),
        T=0.5,
    ),
    "rank-deficient": dict(
        D=[[1.0, 0.0], [0.0, 1.0]],
        A=[[0.0, 0.0], [0.0, 0.0]],
        B=[[1.0], [0.0]],
        a=PowerCoefficient(1.0),
        omega=(0.3, 0.8),
        T=0.5,
    ),
}


def preset(name: str) -> ProblemSpec:
    try:
        p = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}", field="preset") from None
    return make_problem(p["D"], p["A"], p["B"], p["a"], p["omega"], p["T"], name=name)


# --------------------------------------------------------------------------
# config documents


def _parse_numbers(text: str, key: str):
    text = text.strip()
    try:
        if text.startswith("["):
            return json.loads(text)
        return [float(tok) for tok in text.replace(";", ",").split(",") if tok.strip()]
    except (ValueError, json.JSONDecodeError):
        raise ConfigError(f"cannot parse numeric list {text!r}", field=key) from None


def _matrix(text: str, key: str, rows: int, cols: int | None = None):
    vals = np.asarray(_parse_numbers(text, key), dtype=float)
    if vals.ndim == 2:
        return vals
    cols = cols if cols is not None else (vals.size // rows if rows else 0)
    if rows == 0 or vals.size != rows * cols:
        raise ConfigError(f"expected {rows}x{cols} row-major entries, got {vals.size}", field=key)
    return vals.reshape(rows, cols)


def _family_from_section(sec) -> object:
    fam = sec.get("family", "power").strip()
    if fam == "power":
        try:
            return PowerCoefficient(float(sec.get("exponent", "1")), float(sec.get("scale", "1")))
        except ValueError:
            raise ConfigError("exponent/scale must be numbers", field="a") from None
    if fam == "table":
        raw = sec.get("breakpoints")
        if raw is None:
            raise ConfigError("table family needs breakpoints", field="a")
        pts = []
        for tok in raw.split(","):
            try:
                x, y = tok.split(":")
                pts.append((float(x), float(y)))
            except ValueError:
                raise ConfigError(f"bad breakpoint {tok!r}, expected x:a", field="a") from None
        return TableCoefficient(tuple(pts))
    raise ConfigError(f"unknown coefficient family {fam!r}", field="a")


def parse_config(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str  # keys are case sensitive (D vs d)
    if not text.lstrip().startswith("["):
        text = "[problem]\n" + text
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    return cp


def build_problem(config: str) -> ProblemSpec:
    """Build a validated problem from a config document (see README for the schema).

    ``preset = <name>`` seeds every field; explicit keys override the preset.
    """
    cp = parse_config(config)
    sec = cp["problem"] if cp.has_section("problem") else {}
    fields: dict = {}
    name = "custom"
    if "preset" in sec:
        name = sec["preset"].strip()
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}", field="preset")
        fields = dict(PRESETS[name])
    n = int(sec["n"]) if "n" in sec else (len(fields["D"]) if "D" in fields else 0)
    m = int(sec["m"]) if "m" in sec else None
    if "D" in sec:
        fields["D"] = _matrix(sec["D"], "D", n, n)
        n = fields["D"].shape[0]
    if "A" in sec:
        fields["A"] = _matrix(sec["A"], "A", n, n)
    if "B" in sec:
        fields["B"] = _matrix(sec["B"], "B", n, m)
    if "omega" in sec:
        fields["omega"] = tuple(_parse_numbers(sec["omega"], "omega"))
    if "T" in sec:
        try:
            fields["T"] = float(sec["T"])
        except ValueError:
            raise ConfigError("T must be a number", field="T") from None
    if cp.has_section("coefficient"):
        fields["a"] = _family_from_section(cp["coefficient"])
    elif "a" in sec:
        fields["a"] = _family_from_section({"family": "power", "exponent": sec["a"]})
    missing = [k for k in ("D", "A", "B", "a", "omega", "T") if k not in fields]
    if missing:
        raise ConfigError(f"missing fields: {', '.join(missing)}", field=missing[0])
    if "name" in sec:
        name = sec["name"].strip()
    return make_problem(fields["D"], fields["A"], fields["B"], fields["a"], fields["omega"], fields["T"], name=name)
