"""Carleman weight functions and their parameter inequalities.

theta(t) = 1/(t^4 (T-t)^4),  psi(x) = lam (int_0^x y/a(y) dy - c),
Psi(x) = exp(rho sigma(x)) - exp(2 rho |sigma|_inf),  phi = theta psi,  Phi = theta Psi,

with c > 4^n c0, c0 = int_0^1 x/a(x) dx, and rho, lam constrained so that
the interval for lam is nonempty. Nothing here is used by the solvers; the
weights are built and certified for inspection.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import IntegralDiverged, NoFeasibleParameters, OutOfDomain

GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(20)
MAX_LEVELS = 1000


def _gauss(f, lo: float, hi: float) -> float:
    x = 0.5 * (hi - lo) * GL_NODES + 0.5 * (hi + lo)
    return float(0.5 * (hi - lo) * np.dot(GL_WEIGHTS, f(x)))


def _x_over_a(a):
    return lambda x: x / np.asarray(a(x), dtype=float)


def _integral_to(a, x: float, rtol: float = 1e-8) -> float:
    """int_0^x y/a(y) dy, splitting dyadically toward the degenerate end.

    The pieces over [x 2^-(k+1), x 2^-k] shrink geometrically when the
    integrand is integrable; the loop stops once the geometric tail estimate
    falls below ``rtol`` times the partial sum. Pieces that stop shrinking
    mean the integral diverges.
    """
    if x <= 0:
        return 0.0
    f = _x_over_a(a)
    total = 0.0
    prev = None
    stalls = 0
    hi = x
    for _ in range(MAX_LEVELS):
        lo = 0.5 * hi
        piece = _gauss(f, lo, hi)
        if not np.isfinite(piece):
            raise IntegralDiverged(f"integrand not finite on [{lo:.3g}, {hi:.3g}]")
        total += piece
        if prev is not None and prev > 0:
            r = piece / prev
            if r >= 1.0 - 1e-12:
                stalls += 1
                if stalls >= 40:
                    raise IntegralDiverged(f"dyadic pieces stopped shrinking near x={lo:.3g} (ratio {r:.4f})")
            else:
                stalls = 0
                if piece * r / (1.0 - r) <= rtol * abs(total):
                    return total
        elif piece == 0.0 and prev == 0.0:
            return total
        prev = piece
        hi = lo
    raise IntegralDiverged(f"no convergence after {MAX_LEVELS} dyadic levels")


def compute_c0(a) -> float:
    """c0 = int_0^1 x/a(x) dx."""
    return _integral_to(a, 1.0, rtol=1e-10)


class CumulativeIntegral:
    """x -> int_0^x y/a(y) dy, tabulated on a grid and completed by Gauss-Legendre."""

    def __init__(self, a, nodes: int = 513):
        self.a = a
        self.grid = np.linspace(0.0, 1.0, nodes)
        f = _x_over_a(a)
        vals = np.zeros(nodes)
        vals[1] = _integral_to(a, self.grid[1], rtol=1e-12)
        for i in range(2, nodes):
            vals[i] = vals[i - 1] + _gauss(f, self.grid[i - 1], self.grid[i])
        self.table = vals
        self._f = f

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any((x < 0) | (x > 1)):
            raise OutOfDomain("x must lie in [0, 1]")
        out = np.empty(x.shape)
        flat = out.reshape(-1)
        for k, xi in enumerate(x.reshape(-1)):
            i = int(np.searchsorted(self.grid, xi, side="right") - 1)
            i = min(max(i, 0), len(self.grid) - 1)
            if i == 0:
                flat[k] = _integral_to(self.a, xi, rtol=1e-12)
            else:
                base = self.grid[i]
                flat[k] = self.table[i] + (_gauss(self._f, base, xi) if xi > base else 0.0)
        return out if x.ndim else float(out)


# --------------------------------------------------------------------------
# sigma


def _quintic(slope: float, curv: float) -> np.ndarray:
    """Ascending coefficients of q on [0, 1] with q(0)=0, q'(0)=slope, q''(0)=0, q(1)=1, q'(1)=0, q''(1)=-curv."""
    A = np.array([
        [1, 0, 0, 0, 0, 0],
        [0, 1, 0, 0, 0, 0],
        [0, 0, 2, 0, 0, 0],
        [1, 1, 1, 1, 1, 1],
        [0, 1, 2, 3, 4, 5],
        [0, 0, 2, 6, 12, 20],
    ], dtype=float)
    return np.linalg.solve(A, np.array([0.0, slope, 0.0, 1.0, 0.0, -curv]))


def _strictly_increasing(q: np.ndarray) -> bool:
    """q' > 0 on [0, 1): the quartic q' has its only root in [0, 1] at t = 1."""
    dq = np.polynomial.polynomial.polyder(q)
    quot, rem = np.polynomial.polynomial.polydiv(dq, np.array([-1.0, 1.0]))  # dq = (t - 1) quot
    if abs(rem[0]) > 1e-10:
        return False
    roots = np.roots(quot[::-1])
    real = roots[np.abs(roots.imag) < 1e-9].real
    if np.any((real >= -1e-12) & (real <= 1 + 1e-12)):
        return False
    return bool(np.polynomial.polynomial.polyval(0.5, dq) > 0)


@dataclass(frozen=True, eq=False)
class Sigma:
    """C2 piecewise quintic: rises on [0, m], falls on [m, 1], sigma(m) = 1 = |sigma|_inf."""

    peak: float
    omega0: tuple
    left: np.ndarray  # q for x in [0, m], argument x/m
    right: np.ndarray  # q for x in [m, 1], argument (1-x)/(1-m)
    sup_norm: float = 1.0

    def _eval(self, x, order: int):
        x = np.asarray(x, dtype=float)
        m = self.peak
        P = np.polynomial.polynomial
        ql, qr = self.left, self.right
        for _ in range(order):
            ql, qr = P.polyder(ql), P.polyder(qr)
        left = P.polyval(np.clip(x / m, 0, 1), ql) / m**order
        right = P.polyval(np.clip((1 - x) / (1 - m), 0, 1), qr) * (-1.0 / (1 - m)) ** order
        return np.where(x <= m, left, right)

    def __call__(self, x):
        return self._eval(x, 0)

    def derivative(self, x):
        return self._eval(x, 1)

    def second_derivative(self, x):
        return self._eval(x, 2)


@dataclass(frozen=True)
class SigmaCertificate:
    critical_point: float
    min_abs_slope_outside: float  # min |sigma_x| over [0,1] minus omega0
    min_on_compacts: dict  # (lo, hi) -> min sigma
    c2_jump: float  # |sigma''(m-) - sigma''(m+)|
    slope: float
    curvature: float


def build_sigma(omega0, omega=None, grid: int = 4001) -> tuple[Sigma, SigmaCertificate]:
    """Single-peak C2 weight vanishing at both ends, peaked at the midpoint of ``omega0``.

    The endpoint slope and peak curvature are searched until both halves are
    certified strictly monotone (no root of sigma_x in the open halves).
    """
    lo, hi = map(float, omega0)
    if not 0 < lo < hi < 1:
        raise ValueError(f"omega0 must be a subinterval of (0, 1), got {omega0}")
    if omega is not None and not (omega[0] < lo and hi < omega[1]):
        raise ValueError(f"omega0 {omega0} is not compactly contained in omega {omega}")
    m = 0.5 * (lo + hi)
    for slope in (1.5, 1.0, 2.0, 1.25, 1.75, 2.5):
        for kappa in (4.0, 2.0, 8.0, 1.0, 16.0):
            ql = _quintic(slope, kappa * m * m)
            qr = _quintic(slope, kappa * (1 - m) ** 2)
            if _strictly_increasing(ql) and _strictly_increasing(qr):
                sig = Sigma(m, (lo, hi), ql, qr)
                x = np.linspace(0, 1, grid)
                outside = (x <= lo) | (x >= hi)
                compacts = {}
                for a_, b_ in ((0.1, 0.9), (0.01, 0.99), (lo, hi)):
                    xs = np.linspace(a_, b_, 1001)
                    compacts[(a_, b_)] = float(np.min(sig(xs)))
                d2l = np.polynomial.polynomial.polyval(1.0, np.polynomial.polynomial.polyder(ql, 2)) / m**2
                d2r = np.polynomial.polynomial.polyval(1.0, np.polynomial.polynomial.polyder(qr, 2)) / (1 - m) ** 2
                cert = SigmaCertificate(m, float(np.min(np.abs(sig.derivative(x[outside])))), compacts,
                                        float(abs(d2l - d2r)), slope, kappa)
                return sig, cert
    raise ValueError(f"no monotone quintic found for omega0 {omega0}")  # pragma: no cover


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True, eq=False)
class CarlemanParams:
    n: int
    c0: float
    c: float
    rho: float
    lambda_w: float
    sigma: Sigma
    sigma_norm: float
    slacks: dict = field(default_factory=dict)

    def bounds(self) -> dict:
        return _bounds(self.n, self.c0, self.c, self.rho, self.sigma_norm)


def _bounds(n, c0, c, rho, s) -> dict:
    q = 4.0**n
    return {
        "c_min": q * c0,
        "rho_min": np.log(q * (c - c0) / (c - q * c0)) / s,
        "lambda_lo": np.exp(2 * rho * s) / (c - c0),
        "lambda_hi": q / ((q - 1) * c) * (np.exp(2 * rho * s) - np.exp(rho * s)),
    }


def _slacks(n, c0, c, rho, lam, s, sigma_min) -> dict:
    b = _bounds(n, c0, c, rho, s)
    return {
        "c > 4^n c0": c - b["c_min"],
        "rho > rho_min": rho - b["rho_min"],
        "lambda > lower": lam - b["lambda_lo"],
        "lambda < upper": b["lambda_hi"] - lam,
        "sigma > 0 inside": sigma_min,
    }


def select_parameters(n: int, c0: float, sigma: Sigma, grid: int = 400, margin: float = 0.1,
                      min_slack: float = 1e-9) -> CarlemanParams:
    """Grid search over c in (4^n c0, 64 4^n c0], rho = (1 + margin) rho_min(c), lambda at the interval midpoint.

    The returned triple maximizes the smallest relative slack among the
    feasible grid points; every inequality holds with absolute slack at
    least ``min_slack``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not c0 > 0:
        raise ValueError(f"c0 must be positive, got {c0}")
    s = float(sigma.sup_norm)
    sigma_min = float(np.min(sigma(np.linspace(0.01, 0.99, 981))))
    q = 4.0**n
    best, best_score, tightest = None, -np.inf, None
    for c in q * c0 * (1.0 + np.geomspace(1e-3, 63.0, grid)):
        rho_min = np.log(q * (c - c0) / (c - q * c0)) / s
        rho = (1.0 + margin) * rho_min
        b = _bounds(n, c0, c, rho, s)
        lam = 0.5 * (b["lambda_lo"] + b["lambda_hi"])
        sl = _slacks(n, c0, c, rho, lam, s, sigma_min)
        rel = min(sl["c > 4^n c0"] / c, sl["rho > rho_min"] / rho, sl["lambda > lower"] / lam)
        if tightest is None or min(sl.values()) > min(tightest.values()):
            tightest = sl
        if min(sl.values()) >= min_slack and np.all(np.isfinite(list(sl.values()))) and rel > best_score:
            best, best_score = (c, rho, lam, sl), rel
    if best is None:
        raise NoFeasibleParameters(f"no feasible (c, rho, lambda) on the grid for n={n}, c0={c0}", tightest)
    c, rho, lam, sl = best
    return CarlemanParams(n, float(c0), float(c), float(rho), float(lam), sigma, s, sl)


# --------------------------------------------------------------------------
# evaluation


def theta(t, T: float):
    t = np.asarray(t, dtype=float)
    if np.any((t <= 0) | (t >= T)):
        raise OutOfDomain(f"t must lie in the open interval (0, {T})")
    return 1.0 / (t**4 * (T - t) ** 4)


@dataclass(frozen=True)
class Weights:
    theta: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    Psi: np.ndarray
    Phi: np.ndarray


_CUMULATIVE: dict = {}


def cumulative(a) -> CumulativeIntegral:
    key = id(a)
    hit = _CUMULATIVE.get(key)
    if hit is None or hit.a is not a:
        hit = CumulativeIntegral(a)
        _CUMULATIVE[key] = hit
    return hit


def weights_eval(params: CarlemanParams, a, t, x, T: float) -> Weights:
    """Weights on the broadcast grid of ``t`` (times, open interval) and ``x`` (in [0, 1])."""
    th = theta(t, T)
    xs = np.asarray(x, dtype=float)
    psi = params.lambda_w * (cumulative(a)(xs) - params.c)
    s = params.sigma_norm
    Psi = np.exp(params.rho * params.sigma(xs)) - np.exp(2 * params.rho * s)
    return Weights(th, psi, th * psi, Psi, th * Psi)


@dataclass(frozen=True)
class WeightReport:
    checks: dict  # name -> passed
    failures: dict  # name -> list of offending locations
    theta_ratio: float  # theta(T/4) / theta(T/2)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def verify_weights(params: CarlemanParams, a, T: float, grid: int = 100) -> WeightReport:
    """Sign and ordering facts of the weights on a ``grid`` x ``grid`` (t, x) mesh."""
    t = np.linspace(0, T, grid + 2)[1:-1]
    x = np.linspace(0, 1, grid)
    w = weights_eval(params, a, t[:, None], x[None, :], T)
    checks, failures = {}, {}

    def record(name, ok_mask, where):
        ok = bool(np.all(ok_mask))
        checks[name] = ok
        if not ok:
            failures[name] = [tuple(map(float, p)) for p in np.asarray(where)[~np.asarray(ok_mask).ravel()][:10]]

    tx = np.stack(np.broadcast_arrays(t[:, None], x[None, :]), axis=-1).reshape(-1, 2)
    record("phi < 0", (w.phi < 0).ravel(), tx)
    record("Phi < 0", (w.Phi < 0).ravel(), tx)
    th_mid = float(theta(T / 2, T))
    record("theta >= theta(T/2)", w.theta.ravel() >= th_mid * (1 - 1e-12), t[:, None])
    delta = T / 100
    record("theta blows up at the ends", np.array([theta(delta, T) > th_mid, theta(T - delta, T) > th_mid]),
           np.array([[delta], [T - delta]]))
    psi = weights_eval(params, a, T / 2, x, T).psi
    record("psi increasing", np.diff(psi) > 0, x[1:, None])
    record("psi(1) < 0", np.array([psi[-1] < 0]), np.array([[1.0]]))
    return WeightReport(checks, failures, float(theta(T / 4, T) / th_mid))


# --------------------------------------------------------------------------
# export


def write_profiles_csv(params: CarlemanParams, a, path, points: int = 201) -> None:
    x = np.linspace(0, 1, points)
    w = weights_eval(params, a, 0.5, x, 1.0)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["x", "psi", "Psi"])
        for xi, p, P in zip(x, w.psi, w.Psi):
            wr.writerow([repr(float(xi)), repr(float(p)), repr(float(P))])


def write_theta_csv(T: float, path, points: int = 201) -> None:
    t = np.linspace(0, T, points + 2)[1:-1]
    th = theta(t, T)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", "theta"])
        for ti, v in zip(t, th):
            wr.writerow([repr(float(ti)), repr(float(v))])
