"""Finite-dimensional algebra behind the rank condition.

Mode i of the degenerate operator turns the system into the ODE pair
(-lambda_i D + A, B); everything here works mode by mode on
K_i = [lambda_i D - A | B] = ((lambda_i D - A)^{n-1} B | ... | B).
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np
import numpy.polynomial.polynomial as npoly

from .errors import SingularResolvent

RANK_RTOL = 1e-10
TREND_TOL = 1e-3


def _mat(X) -> np.ndarray:
    return np.atleast_2d(np.asarray(getattr(X, "entries", X), dtype=float))


def _eigs(basis_or_eigs) -> np.ndarray:
    return np.asarray(getattr(basis_or_eigs, "eigenvalues", basis_or_eigs), dtype=float)


def kalman_matrix(lam: float, D, A, B) -> np.ndarray:
    """Return [(lam D - A)^{n-1} B | ... | (lam D - A) B | B]."""
    D, A, B = _mat(D), _mat(A), _mat(B)
    n = D.shape[0]
    if B.shape[0] != n:
        B = B.reshape(n, -1)
    L = lam * D - A
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(L @ blocks[-1])
    return np.hstack(blocks[::-1])


@dataclass(frozen=True)
class ModeRecord:
    i: int
    lam: float
    sigma_min: float
    sigma_max: float
    det_KK: float
    passed: bool


@dataclass(frozen=True)
class KalmanReport:
    records: tuple
    verdict: str  # "pass" | "fail"
    first_failing: int | None
    c1_estimate: float
    tail_trend: float
    untested: bool = False
    notes: tuple = field(default=())

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def _tail_slope(lams: np.ndarray, dets: np.ndarray) -> float:
    q = max(2, len(lams) // 4)
    if len(lams) < 2:
        return 0.0
    if np.any(dets[-q:] <= 0):
        return float("-inf")
    x, y = np.log(lams[-q:]), np.log(dets[-q:])
    if not np.all(np.isfinite(y)):
        return float("-inf")
    if np.ptp(x) == 0:
        return 0.0
    return float(np.polyfit(x, y, 1)[0])


def kalman_report(basis, D, A, B, i_max: int) -> KalmanReport:
    """Check the rank condition on the first ``i_max`` modes.

    Passing needs sigma_min(K_i) > 1e-10 sigma_max(K_i) on every mode and a
    log-log slope of det(K_i K_i^T) over the last quartile that is not
    negative (determinant not decaying toward zero). The result is an
    empirical certificate on finitely many modes, not a proof.
    """
    lams = _eigs(basis)
    if i_max > len(lams):
        raise ValueError(f"i_max={i_max} exceeds the {len(lams)} available modes")
    if i_max <= 0:
        return KalmanReport((), "pass", None, float("inf"), 0.0, untested=True,
                            notes=("no modes checked",))
    records = []
    first_fail = None
    for i in range(1, i_max + 1):
        lam = float(lams[i - 1])
        s = np.linalg.svd(kalman_matrix(lam, D, A, B), compute_uv=False)
        ok = bool(s[-1] > RANK_RTOL * s[0])
        det = float(np.prod(s**2))
        records.append(ModeRecord(i, lam, float(s[-1]), float(s[0]), det, ok))
        if not ok and first_fail is None:
            first_fail = i
    dets = np.array([r.det_KK for r in records])
    trend = _tail_slope(lams[:i_max], dets)
    verdict = "pass" if first_fail is None and trend >= -TREND_TOL else "fail"
    notes = ()
    if first_fail is None and verdict == "fail":
        notes = (f"determinant decays in the tail (slope {trend:.3g})",)
    return KalmanReport(tuple(records), verdict, first_fail, float(dets.min()), trend, notes=notes)


def write_kalman_csv(report: KalmanReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "lambda_i", "sigma_min", "det_KK", "pass"])
        for r in report.records:
            w.writerow([r.i, repr(r.lam), repr(r.sigma_min), repr(r.det_KK), int(r.passed)])


def kalman_det(lam: float, D, A, B) -> float:
    K = kalman_matrix(lam, D, A, B)
    return float(np.linalg.det(K @ K.T))


def _poly_sum(terms) -> np.ndarray:
    out = np.zeros(1)
    for t in terms:
        out = npoly.polyadd(out, t)
    return out


def _poly_det(P) -> np.ndarray:
    """Determinant of a square matrix of polynomials (ascending coefficient lists) by cofactor expansion."""
    P = [list(row) for row in P]
    if len(P) == 1:
        return np.asarray(P[0][0], dtype=float)
    out = np.zeros(1)
    for j, entry in enumerate(P[0]):
        minor = [row[:j] + row[j + 1:] for row in P[1:]]
        term = npoly.polymul(entry, _poly_det(minor))
        out = npoly.polyadd(out, term if j % 2 == 0 else -term)
    return np.atleast_1d(out)


def kalman_polynomial(D, A, B) -> np.ndarray:
    """Ascending coefficients of p(lam) = det(K(lam) K(lam)^T), length 2n(n-1) + 1.

    Built by polynomial arithmetic on the entries of lam D - A and the
    Cauchy-Binet expansion, so no interpolation or Gram squaring is involved.
    """
    D, A, B = _mat(D), _mat(A), _mat(B)
    n = D.shape[0]
    if B.shape[0] != n:
        B = B.reshape(n, -1)
    L = [[np.array([-A[i, j], D[i, j]]) for j in range(n)] for i in range(n)]
    blocks = [[[np.array([B[i, c]]) for c in range(B.shape[1])] for i in range(n)]]
    for _ in range(n - 1):
        prev = blocks[-1]
        blocks.append([[_poly_sum(npoly.polymul(L[i][k], prev[k][c]) for k in range(n))
                        for c in range(B.shape[1])] for i in range(n)])
    K = [sum((blk[i] for blk in blocks[::-1]), []) for i in range(n)]
    # Cauchy-Binet: det(K K^T) = sum over n-column subsets S of det(K_S)^2
    det = np.zeros(1)
    for cols in itertools.combinations(range(len(K[0])), n):
        d = _poly_det([[K[i][c] for c in cols] for i in range(n)])
        det = npoly.polyadd(det, npoly.polymul(d, d))
    coef = np.zeros(2 * n * (n - 1) + 1)
    m = min(det.size, coef.size)
    coef[:m] = det[:m]
    return coef


def eval_polynomial(coef, lam):
    return npoly.polyval(lam, coef)


# --------------------------------------------------------------------------
# observability ratio on modal bundles


@dataclass
class RatioTestResult:
    verdict: str  # "bounded" | "unobservable direction found"
    mode_caps: tuple
    max_ratio: tuple  # sampled maximum per cap
    sup_ratio: tuple  # exact supremum per cap: max_i 1 / (lam_i^{2k} sigma_min(K_i)^2)
    trend: float  # max_ratio[-1] / max_ratio[0]
    witness_mode: int | None = None
    witness_vector: np.ndarray | None = None


def bundle_ratio(lams: np.ndarray, Ks: np.ndarray, coeffs: np.ndarray, k: int) -> float:
    """||f||^2 / sum_i lam_i^{2k} |K_i^T a^i|^2 for f = sum_i a^i w_i (0 for f = 0)."""
    num = float(np.sum(coeffs**2))
    if num == 0.0:
        return 0.0
    proj = np.einsum("iab,ia->ib", Ks, coeffs)
    den = float(np.sum(lams[: len(coeffs)] ** (2 * k) * np.sum(proj**2, axis=1)))
    if den == 0.0:
        return float("inf")
    return num / den


def kalman_ratio_test(basis, D, A, B, k: int, samples: int = 200, mode_caps=(10, 50, 200), seed: int = 0) -> RatioTestResult:
    """Bound ||f||^2 by the weighted Kalman observation of f, mode cap by mode cap.

    Uses the modal identity (-M)^k K_* f = sum_i lam_i^k (K_i^T a^i) w_i. A mode
    whose K_i^T has a kernel yields f = a w_i with zero observation; that
    witness is returned instead of a ratio.
    """
    n = _mat(D).shape[0]
    if k < (n - 1) ** 2:
        raise ValueError(f"k must be >= (n-1)^2 = {(n - 1) ** 2}, got {k}")
    lams = _eigs(basis)
    caps = tuple(int(c) for c in mode_caps)
    if max(caps) > len(lams):
        raise ValueError(f"mode cap {max(caps)} exceeds the {len(lams)} available modes")
    Ks = np.stack([kalman_matrix(lam, D, A, B) for lam in lams[: max(caps)]])
    U, S, _ = np.linalg.svd(Ks)
    smin = S[:, -1] if S.shape[1] == n else np.zeros(len(Ks))
    dead = np.flatnonzero(smin <= RANK_RTOL * S[:, 0])
    if dead.size:
        i = int(dead[0])
        vec = U[i, :, -1]
        return RatioTestResult("unobservable direction found", caps, (), (), float("nan"), i + 1, vec)
    rng = np.random.default_rng(seed)
    maxima, sups = [], []
    for cap in caps:
        best = 0.0
        for _ in range(samples):
            a = rng.standard_normal((cap, n))
            best = max(best, bundle_ratio(lams, Ks[:cap], a, k))
        maxima.append(best)
        sups.append(float(np.max(1.0 / (lams[:cap] ** (2 * k) * smin[:cap] ** 2))))
    return RatioTestResult("bounded", caps, tuple(maxima), tuple(sups), maxima[-1] / maxima[0])


# --------------------------------------------------------------------------
# resolvent bound on a sector


def resolvent_sector_check(D, basis, theta_sector: float, z_samples: int = 60, rays=None,
                           radii=(1e-2, 1e6)) -> float:
    """sup over sampled z and modes of |z| * ||(z - lam_j D)^{-1}||_2.

    Samples lie on the rays arg z = +-theta_sector and arg z = pi unless
    ``rays`` (angles) is given; moduli are log-spaced over ``radii``.
    """
    Dm = _mat(D)
    n = Dm.shape[0]
    dargs = np.abs(np.angle(np.linalg.eigvals(Dm)))
    if theta_sector <= dargs.max():
        raise ValueError(f"theta_sector {theta_sector:.4g} must exceed max |arg d_i| = {dargs.max():.4g}")
    lams = _eigs(basis)
    angles = np.asarray(rays if rays is not None else (theta_sector, -theta_sector, np.pi), dtype=float)
    r = np.geomspace(radii[0], radii[1], z_samples)
    z = (r[:, None] * np.exp(1j * angles[None, :])).ravel()
    eye = np.eye(n)
    best = 0.0
    for lam in lams:
        mats = z[:, None, None] * eye - lam * Dm
        s = np.linalg.svd(mats, compute_uv=False)
        smin = s[:, -1]
        scale = np.abs(z) + lam * np.linalg.norm(Dm, 2)
        if np.any(smin <= 1e-14 * scale):
            raise SingularResolvent(f"z - {lam:.4g} D is numerically singular on the sampled sector")
        best = max(best, float(np.max(np.abs(z) / smin)))
    return best


# --------------------------------------------------------------------------
# characteristic polynomial of the modal adjoint generator


def charpoly(X: np.ndarray) -> np.ndarray:
    """Coefficients (highest first) of det(mu I - X), Faddeev-LeVerrier.

    Trace recursion instead of eigenvalues, which stay inaccurate at
    defective (Jordan) eigenvalues.
    """
    n = X.shape[0]
    coef = np.zeros(n + 1)
    coef[0] = 1.0
    Mk = np.zeros_like(X)
    eye = np.eye(n)
    for k in range(1, n + 1):
        Mk = X @ Mk + coef[k - 1] * eye
        coef[k] = -np.trace(X @ Mk) / k
    return coef


def matrix_polyval(coef: np.ndarray, X: np.ndarray) -> np.ndarray:
    out = np.zeros_like(X)
    eye = np.eye(X.shape[0])
    for c in coef:
        out = out @ X + c * eye
    return out


@dataclass(frozen=True)
class CharPolyResult:
    coefficients: np.ndarray  # highest degree first
    residual: float  # ||p_j(-(lam D^T + A^T))||_2
    scale: float  # ||lam D^T + A^T||_2 ** n


def mode_char_poly(lam: float, D, A) -> CharPolyResult:
    """p_j(mu) = det(mu I + lam D^T + A^T) and its Cayley-Hamilton residual."""
    if lam <= 0:
        raise ValueError(f"eigenvalue must be positive, got {lam}")
    Dm, Am = _mat(D), _mat(A)
    Mp = lam * Dm.T + Am.T
    coef = charpoly(-Mp)
    res = float(np.linalg.norm(matrix_polyval(coef, -Mp), 2))
    return CharPolyResult(coef, res, float(np.linalg.norm(Mp, 2) ** Dm.shape[0]))
