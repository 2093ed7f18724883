"""Penalized HUM: approximate null controls from a dual quadratic functional.

The Gramian Lambda maps an adjoint terminal datum Z to the terminal state
driven from rest by the control v = B^T z on the control region. With b the
free terminal state of Y0, the penalized dual functional

    J(Z) = 1/2 <Lambda Z, Z> + eps/2 |Z|^2 + <Z, b>

is minimized by conjugate gradient; at the optimum Y(T) = b + Lambda Z = -eps Z.
All vectors are modal coefficient arrays of shape (M, n).
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .algebra import RANK_RTOL, kalman_matrix
from .dynamics import ControlSignal, TimeGrid, TrajectorySet, propagator
from .errors import CGStalled

FLOOR_DECREASE = 0.05


@dataclass(frozen=True)
class CGOptions:
    tol: float = 1e-8
    max_iter: int = 500

    def __post_init__(self):
        if not self.tol > 0 or self.max_iter < 1:
            raise ValueError(f"need tol > 0 and max_iter >= 1, got {self.tol}, {self.max_iter}")


@dataclass(frozen=True, eq=False)
class HUMResult:
    epsilon: float
    ZT: np.ndarray  # optimal dual datum (M, n)
    control: ControlSignal
    state: TrajectorySet
    terminal_norm: float
    control_cost: float  # 1/2 int int |v|^2
    dual_value: float
    cg_iterations: int
    cg_residual: float
    optimality_residual: float  # |Z + Y(T)/eps|
    ledger_lhs: float  # 1/2 int int |B^T z|^2 + |Y(T)|^2 / (2 eps)
    ledger_rhs: float  # |z(0)| |Y0|
    trace: tuple = field(default=(), repr=False)  # dual value per CG iterate

    @property
    def optimality_bound(self) -> float:
        return self.cg_tol * self.terminal_norm / self.epsilon + 1e-12

    cg_tol: float = 1e-8


# --------------------------------------------------------------------------
# Gramian


class _Gramian:
    def __init__(self, spec, basis, grid: TimeGrid):
        self.prop = propagator(spec, basis, grid)
        self.shape = (basis.M, spec.n)

    def control(self, Z: np.ndarray) -> np.ndarray:
        _, avg = self.prop.adjoint(Z)
        return self.prop.observe(avg)

    def __call__(self, Z: np.ndarray) -> np.ndarray:
        V = self.control(Z)
        return self.prop.forward(np.zeros(self.shape), V)[:, -1]


def _modal(prop, Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.shape == (prop.M, prop.n):
        return Z
    if Z.size == prop.M * prop.n:
        return Z.reshape(prop.M, prop.n)
    return prop.as_modal(Z)


def gramian_apply(spec, basis, ZT, timegrid: TimeGrid) -> np.ndarray:
    """Lambda Z_T: adjoint from Z_T, control B^T z on omega, forward from rest, state at T."""
    g = _Gramian(spec, basis, timegrid)
    return g(_modal(g.prop, ZT))


def assemble_gramian(spec, basis, timegrid: TimeGrid) -> np.ndarray:
    """Dense (Mn x Mn) Gramian, one column per unit modal datum."""
    g = _Gramian(spec, basis, timegrid)
    size = basis.M * spec.n
    G = np.empty((size, size))
    for c in range(size):
        e = np.zeros(size)
        e[c] = 1.0
        G[:, c] = g(e.reshape(g.shape)).ravel()
    return G


def free_terminal(spec, basis, Y0, timegrid: TimeGrid) -> np.ndarray:
    prop = propagator(spec, basis, timegrid)
    return prop.forward(Y0)[:, -1]


# --------------------------------------------------------------------------
# conjugate gradient on the dual functional


def _cg(apply, b: np.ndarray, eps: float, opts: CGOptions):
    """Solve (Lambda + eps) Z = -b; returns Z, Lambda Z, iterations, residual trace, dual trace.

    Stops once |r| <= tol |b + Lambda Z| + 1e-12 eps, which is the optimality
    bound |Z + Y(T)/eps| <= tol |Y(T)|/eps + 1e-12 rewritten in residual form.
    """
    Z = np.zeros_like(b)
    LZ = np.zeros_like(b)
    r = -b.copy()
    p = r.copy()
    rr = float(np.sum(r * r))
    res_trace = [np.sqrt(rr)]
    dual_trace = [0.0]
    for it in range(1, opts.max_iter + 1):
        if np.sqrt(rr) <= opts.tol * np.linalg.norm(b + LZ) + 1e-12 * eps:
            return Z, LZ, it - 1, res_trace, dual_trace
        Lp = apply(p)
        Ap = Lp + eps * p
        curv = float(np.sum(p * Ap))
        if not curv > 0:
            raise CGStalled(f"nonpositive curvature {curv:.3g} at iteration {it}", res_trace)
        alpha = rr / curv
        Z = Z + alpha * p
        LZ = LZ + alpha * Lp
        r = r - alpha * Ap
        rr_new = float(np.sum(r * r))
        res_trace.append(np.sqrt(rr_new))
        dual_trace.append(0.5 * float(np.sum(Z * LZ)) + 0.5 * eps * float(np.sum(Z * Z)) + float(np.sum(Z * b)))
        p = r + (rr_new / rr) * p
        rr = rr_new
    if np.sqrt(rr) <= opts.tol * np.linalg.norm(b + LZ) + 1e-12 * eps:
        return Z, LZ, opts.max_iter, res_trace, dual_trace
    raise CGStalled(
        f"residual {np.sqrt(rr):.3e} above tolerance after {opts.max_iter} iterations",
        res_trace,
        (Z, LZ, dual_trace),
    )


def _package(spec, basis, grid, eps, Y0, Z, iters, res, trace, tol) -> HUMResult:
    g = _Gramian(spec, basis, grid)
    prop = g.prop
    zt, avg = prop.adjoint(Z)
    V = prop.observe(avg)
    Y = prop.forward(Y0, V)
    YT = Y[:, -1]
    b = prop.forward(Y0)[:, -1]
    obs = prop.control_norm2(V)
    cost = 0.5 * obs
    tn = float(np.linalg.norm(YT))
    dual = 0.5 * obs + 0.5 * eps * float(np.sum(Z * Z)) + float(np.sum(Z * b))
    return HUMResult(
        epsilon=eps,
        ZT=Z,
        control=ControlSignal(V, prop.injection.node_index, grid),
        state=TrajectorySet(Y, "state", grid),
        terminal_norm=tn,
        control_cost=cost,
        dual_value=dual,
        cg_iterations=iters,
        cg_residual=res,
        optimality_residual=float(np.linalg.norm(Z + YT / eps)),
        ledger_lhs=cost + tn**2 / (2 * eps),
        ledger_rhs=float(np.linalg.norm(zt[:, 0]) * np.linalg.norm(Y[:, 0])),
        trace=tuple(trace),
        cg_tol=tol,
    )


def minimize_dual(spec, basis, epsilon: float, Y0, timegrid: TimeGrid, cg_options: CGOptions | None = None) -> HUMResult:
    """Minimize the penalized dual functional and rebuild the control and state.

    The returned state is recomputed by a forward solve with the extracted
    control, so ``terminal_norm`` and ``optimality_residual`` do not rely on
    the CG recursion. Raises CGStalled (with the residual trace and a
    partial result) when the iteration budget runs out.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    opts = cg_options or CGOptions()
    g = _Gramian(spec, basis, timegrid)
    Y0m = g.prop.as_modal(Y0)
    b = g.prop.forward(Y0m)[:, -1]
    try:
        Z, _, iters, res_trace, dual_trace = _cg(g, b, epsilon, opts)
    except CGStalled as exc:
        partial = None
        if exc.result is not None:
            Z = exc.result[0]
            partial = _package(spec, basis, timegrid, epsilon, Y0m, Z, opts.max_iter,
                               exc.trace[-1], exc.result[2], opts.tol)
        raise CGStalled(str(exc), exc.trace, partial) from None
    out = _package(spec, basis, timegrid, epsilon, Y0m, Z, iters, res_trace[-1], dual_trace, opts.tol)
    if out.optimality_residual > out.optimality_bound and iters < opts.max_iter:
        # recursive residual drifted from the true one; polish with a few more steps
        Z2, _, more, rt, dt = _cg(g, b + g(Z) + epsilon * Z, epsilon, opts)
        out = _package(spec, basis, timegrid, epsilon, Y0m, Z + Z2, iters + more, rt[-1], dual_trace + dt[1:], opts.tol)
    return out


def dense_solve(spec, basis, epsilon: float, Y0, timegrid: TimeGrid) -> np.ndarray:
    """Direct solve of (Lambda + eps I) Z = -b with Lambda assembled column by column."""
    G = assemble_gramian(spec, basis, timegrid)
    b = free_terminal(spec, basis, Y0, timegrid).ravel()
    Z = scipy.linalg.solve(G + epsilon * np.eye(len(b)), -b, assume_a="sym")
    return Z.reshape(basis.M, spec.n)


# --------------------------------------------------------------------------
# epsilon sweep


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    terminal_norm: float
    control_cost: float
    dual_value: float
    cg_iters: int
    verdict: str  # "ok" | "discretization floor" | "cg stalled"


@dataclass(frozen=True)
class SweepTable:
    rows: tuple
    floor_reached: bool

    @property
    def epsilons(self) -> np.ndarray:
        return np.array([r.epsilon for r in self.rows])

    @property
    def terminal_norms(self) -> np.ndarray:
        return np.array([r.terminal_norm for r in self.rows])

    @property
    def control_costs(self) -> np.ndarray:
        return np.array([r.control_cost for r in self.rows])

    def ratios(self) -> np.ndarray:
        t = self.terminal_norms
        return t[:-1] / t[1:]


def _sweep_row(spec, basis, Y0, eps, grid, opts) -> SweepRow:
    try:
        r = minimize_dual(spec, basis, eps, Y0, grid, opts)
        return SweepRow(eps, r.terminal_norm, r.control_cost, r.dual_value, r.cg_iterations, "ok")
    except CGStalled as exc:
        p = exc.result
        if p is None:
            return SweepRow(eps, float("nan"), float("nan"), float("nan"), len(exc.trace) - 1, "cg stalled")
        return SweepRow(eps, p.terminal_norm, p.control_cost, p.dual_value, p.cg_iterations, "cg stalled")


def epsilon_sweep(spec, basis, Y0, epsilons, timegrid: TimeGrid, cg_options: CGOptions | None = None,
                  stop_at_floor: bool = True, workers: int = 1) -> SweepTable:
    """One penalized solve per epsilon, in the given (decreasing) order.

    A row whose terminal norm fell by less than 5% from the previous row is
    labeled "discretization floor"; with ``stop_at_floor`` the table ends
    there. Rows are independent and may be computed on ``workers`` threads;
    the output order is always the input order.
    """
    eps = [float(e) for e in epsilons]
    if not eps or any(not e > 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be positive and strictly decreasing")
    opts = cg_options or CGOptions()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            raw = list(ex.map(lambda e: _sweep_row(spec, basis, Y0, e, timegrid, opts), eps))
    else:
        raw = [_sweep_row(spec, basis, Y0, e, timegrid, opts) for e in eps]
    rows = []
    floor = False
    for row in raw:
        if rows and row.verdict == "ok":
            prev = rows[-1].terminal_norm
            if prev > 0 and row.terminal_norm > (1 - FLOOR_DECREASE) * prev:
                row = SweepRow(*[getattr(row, f) for f in ("epsilon", "terminal_norm", "control_cost",
                                                           "dual_value", "cg_iters")], "discretization floor")
        rows.append(row)
        if row.verdict == "discretization floor":
            floor = True
            if stop_at_floor:
                break
    return SweepTable(tuple(rows), floor)


def write_sweep_csv(table: SweepTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon", "terminal_norm", "control_cost", "dual_value", "cg_iters", "verdict"])
        for r in table.rows:
            w.writerow([repr(r.epsilon), repr(r.terminal_norm), repr(r.control_cost), repr(r.dual_value),
                        r.cg_iters, r.verdict])


# --------------------------------------------------------------------------
# observability constant


@dataclass(frozen=True, eq=False)
class ObservabilityEstimate:
    value: float  # lower bound on C in |z(0)|^2 <= C int int_omega |B^T z|^2
    trace: tuple  # running estimate: samples first, then power iterates
    witness: np.ndarray | None = None  # Z_T with zero observation, when found
    witness_mode: int | None = None

    @property
    def is_witness(self) -> bool:
        return self.witness is not None


def _ratio(prop, Z) -> tuple[float, float]:
    z, avg = prop.adjoint(Z)
    return float(np.sum(z[:, 0] ** 2)), prop.control_norm2(prop.observe(avg))


def observation_factor(spec, basis, timegrid: TimeGrid):
    """Square factors of the observation problem.

    Returns (R, S) with |R vec(Z)|^2 = int int_omega |B^T z|^2 and
    S vec(Z) = z(0). R is the triangular factor of the space-time observation
    operator, accumulated one time step at a time so the Gramian itself is
    never formed.
    """
    prop = propagator(spec, basis, timegrid)
    inj = prop.injection
    M, n = basis.M, spec.n
    size = M * n
    chol = np.linalg.cholesky(inj.mass)
    z = np.transpose(np.eye(size).reshape(size, M, n), (1, 0, 2)).copy()  # (M, batch, n)
    R = np.zeros((0, size))
    sdt = np.sqrt(timegrid.dt)
    for _ in range(timegrid.L):
        zbar = np.einsum("jab,jsb->jsa", prop.PhiT, z) / timegrid.dt
        obs = np.einsum("pj,jsa,ac->spc", inj.W, zbar, inj.B)
        blk = sdt * np.einsum("qp,spc->qcs", chol.T, obs).reshape(-1, size)
        R = np.linalg.qr(np.vstack([R, blk]), mode="r")
        z = np.einsum("jab,jsb->jsa", prop.ET, z)
    S = np.transpose(z, (1, 0, 2)).reshape(size, size).T
    return R, S


def _kernel_witness(spec, basis, prop):
    D, A, B = spec.D.entries, np.asarray(spec.A, float), np.asarray(spec.B, float)
    for j, lam in enumerate(basis.eigenvalues):
        U, s, _ = np.linalg.svd(kalman_matrix(lam, D, A, B))
        if s.size == spec.n and s[-1] > RANK_RTOL * s[0]:
            continue
        Z = np.zeros((basis.M, spec.n))
        Z[j] = U[:, -1]
        z0, obs = _ratio(prop, Z)
        if z0 > 0 and obs <= 1e-24 * z0:
            return j + 1, Z
    return None


def observability_estimate(spec, basis, timegrid: TimeGrid, n_samples: int = 0, power_iterations: int = 0,
                           seed: int = 0, rtol: float = 1e-10) -> ObservabilityEstimate:
    """Lower bound on the observability constant of the discrete adjoint.

    First every mode whose Kalman matrix loses rank is probed with its left
    kernel vector; a datum with zero observation but nonzero z(0) is returned
    as an infinite-constant witness. Otherwise the estimate is the maximum of
    the ratio |z(0)|^2 / int int |B^T z|^2 over ``n_samples`` Gaussian data,
    refined by power iteration on the pencil (S^T S, R^T R) written in the
    orthonormal coordinates of the stacked factor [R; S].
    """
    if n_samples <= 0 and power_iterations <= 0:
        raise ValueError("need n_samples > 0 or power_iterations > 0")
    prop = propagator(spec, basis, timegrid)
    M, n = basis.M, spec.n
    found = _kernel_witness(spec, basis, prop)
    if found is not None:
        return ObservabilityEstimate(float("inf"), (float("inf"),), found[1], found[0])
    rng = np.random.default_rng(seed)
    trace = []
    best, best_Z = 0.0, None
    for _ in range(n_samples):
        Z = rng.standard_normal((M, n))
        z0, obs = _ratio(prop, Z)
        if obs <= 1e-24 * z0:
            return ObservabilityEstimate(float("inf"), tuple(trace) + (float("inf"),), Z)
        if z0 / obs > best:
            best, best_Z = z0 / obs, Z
        trace.append(best)
    if power_iterations > 0:
        R, S = observation_factor(spec, basis, timegrid)
        size = M * n
        Q, Tfac = np.linalg.qr(np.vstack([R, S]))
        Q1, Q2 = Q[:size], Q[size:]
        R1 = np.linalg.qr(Q1, mode="r")
        if np.min(np.abs(np.diag(R1))) <= 1e-14:
            k = int(np.argmin(np.abs(np.diag(R1))))
            y = np.zeros(size)
            y[k] = 1.0
            Z = scipy.linalg.solve_triangular(Tfac, scipy.linalg.solve_triangular(R1, y)).reshape(M, n)
            return ObservabilityEstimate(float("inf"), tuple(trace) + (float("inf"),), Z)
        y = Tfac @ best_Z.ravel() if best_Z is not None else np.ones(size)
        y /= np.linalg.norm(y)
        mu_old = 0.0
        for _ in range(power_iterations):
            w = Q2.T @ (Q2 @ y)
            y = scipy.linalg.solve_triangular(R1, scipy.linalg.solve_triangular(R1, w, trans="T"))
            y /= np.linalg.norm(y)
            mu = float(np.sum((Q2 @ y) ** 2) / np.sum((Q1 @ y) ** 2))
            best = max(best, mu)
            trace.append(best)
            if abs(mu - mu_old) <= rtol * mu:
                break
            mu_old = mu
    return ObservabilityEstimate(best, tuple(trace))


def scalar_observability_constant(lam: float, d: float, T: float) -> float:
    """Continuous constant for z' = lam d z on (0, T) observed on the whole interval: 2 lam d / (e^{2 lam d T} - 1)."""
    k = 2 * lam * d
    return float(k / np.expm1(k * T))

