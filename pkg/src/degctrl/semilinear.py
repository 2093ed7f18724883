"""Semilinear control by linearize-and-control fixed point.

For Y_t = D (a Y_x)_x + A Y + F(Y) + B v 1_omega the nonlinearity is
rewritten as F(Y) = A_Y Y with A_Y = int_0^1 dF(tau Y) dtau. Each outer
iterate freezes A_Y at its space-time average over the previous trajectory,
solves the linear penalized control problem with coupling A + mean(A_Y), and
feeds the controlled trajectory back in.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .algebra import kalman_report
from .dynamics import ControlSignal, TimeGrid, TrajectorySet, propagator
from .errors import NoConvergence, RankLostAtIterate, ValidationError
from .hum import CGOptions, HUMResult, minimize_dual
from .spectral import project, reconstruct

TAU_NODES, TAU_WEIGHTS = np.polynomial.legendre.leggauss(8)
TAU_NODES = 0.5 * (TAU_NODES + 1.0)
TAU_WEIGHTS = 0.5 * TAU_WEIGHTS


@dataclass(frozen=True, eq=False)
class NonlinearitySpec:
    """Vectorized F: (..., n) -> (..., n) with Jacobian (..., n) -> (..., n, n)."""

    F: object
    jacobian: object
    lipschitz: float
    n: int
    name: str = "F"
    check_seed: int = 0

    def __post_init__(self):
        zero = np.asarray(self.F(np.zeros(self.n)), dtype=float)
        if zero.shape != (self.n,) or np.max(np.abs(zero)) > 1e-12:
            raise ValidationError(f"F(0) must vanish, got {zero}", field="F")
        rng = np.random.default_rng(self.check_seed)
        h = 1e-6
        for _ in range(10):
            y = rng.uniform(-2.0, 2.0, self.n)
            J = np.asarray(self.jacobian(y), dtype=float)
            fd = np.empty((self.n, self.n))
            for j in range(self.n):
                e = np.zeros(self.n)
                e[j] = h
                fd[:, j] = (np.asarray(self.F(y + e)) - np.asarray(self.F(y - e))) / (2 * h)
            if np.max(np.abs(fd - J)) > 1e-5 * max(1.0, np.max(np.abs(J))):
                raise ValidationError(f"Jacobian disagrees with finite differences at {y}", field="jacobian")


def zero_nonlinearity(n: int) -> NonlinearitySpec:
    return NonlinearitySpec(lambda y: np.zeros_like(np.asarray(y, dtype=float)),
                            lambda y: np.zeros(np.shape(y) + (n,)), 0.0, n, "zero")


def linear_nonlinearity(A0) -> NonlinearitySpec:
    A0 = np.asarray(A0, dtype=float)
    n = A0.shape[0]
    return NonlinearitySpec(lambda y: np.asarray(y, dtype=float) @ A0.T,
                            lambda y: np.broadcast_to(A0, np.shape(y)[:-1] + (n, n)).copy(),
                            float(np.linalg.norm(A0, 2)), n, "linear")


def sine_coupling(scale: float = 0.1) -> NonlinearitySpec:
    """F(y) = scale (sin y2, sin y1)."""

    def F(y):
        y = np.asarray(y, dtype=float)
        return scale * np.stack([np.sin(y[..., 1]), np.sin(y[..., 0])], axis=-1)

    def J(y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape[:-1] + (2, 2))
        out[..., 0, 1] = scale * np.cos(y[..., 1])
        out[..., 1, 0] = scale * np.cos(y[..., 0])
        return out

    return NonlinearitySpec(F, J, abs(scale), 2, f"{scale:g} sine coupling")


def linearize(F_spec: NonlinearitySpec, Y) -> np.ndarray:
    """A_Y(x) = int_0^1 dF(tau Y(x)) dtau by 8-point Gauss-Legendre; shape (..., n, n)."""
    Y = np.asarray(Y, dtype=float)
    out = np.zeros(Y.shape + (Y.shape[-1],))
    for tau, w in zip(TAU_NODES, TAU_WEIGHTS):
        out += w * np.asarray(F_spec.jacobian(tau * Y), dtype=float)
    return out


# --------------------------------------------------------------------------
# helpers


def xt_norm(coeffs: np.ndarray, lams: np.ndarray, dt: float) -> float:
    """Surrogate of the X_T norm: sqrt(sup_t |Y|^2 + int_0^T sum_j lam_j |Y_j|^2 dt)."""
    sq = np.sum(coeffs**2, axis=2)  # (M, L+1)
    sup = float(np.max(np.sum(sq, axis=0)))
    per_t = lams[: coeffs.shape[0]] @ sq
    return float(np.sqrt(sup + dt * (np.sum(per_t) - 0.5 * (per_t[0] + per_t[-1]))))


def _space_time_weights(basis, grid: TimeGrid):
    x = basis.mesh.nodes
    wx = np.zeros_like(x)
    h = np.diff(x)
    wx[:-1] += 0.5 * h
    wx[1:] += 0.5 * h
    wt = np.full(grid.L + 1, grid.dt)
    wt[[0, -1]] *= 0.5
    return wx, wt / grid.T


def frozen_coupling(F_spec: NonlinearitySpec, basis, traj: TrajectorySet):
    """Space-time average of A_Y over a trajectory and the RMS deviation from it."""
    wx, wt = _space_time_weights(basis, traj.grid)
    nodal = np.einsum("pj,jka->pka", basis.nodal_eigenvectors, traj.coeffs)  # (nodes, L+1, n)
    fields = linearize(F_spec, nodal)
    w = wx[:, None] * wt[None, :]
    acc = np.einsum("pk,pkij->ij", w, fields)
    acc2 = float(np.einsum("pk,pkij->", w, (fields - acc) ** 2))
    return acc, float(np.sqrt(acc2))


def simulate_semilinear(spec, basis, F_spec: NonlinearitySpec, Y0, timegrid: TimeGrid, V=None,
                        picard_tol: float = 1e-12, picard_max: int = 50) -> TrajectorySet:
    """Exponential stepping of the full semilinear system with F as a forcing term.

    Each step uses the trapezoid average of the projected F at both ends and
    Picard sub-iterations on the unknown end state.
    """
    prop = propagator(spec, basis, timegrid)
    Y0 = prop.as_modal(Y0)
    g = None if V is None else prop.injection.forcing(np.asarray(getattr(V, "values", V), dtype=float))
    out = np.empty((basis.M, timegrid.L + 1, spec.n))
    out[:, 0] = Y0

    def pf(y):
        return project(basis, F_spec.F(reconstruct(basis, y)))

    y = Y0
    f0 = pf(y)
    for k in range(timegrid.L):
        base = np.einsum("jab,jb->ja", prop.E, y)
        if g is not None:
            base = base + np.einsum("jab,jb->ja", prop.Phi, g[k])
        nxt = base + np.einsum("jab,jb->ja", prop.Phi, f0)
        for _ in range(picard_max):
            f1 = pf(nxt)
            cand = base + np.einsum("jab,jb->ja", prop.Phi, 0.5 * (f0 + f1))
            done = np.max(np.abs(cand - nxt)) <= picard_tol * max(1.0, np.max(np.abs(cand)))
            nxt = cand
            if done:
                break
        else:
            raise NoConvergence(f"Picard sub-iterations did not settle at step {k}")
        y, f0 = nxt, pf(nxt)
        out[:, k + 1] = y
    return TrajectorySet(out, "state", timegrid)


# --------------------------------------------------------------------------
# fixed point


@dataclass(frozen=True)
class FixedPointOptions:
    max_outer: int = 20
    tol: float = 1e-6  # relative, in the X_T surrogate
    kalman_modes: int | None = None
    cg: CGOptions = field(default_factory=CGOptions)


@dataclass(frozen=True)
class IterateRecord:
    k: int
    fixed_point_residual: float
    terminal_norm: float
    control_cost: float
    kalman_verdict: str
    frozen_coupling_discrepancy: float
    coupling: tuple = field(default=(), repr=False)


@dataclass(frozen=True, eq=False)
class FixedPointResult:
    history: tuple
    result: HUMResult
    coupling: np.ndarray
    converged_by: str  # "coupling repeated" | "residual"
    semilinear_terminal_norm: float  # full nonlinear system driven by the final control
    notes: tuple = (
        "rank condition checked on visited iterates only",
    )


def _check_rank(spec, basis, coupling, modes):
    rep = kalman_report(basis, spec.D.entries, coupling, spec.B, modes)
    return rep


def fixed_point_control(spec, basis, F_spec: NonlinearitySpec, Y0, epsilon: float, timegrid: TimeGrid,
                        opts: FixedPointOptions | None = None) -> tuple[tuple, FixedPointResult]:
    """Outer iteration Y^{k+1} = controlled state with coupling A + mean(A_{Y^k}).

    Y^0 is the free linear solution. Converges when the frozen coupling
    repeats exactly (the next iterate would be bitwise identical) or when the
    X_T-surrogate step falls below ``opts.tol`` times the iterate norm.
    """
    opts = opts or FixedPointOptions()
    if F_spec.n != spec.n:
        raise ValidationError(f"nonlinearity acts on R^{F_spec.n}, system has n={spec.n}", field="F")
    modes = opts.kalman_modes or basis.M
    A = np.asarray(spec.A, dtype=float)
    lams = basis.eigenvalues
    prop = propagator(spec, basis, timegrid)
    Y0m = prop.as_modal(Y0)
    prev = TrajectorySet(prop.forward(Y0m), "state", timegrid)
    history = []
    last_coupling = None
    result = None
    for k in range(1, opts.max_outer + 1):
        Abar, disc = frozen_coupling(F_spec, basis, prev)
        coupling = A + Abar
        if last_coupling is not None and np.array_equal(coupling, last_coupling):
            return tuple(history), _finish(spec, basis, F_spec, Y0m, timegrid, history, result, coupling,
                                           "coupling repeated")
        rep = _check_rank(spec, basis, coupling, modes)
        if not rep.passed:
            raise RankLostAtIterate(f"frozen coupling at iterate {k} fails the rank condition", k, rep,
                                    tuple(history))
        sub = spec if np.array_equal(coupling, A) else spec.with_coupling(coupling)
        result = minimize_dual(sub, basis, epsilon, Y0m, timegrid, opts.cg)
        step = xt_norm(result.state.coeffs - prev.coeffs, lams, timegrid.dt)
        scale = max(xt_norm(result.state.coeffs, lams, timegrid.dt), 1e-300)
        history.append(IterateRecord(k, step, result.terminal_norm, result.control_cost, rep.verdict, disc,
                                     tuple(coupling.ravel())))
        prev = result.state
        last_coupling = coupling
        if not np.all(np.isfinite(result.state.coeffs)):
            break
        if step <= opts.tol * scale:
            return tuple(history), _finish(spec, basis, F_spec, Y0m, timegrid, history, result, coupling,
                                           "residual")
    res = [h.fixed_point_residual for h in history]
    trend = "nonincreasing" if all(b <= a for a, b in zip(res[-5:], res[-4:])) else "not monotone"
    raise NoConvergence(f"no convergence in {len(history)} outer iterations; last residuals "
                        f"{[f'{r:.3g}' for r in res[-5:]]} ({trend})", tuple(history))


def _finish(spec, basis, F_spec, Y0m, grid, history, result, coupling, how) -> FixedPointResult:
    full = simulate_semilinear(spec, basis, F_spec, Y0m, grid, result.control)
    return FixedPointResult(tuple(history), result, coupling, how, float(np.linalg.norm(full.terminal)))


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "fixed_point_residual", "terminal_norm", "control_cost", "kalman_verdict",
                    "frozen_coupling_discrepancy"])
        for h in history:
            w.writerow([h.k, repr(h.fixed_point_residual), repr(h.terminal_norm), repr(h.control_cost),
                        h.kalman_verdict, repr(h.frozen_coupling_discrepancy)])


# --------------------------------------------------------------------------
# two phases


@dataclass(frozen=True, eq=False)
class TwoPhaseResult:
    t0: float
    k0: int
    state: TrajectorySet
    control: ControlSignal
    phase1: TrajectorySet
    phase2: FixedPointResult

    @property
    def terminal_norm(self) -> float:
        return float(np.linalg.norm(self.state.terminal))


def two_phase_control(spec, basis, F_spec: NonlinearitySpec, Y0, t0: float, epsilon: float, timegrid: TimeGrid,
                      opts: FixedPointOptions | None = None) -> TwoPhaseResult:
    """Free semilinear run on [0, t0], then the fixed-point control on [t0, T].

    ``t0`` is snapped to the nearest grid time; the snapped value must lie in
    (0, T/2).
    """
    k0 = int(round(t0 / timegrid.dt))
    t0s = k0 * timegrid.dt
    if not (0 < k0 and t0s < 0.5 * timegrid.T):
        raise ValueError(f"t0 = {t0} (snapped {t0s}) must lie in (0, T/2)")
    g1 = TimeGrid(k0, t0s)
    phase1 = simulate_semilinear(spec, basis, F_spec, Y0, g1)
    Yt0 = phase1.terminal.copy()
    g2 = TimeGrid(timegrid.L - k0, timegrid.T - t0s)
    spec2 = spec.with_horizon(g2.T)
    _, fp = fixed_point_control(spec2, basis, F_spec, Yt0, epsilon, g2, opts)
    Y = np.concatenate([phase1.coeffs, fp.result.state.coeffs[:, 1:]], axis=1)
    v2 = fp.result.control
    V = np.concatenate([np.zeros((k0,) + v2.values.shape[1:]), v2.values], axis=0)
    return TwoPhaseResult(t0s, k0, TrajectorySet(Y, "state", timegrid),
                          ControlSignal(V, v2.node_index, timegrid), phase1, fp)
