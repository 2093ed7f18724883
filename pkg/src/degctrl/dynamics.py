"""Modal Galerkin solvers for the forward system and its adjoint.

State and adjoint are expanded on the eigenbasis, Y(t) = sum_j Y_j(t) w_j, and
each mode is advanced exactly with E_j = exp(M_j dt), M_j = -lambda_j D + A.
Controls are piecewise constant in time and live on the mesh nodes of the
control region. The adjoint is stepped with the transposed blocks and
observed through its exact average over each control interval, which makes
the discrete duality identity hold to rounding error.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, EmptySupport, UnstableStep
from .spectral import SpectralBasis, masked_mass, project, reconstruct


@dataclass(frozen=True)
class TimeGrid:
    L: int
    T: float

    def __post_init__(self):
        if self.L < 1 or not self.T > 0:
            raise ValueError(f"need L >= 1 and T > 0, got L={self.L}, T={self.T}")

    @property
    def dt(self) -> float:
        return self.T / self.L

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.L + 1) * self.dt


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    """Modal coefficients, shape (M, L+1, n).

    Adjoint trajectories also carry ``averages`` (M, L, n), the exact mean of
    z over each step, which is what the control region observes.
    """

    coeffs: np.ndarray
    direction: str
    grid: TimeGrid
    averages: np.ndarray | None = None

    @property
    def initial(self) -> np.ndarray:
        return self.coeffs[:, 0]

    @property
    def terminal(self) -> np.ndarray:
        return self.coeffs[:, -1]

    def norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.coeffs**2, axis=(0, 2)))


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """Nodal control values, shape (L, P, m), on the P mesh nodes of the control region."""

    values: np.ndarray
    node_index: np.ndarray
    grid: TimeGrid


def modal_generator(lam: float, D, A) -> np.ndarray:
    """M_j = -lambda_j D + A."""
    D = np.asarray(getattr(D, "entries", D), dtype=float)
    return -lam * D + np.asarray(A, dtype=float)


class ControlInjection:
    """Pairing of nodal controls on the control region with the eigenbasis.

    The control region is discretized by the mesh nodes in the closed
    interval; the pairing uses the mass form of the elements between them,
    so forcing g_j = B int v w_j and its adjoint (nodal restriction of
    B^T z) are exact transposes under that mass form.
    """

    def __init__(self, basis: SpectralBasis, omega, B):
        idx, mass = masked_mass(basis.mesh, omega)
        if idx.size < 2:
            raise EmptySupport(f"control region {omega} contains fewer than two mesh nodes")
        self.node_index = idx
        self.mass = mass.toarray()
        self.B = np.asarray(B, dtype=float)
        self.W = basis.nodal_eigenvectors[idx]  # (P, M)
        self.pairing = self.mass @ self.W  # (P, M)

    @property
    def P(self) -> int:
        return len(self.node_index)

    def forcing(self, V: np.ndarray) -> np.ndarray:
        """(L, P, m) nodal controls -> (L, M, n) modal forcing."""
        return np.einsum("pj,kpc,ac->kja", self.pairing, V, self.B)

    def observe(self, zbar: np.ndarray) -> np.ndarray:
        """(L, M, n) modal adjoint averages -> (L, P, m) nodal values of B^T z."""
        return np.einsum("pj,kja,ac->kpc", self.W, zbar, self.B)

    def inner(self, U: np.ndarray, V: np.ndarray, dt: float) -> float:
        """Space-time L2 pairing on the control region."""
        return float(dt * np.einsum("kpc,pq,kqc->", U, self.mass, V))


class Propagator:
    """Per-mode exponential blocks and the control pairing for one (problem, basis, grid)."""

    def __init__(self, spec, basis: SpectralBasis, grid: TimeGrid):
        self.spec = spec
        self.basis = basis
        self.grid = grid
        self.n = spec.n
        dt = grid.dt
        lams = basis.eigenvalues
        D = spec.D.entries
        A = np.asarray(spec.A, dtype=float)
        n = spec.n
        gens = -lams[:, None, None] * D[None] + A[None]
        aug = np.zeros((len(lams), 2 * n, 2 * n))
        aug[:, :n, :n] = gens * dt
        aug[:, :n, n:] = np.eye(n) * dt
        big = scipy.linalg.expm(aug)
        self.generators = gens
        self.E = np.ascontiguousarray(big[:, :n, :n])
        self.Phi = np.ascontiguousarray(big[:, :n, n:])
        self.ET = np.ascontiguousarray(np.transpose(self.E, (0, 2, 1)))
        self.PhiT = np.ascontiguousarray(np.transpose(self.Phi, (0, 2, 1)))
        bound = np.exp(np.linalg.norm(A, 2) * dt) * (1 + 1e-6)
        enorm = np.linalg.norm(self.E, 2, axis=(1, 2))
        if np.any(enorm > bound):
            j = int(np.argmax(enorm))
            raise UnstableStep(f"||E_{j + 1}|| = {enorm[j]:.6g} exceeds e^(||A|| dt) = {bound:.6g}")
        self.injection = ControlInjection(basis, spec.omega, spec.B)

    @property
    def M(self) -> int:
        return self.basis.M

    def zero_control(self) -> ControlSignal:
        inj = self.injection
        return ControlSignal(np.zeros((self.grid.L, inj.P, self.spec.m)), inj.node_index, self.grid)

    def as_modal(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y.reshape(-1, self.n) if Y.size % self.n == 0 else Y
        if Y.shape == (self.M, self.n):
            return Y
        if Y.ndim == 2 and Y.shape[1] == self.n:
            return project(self.basis, Y)
        raise DimensionMismatch(f"state of shape {Y.shape} is neither modal ({self.M}, {self.n}) nor nodal")

    def forward(self, Y0, V: np.ndarray | None = None) -> np.ndarray:
        Y0 = self.as_modal(Y0)
        L = self.grid.L
        out = np.empty((self.M, L + 1, self.n))
        out[:, 0] = Y0
        g = None if V is None else self.injection.forcing(V)
        y = Y0
        for k in range(L):
            y = np.einsum("jab,jb->ja", self.E, y)
            if g is not None:
                y = y + np.einsum("jab,jb->ja", self.Phi, g[k])
            out[:, k + 1] = y
        return out

    def adjoint(self, ZT) -> tuple[np.ndarray, np.ndarray]:
        ZT = self.as_modal(ZT)
        L = self.grid.L
        out = np.empty((self.M, L + 1, self.n))
        avg = np.empty((self.M, L, self.n))
        out[:, L] = ZT
        z = ZT
        dt = self.grid.dt
        for k in range(L - 1, -1, -1):
            avg[:, k] = np.einsum("jab,jb->ja", self.PhiT, z) / dt
            z = np.einsum("jab,jb->ja", self.ET, z)
            out[:, k] = z
        return out, avg

    def observe(self, avg: np.ndarray) -> np.ndarray:
        """B^T z on the control nodes, one value per step: (L, P, m)."""
        return self.injection.observe(np.transpose(avg, (1, 0, 2)))

    def control_norm2(self, V: np.ndarray) -> float:
        return self.injection.inner(V, V, self.grid.dt)


@lru_cache(maxsize=64)
def propagator(spec, basis: SpectralBasis, grid: TimeGrid) -> Propagator:
    return Propagator(spec, basis, grid)


def control_injection(basis: SpectralBasis, omega, B) -> ControlInjection:
    return ControlInjection(basis, omega, B)


def _control_values(prop: Propagator, v) -> np.ndarray | None:
    if v is None:
        return None
    V = np.asarray(getattr(v, "values", v), dtype=float)
    expected = (prop.grid.L, prop.injection.P, prop.spec.m)
    if V.shape != expected:
        raise DimensionMismatch(f"control has shape {V.shape}, expected {expected}")
    return V


def solve_forward(spec, basis: SpectralBasis, v, Y0, timegrid: TimeGrid) -> TrajectorySet:
    """Exact modal stepping Y_{k+1} = E Y_k + Phi g_k."""
    prop = propagator(spec, basis, timegrid)
    coeffs = prop.forward(Y0, _control_values(prop, v))
    return TrajectorySet(coeffs, "state", timegrid)


def solve_adjoint(spec, basis: SpectralBasis, ZT, timegrid: TimeGrid) -> TrajectorySet:
    """Backward adjoint -z_t - D^T M z = A^T z from z(T) = ZT."""
    prop = propagator(spec, basis, timegrid)
    coeffs, avg = prop.adjoint(ZT)
    return TrajectorySet(coeffs, "adjoint", timegrid, avg)


def adjoint_observation(spec, basis: SpectralBasis, traj: TrajectorySet) -> ControlSignal:
    """B^T z restricted to the control nodes, as a control signal."""
    prop = propagator(spec, basis, traj.grid)
    return ControlSignal(prop.observe(traj.averages), prop.injection.node_index, traj.grid)


def duality_residual(spec, basis: SpectralBasis, v, Y0, ZT, timegrid: TimeGrid) -> float:
    """Relative defect of <Y(T), Z_T> = <Y0, z(0)> + int_0^T int_omega v . B^T z."""
    prop = propagator(spec, basis, timegrid)
    V = _control_values(prop, v)
    Y = prop.forward(Y0, V)
    z, avg = prop.adjoint(ZT)
    lhs = float(np.sum(Y[:, -1] * z[:, -1]))
    init = float(np.sum(Y[:, 0] * z[:, 0]))
    ctrl = 0.0 if V is None else prop.injection.inner(V, prop.observe(avg), timegrid.dt)
    scale = abs(lhs) + abs(init) + abs(ctrl)
    if scale == 0.0:
        return 0.0
    return abs(lhs - init - ctrl) / scale


@dataclass(frozen=True)
class EnergyReport:
    sup_l2: float  # sup_t ||Y(t)||^2
    dissipation: float  # int_0^T ||sqrt(a) Y_x||^2 dt
    data_norm: float  # ||Y0||^2 + ||v||^2
    ratio: float


def energy_report(traj: TrajectorySet, basis: SpectralBasis, spec, v=None) -> EnergyReport:
    """Energy bound ratio (sup ||Y||^2 + int ||sqrt(a) Y_x||^2) / (||Y0||^2 + ||v||^2).

    The dissipation term uses the modal identity ||sqrt(a) Y_x||^2 = sum_j lambda_j |Y_j|^2
    with the trapezoid rule in time.
    """
    c = traj.coeffs
    sq = np.sum(c**2, axis=2)  # (M, L+1)
    sup = float(np.max(np.sum(sq, axis=0)))
    per_t = basis.eigenvalues[: c.shape[0]] @ sq
    diss = float(np.trapezoid(per_t, dx=traj.grid.dt)) if hasattr(np, "trapezoid") else float(np.trapz(per_t, dx=traj.grid.dt))
    vnorm = 0.0
    if v is not None:
        prop = propagator(spec, basis, traj.grid)
        vnorm = prop.control_norm2(_control_values(prop, v))
    data = float(np.sum(c[:, 0] ** 2)) + vnorm
    ratio = (sup + diss) / data if data > 0 else 0.0
    return EnergyReport(sup, diss, data, ratio)


# --------------------------------------------------------------------------
# export


def write_trajectory_csv(traj: TrajectorySet, path) -> None:
    t = traj.grid.times
    M, _, n = traj.coeffs.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "j", "component", "value"])
        for k, tk in enumerate(t):
            for j in range(M):
                for c in range(n):
                    w.writerow([repr(float(tk)), j + 1, c + 1, repr(float(traj.coeffs[j, k, c]))])


def write_snapshots_csv(traj: TrajectorySet, basis: SpectralBasis, times, path) -> None:
    grid_t = traj.grid.times
    ks = [int(np.argmin(np.abs(grid_t - t))) for t in times]
    x = basis.mesh.nodes
    n = traj.coeffs.shape[2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x"] + [f"y_{c + 1}" for c in range(n)])
        for k in ks:
            vals = reconstruct(basis, traj.coeffs[:, k], nodal=True)
            for xi, row in zip(x, vals):
                w.writerow([repr(float(grid_t[k])), repr(float(xi))] + [repr(float(r)) for r in row])
