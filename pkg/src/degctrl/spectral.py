"""P1 finite elements for -(a y')' on a mesh graded toward the degeneracy.

The coefficient is sampled at element midpoints, so a(0) = 0 never enters
the stiffness form. In the SD class the flux condition (a y')(0) = 0 is
natural and node 0 stays a free unknown.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.special
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionMismatch, SingularElement, SolverFailure

DENSE_LIMIT = 400


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    gamma: float

    @property
    def N(self) -> int:
        return len(self.nodes) - 1

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[1:] + self.nodes[:-1])


def grading_exponent(K: float) -> float:
    return max(1.0, 2.0 / (2.0 - K))


def build_graded_mesh(N: int, K: float) -> Mesh:
    """Nodes (i/N)**gamma with gamma = max(1, 2/(2-K))."""
    if N < 2:
        raise ValueError(f"need at least 2 elements, got N={N}")
    if not 0.0 <= K < 2.0:
        raise ValueError(f"degeneracy exponent must lie in [0, 2), got {K}")
    gamma = grading_exponent(K)
    nodes = (np.arange(N + 1) / N) ** gamma
    nodes[-1] = 1.0
    nodes.setflags(write=False)
    return Mesh(nodes, gamma)


@dataclass(frozen=True, eq=False)
class Forms:
    mesh: Mesh
    boundary: str
    stiffness_full: sp.csr_matrix
    mass_full: sp.csr_matrix
    dofs: np.ndarray  # node indices of free unknowns

    @property
    def stiffness(self) -> sp.csr_matrix:
        return self.stiffness_full[self.dofs][:, self.dofs].tocsr()

    @property
    def mass(self) -> sp.csr_matrix:
        return self.mass_full[self.dofs][:, self.dofs].tocsr()


def _assemble(nodes: np.ndarray, coef: np.ndarray):
    h = np.diff(nodes)
    ne = len(h)
    rows = np.concatenate([np.arange(ne), np.arange(ne), np.arange(1, ne + 1), np.arange(1, ne + 1)])
    cols = np.concatenate([np.arange(ne), np.arange(1, ne + 1), np.arange(ne), np.arange(1, ne + 1)])
    k = coef / h
    kvals = np.concatenate([k, -k, -k, k])
    mvals = np.concatenate([h / 3, h / 6, h / 6, h / 3])
    shape = (ne + 1, ne + 1)
    K = sp.coo_matrix((kvals, (rows, cols)), shape=shape).tocsr()
    M = sp.coo_matrix((mvals, (rows, cols)), shape=shape).tocsr()
    return K, M


def assemble_forms(mesh: Mesh, a, boundary: str) -> Forms:
    """Stiffness int a w' v' (midpoint rule) and consistent P1 mass.

    WD: Dirichlet at both ends; SD: Dirichlet at x = 1 only.
    """
    coef = np.asarray(a(mesh.midpoints), dtype=float)
    bad = np.flatnonzero(~(coef > 0))
    if bad.size:
        raise SingularElement(f"nonpositive coefficient on element {bad[0]} (x={mesh.midpoints[bad[0]]:.3g})")
    K, M = _assemble(mesh.nodes, coef)
    if boundary == "WD":
        dofs = np.arange(1, mesh.N)
    elif boundary == "SD":
        dofs = np.arange(0, mesh.N)
    else:
        raise ValueError(f"boundary must be 'WD' or 'SD', got {boundary!r}")
    return Forms(mesh, boundary, K, M, dofs)


def masked_mass(mesh: Mesh, interval) -> tuple[np.ndarray, sp.csr_matrix]:
    """Mass form over the elements lying inside ``interval``.

    Returns the node indices covered (those in the closed interval) and the
    mass matrix restricted to them.
    """
    lo, hi = interval
    idx = np.flatnonzero((mesh.nodes >= lo) & (mesh.nodes <= hi))
    if idx.size < 2:
        return idx, sp.csr_matrix((idx.size, idx.size))
    _, M = _assemble(mesh.nodes[idx], np.ones(idx.size - 1))
    return idx, M


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # (n_dofs, M)
    forms: Forms = field(repr=False)

    @property
    def M(self) -> int:
        return len(self.eigenvalues)

    @property
    def mesh(self) -> Mesh:
        return self.forms.mesh

    @property
    def boundary(self) -> str:
        return self.forms.boundary

    @property
    def mass_form(self) -> sp.csr_matrix:
        return self.forms.mass

    @property
    def stiffness_form(self) -> sp.csr_matrix:
        return self.forms.stiffness

    @property
    def nodal_eigenvectors(self) -> np.ndarray:
        """Eigenvectors on every mesh node, zero at Dirichlet nodes."""
        full = np.zeros((self.mesh.N + 1, self.M))
        full[self.forms.dofs] = self.eigenvectors
        return full

    def truncate(self, M: int) -> "SpectralBasis":
        if M > self.M:
            raise DimensionMismatch(f"basis has {self.M} modes, asked for {M}")
        return SpectralBasis(self.eigenvalues[:M], self.eigenvectors[:, :M], self.forms)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    piv = np.argmax(np.abs(vecs) > 1e-8 * np.abs(vecs).max(axis=0), axis=0)
    signs = np.sign(vecs[piv, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def eigensolve(forms: Forms, M: int) -> SpectralBasis:
    """Lowest ``M`` pairs of K w = lambda M w, mass-orthonormal, ascending."""
    K = forms.stiffness
    Mm = forms.mass
    dim = K.shape[0]
    if not 1 <= M <= dim - 1:
        raise ValueError(f"mode count must be in [1, {dim - 1}], got {M}")
    if dim <= DENSE_LIMIT:
        vals, vecs = scipy.linalg.eigh(K.toarray(), Mm.toarray(), subset_by_index=(0, M - 1))
    else:
        v0 = np.cos(np.linspace(0.0, 1.0, dim)) + 0.5
        try:
            vals, vecs = spla.eigsh(K.tocsc(), k=M, M=Mm.tocsc(), sigma=0.0, which="LM", v0=v0, tol=0.0)
        except (spla.ArpackNoConvergence, spla.ArpackError) as exc:
            raise SolverFailure(f"eigensolver did not converge: {exc}") from exc
        # Rayleigh-Ritz on the returned subspace cleans up orthonormality
        kr = vecs.T @ (K @ vecs)
        mr = vecs.T @ (Mm @ vecs)
        vals, rot = scipy.linalg.eigh(0.5 * (kr + kr.T), 0.5 * (mr + mr.T))
        vecs = vecs @ rot
    order = np.argsort(vals)
    vals = vals[order]
    vecs = _fix_signs(vecs[:, order])
    if not np.all(np.isfinite(vals)) or vals[0] <= 0:
        raise SolverFailure(f"eigensolver returned invalid spectrum starting {vals[:3]}")
    vals.setflags(write=False)
    vecs.setflags(write=False)
    return SpectralBasis(vals, vecs, forms)


def compute_basis(problem, N: int = 2000, M: int = 32) -> SpectralBasis:
    """Mesh, forms and eigenpairs for a problem's coefficient and boundary class."""
    mesh = build_graded_mesh(N, min(problem.a.K, 1.999))
    forms = assemble_forms(mesh, problem.a, problem.boundary)
    return eigensolve(forms, M)


# --------------------------------------------------------------------------
# closed-form benchmark


def bessel_zeros(nu: float, count: int) -> np.ndarray:
    """First ``count`` positive zeros of J_nu (nu >= 0), bracketed on a fine scan and refined by Brent."""
    if nu < 0 or count < 1:
        raise ValueError(f"need nu >= 0 and count >= 1, got {nu}, {count}")
    zeros = []
    step = 0.1
    lo = max(step, 1e-6)
    f_lo = scipy.special.jv(nu, lo)
    while len(zeros) < count:
        hi = lo + step
        f_hi = scipy.special.jv(nu, hi)
        if f_lo == 0.0:
            zeros.append(lo)
        elif f_lo * f_hi < 0:
            zeros.append(scipy.optimize.brentq(lambda z: scipy.special.jv(nu, z), lo, hi, xtol=1e-15, rtol=1e-15))
        lo, f_lo = hi, f_hi
    return np.array(zeros[:count])


def power_law_eigenvalues(exponent: float, scale: float, count: int) -> np.ndarray:
    """Eigenvalues of -(s x^alpha y')' with the class-appropriate condition at 0 and y(1) = 0.

    lambda_k = s ((2 - alpha)/2)^2 j_{nu,k}^2 with nu = |1 - alpha| / (2 - alpha).
    """
    if not 0 < exponent < 2:
        raise ValueError(f"exponent must lie in (0, 2), got {exponent}")
    nu = abs(1.0 - exponent) / (2.0 - exponent)
    return scale * ((2.0 - exponent) / 2.0) ** 2 * bessel_zeros(nu, count) ** 2


def benchmark_eigenvalues(problem, count: int) -> np.ndarray | None:
    """Closed-form eigenvalues when the coefficient is a pure power, else None."""
    fam = getattr(problem.a, "evaluator", None)
    if fam is None or not hasattr(fam, "exponent") or not 0 < fam.exponent < 2:
        return None
    return power_law_eigenvalues(fam.exponent, fam.scale, count)


# --------------------------------------------------------------------------
# quality certificates


def orthonormality_error(basis: SpectralBasis) -> float:
    W = basis.eigenvectors
    G = W.T @ (basis.mass_form @ W)
    return float(np.abs(G - np.eye(basis.M)).max())


def rayleigh_residuals(basis: SpectralBasis) -> np.ndarray:
    """||K w_j - lambda_j M w_j|| in the mass-dual norm, one value per mode."""
    W = basis.eigenvectors
    R = basis.stiffness_form @ W - (basis.mass_form @ W) * basis.eigenvalues
    solve = spla.factorized(basis.mass_form.tocsc())
    out = np.empty(basis.M)
    for j in range(basis.M):
        out[j] = np.sqrt(max(R[:, j] @ solve(R[:, j]), 0.0))
    return out


# --------------------------------------------------------------------------
# modal transforms


def _to_dofs(basis: SpectralBasis, u: np.ndarray) -> np.ndarray:
    n_dofs = basis.eigenvectors.shape[0]
    if u.shape[0] == n_dofs:
        return u
    if u.shape[0] == basis.mesh.N + 1:
        return u[basis.forms.dofs]
    raise DimensionMismatch(
        f"nodal vector has {u.shape[0]} rows; expected {n_dofs} unknowns or {basis.mesh.N + 1} nodes"
    )


def project(basis: SpectralBasis, u) -> np.ndarray:
    """Modal coefficients <u, w_j>_mass. ``u`` may carry trailing component axes."""
    u = _to_dofs(basis, np.asarray(u, dtype=float))
    return basis.eigenvectors.T @ (basis.mass_form @ u)


def reconstruct(basis: SpectralBasis, coeffs, nodal: bool = False) -> np.ndarray:
    """Nodal vector sum_j c_j w_j (on unknowns, or on every node if ``nodal``)."""
    c = np.asarray(coeffs, dtype=float)
    if c.shape[0] != basis.M:
        raise DimensionMismatch(f"expected {basis.M} modal coefficients, got {c.shape[0]}")
    W = basis.nodal_eigenvectors if nodal else basis.eigenvectors
    return W @ c


def mass_norm(basis: SpectralBasis, u) -> float:
    u = _to_dofs(basis, np.asarray(u, dtype=float))
    return float(np.sqrt(np.sum(u * (basis.mass_form @ u))))


# --------------------------------------------------------------------------
# export


def write_eigenvalues_csv(basis: SpectralBasis, path, reference=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["j", "lambda_j"] + (["reference", "rel_error"] if reference is not None else [])
        w.writerow(header)
        for j, lam in enumerate(basis.eigenvalues, start=1):
            row = [j, repr(float(lam))]
            if reference is not None and j <= len(reference):
                ref = float(reference[j - 1])
                row += [repr(ref), repr(float(abs(lam - ref) / ref))]
            w.writerow(row)


def write_eigenvectors_csv(basis: SpectralBasis, path) -> None:
    W = basis.nodal_eigenvectors
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x"] + [f"w_{j}" for j in range(1, basis.M + 1)])
        for x, row in zip(basis.mesh.nodes, W):
            w.writerow([repr(float(x))] + [repr(float(v)) for v in row])
