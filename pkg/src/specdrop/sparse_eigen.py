"""Finite-volume stiffness forms and inverse power iteration for symmetric pencils.

Operators are ``scipy.sparse.csr_matrix`` instances.  Stiffness matrices are
scaled so that ``u @ K @ u`` approximates the Dirichlet energy of the grid
function and the mass matrix is ``h**2`` per cell; the pencil ``(K, M)`` then
approximates ``-Δ``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import DomainMask, Grid, GeometryError

log = logging.getLogger(__name__)

EIG_TOL = 1e-10
CG_TOL = 1e-12
MAX_OUTER = 500


class ConvergenceError(RuntimeError):
    """An iterative solve did not reach its tolerance."""


class IndefiniteOperatorError(RuntimeError):
    """Negative Rayleigh quotient where a semidefinite operator was expected."""

    def __init__(self, message, rayleigh=None, gershgorin=None):
        super().__init__(message)
        self.rayleigh = rayleigh
        self.gershgorin = gershgorin


@dataclass
class EigenResult:
    value: float
    vector: np.ndarray
    residual: float
    iterations: int
    converged: bool = True


# ---------------------------------------------------------------------------
# assembly

def _face_pairs(active: np.ndarray):
    """Index pairs ``(a, b)`` of horizontally/vertically adjacent cells, both active."""
    ny, nx = active.shape
    idx = np.arange(nx * ny).reshape(ny, nx)
    hz = active[:, :-1] & active[:, 1:]
    vt = active[:-1, :] & active[1:, :]
    a = np.concatenate([idx[:, :-1][hz], idx[:-1, :][vt]])
    b = np.concatenate([idx[:, 1:][hz], idx[1:, :][vt]])
    return a, b


def _laplacian_from_faces(n, a, b, extra_diag=None):
    ones = np.ones(a.size)
    rows = np.concatenate([a, b, a, b])
    cols = np.concatenate([b, a, a, b])
    vals = np.concatenate([-ones, -ones, ones, ones])
    K = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    if extra_diag is not None:
        K = K + sp.diags(extra_diag)
    K.sum_duplicates()
    K.sort_indices()
    return K.tocsr()


def mass_diagonal(grid: Grid, n: int | None = None) -> np.ndarray:
    return np.full(grid.size if n is None else n, grid.cell_area)


def assemble_neumann_stiffness(grid: Grid) -> sp.csr_matrix:
    """5-point stiffness on the whole box with reflecting (Neumann) box faces.

    ``K @ 1 == 0`` exactly since every row is a sum of ``(+1, -1)`` face pairs.
    """
    a, b = _face_pairs(np.ones(grid.shape, dtype=bool))
    return _laplacian_from_faces(grid.size, a, b)


def assemble_mixed_stiffness(grid: Grid, D: DomainMask, container: DomainMask | None = None):
    """Stiffness on the DOFs of ``D``; Dirichlet across ``∂D ∩ Ω``, Neumann on ``∂Ω``.

    ``container`` is the cell set representing Ω (the whole box by default).
    A face between a cell of ``D`` and a cell of ``container \\ D`` carries the
    Dirichlet condition at the face itself (ghost value ``-u``), adding 2 to the
    diagonal; faces on the box boundary or towards cells outside ``container``
    are reflecting.

    Returns ``(K_D, dofs)`` where ``dofs`` are the flat cell indices of ``D`` in
    row-major order.
    """
    if D.grid != grid:
        raise GeometryError("mask grid differs from assembly grid")
    if D.count == 0:
        raise GeometryError("empty mask")
    cells = D.cells
    omega = np.ones(grid.shape, dtype=bool) if container is None else container.cells
    if np.any(cells & ~omega):
        raise GeometryError("mask is not contained in the container")
    dirichlet = omega & ~cells
    ndir = np.zeros(grid.shape, dtype=np.int64)
    ndir[:, :-1] += dirichlet[:, 1:]
    ndir[:, 1:] += dirichlet[:, :-1]
    ndir[:-1, :] += dirichlet[1:, :]
    ndir[1:, :] += dirichlet[:-1, :]

    dofs = np.flatnonzero(cells.ravel())
    local = np.full(grid.size, -1, dtype=np.int64)
    local[dofs] = np.arange(dofs.size)
    a, b = _face_pairs(cells)
    K = _laplacian_from_faces(dofs.size, local[a], local[b],
                              extra_diag=2.0 * ndir.ravel()[dofs])
    return K, dofs


def gershgorin_lower(A: sp.spmatrix, mdiag: np.ndarray) -> float:
    """Lower Gershgorin bound for the spectrum of the pencil ``(A, diag(mdiag))``."""
    A = sp.csr_matrix(A)
    d = A.diagonal()
    off = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(d)
    return float(np.min((d - off) / mdiag))


# ---------------------------------------------------------------------------
# linear solves

def cg(A, b, x0=None, tol=CG_TOL, maxiter=None, precond=None):
    """Preconditioned conjugate gradient; returns ``(x, iterations)``.

    ``precond`` is the inverse of a diagonal preconditioner as a vector.
    Stops when ``||r|| <= tol * ||b||``.
    """
    n = b.shape[0]
    maxiter = 10 * n if maxiter is None else maxiter
    x = np.zeros(n) if x0 is None else x0.copy()
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n), 0
    z = r * precond if precond is not None else r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise IndefiniteOperatorError(f"CG met non-positive curvature {pAp:.3e}")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * bnorm:
            return x, it
        z = r * precond if precond is not None else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(f"CG did not converge in {maxiter} iterations "
                           f"(|r|/|b| = {np.linalg.norm(r) / bnorm:.3e})")


class _Solver:
    """Repeated solves with a fixed SPD matrix, by sparse LU or by Jacobi-CG."""

    def __init__(self, A, method, cg_tol, project=None):
        self.A = sp.csc_matrix(A)
        self.method = method
        self.cg_tol = cg_tol
        self.project = project
        self.cg_iterations = 0
        if method == "direct":
            self._lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A",
                                 options={"SymmetricMode": True})
        elif method == "cg":
            self._Acsr = sp.csr_matrix(A)
            self._pinv = 1.0 / self._Acsr.diagonal()
        else:
            raise ValueError(f"unknown inner solver {method!r}")

    def __call__(self, b, x0=None):
        if self.method == "direct":
            return self._lu.solve(b)
        x, it = cg(self._Acsr, b, x0=x0, tol=self.cg_tol, precond=self._pinv)
        self.cg_iterations += it
        return x


def _start_vector(n, deflate, mdiag, seed=20240611):
    """All-ones plus a fixed-seed 1e-3 perturbation, M-orthogonalized against ``deflate``."""
    rng = np.random.default_rng(seed)
    x = np.ones(n) + 1e-3 * rng.standard_normal(n)
    if deflate is not None:
        x = _m_project(x, deflate, mdiag)
    return x


def _m_project(x, Q, mdiag):
    # Q columns are M-orthonormal
    return x - Q @ (Q.T @ (mdiag * x))


def _as_basis(deflate, mdiag):
    if deflate is None:
        return None
    Q = np.asarray(deflate, dtype=float)
    if Q.ndim == 1:
        Q = Q[:, None]
    # M-orthonormalize
    L = np.linalg.cholesky(Q.T @ (mdiag[:, None] * Q))
    return np.linalg.solve(L, Q.T).T


def _lanczos_smallest(As, mdiag, x0, tol):
    try:
        vals, vecs = spla.eigsh(As, k=1, M=sp.diags(mdiag), sigma=0.0, which="LM", v0=x0,
                                tol=tol)
    except (spla.ArpackNoConvergence, RuntimeError) as exc:
        raise ConvergenceError(f"inverse iteration and Lanczos fallback failed: {exc}") from exc
    x = vecs[:, 0]
    x = x / np.sqrt(x @ (mdiag * x))
    return float(x @ (As @ x)), x


def smallest_eigenpair(A, mdiag, *, tol=EIG_TOL, max_iter=MAX_OUTER, deflate_constant=False,
                       deflate=None, shift=0.0, inner="direct", cg_tol=CG_TOL, x0=None,
                       positive=True) -> EigenResult:
    """Smallest eigenpair of the pencil ``(A, diag(mdiag))`` by inverse power iteration.

    Parameters
    ----------
    A : sparse symmetric matrix
        Positive semidefinite on the M-orthogonal complement of the deflation space.
    mdiag : ndarray
        Positive diagonal of the mass matrix.
    tol : float
        Relative eigenvalue tolerance.  Iteration stops once the M-weighted
        relative residual ``||A v - θ M v||_{M^-1} / (|θ| ||v||_M)`` is below
        ``sqrt(tol)`` and the Rayleigh quotient has settled: its last change and
        the geometric extrapolation of the remaining changes are both below
        ``tol · θ``.
    deflate_constant : bool
        Work M-orthogonally to the constant vector (pure Neumann kernels).
    deflate : ndarray, optional
        Extra vectors (columns) to deflate.
    shift : float
        Internal shift ``σ`` such that ``A + σ M`` is positive definite; the
        returned value is unshifted.  Needed when ``A`` is singular and a direct
        inner solver is used.
    inner : {"direct", "cg"}
        Inner solver: sparse LU factored once, or Jacobi-preconditioned CG.
    positive : bool
        Normalize the sign so the vector has nonnegative sum (nonnegative
        entries for a principal eigenvector).

    Returns
    -------
    EigenResult
        ``vector`` is normalized to ``vector @ (mdiag * vector) == 1`` and
        ``residual`` is ``||A v - θ M v|| / ||v||`` (Euclidean norms).
    """
    A = sp.csr_matrix(A)
    mdiag = np.asarray(mdiag, dtype=float)
    n = A.shape[0]
    basis = []
    if deflate_constant:
        basis.append(np.ones(n))
    if deflate is not None:
        d = np.asarray(deflate, dtype=float)
        basis.extend(d.T if d.ndim == 2 else [d])
    Q = _as_basis(np.column_stack(basis), mdiag) if basis else None

    if shift == 0.0 and Q is not None and inner == "direct":
        # singular A is only safe with a positive shift under LU
        shift = 1e-6 * float(np.mean(A.diagonal() / mdiag))
    As = A + shift * sp.diags(mdiag) if shift else A
    project = (lambda v: _m_project(v, Q, mdiag)) if Q is not None else None
    solve = _Solver(As, inner, cg_tol, project)

    x = _start_vector(n, Q, mdiag) if x0 is None else np.asarray(x0, dtype=float).copy()
    if project is not None:
        x = project(x)
    x /= np.sqrt(x @ (mdiag * x))
    theta_old = np.inf
    step_old = np.inf
    res_tol = np.sqrt(tol)
    y = None
    for it in range(1, max_iter + 1):
        y = solve(mdiag * x, x0=None if y is None else y)
        if project is not None:
            y = project(y)
        nrm = np.sqrt(y @ (mdiag * y))
        if not np.isfinite(nrm) or nrm == 0:
            raise ConvergenceError("inverse iteration produced a degenerate vector")
        x = y / nrm
        Ax = A @ x
        theta = float(x @ Ax)  # x is M-normalized
        if theta < -1e-12 * max(1.0, abs(theta)) and shift == 0.0:
            raise IndefiniteOperatorError(f"negative Rayleigh quotient {theta:.6e}", rayleigh=theta)
        r = Ax - theta * mdiag * x
        if project is not None:
            r = r - mdiag * (Q @ (Q.T @ r))
        rel = np.sqrt(r @ (r / mdiag)) / max(abs(theta), 1e-300)
        step = abs(theta - theta_old)
        # geometric tail of the remaining Rayleigh-quotient error
        tail = np.inf
        if step < step_old < np.inf:
            rho = step / step_old
            tail = step * rho / (1 - rho)
        eps = tol * abs(theta)
        if rel <= res_tol and (step <= 1e-2 * eps or max(step, tail) <= eps):
            break
        theta_old, step_old = theta, step
        y = y / nrm
    else:
        if Q is not None or inner != "direct":
            raise ConvergenceError(f"inverse iteration did not converge in {max_iter} iterations "
                                   f"(relative residual {rel:.3e})")
        # clustered bottom of the spectrum: fall back to shift-invert Lanczos
        theta, x = _lanczos_smallest(As, mdiag, x, tol)
        theta -= shift
    if theta < 0 and shift == 0.0:
        raise IndefiniteOperatorError(f"negative Rayleigh quotient {theta:.6e}", rayleigh=theta)
    if positive and x.sum() < 0:
        x = -x
    residual = float(np.linalg.norm(A @ x - theta * mdiag * x) / np.linalg.norm(x))
    return EigenResult(theta, x, residual, it)


def min_rayleigh_shifted(K, W, lam, mdiag, *, tol=EIG_TOL, inner="direct", x0=None,
                         max_iter=MAX_OUTER) -> EigenResult:
    """Smallest eigenpair ``μ₁(λ)`` of the pencil ``(K - λ W, M)``.

    ``W`` is the diagonal of the weighted mass ``h² m``.  A shift ``σ`` larger
    than minus the Gershgorin lower bound makes ``K - λW + σM`` positive
    definite; inverse iteration runs on the shifted pencil and ``σ`` is
    subtracted again.
    """
    W = np.asarray(W, dtype=float)
    mdiag = np.asarray(mdiag, dtype=float)
    A = sp.csr_matrix(K) - lam * sp.diags(W)
    g = gershgorin_lower(A, mdiag)
    sigma = max(0.0, -g) + 1e-2 * (1.0 + abs(g))
    As = A + sigma * sp.diags(mdiag)
    if gershgorin_lower(As, mdiag) <= 0:
        raise IndefiniteOperatorError("spectral shift failed to make the pencil definite",
                                      gershgorin=g)
    res = smallest_eigenpair(As, mdiag, tol=tol, inner=inner, x0=x0, max_iter=max_iter)
    value = res.value - sigma
    residual = float(np.linalg.norm(A @ res.vector - value * mdiag * res.vector)
                     / np.linalg.norm(res.vector))
    return EigenResult(value, res.vector, residual, res.iterations)
