"""Positive principal eigenvalue of ``-Δu = λ m u`` with Neumann box faces and bang-bang ``m``.

``m = 1`` on ``D`` and ``-β`` elsewhere.  The reference route is scalar:
``μ₁(λ)``, the smallest eigenvalue of ``-Δ - λ m``, is concave in ``λ`` with
``μ₁(0) = 0`` and ``μ₁'(0) = -mean(m) > 0``, so the principal eigenvalue is its
unique positive root.  When a nearby value is known, one shift-invert solve of
the indefinite pencil is tried first; its result is kept only if the vector is
one-signed, which is equivalent to ``μ₁(λ) = 0`` at the ground state.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import DomainMask, GeometryError
from .sparse_eigen import (EIG_TOL, EigenResult, assemble_neumann_stiffness, mass_diagonal,
                           min_rayleigh_shifted)

log = logging.getLogger(__name__)

MAX_DOUBLINGS = 60
FAST_MAX_ITER = 40
FAST_RES_TOL = 1e-7
FAST_LAM_TOL = 1e-12
SIGN_TOL = 1e-8


class AdmissibilityError(ValueError):
    """``β`` too small for a positive principal eigenvalue (``∫ m >= 0``)."""


class BracketError(RuntimeError):
    pass


@dataclass(frozen=True)
class BangBangWeight:
    D: DomainMask
    beta: float

    def __post_init__(self):
        if self.beta <= 0:
            raise AdmissibilityError(f"beta must be positive, got {self.beta}")
        if self.D.count == 0:
            raise GeometryError("empty favorable region")
        if self.integral() >= 0:
            g = self.D.grid
            raise AdmissibilityError(
                f"beta={self.beta} <= |D|/(|Ω|-|D|) = "
                f"{self.D.volume / max(g.area - self.D.volume, 1e-300):.6g}")

    def values(self) -> np.ndarray:
        """Flat weight array ``m`` (1 on D, -β elsewhere)."""
        return np.where(self.D.flat, 1.0, -self.beta)

    def integral(self) -> float:
        g = self.D.grid
        return self.D.volume - self.beta * (g.area - self.D.volume)


@dataclass
class PrincipalEigen:
    lam: float
    u: np.ndarray
    mass_outside: float
    iterations: int = 0
    weight: BangBangWeight | None = None

    @property
    def field(self) -> np.ndarray:
        return self.u.reshape(self.weight.D.grid.shape)


class _Problem:
    """Cached stiffness/mass for one weight."""

    def __init__(self, w: BangBangWeight, K=None):
        g = w.D.grid
        self.w = w
        self.K = assemble_neumann_stiffness(g) if K is None else K
        self.M = mass_diagonal(g)
        self.m = w.values()
        self.W = self.M * self.m
        self.x = None

    def evaluate(self, lam, tol=EIG_TOL):
        if lam == 0.0:
            n = self.M.size
            u = np.ones(n) / math.sqrt(self.M.sum())
            return 0.0, -float(self.W @ (u * u)), u
        res: EigenResult = min_rayleigh_shifted(self.K, self.W, lam, self.M, tol=tol, x0=self.x)
        u = res.vector
        self.x = u
        # Hellmann-Feynman, u is M-normalized
        return res.value, -float(self.W @ (u * u)), u


def spectral_function(w: BangBangWeight, lam: float, tol: float = EIG_TOL):
    """``(μ₁(λ), dμ₁/dλ)`` for the weight ``w``; ``λ >= 0``."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    mu, dmu, _ = _Problem(w).evaluate(lam, tol)
    return mu, dmu


def principal_eigenvalue(w: BangBangWeight, tol: float = 1e-8, guess: float | None = None,
                         K=None) -> PrincipalEigen:
    """Positive root of ``μ₁(λ) = 0``: bracket by doubling, then safeguarded Newton.

    With a positive ``guess`` a shift-invert solve near it is tried first and
    the root search runs only if that fails.  ``guess`` (for example the value at a nearby mask) replaces the first
    bracket probe; ``K`` reuses a Neumann stiffness already assembled.
    """
    prob = _Problem(w, K)
    if guess and guess > 0:
        fast = _shift_invert(prob, guess)
        if fast is not None:
            lam, u, its = fast
            return _finish(w, prob, lam, u, its)
    lo = 0.0  # μ₁ > 0 on (0, root)
    hi = guess if guess and guess > 0 else 1.0
    mu_hi, d_hi, u_hi = prob.evaluate(hi)
    evals = 1
    while mu_hi >= 0:
        lo = hi
        hi *= 2.0
        mu_hi, d_hi, u_hi = prob.evaluate(hi)
        evals += 1
        if evals > MAX_DOUBLINGS:
            raise BracketError(f"no sign change of μ₁ up to λ={hi:.3e}")
    lam, mu, d, u = hi, mu_hi, d_hi, u_hi
    for _ in range(200):
        if abs(mu) <= tol * lam:
            break
        step = lam - mu / d if d < 0 else None
        if step is None or not lo < step < hi:
            step = 0.5 * (lo + hi)
        lam = step
        mu, d, u = prob.evaluate(lam)
        evals += 1
        if mu > 0:
            lo = lam
        else:
            hi = lam
        if hi - lo <= 1e-15 * hi:
            break
    else:
        raise BracketError("root refinement did not converge")

    return _finish(w, prob, lam, u, evals)


def _finish(w, prob, lam, u, evals):
    D = w.D.flat
    M = prob.M
    u = np.abs(u)  # principal vector; sign fixed, guard roundoff-level negatives
    u = u / math.sqrt(float(M[D] @ (u[D] ** 2)))
    mass_out = w.beta * float(M[~D] @ (u[~D] ** 2))
    return PrincipalEigen(lam, u, mass_out, evals, w)


def _shift_invert(prob: _Problem, sigma: float, max_iter: int = FAST_MAX_ITER):
    """Eigenpair of ``K u = λ W u`` nearest ``sigma`` from one factorization.

    Returns ``None`` unless it converges to a positive eigenvalue with a
    one-signed vector; such a pair is necessarily the principal one.
    """
    A = sp.csc_matrix(prob.K - sigma * sp.diags(prob.W))
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
    except RuntimeError:  # sigma is an eigenvalue
        return None
    K, W, M = prob.K, prob.W, prob.M
    # eigenvectors with λ ≠ 0 satisfy 1ᵀWu = 0; keep the constant kernel mode out
    wsum = float(W.sum())
    x = np.where(prob.w.D.flat, 1.0, 0.0) if prob.x is None else np.abs(prob.x)
    lam_old = np.inf
    for it in range(1, max_iter + 1):
        x = lu.solve(W * x)
        x -= float(W @ x) / wsum
        nrm = math.sqrt(float(x @ (M * x)))
        if not np.isfinite(nrm) or nrm == 0:
            return None
        x /= nrm
        Kx = K @ x
        den = float(x @ (W * x))
        if den == 0:
            return None
        lam = float(x @ Kx) / den
        r = Kx - lam * W * x
        rel = math.sqrt(float(r @ (r / M))) / max(abs(lam), 1e-300)
        if rel <= FAST_RES_TOL and abs(lam - lam_old) <= FAST_LAM_TOL * abs(lam):
            break
        lam_old = lam
    else:
        return None
    if lam <= 0:
        return None
    if x.sum() < 0:
        x = -x
    if x.min() < -SIGN_TOL * x.max():
        return None
    prob.x = x
    return lam, x, it


def lambda_upper_bound_check(w: BangBangWeight, mu_D: float, lam: float | None = None,
                             rel_tol: float = 1e-6) -> bool:
    """``λ(β, D) <= μ(D, Ω)`` up to a relative tolerance."""
    lam = principal_eigenvalue(w).lam if lam is None else lam
    return lam <= mu_D * (1 + rel_tol)
