"""Mixed Dirichlet-Neumann eigenvalue ``μ(D, Ω)`` and torsion function of a cell mask."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import DomainMask, GeometryError, boundary_contact_cells, make_grid
from .sparse_eigen import EIG_TOL, CG_TOL, assemble_mixed_stiffness, cg, smallest_eigenpair


@dataclass
class MixedEigen:
    mu: float
    u: np.ndarray       # flat grid function, zero off D, unit L² norm
    residual: float
    iterations: int
    mask: DomainMask

    @property
    def field(self) -> np.ndarray:
        return self.u.reshape(self.mask.grid.shape)


def _check(D: DomainMask, container):
    total = D.grid.size if container is None else container.count
    if D.count == 0:
        raise GeometryError("empty mask")
    if D.count >= total:
        raise GeometryError("mask fills the whole container; μ is 0 with no Dirichlet part")


def mu(D: DomainMask, container: DomainMask | None = None, tol: float = EIG_TOL,
       inner: str = "direct") -> MixedEigen:
    """Principal eigenpair of the mixed problem on ``D``; Neumann on the container boundary."""
    _check(D, container)
    g = D.grid
    K, dofs = assemble_mixed_stiffness(g, D, container)
    mdiag = np.full(dofs.size, g.cell_area)
    res = smallest_eigenpair(K, mdiag, tol=tol, inner=inner)
    u = np.zeros(g.size)
    u[dofs] = np.abs(res.vector)
    return MixedEigen(res.value, u, res.residual, res.iterations, D)


def torsion(D: DomainMask, container: DomainMask | None = None, tol: float = CG_TOL) -> np.ndarray:
    """Solution of ``-Δw = 1`` in ``D`` with the mixed conditions, by Jacobi-CG; zero off ``D``."""
    _check(D, container)
    g = D.grid
    K, dofs = assemble_mixed_stiffness(g, D, container)
    rhs = np.full(dofs.size, g.cell_area)
    K = sp.csr_matrix(K)
    w, _ = cg(K, rhs, tol=tol, precond=1.0 / K.diagonal())
    out = np.zeros(g.size)
    out[dofs] = w
    return out.reshape(g.shape)


def check_boundary_contact(D: DomainMask) -> dict:
    """Mask cells with a face on ``∂Ω``: count and fraction of the mask."""
    n = boundary_contact_cells(D)
    return {"contact_cells": n, "fraction": n / D.count if D.count else 0.0}


def boundary_cap(R: float, n_per_unit: int, *, r: float | None = None,
                 volume: float | None = None, pad: int = 4):
    """Cap ``B_r(x₀) ∩ B_R`` at a point ``x₀`` of a disk container, on a local grid.

    The disk of radius ``R`` is rasterized by cell centers inside a box just
    large enough to hold the cap; only the faces of the cap matter, so the rest
    of the disk is never meshed.  Give either the radius ``r`` or the target
    ``volume`` (then the ``round(volume/h²)`` container cells nearest ``x₀``
    are taken).  Returns ``(D, container)``.
    """
    if (r is None) == (volume is None):
        raise ValueError("give exactly one of r, volume")
    if volume is not None:
        r_est = math.sqrt(2 * volume / math.pi) * 1.2
    else:
        r_est = r
    if not 0 < r_est < R:
        raise GeometryError("cap radius must lie in (0, R)")
    h = 1.0 / n_per_unit
    m = int(math.ceil(2 * r_est / h)) + 2 * pad
    g = make_grid(m * h, m * h, n_per_unit)
    X, Y = g.centers()
    x0 = (0.5 * g.Lx, g.Ly - pad * h)
    container = DomainMask(g, np.hypot(X - x0[0], Y - (x0[1] - R)) < R)
    dist = np.hypot(X - x0[0], Y - x0[1])
    if r is not None:
        D = DomainMask(g, container.cells & (dist < r))
    else:
        k = int(round(volume / g.cell_area))
        score = np.where(container.cells, dist, np.inf).ravel()
        idx = np.argsort(score, kind="stable")[:k]
        D = DomainMask.from_flat_indices(g, idx)
        if not D.issubset(container) or dist.ravel()[idx].max() >= r_est:
            raise GeometryError("cap does not fit its local box")
    return D, container
