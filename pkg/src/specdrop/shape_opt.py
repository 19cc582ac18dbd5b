"""Volume-constrained minimization of ``μ(D, Ω)`` (spectral drop) and ``λ(β, D)`` (optimal design).

Both optimizers are rearrangement fixed-point iterations on cell masks with a
fixed cell count ``k = round(δ / h²)``:

* ``optimize_od`` uses the bathtub step ``D ← {k largest values of u_β}``: with
  ``u_β`` fixed, this choice maximizes ``∫ m u_β²`` over admissible weights, so
  ``λ`` cannot increase.
* ``optimize_sd`` cannot threshold the mixed eigenfunction itself (it vanishes
  exactly off ``D``, so its ``k`` largest cells are ``D`` again).  It thresholds
  instead a first-order sensitivity field built from that eigenfunction: for a
  cell of ``D`` the Rayleigh-quotient increase caused by removing it, for a cell
  outside the decrease obtained by adding it with its optimal value.

Each candidate mask is accepted only if the objective decreases (the swap set is
halved until it does), so traces are monotone.  Two geometric moves supplement
the step: sliding the mask rigidly until it touches a wall (the discrete mixed
operator is invariant under translations that do not reach a wall, so this never
costs anything) and one-cell translations refilled by sensitivity.  Runs start
on a coarse grid and are prolonged level by level to the target grid.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import (DomainMask, FullDisk, GeometryError, Grid, HalfDisk, QuarterDisk,
                       make_grid, mask_with_exact_volume)
from .mixed_drop import mu as mixed_mu
from .sparse_eigen import assemble_neumann_stiffness
from .weighted_neumann import AdmissibilityError, BangBangWeight, principal_eigenvalue

log = logging.getLogger(__name__)

REL_STOP = 1e-12
MAX_ITER = 400
DEFAULT_SEED = 0x5EED_D20B_0000_0001


@dataclass
class TraceEntry:
    iter: int
    value: float
    volume: float
    mask_hash: str


@dataclass
class ShapeOptResult:
    best_mask: DomainMask
    best_value: float
    trace: list[TraceEntry]
    seed_id: int
    converged: bool
    eigenfunction: np.ndarray | None = None
    per_seed: list = field(default_factory=list)   # (seed_id, value, converged, digest)
    coarse_trace: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# thresholding and grid transfer

def threshold_to_volume(u, delta: float, grid: Grid) -> DomainMask:
    """The ``k = round(δ/h²)`` cells with largest ``u``; ties in row-major order."""
    if not 0 < delta < grid.area:
        raise GeometryError(f"delta={delta} outside (0, {grid.area})")
    k = int(round(delta / grid.cell_area))
    return _top_k(np.asarray(u, dtype=float).ravel(), k, grid)


def _top_k(score, k, grid):
    if not 0 < k < grid.size:
        raise GeometryError(f"cell count {k} outside (0, {grid.size})")
    order = np.argsort(-score, kind="stable")
    return DomainMask.from_flat_indices(grid, order[:k])


def restrict_mask(D: DomainMask, coarse: Grid, k: int) -> DomainMask:
    """Coarse mask with ``k`` cells, ranked by the covered fraction of each coarse cell."""
    f = D.grid.nx // coarse.nx
    if f * coarse.nx != D.grid.nx or f * coarse.ny != D.grid.ny:
        raise GeometryError("grids are not nested")
    frac = D.cells.reshape(coarse.ny, f, coarse.nx, f).mean(axis=(1, 3))
    return _top_k(frac.ravel(), k, coarse)


def prolong_mask(D: DomainMask, fine: Grid) -> DomainMask:
    f = fine.nx // D.grid.nx
    return DomainMask(fine, np.kron(D.cells, np.ones((f, f), dtype=bool)))


def _level_grids(grid: Grid, delta: float, coarsest: int | None):
    n = round(1 / grid.h)
    ns = [n]
    while True:
        m = ns[-1] // 2
        if ns[-1] % 2 or m < (coarsest or 32):
            break
        if coarsest is None and delta * m * m < 400:
            break
        ns.append(m)
    return [make_grid(grid.Lx, grid.Ly, m) for m in reversed(ns)]


# ---------------------------------------------------------------------------
# sensitivities

def _nbr_sum(a):
    s = np.zeros(a.shape)
    s[:, :-1] += a[:, 1:]
    s[:, 1:] += a[:, :-1]
    s[:-1, :] += a[1:, :]
    s[1:, :] += a[:-1, :]
    return s


def swap_scores(D: DomainMask, u, value: float) -> np.ndarray:
    """Keep-priority of every cell for the mixed problem (larger = keep / add first).

    ``u`` is the M-normalized mixed eigenfunction (zero off ``D``).  Inside ``D``
    the score is the first-order increase of ``μ`` when the cell is removed;
    outside, the decrease when the cell is added with its optimal value.
    """
    g = D.grid
    c = D.cells
    U = np.asarray(u, dtype=float).reshape(g.shape)
    h2 = g.cell_area
    n_in = _nbr_sum(c.astype(float))
    n_all = _nbr_sum(np.ones(g.shape))
    n_dir = n_all - n_in
    s1 = _nbr_sum(U)
    s2 = _nbr_sum(U * U)
    # removal: faces to D-neighbours turn Dirichlet for them; own Dirichlet faces disappear
    cost = 2 * s2 - (n_in * U * U - 2 * U * s1 + s2) - 2 * n_dir * U * U + value * h2 * U * U
    denom = np.maximum(n_in + 2 * n_dir - value * h2, 1e-12)
    gain = s2 + s1 * s1 / denom
    return np.where(c, cost, gain)


def _touches(cells):
    ny, nx = cells.shape
    cols = np.flatnonzero(cells.any(axis=0))
    rows = np.flatnonzero(cells.any(axis=1))
    return cols, rows


def slide_to_contact(D: DomainMask) -> DomainMask:
    """Translate ``D`` rigidly along each axis whose walls it does not touch, to the nearer wall.

    Ties go to the low-index wall (row-major order).
    """
    c = D.cells
    ny, nx = c.shape
    cols, rows = _touches(c)
    if cols[0] > 0 and cols[-1] < nx - 1:
        dx = -cols[0] if cols[0] <= nx - 1 - cols[-1] else nx - 1 - cols[-1]
        c = np.roll(c, dx, axis=1)
    if rows[0] > 0 and rows[-1] < ny - 1:
        dy = -rows[0] if rows[0] <= ny - 1 - rows[-1] else ny - 1 - rows[-1]
        c = np.roll(c, dy, axis=0)
    return DomainMask(D.grid, c)


def _shift(c, dx, dy):
    ny, nx = c.shape
    out = np.zeros_like(c)
    out[max(dy, 0):ny + min(dy, 0), max(dx, 0):nx + min(dx, 0)] = \
        c[max(-dy, 0):ny + min(-dy, 0), max(-dx, 0):nx + min(-dx, 0)]
    return out


# ---------------------------------------------------------------------------
# objectives

class _SdObjective:
    name = "sd"

    def __call__(self, D):
        r = mixed_mu(D)
        return r.mu, r

    def scores(self, D, state):
        return swap_scores(D, state.u, state.mu)

    def step(self, D, value, state):
        """Sensitivity rearrangement with a halving line search on the swap count."""
        sc = self.scores(D, state).ravel()
        target = _top_k(sc, D.count, D.grid).flat
        add = np.flatnonzero(target & ~D.flat)
        rem = np.flatnonzero(~target & D.flat)
        add = add[np.argsort(-sc[add], kind="stable")]
        rem = rem[np.argsort(sc[rem], kind="stable")]
        s = add.size
        while s >= 1:
            f = D.flat.copy()
            f[add[:s]] = True
            f[rem[:s]] = False
            Dn = DomainMask(D.grid, f.reshape(D.grid.shape))
            v, st = self(Dn)
            if v < value * (1 - REL_STOP):
                return Dn, v, st
            s //= 2
        return D, value, state

    def refill(self, D, k):
        while D.count < k:
            v, st = self(D)
            sc = self.scores(D, st).ravel()
            sc[D.flat] = -np.inf
            m = k - D.count
            take = m if m <= 8 else max(1, m // 4)
            f = D.flat.copy()
            f[np.argsort(-sc, kind="stable")[:take]] = True
            D = DomainMask(D.grid, f.reshape(D.grid.shape))
        return D


class _OdObjective:
    name = "od"

    def __init__(self, beta, grid, guess=None):
        self.beta = beta
        self.K = assemble_neumann_stiffness(grid)
        self.best = guess  # shift for the eigen solve: the best value seen

    def __call__(self, D):
        p = principal_eigenvalue(BangBangWeight(D, self.beta), guess=self.best, K=self.K)
        self.best = p.lam if self.best is None else min(self.best, p.lam)
        return p.lam, p

    def scores(self, D, state):
        return state.u

    def step(self, D, value, state):
        """Bathtub step: the ``k`` largest cells of ``u_β``."""
        Dn = _top_k(state.u, D.count, D.grid)
        if Dn == D:
            return D, value, state
        v, st = self(Dn)
        if v < value * (1 - REL_STOP):
            return Dn, v, st
        return D, value, state

    def refill(self, D, k):
        if D.count >= k:
            return D
        if not _od_admissible(D, self.beta):
            return D
        # the missing cells are the largest values of u_β outside D
        _, st = self(D)
        sc = st.u.copy()
        sc[D.flat] = -np.inf
        f = D.flat.copy()
        f[np.argsort(-sc, kind="stable")[:k - D.count]] = True
        return DomainMask(D.grid, f.reshape(D.grid.shape))


def _od_admissible(D, beta):
    g = D.grid
    return D.count > 0 and D.volume - beta * (g.area - D.volume) < 0


def _local_search(obj, D, max_iter, trace, it0=0):
    """Fixed-point iteration with geometric moves; returns ``(D, value, state, converged, it)``."""
    value, state = obj(D)
    trace.append(TraceEntry(it0, value, D.volume, D.digest()))
    seen = {D.digest()}
    it = it0
    converged = False
    k = D.count
    while it - it0 < max_iter:
        it += 1
        cand = []
        Dc = slide_to_contact(D)
        if Dc != D:
            cand.append(Dc)
        Dn, vn, sn = obj.step(D, value, state)
        if Dn == D:
            for dx, dy in ((-1, 0), (0, -1), (1, 0), (0, 1)):
                c = _shift(D.cells, dx, dy)
                if c.any():
                    cand.append(obj.refill(DomainMask(D.grid, c), k))
        best = (Dn, vn, sn)
        for Dc in cand:
            if Dc.count != k:
                continue
            vc, sc = obj(Dc)
            if vc < best[1] * (1 - REL_STOP) and vc <= value:
                best = (Dc, vc, sc)
        Dn, vn, sn = best
        if Dn == D:
            converged = True
            break
        dig = Dn.digest()
        if dig in seen:
            log.info("rearrangement cycle detected at iteration %d", it)
            break
        seen.add(dig)
        rel = (value - vn) / abs(value)
        D, value, state = Dn, vn, sn
        trace.append(TraceEntry(it, value, D.volume, dig))
        if rel < REL_STOP:
            converged = True
            break
    return D, value, state, converged, it


def _run_seed(args):
    kind, beta, delta, seed_id, seed_mask, levels, max_iter = args
    grids = levels
    k_of = lambda g: int(round(delta / g.cell_area))
    D = restrict_mask(seed_mask, grids[0], k_of(grids[0])) if seed_mask.grid != grids[0] \
        else seed_mask
    coarse = []
    value = None
    for i, g in enumerate(grids):
        obj = _make_obj(kind, beta, g, value)
        if i > 0:
            D = prolong_mask(D, g)
            k = k_of(g)
            if D.count > k:
                sc = np.where(D.flat, 1.0, 0.0)
                D = _top_k(sc, k, g)
            D = obj.refill(D, k)
        trace = []
        D, value, state, conv, _ = _local_search(obj, D, max_iter, trace)
        if kind == "sd" and i == len(grids) - 1 and seed_mask.grid == g and seed_mask != D:
            # a good full-resolution seed must not be lost to the coarse start
            v0, _ = obj(seed_mask)
            if v0 < value:
                trace2 = []
                D2, v2, st2, conv2, _ = _local_search(obj, seed_mask, max_iter, trace2)
                if v2 < value:
                    D, value, state, conv, trace = D2, v2, st2, conv2, trace2
        if i < len(grids) - 1:
            coarse.append((round(1 / g.h), trace))
    return seed_id, D, value, trace, conv, state.u, coarse


def _make_obj(kind, beta, grid, guess=None):
    return _SdObjective() if kind == "sd" else _OdObjective(beta, grid, guess)


def default_seeds(grid: Grid, delta: float, seed: int = DEFAULT_SEED) -> list[DomainMask]:
    """Fixed multi-start battery.

    Four corner quarter disks, four half disks at edge midpoints, the centered
    disk, and three uniformly random cell sets from a 64-bit seed, all with
    exactly ``round(δ/h²)`` cells.  Shapes that do not fit at this volume are
    skipped.
    """
    Lx, Ly = grid.Lx, grid.Ly
    fams = [QuarterDisk(c, 1.0) for c in ((0, 0), (Lx, 0), (0, Ly), (Lx, Ly))]
    fams += [HalfDisk(c, 1.0) for c in ((Lx / 2, 0), (0, Ly / 2), (Lx, Ly / 2), (Lx / 2, Ly))]
    fams.append(FullDisk((Lx / 2, Ly / 2), 1.0))
    seeds = []
    for fam in fams:
        try:
            seeds.append(mask_with_exact_volume(fam, grid, delta))
        except GeometryError:
            log.info("seed %s does not fit at delta=%g", fam, delta)
    rng = np.random.default_rng(seed)
    k = int(round(delta / grid.cell_area))
    for _ in range(3):
        seeds.append(DomainMask.from_flat_indices(grid, rng.permutation(grid.size)[:k]))
    return seeds


def _optimize(kind, grid, delta, beta, seeds, max_iter, coarsest, jobs):
    if not 0 < delta < grid.area:
        raise GeometryError(f"delta={delta} outside (0, {grid.area})")
    seeds = default_seeds(grid, delta) if seeds is None else list(seeds)
    levels = _level_grids(grid, delta, coarsest)
    tasks = [(kind, beta, delta, i, s, levels, max_iter) for i, s in enumerate(seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outs = list(ex.map(_run_seed, tasks))
    else:
        outs = [_run_seed(t) for t in tasks]
    outs.sort(key=lambda o: (o[2], o[0]))
    sid, D, value, trace, conv, u, coarse = outs[0]
    per_seed = sorted(((o[0], o[2], o[4], o[1].digest()) for o in outs))
    return ShapeOptResult(D, value, trace, sid, conv, u, per_seed, coarse)


def optimize_sd(grid: Grid, delta: float, seeds: Sequence[DomainMask] | None = None, *,
                max_iter: int = MAX_ITER, coarsest: int | None = None,
                jobs: int = 1) -> ShapeOptResult:
    """Minimize ``μ(D, Ω)`` over masks of volume ``δ`` (multi-start, coarse to fine)."""
    return _optimize("sd", grid, delta, None, seeds, max_iter, coarsest, jobs)


def optimize_od(grid: Grid, beta: float, delta: float, seeds: Sequence[DomainMask] | None = None,
                *, max_iter: int = MAX_ITER, coarsest: int | None = None,
                jobs: int = 1) -> ShapeOptResult:
    """Minimize ``λ(β, D)`` over masks of volume ``δ`` (multi-start, coarse to fine)."""
    if beta <= delta / (grid.area - delta):
        raise AdmissibilityError(f"beta={beta} <= δ/(|Ω|-δ) = {delta / (grid.area - delta):.6g}")
    return _optimize("od", grid, delta, beta, seeds, max_iter, coarsest, jobs)


# ---------------------------------------------------------------------------
# diagnostics and export

def radial_symmetry_diagnostic(u, grid: Grid, center, mask: DomainMask | None = None) -> float:
    """Relative L² deviation of ``u`` from its average over radius bins of width ``h``.

    ``sqrt(Σ (u - ū_bin)² / Σ u²)`` over the cells of ``mask`` (cells with
    ``u > 0`` by default).  Zero for a function of ``|x - center|`` alone up to
    the spread of radii within a bin.
    """
    U = np.asarray(u, dtype=float).ravel()
    sel = (U > 0) if mask is None else mask.flat
    X, Y = grid.centers()
    rho = np.hypot(X.ravel() - center[0], Y.ravel() - center[1])[sel]
    vals = U[sel]
    bins = np.floor(rho / grid.h).astype(np.int64)
    cnt = np.bincount(bins)
    s = np.bincount(bins, weights=vals)
    mean = s / np.maximum(cnt, 1)
    dev = vals - mean[bins]
    return float(math.sqrt(dev @ dev / (vals @ vals)))


def best_corner_quarter_disk(grid: Grid, delta: float, D: DomainMask):
    """Exact-volume corner quarter disk with the smallest symmetric difference to ``D``."""
    best = None
    for c in ((0, 0), (grid.Lx, 0), (0, grid.Ly), (grid.Lx, grid.Ly)):
        Q = mask_with_exact_volume(QuarterDisk(c, 1.0), grid, delta)
        sd_vol = D.symmetric_difference_volume(Q)
        if best is None or sd_vol < best[0]:
            best = (sd_vol, c, Q)
    return best


def write_trace_csv(result: ShapeOptResult, fh, extra: dict | None = None):
    """Columns ``iter, value, volume, mask_hash`` (plus any ``extra`` constant columns)."""
    extra = extra or {}
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["iter", "value", "volume", "mask_hash", *extra])
    for t in result.trace:
        w.writerow([t.iter, f"{t.value:.17g}", f"{t.volume:.17g}", t.mask_hash, *extra.values()])
