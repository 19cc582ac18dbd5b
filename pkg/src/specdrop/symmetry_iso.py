"""Distribution functions, symmetrization onto cones and relative isoperimetric constants.

A cone ``Σ_α`` is only seen through its aperture measure ``α = |Σ_α ∩ B₁|``;
all outputs here depend on ``α`` alone.  On the plane the quarter plane at a
box corner has ``α = π/4`` and the half plane ``α = π/2``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .asymptotics import bessel_first_zero, lambda1_dir, omega
from .geometry import Grid


def distribution_function(u, t: float, grid: Grid | float) -> float:
    """Measure of ``{u > t}``: cell area times the number of cells above ``t``.

    ``grid`` may be a :class:`Grid` or the cell area itself.  Cells holding NaN
    are outside the domain of ``u`` and never counted.
    """
    h2 = grid.cell_area if isinstance(grid, Grid) else float(grid)
    u = np.asarray(u, dtype=float)
    return h2 * int(np.count_nonzero(u > t))


@dataclass(frozen=True)
class RadialProfile:
    """Nonincreasing radial function on a cone of aperture ``alpha``.

    The profile equals ``values[j]`` on the shell ``radii[j-1] < r <= radii[j]``
    (``radii[-1]`` is taken as 0); shells have equal measure ``cell_area``.
    """

    alpha: float
    radii: np.ndarray
    values: np.ndarray
    cell_area: float
    N: int = 2

    @property
    def r_max(self) -> float:
        return float(self.radii[-1]) if self.radii.size else 0.0

    def __call__(self, r):
        """Profile value at radius ``r`` (0 beyond ``r_max``)."""
        r = np.asarray(r, dtype=float)
        idx = np.searchsorted(self.radii, r, side="left")
        out = np.zeros(r.shape)
        inside = idx < self.radii.size
        out[inside] = self.values[idx[inside]]
        return out if out.ndim else float(out)

    def superlevel_measure(self, t: float) -> float:
        """``α · r(t)^N`` with ``r(t)`` the outer radius of ``{profile > t}``."""
        j = int(np.count_nonzero(self.values > t))
        return 0.0 if j == 0 else self.alpha * float(self.radii[j - 1]) ** self.N

    def write_csv(self, fh) -> None:
        """Two-column CSV ``r, value`` (outer shell radius, shell value)."""
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("r", "value"))
        for r, v in zip(self.radii, self.values):
            w.writerow((f"{r:.17g}", f"{v:.17g}"))


def alpha_symmetrize(u, alpha: float, grid: Grid | float, mask=None) -> RadialProfile:
    """Equimeasurable nonincreasing rearrangement of ``u >= 0`` onto the cone ``Σ_α``.

    The profile lives on equal-measure shells ``r_j = (j h² / α)^{1/2}``, one
    per cell of the support (``u > 0``, or ``mask`` when given), so
    ``|{profile > t}| = |{u > t}|`` holds exactly for every ``t >= 0``.
    """
    N = 2
    if not 0 < alpha < omega(N):
        raise ValueError(f"alpha must lie in (0, {omega(N)})")
    h2 = grid.cell_area if isinstance(grid, Grid) else float(grid)
    u = np.asarray(u, dtype=float).ravel()
    if mask is None:
        vals = u[u > 0]
    else:
        vals = u[np.asarray(mask, dtype=bool).ravel()]
    vals = np.sort(vals, kind="stable")[::-1]
    j = np.arange(1, vals.size + 1)
    radii = np.sqrt(j * h2 / alpha)
    return RadialProfile(alpha, radii, vals.copy(), h2, N)


def isoperimetric_constant_rectangle(L1: float, L2: float, delta_bar: float) -> float:
    """Relative isoperimetric constant ``K(Ω, δ̄)`` of the rectangle ``L1 × L2``.

    Among the minimizing candidates only the corner quarter disk
    (``K² = π/4``) and the strip across the short side (``K² = L1²/(4v)``)
    survive; half disks and segments cutting one corner are never better.
    The infimum over volumes ``v <= δ̄`` is the quarter-disk value up to
    ``δ̄ = L1²/π`` and the strip value beyond.
    """
    if L1 > L2:
        raise ValueError("need L1 <= L2")
    if not 0 < delta_bar < L1 * L2:
        raise ValueError(f"delta_bar outside (0, {L1 * L2})")
    k2 = math.pi / 4 if delta_bar <= L1 * L1 / math.pi else L1 * L1 / (4 * delta_bar)
    return math.sqrt(k2)


def cone_isoperimetric_check(alpha: float, r: float, N: int = 2) -> float:
    """``(1/N) · P(B_r; Σ_α) / |B_r ∩ Σ_α|^{(N-1)/N}`` for a cone of aperture ``α``.

    ``|B_r ∩ Σ_α| = α r^N`` and the relative perimeter is ``N α r^{N-1}``, so
    the value is ``α^{1/N}`` for every ``r``.
    """
    if not 0 < alpha < omega(N):
        raise ValueError(f"alpha must lie in (0, {omega(N)})")
    if r <= 0:
        raise ValueError("r must be positive")
    vol = alpha * r ** N
    per = N * alpha * r ** (N - 1)
    return per / N / vol ** ((N - 1) / N)


def mu_lower_bound(delta: float, K: float, N: int = 2) -> float:
    """``K² λ₁^Dir(N) δ^{-2/N}``: lower bound for ``μ(D, Ω)`` over ``|D| = δ``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if not 0 < K <= omega(N) ** (1 / N) * (1 + 1e-15):
        raise ValueError("K outside (0, ω_N^{1/N}]")
    return K * K * lambda1_dir(N) * delta ** (-2 / N)


def strip_value(delta: float, L: float = 1.0) -> float:
    """Mixed eigenvalue of the strip of area ``δ`` along one side of the square of side ``L``."""
    return (math.pi * L / (2 * delta)) ** 2


def quarter_disk_value(delta: float) -> float:
    """Mixed eigenvalue of the corner quarter disk of area ``δ`` (fitting in the box)."""
    return lambda1_dir(2) * math.pi / (4 * delta)


def strip_vs_quarter_crossover(L: float = 1.0) -> float:
    """Area ``δ*`` where strip and corner quarter disk have equal eigenvalue: ``π L² / j₀,₁²``."""
    if L <= 0:
        raise ValueError("L must be positive")
    j = bessel_first_zero(0.0)
    return math.pi * L * L / (j * j)
