"""Bessel functions, ball constants and the small-volume expansions of spectral drops.

Self-contained: Bessel values come from the power series and Miller's backward
recurrence, radial integrals from adaptive Simpson quadrature.  Nothing here
depends on a special-function library, so the constants are reproducible bit
for bit across platforms with IEEE doubles.

Notation
--------
``ω_N``
    volume of the unit ball of ``ℝ^N``; ``|B₁⁺| = ω_N / 2``.
``φ``
    first Dirichlet eigenfunction of ``B₁``, ``φ(ρ) = J_ν(jρ)/ρ^ν`` with
    ``ν = N/2 - 1`` and ``j = j_{ν,1}``; eigenvalue ``λ₁ = j²``.
``H``
    mean curvature of the container boundary at the drop's center point.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

SERIES_MAX_X = 8.0
QUAD_TOL = 1e-12
QUAD_MAX_DEPTH = 60
ZERO_SCAN_STEP = 0.05


class QuadratureError(RuntimeError):
    pass


class BracketError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Bessel functions

def _scaled_series(nu: float, x: float) -> float:
    """``J_ν(x) / x^ν`` by its power series (no cancellation issue for ``x <= 8``)."""
    q = -0.25 * x * x
    term = 1.0 / (2.0 ** nu * math.gamma(nu + 1.0))
    s = term
    k = 0
    while True:
        k += 1
        term *= q / (k * (nu + k))
        s += term
        if abs(term) <= 1e-17 * abs(s) and k > 2:
            return s


def _miller(nu: float, x: float) -> float:
    """``J_ν(x)`` for ``x > 0`` by backward recurrence on orders ``ν + m``.

    Normalized with ``(x/2)^ν = Σ_k (ν + 2k) Γ(ν + k) / k! · J_{ν+2k}(x)``
    (the ``k = 0`` coefficient is ``Γ(ν + 1)``).
    """
    m_top = int(x + 30 + math.sqrt(40.0 * x)) + 2 * int(nu)
    m_top += m_top % 2  # start on an even offset so the sum sees every J_{ν+2k}
    f_next, f = 0.0, 1e-300
    vals = [0.0] * (m_top + 1)
    vals[m_top] = f
    for m in range(m_top, 0, -1):
        f_prev = 2.0 * (nu + m) / x * f - f_next
        f_next, f = f, f_prev
        vals[m - 1] = f
        if abs(f) > 1e250:
            scale = 1e-250
            f *= scale
            f_next *= scale
            vals = [v * scale for v in vals]
    # normalization sum, log-space coefficients keep large orders finite
    s = 0.0
    for k in range(0, m_top // 2 + 1):
        if k == 0:
            logc = math.lgamma(nu + 1.0)
        else:
            logc = math.log(nu + 2 * k) + math.lgamma(nu + k) - math.lgamma(k + 1.0)
        s += math.exp(logc - nu * math.log(0.5 * x)) * vals[2 * k]
    return vals[0] / s


def bessel_j(nu: float, x: float) -> float:
    """Bessel function of the first kind ``J_ν(x)`` for ``ν >= 0``, ``x >= 0``."""
    if nu < 0 or x < 0:
        raise ValueError("bessel_j needs nu >= 0 and x >= 0")
    if x == 0.0:
        return 1.0 if nu == 0 else 0.0
    if x <= SERIES_MAX_X:
        return _scaled_series(nu, x) * x ** nu
    return _miller(nu, x)


def _bessel_scaled(nu: float, x: float) -> float:
    """``J_ν(x) / x^ν``, regular at ``x = 0``."""
    if x <= SERIES_MAX_X:
        return _scaled_series(nu, x)
    return _miller(nu, x) / x ** nu


def bessel_first_zero(nu: float) -> float:
    """First positive zero ``j_{ν,1}`` by a sign scan and bisection to machine precision."""
    if not 0 <= nu <= 10:
        raise ValueError("order outside [0, 10]")
    # J_ν > 0 on (0, j_{ν,1}) and j_{ν,1} > ν
    lo = max(nu, ZERO_SCAN_STEP)
    while True:
        hi = lo + ZERO_SCAN_STEP
        f_hi = bessel_j(nu, hi)
        if f_hi <= 0:
            break
        lo = hi
        if lo > nu + 20:
            raise BracketError(f"no sign change of J_{nu} found")
    if f_hi == 0:
        return hi
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            return mid
        f_mid = bessel_j(nu, mid)
        if f_mid > 0:
            lo = mid
        else:
            hi = mid


def lambda1_dir(N: int) -> float:
    """First Dirichlet eigenvalue of the unit ball in ``ℝ^N``: ``j²_{N/2-1,1}``."""
    if N < 2:
        raise ValueError("N must be >= 2")
    return bessel_first_zero(N / 2 - 1) ** 2


# ---------------------------------------------------------------------------
# quadrature

def adaptive_simpson(f, a: float, b: float, tol: float = QUAD_TOL,
                     max_depth: int = QUAD_MAX_DEPTH) -> float:
    """Adaptive Simpson rule with absolute tolerance ``tol`` (Richardson-corrected)."""
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4 * fm + fb)
    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        a, b, fa, fm, fb, whole, eps, depth = stack.pop()
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6.0 * (fa + 4 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4 * frm + fb)
        err = left + right - whole
        if abs(err) <= 15 * eps and depth >= 2:
            total += left + right + err / 15.0
        elif depth >= max_depth:
            raise QuadratureError(f"adaptive Simpson did not converge on [{a}, {b}]")
        else:
            stack.append((a, m, fa, flm, fm, left, 0.5 * eps, depth + 1))
            stack.append((m, b, fm, frm, fb, right, 0.5 * eps, depth + 1))
    return total


# ---------------------------------------------------------------------------
# constants

def omega(N: int) -> float:
    """Volume of the unit ball in ``ℝ^N``, ``π^{N/2} / Γ(N/2 + 1)``."""
    return math.pi ** (N / 2) / math.gamma(N / 2 + 1)


@dataclass(frozen=True)
class AsymptoticConstants:
    N: int
    omega_N: float
    omega_N1: float
    lambda1: float
    beta_N1: float
    C_under: float
    C_over: float
    boundary_ratio: float

    def c_under_closed_form(self) -> float:
        """Second expression for ``C̲_N`` (independent of ``β_{N-1}``)."""
        N = self.N
        half = self.omega_N / 2
        return 4 * half ** (-1 / N) / N * (N - 1) / (N + 1) * self.omega_N1 / self.omega_N


def _radial_integrals(N: int, j: float, tol: float = QUAD_TOL):
    """``(∫_{|x'|<1} φ²(x',0), ∫_{B₁⁺}|∇φ|², ∫_{B₁⁺}φ²)`` with ``φ ∝ J_ν(jρ)/(jρ)^ν``."""
    nu = N / 2 - 1
    w_N, w_N1 = omega(N), omega(N - 1)
    sphere_N1 = (N - 1) * w_N1      # area of S^{N-2}
    half_sphere_N = N * w_N / 2     # area of the upper half of S^{N-1}

    # φ(0) = 1 keeps the integrands O(1), so the absolute tolerance is meaningful
    norm = 2.0 ** nu * math.gamma(nu + 1.0)

    def phi(r):
        return norm * _bessel_scaled(nu, j * r)

    def dphi(r):
        # d/dx (x^{-ν} J_ν) = -x^{-ν} J_{ν+1} = -x · (J_{ν+1}(x) / x^{ν+1})
        x = j * r
        return -norm * j * x * _bessel_scaled(nu + 1, x)

    flat = sphere_N1 * adaptive_simpson(lambda r: phi(r) ** 2 * r ** (N - 2), 0.0, 1.0, tol)
    grad = half_sphere_N * adaptive_simpson(lambda r: dphi(r) ** 2 * r ** (N - 1), 0.0, 1.0, tol)
    mass = half_sphere_N * adaptive_simpson(lambda r: phi(r) ** 2 * r ** (N - 1), 0.0, 1.0, tol)
    return flat, grad, mass


def constants(N: int) -> AsymptoticConstants:
    """All ball constants and the two curvature coefficients ``C̲_N > C̄_N > 0``."""
    if not 2 <= N <= 8:
        raise ValueError("N outside [2, 8]")
    w_N, w_N1 = omega(N), omega(N - 1)
    j = bessel_first_zero(N / 2 - 1)
    lam = j * j
    beta = (N - 1) / (N * (N + 1)) * (2 / w_N) ** ((N + 1) / N) * w_N1
    flat, grad, _ = _radial_integrals(N, j)
    ratio = flat / grad
    half = w_N / 2
    c_over = half ** (-1 / N) / N * (2 * (N - 1) / (N + 1) * w_N1 / w_N
                                     + N * (N - 1) / 4 * ratio)
    return AsymptoticConstants(N, w_N, w_N1, lam, beta, 2 * beta, c_over, ratio)


def rayleigh_identity_residual(N: int) -> float:
    """``|∫|∇φ|² - λ₁ ∫φ²| / ∫|∇φ|²`` over the half ball, by quadrature."""
    j = bessel_first_zero(N / 2 - 1)
    _, grad, mass = _radial_integrals(N, j)
    return abs(grad - j * j * mass) / grad


# ---------------------------------------------------------------------------
# expansions

def expand_measure(r: float, H: float, N: int) -> float:
    """Two-term volume of ``B_r(x₀) ∩ Ω`` at a boundary point of mean curvature ``H``."""
    if r < 0:
        raise ValueError("r must be nonnegative")
    return 0.5 * omega(N) * r ** N - 0.5 * (N - 1) / (N + 1) * omega(N - 1) * H * r ** (N + 1)


def expand_mu_upper(r: float, H: float, N: int, c: AsymptoticConstants | None = None) -> float:
    """Two-term upper expansion of ``μ(B_r(x₀) ∩ Ω, Ω)``."""
    if r <= 0:
        raise ValueError("r must be positive")
    c = constants(N) if c is None else c
    return c.lambda1 / r ** 2 * (1 - (N - 1) / 4 * c.boundary_ratio * H * r)


def compose_asymptotics(a: float, b: float, c: float, d: float, N: int, delta: float) -> float:
    """Eliminate ``r`` between ``δ = a r^N (1 - b r)`` and ``μ = c r^{-2} (1 - d r)``.

    Returns ``c a^{2/N} δ^{-2/N} (1 - a^{-1/N} (2b + N d) / N · δ^{1/N})``.
    """
    if a <= 0 or c <= 0 or delta <= 0:
        raise ValueError("need a, c, delta > 0")
    return c * a ** (2 / N) * delta ** (-2 / N) * (
        1 - a ** (-1 / N) * (2 * b + N * d) / N * delta ** (1 / N))


def c_over_from_composition(c: AsymptoticConstants) -> float:
    """``C̄_N`` recovered as the first-order coefficient of the composed expansion."""
    N = c.N
    a = c.omega_N / 2
    b = (N - 1) / (N + 1) * c.omega_N1 / c.omega_N
    d = (N - 1) / 4 * c.boundary_ratio
    return a ** (-1 / N) * (2 * b + N * d) / N


@dataclass(frozen=True)
class PinchBounds:
    lower: float
    upper: float
    ratio_A: float
    ratio_B: float


def pinch_bounds(delta: float, H_hat: float, H_x0: float, N: int,
                 c: AsymptoticConstants | None = None) -> PinchBounds:
    """Two-term lower/upper values for ``sd(δ)`` and the ratio exponents ``A``, ``B``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    c = constants(N) if c is None else c
    lead = c.lambda1 * (c.omega_N / 2) ** (2 / N) * delta ** (-2 / N)
    s = delta ** (1 / N)
    return PinchBounds(lower=lead * (1 - c.C_under * H_hat * s),
                       upper=lead * (1 - c.C_over * H_x0 * s),
                       ratio_A=c.C_under * H_hat - c.C_over * H_x0,
                       ratio_B=2 / N + 2)


CONSTANTS_COLUMNS = ("N", "omega_N", "lambda1_dir", "beta_N1", "C_under", "C_over",
                     "boundary_ratio")


def write_constants_csv(fh, dims=range(2, 9), extra: dict | None = None) -> None:
    """CSV table of the constants, one row per dimension, 17 significant digits."""
    extra = extra or {}
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CONSTANTS_COLUMNS + tuple(extra))
    for N in dims:
        c = constants(N)
        row = [N, c.omega_N, c.lambda1, c.beta_N1, c.C_under, c.C_over, c.boundary_ratio]
        w.writerow([row[0]] + [f"{v:.17g}" for v in row[1:]] + list(extra.values()))
