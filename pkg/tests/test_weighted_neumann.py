import math

import numpy as np
import pytest
from scipy.optimize import brentq

from specdrop.geometry import (HalfDisk, QuarterDisk, Strip, make_grid, mask_with_exact_volume,
                               rasterize)
from specdrop.mixed_drop import mu as mixed_mu
from specdrop.weighted_neumann import (AdmissibilityError, BangBangWeight, lambda_upper_bound_check,
                                       principal_eigenvalue, spectral_function)


def strip_oracle(a, beta):
    """Principal eigenvalue of the 1D problem with m = 1 on (0, a), -β on (a, 1)."""
    f = lambda lam: (math.tan(math.sqrt(lam) * a)
                     - math.sqrt(beta) * math.tanh(math.sqrt(beta * lam) * (1 - a)))
    # first branch of tan: √λ a < π/2
    return brentq(f, 1e-9, (math.pi / (2 * a)) ** 2 * (1 - 1e-12), xtol=1e-14)


@pytest.fixture(scope="module")
def left_half():
    g = make_grid(1, 1, 128)
    return rasterize(Strip("y", 0.5), g)


@pytest.fixture(scope="module")
def slab512():
    # the modes of interest depend on x only, so a 4-row slab gives the unit-square values
    g = make_grid(1, 4 / 512, 512)
    return rasterize(Strip("y", 0.5), g)


def test_oracle_value():
    assert strip_oracle(0.5, 10.0) == pytest.approx(6.394, abs=1e-3)


def test_left_half_strip_against_oracle(left_half):
    p = principal_eigenvalue(BangBangWeight(left_half, 10.0))
    assert p.lam == pytest.approx(strip_oracle(0.5, 10.0), rel=1e-3)


def test_fine_grid_example(slab512):
    p = principal_eigenvalue(BangBangWeight(slab512, 10.0))
    assert p.lam == pytest.approx(6.394, rel=1e-2)
    assert p.lam == pytest.approx(strip_oracle(0.5, 10.0), rel=1e-4)


def test_spectral_function_examples(slab512):
    w = BangBangWeight(slab512, 10.0)
    mu0, d0 = spectral_function(w, 0.0)
    assert mu0 == 0.0
    assert d0 == pytest.approx(-w.integral() / slab512.grid.area)
    assert d0 > 0
    mu_star, _ = spectral_function(w, strip_oracle(0.5, 10.0))
    assert abs(mu_star) <= 1e-3
    assert spectral_function(w, 1e3)[0] < 0
    with pytest.raises(ValueError):
        spectral_function(w, -1.0)


def test_derivative_matches_finite_difference(left_half):
    w = BangBangWeight(left_half, 10.0)
    lam, h = 3.0, 1e-4
    _, d = spectral_function(w, lam)
    fd = (spectral_function(w, lam + h)[0] - spectral_function(w, lam - h)[0]) / (2 * h)
    assert d == pytest.approx(fd, rel=1e-5)


def test_bracket_validity(left_half):
    w = BangBangWeight(left_half, 10.0)
    lam = principal_eigenvalue(w).lam
    assert spectral_function(w, 0.5 * lam)[0] > 0
    assert spectral_function(w, 2.0 * lam)[0] < 0


def test_large_beta_limit(slab512):
    p = principal_eigenvalue(BangBangWeight(slab512, 1e6))
    assert p.lam == pytest.approx(math.pi ** 2, rel=1e-2)
    assert p.lam <= mixed_mu(slab512).mu


def test_large_beta_grid_limit(left_half):
    # on the grid the limit problem vanishes at the first outside cell center, x = a + h/2
    h = left_half.grid.h
    p = principal_eigenvalue(BangBangWeight(left_half, 1e8))
    assert p.lam == pytest.approx((math.pi / (2 * (0.5 + h / 2))) ** 2, rel=1e-3)


def test_admissibility():
    g = make_grid(1, 1, 32)
    D = rasterize(Strip("x", 1 - 1.5 / 32), g)
    delta = D.volume
    with pytest.raises(AdmissibilityError):
        BangBangWeight(D, 0.5 * delta / (g.area - delta))
    with pytest.raises(AdmissibilityError):
        BangBangWeight(D, -1.0)


def test_eigenfunction_invariants(unit64):
    D = mask_with_exact_volume(QuarterDisk((0, 0), 1.0), unit64, 0.1)
    for beta in (10.0, 100.0, 1e4):
        p = principal_eigenvalue(BangBangWeight(D, beta))
        u = p.u
        assert np.all(u >= 0) and np.all(u[D.flat] > 0)
        h2 = unit64.cell_area
        assert h2 * float(u[D.flat] @ u[D.flat]) == pytest.approx(1.0)
        assert 0 < p.mass_outside <= 1.0
        assert h2 * float(u[D.flat] @ u[D.flat]) - p.mass_outside > 0


def test_fast_and_robust_routes_agree(unit64):
    D = mask_with_exact_volume(HalfDisk((0.5, 0), 1.0), unit64, 0.1)
    w = BangBangWeight(D, 100.0)
    robust = principal_eigenvalue(w)
    for guess in (0.9 * robust.lam, robust.lam, 1.2 * robust.lam):
        fast = principal_eigenvalue(w, guess=guess)
        assert fast.lam == pytest.approx(robust.lam, rel=1e-8)
        assert np.max(np.abs(fast.u - robust.u)) <= 1e-5 * robust.u.max()


def test_upper_bound_examples():
    g = make_grid(1, 1, 128)
    Q = mask_with_exact_volume(QuarterDisk((0, 0), 1.0), g, 0.1)
    S = rasterize(Strip("x", 0.1), g)
    mq = mixed_mu(Q).mu
    assert lambda_upper_bound_check(BangBangWeight(Q, 100.0), mq)
    assert lambda_upper_bound_check(BangBangWeight(S, 10.0), mixed_mu(S).mu)
    lam = principal_eigenvalue(BangBangWeight(Q, 1e4)).lam
    assert lambda_upper_bound_check(BangBangWeight(Q, 1e4), mq, lam=lam)
    assert (mq - lam) / mq <= 0.05


def test_monotone_in_beta():
    g = make_grid(1, 1, 48)
    rng = np.random.default_rng(11)
    for _ in range(10):
        delta = float(rng.uniform(0.05, 0.3))
        corner = [(0, 0), (1, 0), (0, 1), (1, 1)][rng.integers(4)]
        D = mask_with_exact_volume(QuarterDisk(corner, 1.0), g, delta)
        b1 = float(rng.uniform(1.0, 50.0))
        b2 = b1 * float(rng.uniform(1.5, 20.0))
        l1 = principal_eigenvalue(BangBangWeight(D, b1)).lam
        l2 = principal_eigenvalue(BangBangWeight(D, b2)).lam
        assert l1 <= l2 * (1 + 1e-9)


def test_monotone_in_domain():
    g = make_grid(1, 1, 48)
    fam = HalfDisk((0.5, 0.0), 1.0)
    lams = [principal_eigenvalue(BangBangWeight(mask_with_exact_volume(fam, g, d), 50.0)).lam
            for d in (0.05, 0.1, 0.2)]
    assert lams[0] >= lams[1] >= lams[2]
