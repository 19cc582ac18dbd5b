import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special

from specdrop.geometry import QuarterDisk, Strip, make_grid, mask_with_exact_volume, rasterize
from specdrop.harness import random_masks
from specdrop.mixed_drop import mu
from specdrop.symmetry_iso import (alpha_symmetrize, cone_isoperimetric_check,
                                   distribution_function, isoperimetric_constant_rectangle,
                                   mu_lower_bound, quarter_disk_value, strip_value,
                                   strip_vs_quarter_crossover)

J01 = float(special.jn_zeros(0, 1)[0])


def test_distribution_function_examples(unit128):
    g = unit128
    delta = 0.25
    X, Y = g.centers()
    u = np.where(Y < delta, np.cos(math.pi * Y / (2 * delta)), 0.0)
    supp = np.count_nonzero(u > 0) * g.cell_area
    assert distribution_function(u, -1.0, g) == g.area
    assert distribution_function(u, 0.0, g) == supp
    assert distribution_function(u, u.max(), g) == 0.0
    assert abs(distribution_function(u, math.cos(math.pi / 4), g) - delta / 2) <= g.h
    assert distribution_function(u, 0.5, g.cell_area) == distribution_function(u, 0.5, g)


def test_symmetrize_radial_function_at_corner(unit128):
    g = unit128
    X, Y = g.centers()
    rho = np.hypot(X, Y)
    R = 0.6
    u = np.where(rho < R, np.cos(math.pi * rho / (2 * R)), 0.0)
    prof = alpha_symmetrize(u, math.pi / 4, g)
    r_mid = prof.radii - 0.5 * np.diff(np.concatenate([[0.0], prof.radii]))
    ref = np.cos(math.pi * np.minimum(r_mid, R) / (2 * R))
    # staircase: the rasterized quarter disk has the right measure only up to O(h)
    assert np.max(np.abs(prof.values - ref)) <= 4 * g.h
    assert prof.r_max == pytest.approx(R, abs=2 * g.h)


def test_symmetrize_constant():
    g = make_grid(1, 1, 64)
    D = mask_with_exact_volume(QuarterDisk((1, 1), 1.0), g, 0.1)
    u = np.where(D.flat, 2.5, 0.0)
    alpha = math.pi / 4
    prof = alpha_symmetrize(u, alpha, g)
    assert np.all(prof.values == 2.5)
    assert prof.r_max == pytest.approx(math.sqrt(D.volume / alpha))
    assert prof(0.0) == 2.5 and prof(prof.r_max * 1.01) == 0.0


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.2, 3.0))
def test_equimeasurability(seed, alpha):
    g = make_grid(1, 1, 32)
    u = np.random.default_rng(seed).random(g.size) ** 3
    u[u < 0.05] = 0.0
    prof = alpha_symmetrize(u, alpha, g)
    assert np.all(np.diff(prof.values) <= 0)
    for t in np.linspace(0, u.max() * 1.01, 100):
        assert abs(distribution_function(u, t, g) - prof.superlevel_measure(t)) <= 1e-12


def test_profile_depends_on_alpha_only():
    g = make_grid(1, 1, 32)
    u = np.random.default_rng(2).random(g.size)
    a = alpha_symmetrize(u, 0.7, g)
    b = alpha_symmetrize(u.reshape(g.shape)[::-1, ::-1].ravel(), 0.7, g)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.radii, b.radii)


def test_symmetrize_rejects_aperture():
    with pytest.raises(ValueError):
        alpha_symmetrize(np.ones(16), 0.0, 1.0)
    with pytest.raises(ValueError):
        alpha_symmetrize(np.ones(16), 4.0, 1.0)


def test_profile_csv():
    prof = alpha_symmetrize(np.array([3.0, 1.0, 2.0, 0.0]), 1.0, 0.25)
    buf = io.StringIO()
    prof.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "r,value"
    assert len(lines) == 4 and lines[1].endswith(",3")


def test_rectangle_constant_examples():
    assert isoperimetric_constant_rectangle(1, 1, 0.1) ** 2 == pytest.approx(math.pi / 4)
    assert isoperimetric_constant_rectangle(1, 1, 0.5) ** 2 == pytest.approx(0.5)
    assert isoperimetric_constant_rectangle(1, 2, 1 / math.pi) ** 2 == pytest.approx(math.pi / 4)
    with pytest.raises(ValueError):
        isoperimetric_constant_rectangle(2, 1, 0.1)


def test_rectangle_constant_against_candidates():
    # brute force over the four candidate families and all volumes v <= δ̄
    L1, L2 = 1.0, 1.5
    for dbar in np.linspace(0.02, 1.4, 40):
        best = math.inf
        for v in np.linspace(1e-4, dbar, 2000):
            cands = [math.pi * math.sqrt(v / math.pi) / 2 / math.sqrt(v)]  # quarter disk
            if v <= math.pi * (L1 / 2) ** 2 / 2:
                cands.append(math.pi * math.sqrt(2 * v / math.pi) / 2 / math.sqrt(v))
            cands.append(L1 / 2 / math.sqrt(v))  # strip across the short side
            best = min(best, *cands)
        K = isoperimetric_constant_rectangle(L1, L2, dbar)
        assert K == pytest.approx(best, rel=1e-6)


@given(st.floats(0.01, 0.98), st.floats(0.01, 0.98))
def test_rectangle_constant_monotone_and_bounded(a, b):
    lo, hi = sorted((a, b))
    Klo = isoperimetric_constant_rectangle(1, 1, lo)
    Khi = isoperimetric_constant_rectangle(1, 1, hi)
    assert Khi <= Klo
    assert 0 <= Khi <= math.sqrt(math.pi)


def test_cone_constant():
    for r in (0.1, 1.0, 7.0):
        assert cone_isoperimetric_check(math.pi / 4, r) == pytest.approx(0.886227, abs=1e-6)
    assert cone_isoperimetric_check(math.pi / 2, 1.0) == pytest.approx(1.253314, abs=1e-6)
    half_ball = 2 * math.pi / 3
    assert cone_isoperimetric_check(half_ball, 0.3, N=3) == pytest.approx(half_ball ** (1 / 3))
    assert cone_isoperimetric_check(half_ball, 0.3, N=3) == pytest.approx(1.27944, abs=1e-5)
    with pytest.raises(ValueError):
        cone_isoperimetric_check(4.0, 1.0)


def test_mu_lower_bound_examples():
    assert mu_lower_bound(0.1, math.sqrt(math.pi / 4)) == pytest.approx(45.421, abs=1e-3)
    assert mu_lower_bound(math.pi, math.sqrt(math.pi)) == pytest.approx(J01 ** 2, rel=1e-12)
    with pytest.raises(ValueError):
        mu_lower_bound(0.1, 2.0)
    with pytest.raises(ValueError):
        mu_lower_bound(0.0, 0.5)


def test_quarter_disk_attains_bound():
    g = make_grid(1, 1, 512)
    D = mask_with_exact_volume(QuarterDisk((0, 0), 1.0), g, 0.1)
    bound = mu_lower_bound(D.volume, math.sqrt(math.pi / 4))
    assert mu(D).mu == pytest.approx(bound, rel=3e-2)


def test_crossover_examples():
    assert strip_vs_quarter_crossover(1.0) == pytest.approx(math.pi / J01 ** 2, abs=1e-12)
    assert strip_vs_quarter_crossover(1.0) == pytest.approx(0.5432287, abs=1e-7)
    assert strip_vs_quarter_crossover(2.0) == pytest.approx(4 * math.pi / J01 ** 2, abs=1e-12)
    assert strip_value(0.1) == pytest.approx(246.74, abs=1e-2)
    assert quarter_disk_value(0.1) == pytest.approx(45.42, abs=1e-2)
    assert strip_value(0.6) == pytest.approx(6.854, abs=1e-3)
    assert quarter_disk_value(0.6) == pytest.approx(7.570, abs=1e-3)
    d = strip_vs_quarter_crossover()
    assert strip_value(d) == pytest.approx(quarter_disk_value(d), rel=1e-12)


def test_discrete_polya_szego():
    g = make_grid(1, 1, 64)
    masks = random_masks(g, 10, 3) + [rasterize(Strip("x", 0.2), g)]
    for D in masks:
        alpha = math.pi / 4
        r = math.sqrt(D.volume / alpha)
        assert mu(D).mu >= (1 - 3e-2) * J01 ** 2 / r ** 2
