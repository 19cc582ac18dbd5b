import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from specdrop.geometry import (DomainMask, FullDisk, GeometryError, HalfDisk, QuarterDisk, Strip,
                               boundary_contact_cells, exact_perimeter, full_mask, lens_area,
                               make_grid, mask_from_predicate, mask_with_exact_volume, rasterize,
                               relative_perimeter_grid)


def test_make_grid_examples():
    g = make_grid(1, 1, 256)
    assert (g.nx, g.ny, g.h) == (256, 256, 1 / 256)
    g = make_grid(1, 2, 128)
    assert (g.nx, g.ny, g.h) == (128, 256, 1 / 128)
    assert g.nx * g.h == pytest.approx(1.0, abs=1e-15)
    assert g.ny * g.h == pytest.approx(2.0, abs=1e-15)


@pytest.mark.parametrize("args", [(1, 1, 2), (0, 1, 64), (1, -1, 64), (1, 1, 0), (1.35, 1, 10)])
def test_make_grid_rejects(args):
    with pytest.raises(GeometryError):
        make_grid(*args)


def test_quarter_disk_raster_volume():
    g = make_grid(1, 1, 256)
    D = rasterize(QuarterDisk((0, 0), 0.5), g)
    exact = math.pi * 0.25 / 4
    assert abs(D.volume - exact) <= g.h * (math.pi * 0.5 / 2)
    assert D.volume == D.count * g.cell_area


def test_strip_raster_counts_centers():
    # centers (j + 1/2) h < 0.1 with h = 1/256 select j <= 25, i.e. 26 rows
    g = make_grid(1, 1, 256)
    D = rasterize(Strip("x", 0.1), g)
    rows = np.flatnonzero(D.cells.any(axis=1))
    assert rows.tolist() == list(range(26))
    assert D.volume == pytest.approx(26 / 256, abs=1e-15)


def test_shape_outside_box_rejected():
    g = make_grid(1, 1, 64)
    with pytest.raises(GeometryError):
        rasterize(FullDisk((0.5, 0.5), 2.0), g)
    with pytest.raises(GeometryError):
        rasterize(QuarterDisk((0.5, 0.0), 0.2), g)
    with pytest.raises(GeometryError):
        rasterize(HalfDisk((0.0, 0.0), 0.2), g)


def test_exact_volume_examples():
    g = make_grid(1, 1, 256)
    D = mask_with_exact_volume(QuarterDisk((0, 0), 1.0), g, 0.1)
    assert abs(D.volume - 0.1) <= g.cell_area
    S = mask_with_exact_volume(Strip("x", 0.3), g, 0.5)
    assert abs(S.volume - 0.5) <= g.cell_area
    assert S.cells[:128].all() and not S.cells[128:].any()
    with pytest.raises(GeometryError):
        mask_with_exact_volume(QuarterDisk((0, 0), 1.0), g, 0.9)


def test_exact_volume_is_nested_in_delta():
    g = make_grid(1, 1, 64)
    fam = HalfDisk((0.5, 0.0), 1.0)
    a = mask_with_exact_volume(fam, g, 0.05)
    b = mask_with_exact_volume(fam, g, 0.1)
    assert a.issubset(b)


def test_grid_perimeter_examples():
    g = make_grid(1, 1, 256)
    assert relative_perimeter_grid(rasterize(Strip("x", 0.25), g)) == pytest.approx(1.0)
    assert relative_perimeter_grid(full_mask(g)) == 0.0
    p = relative_perimeter_grid(rasterize(QuarterDisk((0, 0), 0.5), g))
    assert math.pi * 0.5 / 2 <= p <= 1.0 + 2 * g.h


def test_rectangle_grid_perimeter_is_exact():
    g = make_grid(1, 1, 64)
    D = mask_from_predicate(g, lambda X, Y: (X < 0.25) & (Y < 0.5))
    assert relative_perimeter_grid(D) == pytest.approx(0.25 + 0.5)


def test_exact_perimeter_examples():
    assert exact_perimeter(QuarterDisk((0, 0), 0.356825)) == pytest.approx(0.560499, abs=1e-6)
    assert exact_perimeter(Strip("x", 0.1)) == 1.0
    assert exact_perimeter(HalfDisk((0.5, 0), 0.2)) == pytest.approx(0.628319, abs=1e-6)
    assert exact_perimeter(FullDisk((0.5, 0.5), 0.2)) == pytest.approx(0.4 * math.pi)


def test_lens_area_examples():
    assert lens_area(1.0, 1.0) == pytest.approx(2 * (math.pi / 3 - math.sqrt(3) / 4), rel=1e-12)
    assert lens_area(1e-4, 1.0) / (math.pi / 2 * 1e-8) == pytest.approx(1.0, abs=1e-4)
    assert abs(lens_area(0.1, 1.0) - (math.pi / 2 * 0.01 - 0.001 / 3)) <= 2e-5
    with pytest.raises(GeometryError):
        lens_area(2.5, 1.0)


def test_lens_area_against_monte_carlo_grid():
    # fine cell count of B_r(x0) ∩ B_1, x0 = (0, 1)
    r = 0.3
    n = 2000
    xs = (np.arange(n) + 0.5) / n * 2 * r - r
    X, Y = np.meshgrid(xs, xs + 1.0)
    inside = (X ** 2 + (Y - 1.0) ** 2 < r * r) & (X ** 2 + Y ** 2 < 1.0)
    approx = inside.sum() * (2 * r / n) ** 2
    assert approx == pytest.approx(lens_area(r, 1.0), rel=1e-3)


def test_refinement_is_first_order():
    shape = QuarterDisk((0, 0), 0.5)
    exact = math.pi * 0.25 / 4
    for n in (64, 128, 256, 512):
        g = make_grid(1, 1, n)
        assert abs(rasterize(shape, g).volume - exact) <= 1.0 * g.h


def test_mask_text_round_trip(unit64):
    D = rasterize(QuarterDisk((1, 0), 0.4), unit64)
    E = DomainMask.from_text(D.to_text())
    assert E == D and E.digest() == D.digest()
    with pytest.raises(GeometryError):
        DomainMask.from_text("4 4 0.25\n0000\n")


def test_mask_shape_and_grid_checks(unit64):
    with pytest.raises(GeometryError):
        DomainMask(unit64, np.zeros((3, 3), dtype=bool))
    other = make_grid(1, 1, 32)
    with pytest.raises(GeometryError):
        full_mask(unit64) | full_mask(other)


def test_mask_is_read_only(unit64):
    D = full_mask(unit64)
    with pytest.raises(ValueError):
        D.cells[0, 0] = False


def test_boundary_contact(unit64):
    assert boundary_contact_cells(rasterize(QuarterDisk((0, 0), 0.3), unit64)) > 0
    assert boundary_contact_cells(rasterize(FullDisk((0.5, 0.5), 0.2), unit64)) == 0


masks = st.lists(st.integers(0, 64 * 64 - 1), max_size=300)


@given(masks, masks)
def test_volume_additivity(a, b):
    g = make_grid(1, 1, 64)
    A = DomainMask.from_flat_indices(g, a)
    B = DomainMask.from_flat_indices(g, b)
    assert (A | B).volume + (A & B).volume == pytest.approx(A.volume + B.volume, abs=1e-15)
    assert (A - B).issubset(A)
    assert A.symmetric_difference_volume(B) == pytest.approx((A | B).volume - (A & B).volume)


@given(st.floats(0.02, 0.7))
def test_exact_volume_cell_count(delta):
    g = make_grid(1, 1, 64)
    D = mask_with_exact_volume(Strip("y", 0.5), g, delta)
    assert D.count == round(delta / g.cell_area)
