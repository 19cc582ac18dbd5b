"""Optimize the spectral drop of area 0.1 in the unit square and draw it as text.

Usage: python demos/quarter_drop.py [n]
"""
import sys

from specdrop.geometry import make_grid
from specdrop.shape_opt import best_corner_quarter_disk, optimize_sd
from specdrop.symmetry_iso import quarter_disk_value

n = int(sys.argv[1]) if len(sys.argv) > 1 else 64
delta = 0.1
g = make_grid(1.0, 1.0, n)
res = optimize_sd(g, delta)
sd_vol, corner, _ = best_corner_quarter_disk(g, delta, res.best_mask)
print(f"n={n}  value={res.best_value:.4f}  quarter-disk formula={quarter_disk_value(delta):.4f}")
print(f"best corner {corner}, symmetric difference / delta = {sd_vol / delta:.3f}")
for s, v, *_ in res.per_seed:
    print(f"  seed {s:>2}: {v:.4f}")
step = max(1, n // 32)
cells = res.best_mask.cells[::step, ::step]
print("\n".join("".join("#" if c else "." for c in row) for row in cells[::-1]))
