"""Principal eigenvalue of a fixed corner quarter disk as the weight beta grows.

The values increase toward the mixed Dirichlet-Neumann eigenvalue of the disk.
"""
from specdrop.geometry import QuarterDisk, make_grid, mask_with_exact_volume
from specdrop.mixed_drop import mu
from specdrop.weighted_neumann import BangBangWeight, principal_eigenvalue

g = make_grid(1.0, 1.0, 128)
D = mask_with_exact_volume(QuarterDisk((0.0, 0.0), 1.0), g, 0.1)
limit = mu(D).mu
print(f"mu(D) = {limit:.4f}")
guess = None
for beta in (1.0, 10.0, 100.0, 1000.0, 10000.0):
    p = principal_eigenvalue(BangBangWeight(D, beta), guess=guess)
    guess = p.lam
    print(f"beta={beta:>8g}  lambda={p.lam:.4f}  ratio={p.lam / limit:.4f}")
