# %% [markdown]
# # Scaling exponents and kernels
#
# Under the rescaling, time speeds up by n, space shrinks by n^-beta,
# impact and selection shrink by n^-gamma and n^-delta.

# %%
from __future__ import annotations

import numpy as np

from slfv import FixedRadius, StableRadii, gamma_R, scaling_params
from slfv.geometry import ball_volume
from slfv.scaling import KernelSpec, apply_fractional_generator, levy_symbol, levy_symbol_gap, phi_kernel

for law in (FixedRadius(1.0), StableRadii(1.2), StableRadii(1.5), StableRadii(1.8)):
    p = scaling_params(1e4, law, u=1.0, sigma=1.0)
    print(f"{type(law).__name__:12s} alpha={p.alpha:.1f} beta={p.beta:.3f} gamma={p.gamma:.3f} "
          f"delta={p.delta:.3f} u_n={p.u_n:.2e}")

# %% [markdown]
# The diffusion constant of a fixed-radius lineage, 2 R^2 V_R / (d+2).

# %%
for d in (1, 2, 3):
    print(d, gamma_R(d, 1.0), 2 * ball_volume(d, 1.0) / (d + 2))

# %% [markdown]
# The jump kernel of the stable case is homogeneous of degree -(d+alpha),
# and so is the symbol of degree alpha.

# %%
for m in (0.5, 1.0, 2.0):
    print(f"Phi({m}) = {phi_kernel(1, 1.5, m):.5f}, ratio to Phi({2*m}) = "
          f"{phi_kernel(1, 1.5, m) / phi_kernel(1, 1.5, 2*m):.4f}")
for th in (0.1, 1.0, 10.0):
    print(f"psi(2 theta)/psi(theta) at {th}: {levy_symbol(2*th, 1, 1.5) / levy_symbol(th, 1, 1.5):.5f}")

# %% [markdown]
# Truncating small radii (finite n) changes the symbol by O(theta^2).  The
# worst ratio gap / (n^-beta(2-alpha) theta^2) is V_1 / (3 (2-alpha)).

# %%
beta = 0.5
for n in (1e2, 1e4):
    th = np.geomspace(1e-2, 1e2, 9)
    g = [abs(levy_symbol_gap(t, 1, 1.5, n)) / (n ** (-beta * 0.5) * t * t) for t in th]
    print(f"n={n:.0e}: max scaled gap {max(g):.4f} (sharp constant {2 / 1.5:.4f})")

# %% [markdown]
# On a periodic grid the fractional generator is a Fourier multiplier.

# %%
L, m = 2 * np.pi, 128
y = (np.arange(m) + 0.5) * L / m
spec = KernelSpec(1, 1.5, 1.0)
out = apply_fractional_generator(np.cos(3 * y), spec, L)
print("eigenvalue for mode 3:", out[0] / np.cos(3 * y[0]), "vs", spec.psi(3))
