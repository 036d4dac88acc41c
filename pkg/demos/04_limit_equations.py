# %% [markdown]
# # Limiting equations
#
# In d = 2 the rescaled field approaches the deterministic Fisher-KPP
# equation.  In d = 1 the limit keeps Wright-Fisher noise.  Stable radii
# replace the Laplacian by a fractional generator.

# %%
from __future__ import annotations

import numpy as np

from slfv import EventModel, FixedRadius
from slfv.analysis import l1_distance, mean_averaged_field
from slfv.forward import rescaled_config
from slfv.limits import PdeConfig, logistic_decay, solve_fkpp, solve_fkpp_stochastic_1d, solve_fractional_fkpp

L = 4.0


def w0(x, y):
    return 0.5 + 0.3 * np.cos(2 * np.pi * x / L) * np.cos(2 * np.pi * y / L)


plan = rescaled_config(EventModel(FixedRadius(1.0), 1.0, 1.0), 50, L=L, d=2)
mean, _ = mean_averaged_field(plan, w0, 1.0, 40, seed=0)
m = mean.shape[0]
c = (np.arange(m) + 0.5) * L / m
X, Y = np.meshgrid(c, c, indexing="ij")
pde = solve_fkpp(PdeConfig.fixed_radius(2, 1.0, 1.0, 1.0, L, m, 1.0, noise=False), w0(X, Y), [0, 1.0])
print(f"n=50, 40 replicates: L1 distance to the PDE {l1_distance(mean, pde.final):.4f}")

# %% [markdown]
# A spatially constant start solves the logistic equation exactly.

# %%
cfg = PdeConfig.fixed_radius(1, 1.0, 1.0, 1.0, 10.0, 32, 2.0, noise=False)
traj = solve_fkpp(cfg, np.full(32, 0.8), [0.5, 1.0, 2.0])
for t, w in zip(traj.times, traj.fields):
    print(t, w[0], logistic_decay(0.8, cfg.reaction, t))

# %% [markdown]
# Stochastic Fisher-KPP in d = 1: individual runs fluctuate, and some
# patches fix.

# %%
cfg = PdeConfig.fixed_radius(1, 1.0, 1.0, 1.0, 10.0, 64, 2.0)
x = (np.arange(64) + 0.5) * 10.0 / 64
runs = solve_fkpp_stochastic_1d(cfg, np.tile(0.5 + 0.3 * np.sin(2 * np.pi * x / 10), (20, 1)),
                                np.random.default_rng(4), [2.0])
print("spatial means of 20 runs:", np.round(runs.final.mean(axis=1), 3))

# %%
cfg = PdeConfig.stable(1, 1.5, 1.0, 1.0, 10.0, 128, 2.0, dt=0.01, noise=False)
x = (np.arange(128) + 0.5) * 10.0 / 128
frac = solve_fractional_fkpp(cfg, 0.5 + 0.3 * np.cos(2 * np.pi * x / 10), sample_times=[2.0])
print("fractional FKPP, final range:", frac.final.min(), frac.final.max())
