# %% [markdown]
# # Rescaled lineages and the limiting dual
#
# One tracked lineage jumps at rate n u_n V_R (1+s_n) in rescaled time.
# For fixed radii it becomes Brownian motion; for stable radii its jumps
# have a heavy tail of index alpha.

# %%
from __future__ import annotations

import math

import numpy as np

from slfv import EventModel, FixedRadius, StableRadii, gamma_R
from slfv.analysis import exponential_rate_check, hill_estimator, lineage_msd
from slfv.dual import lineage_paths, rescaled_dual_config
from slfv.limits import LimitDualConfig, simulate_limit_dual

rng = np.random.default_rng(5)
times = np.linspace(0.1, 1.0, 10)
plan = rescaled_dual_config(1e3, EventModel(FixedRadius(1.0), 1.0, 1.0))
lp = lineage_paths(plan.model, 1, times, 5000, rng, plan.time_factor, plan.space_factor)
slope, se = lineage_msd(lp.displacement, times).slope()
print(f"variance slope {slope:.4f} +- {se:.4f}; u Gamma_R (1+s_n) = {gamma_R(1, 1.0) * (1 + plan.model.s):.4f}")
est, p = exponential_rate_check(lp.branch_times, 1.0)
print(f"branching rate {est.estimate:.3f} (limit 2), uniformity p = {p:.2f}")

# %%
plan = rescaled_dual_config(1e3, EventModel(StableRadii(1.5), 1.0, 1.0))
lp = lineage_paths(plan.model, 1, [1.0], 5000, rng, plan.time_factor, plan.space_factor)
jumps = np.abs(lp.jump_sizes).ravel()
print(f"{jumps.size} jumps, Hill tail index {hill_estimator(jumps, int(math.sqrt(jumps.size))):.3f}")

# %% [markdown]
# In the limit, lineages branch at rate u sigma V_R.  Without coalescence
# the particle count is a Yule process with mean exp(rate T).

# %%
cfg = LimitDualConfig.fixed_radius(1, 1.0, 1.0, 0.5, dt=0.01)
yule = LimitDualConfig(1, cfg.branch_rate, 0.0, cfg.dt, variance=cfg.variance)
N = [simulate_limit_dual(yule, np.zeros((1, 1)), 2.0, np.random.default_rng(i)).N[-1] for i in range(1000)]
print(f"E[N_2] ~ {np.mean(N):.3f}, exact {math.exp(2 * cfg.branch_rate):.3f}")

# %% [markdown]
# With pairwise coalescence switched on (d = 1), branching and merging
# balance and the count stays moderate.

# %%
N = [simulate_limit_dual(cfg, np.zeros((1, 1)), 2.0, np.random.default_rng(i)).N[-1] for i in range(300)]
print(f"with coalescence: E[N_2] ~ {np.mean(N):.3f}")
