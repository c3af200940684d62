# %% [markdown]
# # Confidence distributions
#
# A scored fact `(h, r, t, s)` is turned into a distribution over the 101
# labels 0, 0.01, ..., 1 by evaluating a Gaussian centred at `s` on the grid
# and normalising.  This notebook looks at what the width `sigma` does, and
# at a side effect of wide targets on what the training loss can reach.

# %%
import numpy as np

from sscdl.confdist import DEFAULT_GRID, discretize, expectation, kl_divergence, max_degree

s = np.array([0.78])
for sigma in (0.02, 0.2, 0.6, 2.0):
    d = discretize(s, sigma)[0]
    idx, deg = max_degree(d)
    print(f"sigma={sigma:<4}  peak at label {idx}  degree {deg:.4f}  mean {expectation(d):.3f}")

# %% [markdown]
# The peak always sits at the nearest label, but with sigma = 0.6 the mass is
# spread almost evenly: the peak degree is barely above 1/101 and the mean
# of the distribution is pulled toward 0.5 by the grid edges.

# %%
a = discretize(np.array([0.5]), 0.6)[0]
b = discretize(np.array([0.6]), 0.6)[0]
print("KL(0.5 || 0.6) at sigma 0.6:", kl_divergence(a, b))
print("KL(0.5 || 0.6) at sigma 0.2:",
      kl_divergence(discretize(np.array([0.5]), 0.2)[0], discretize(np.array([0.6]), 0.2)[0]))

# %% [markdown]
# ## What the confidence loss rewards
#
# The labelled objective per item is `KL(target || p) + beta * (E[p] - s)^2`.
# Its exact minimiser over all distributions `p` tells us the best possible
# prediction of a perfectly flexible model.

# %%
from sscdl.reproduce import cp_optimal_expectation

for sigma in (0.02, 0.2, 0.6):
    row = [cp_optimal_expectation(v, sigma) for v in (0.1, 0.5, 0.7, 0.9, 1.0)]
    print(f"sigma={sigma:<4}", "  ".join(f"{v:.3f}" for v in row))

# %% [markdown]
# At sigma = 0.6 the optimum for a fact with confidence 0.9 is about 0.62.  A
# model trained with these targets shrinks its confidence predictions toward
# the middle of the range, whatever the optimiser does.
