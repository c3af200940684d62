# %% [markdown]
# # Reverse-mode gradients, twice
#
# The generator is trained through the learner's one-step update, so its
# gradient needs second derivatives.  `sscdl.diffcore` records every vjp with
# its own ops, which makes backward passes differentiable.

# %%
import numpy as np

from sscdl.diffcore import Tensor, enable_grad, grad, ops

x = Tensor(np.array([0.3, -1.2, 2.0]), requires_grad=True)
y = ops.sum(ops.mul(ops.sigmoid(x), ops.square(x)))
(g,) = grad(y, [x], create_graph=True)
(h,) = grad(ops.sum(g), [x])
print("first derivative :", g.data)
print("row sums of the Hessian:", h.data)

# %% [markdown]
# ## Exact meta-gradient against finite differences
#
# `check_meta_gradient` builds a 5-entity graph, takes the inner step
# `theta+ = theta - alpha * grad L(D + D_tmp)` and differentiates the labelled
# loss at `theta+` with respect to every generator parameter.

# %%
from sscdl.diagnostics import check_meta_gradient, check_loss_gradients

print(check_loss_gradients().line())
print(check_meta_gradient().line())

# %% [markdown]
# The DARTS-style finite-difference shortcut (`meta_mode = first_order`)
# trades the second backward pass for two extra gradients.

# %%
from sscdl.diagnostics import tiny_problem
from sscdl.losses import meta_gradient

p = tiny_problem()
exact, _ = meta_gradient(p.eta, p.theta, p.labeled, p.negatives, p.unlabeled, 0.5, p.settings)
approx, _ = meta_gradient(p.eta, p.theta, p.labeled, p.negatives, p.unlabeled, 0.5, p.settings,
                          mode="first_order", fd_eps=1e-4)
num = sum(float(np.sum((exact[k] - approx[k]) ** 2)) for k in exact) ** 0.5
den = sum(float(np.sum(exact[k] ** 2)) for k in exact) ** 0.5
print(f"relative difference exact vs finite-difference: {num / den:.2e}")
