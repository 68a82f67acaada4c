"""
Localization and contrastive losses
===================================
"""

# %%
import math

import numpy as np

from ov3d.losses import contrastive_loss, hungarian_match, loc_loss
from ov3d.scene import Box3D

# %% [markdown]
# Predictions are paired with targets by minimum total cost before the
# regression terms are summed. The optimal pairing need not be greedy.

# %%
cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
m = hungarian_match(cost)
print(m.pairs, m.total_cost)

# %%
preds = [Box3D((0.1, 0, 0), (1, 1, 1)), Box3D((3, 0, 0), (1, 2, 1), 0.1)]
targets = [Box3D((3, 0, 0), (1, 2, 1)), Box3D((0, 0, 0), (1, 1, 1))]
loss, assignment = loc_loss(preds, targets)
print(round(loss, 6), assignment.pairs)

# %% [markdown]
# With orthonormal features, temperature 1 and each anchor paired with its
# own copy, every term is log(1 + e^-1).

# %%
e = np.eye(2)
value, grad = contrastive_loss(e, e, [[0], [1]], tau=1.0)
print(value, math.log(1 + math.exp(-1)))

# %% [markdown]
# The gradient is analytic; a quick central-difference check on a random
# batch.

# %%
rng = np.random.default_rng(0)
f1, f2 = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
pos = [[0, 1], [2], [3, 4]]
_, g = contrastive_loss(f1, f2, pos, 0.2)
h = 1e-5
num = np.zeros_like(f1)
for i in range(f1.shape[0]):
    for j in range(f1.shape[1]):
        d = np.zeros_like(f1)
        d[i, j] = h
        num[i, j] = (contrastive_loss(f1 + d, f2, pos, 0.2)[0] - contrastive_loss(f1 - d, f2, pos, 0.2)[0]) / (2 * h)
print("max abs difference", np.abs(g - num).max())
