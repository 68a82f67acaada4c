"""
Oriented IoU and AP on a toy example
====================================
"""

# %%
import math

from ov3d.evaluation import LabeledBox3D, average_precision, evaluate
from ov3d.geometry import iou3d
from ov3d.scene import Box3D

# %% [markdown]
# Two unit cubes offset by half a side overlap in 1/2 of each, so the IoU
# is 0.5 / 1.5 = 1/3. Rotating one by 45 degrees changes the footprint
# overlap, not the height overlap.

# %%
a = Box3D((0, 0, 0), (1, 1, 1))
print(iou3d(a, Box3D((0.5, 0, 0), (1, 1, 1))))
print(iou3d(a, Box3D((0, 0, 0), (1, 1, 1), math.pi / 4)))

# %% [markdown]
# Three ranked predictions against two ground-truth boxes: hit, miss, hit.
# Precision runs 1, 1/2, 2/3 at recall 1/2, 1/2, 1, and the area under the
# precision envelope is 1/2 + 1/2 * 2/3 = 5/6.

# %%
print(average_precision([True, False, True], 2))


def cube(x, score=None):
    return LabeledBox3D(Box3D((x, 0, 0), (1, 1, 1)), "chair", score)


gts = {"room": [cube(0), cube(10)]}
preds = {"room": [cube(0, 0.9), cube(5, 0.8), cube(10, 0.7)]}
report = evaluate(preds, gts)
print(report.table())
