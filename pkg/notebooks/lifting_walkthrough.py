"""
Lifting a 2D box into a 3D pseudo-label
=======================================

One synthetic scene, one detector box, and the three steps in between:
frustum selection, density clustering and box fitting.
"""

# %%
import numpy as np

from ov3d.geometry import iou3d
from ov3d.lifting import LiftParams, dbscan, fit_box, frustum_points, lift_box
from ov3d.synth import SynthSpec, generate_scene

spec = SynthSpec(objects_per_scene=(3, 3), seed=7)
scene, gt, boxes2d = generate_scene(spec, 0)
print(scene.scene_id, len(scene.cloud), "points,", len(gt), "objects")

# %% [markdown]
# The 2D box cuts a pyramid out of the cloud. Everything whose projection
# lands inside the rectangle (and sits in front of the camera) survives.

# %%
box2d = boxes2d[0]
idx = frustum_points(scene.cloud, scene.camera, box2d)
print(box2d.phrase, "frustum keeps", len(idx), "of", len(scene.cloud))

# %% [markdown]
# Clutter and other objects behind the target fall in the same frustum.
# DBSCAN separates them; the largest cluster is taken as the object.

# %%
pts = scene.cloud.points[idx]
labels = dbscan(pts, eps=0.15, min_pts=10)
sizes = np.bincount(labels[labels >= 0])
print("cluster sizes", sizes.tolist(), " noise", int((labels < 0).sum()))

# %%
obj = pts[labels == sizes.argmax()]
box = fit_box(obj)
print("fitted", np.round(box.as_array(), 3))
print("truth ", np.round(gt[0].box.as_array(), 3))
print("IoU", round(iou3d(box, gt[0].box), 3))

# %% [markdown]
# ``lift_box`` runs the same pipeline and raises ``LiftRejected`` with a
# reason when a box cannot be lifted.

# %%
for b, g in zip(boxes2d, gt):
    lifted = lift_box(scene, b, LiftParams())
    print(f"{b.phrase:10s} IoU {iou3d(lifted, g.box):.3f}")
