"""Non-neural core of open-vocabulary 3D detection with foundation-model pseudo-labels.

Lift 2D detections into clustered 3D pseudo-label boxes, compute the
localization and cross-modal contrastive losses, handle prompt vocabularies
and score 3D detections with AP/AR.
"""
from .evaluation import EvalReport, LabeledBox3D, evaluate
from .geometry import box_corners, iou3d
from .lifting import LiftParams, LiftRejected, dbscan, fit_box, frustum_points, lift_box
from .losses import (Assignment, FeatureVec, box_cost, contrastive_loss, hungarian_match, loc_loss,
                     recog_loss, total_loss)
from .prompts import (BUILTIN_TEMPLATES, PromptTemplateSet, classify_embedding, expand_prompts,
                      mean_class_feature, sample_vocab)
from .scene import Box2D, Box3D, CameraModel, ClassVocabulary, PointCloud, Scene, clamp_box2d, project_point
from .synth import SynthSpec, generate_scene

__version__ = "0.1.0"
