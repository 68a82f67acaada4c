"""
Prompt expansion and vocabulary sampling
========================================
"""

# %%
import numpy as np

from ov3d.losses import FeatureVec
from ov3d.prompts import (BUILTIN_TEMPLATES, classify_embedding, expand_prompts, limit_per_class,
                          mean_class_feature, sample_vocab)
from ov3d.scene import ClassVocabulary

vocab = ClassVocabulary(("chair", "table", "sofa", "bed", "lamp"))
print(len(BUILTIN_TEMPLATES), "templates")

# %%
pset = expand_prompts(vocab)
for line in pset["chair"]:
    print(repr(line))
print(sum(map(len, pset.values())), "prompts for", len(vocab), "classes")

# %% [markdown]
# Sampling a sub-vocabulary is seeded, so the same seed always gives the
# same classes in the same order.

# %%
print(sample_vocab(vocab, 2, seed=42).names, sample_vocab(vocab, 2, seed=42).names)
print(sample_vocab(vocab, 3, seed=1).names)

# %%
print({c: len(v) for c, v in limit_per_class(pset, 3).items()})

# %% [markdown]
# Text features of one class average into a single unit vector; a crop is
# labelled by the class feature with the largest cosine.

# %%
rng = np.random.default_rng(0)
axes = {c: rng.normal(size=8) for c in vocab}
texts = [FeatureVec(f"{c}{k}", axes[c] + 0.1 * rng.normal(size=8), "text", c) for c in vocab for k in range(5)]
classes = [mean_class_feature(texts, c) for c in vocab]
crop = FeatureVec("crop", axes["sofa"] + 0.2 * rng.normal(size=8), "image")
print(classify_embedding(crop, classes))
