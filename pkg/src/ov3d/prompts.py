"""Open-vocabulary text side: prompt templates, class features and vocabulary sampling."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .losses import FeatureVec
from .scene import ClassVocabulary

PLACEHOLDER = "{class}"

# GPT-3 query templates, verbatim (trailing spaces included)
BUILTIN_TEMPLATES = (
    "Describe what {class} look like",
    "How can you identify {class} ?",
    "What does {class} look like?",
    "Describe an image from the internet of {class} ",
    "A caption of an image of {class}:",
)

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class PromptTemplateSet:
    templates: tuple = BUILTIN_TEMPLATES

    def __post_init__(self):
        t = tuple(self.templates)
        if not t:
            raise ValueError("at least one template is required")
        for s in t:
            if s.count(PLACEHOLDER) != 1:
                raise ValueError(f"template must contain {PLACEHOLDER} exactly once: {s!r}")
        object.__setattr__(self, "templates", t)

    def __len__(self):
        return len(self.templates)


def expand_prompts(vocab: ClassVocabulary, templates: PromptTemplateSet = PromptTemplateSet(),
                   rounds: int = 1) -> dict:
    """Instantiate every template for every category.

    ``rounds`` repeats each template, one slot per external query round.
    Returns ``{category: [prompt, ...]}`` in vocabulary order, prompts in
    template order (rounds innermost).
    """
    if len(vocab) == 0:
        raise ValueError("vocabulary is empty")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    return {name: [t.replace(PLACEHOLDER, name) for t in templates.templates for _ in range(rounds)]
            for name in vocab}


def limit_per_class(prompts: Mapping[str, Sequence[str]], k: int) -> dict:
    """Keep the first ``k`` prompts of every category."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return {name: list(texts[:k]) for name, texts in prompts.items()}


def mean_class_feature(feats: Sequence[FeatureVec], category: str) -> FeatureVec:
    """Unit-norm mean of the (normalised) features tagged with ``category``."""
    sel = [f for f in feats if f.category == category]
    if not sel:
        raise ValueError(f"no features for category {category!r}")
    dims = {f.dim for f in sel}
    if len(dims) > 1:
        raise ValueError(f"category {category!r}: inconsistent dimensions {sorted(dims)}")
    arr = np.array([f.values / np.linalg.norm(f.values) for f in sel])
    mean = arr.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-9:
        raise ValueError(f"category {category!r}: mean feature is degenerate (norm {norm:.3g})")
    return FeatureVec(id=f"mean:{category}", values=mean / norm, modality=sel[0].modality,
                      category=category)


def class_features(feats: Sequence[FeatureVec], vocab: ClassVocabulary) -> list:
    return [mean_class_feature(feats, name) for name in vocab]


def classify_embedding(crop: FeatureVec, class_feats: Sequence[FeatureVec]):
    """Return ``(category, cosine)`` of the best-matching class feature.

    Ties go to the earliest class in ``class_feats``.
    """
    if not class_feats:
        raise ValueError("no class features")
    q = crop.values / np.linalg.norm(crop.values)
    mat = np.array([f.values for f in class_feats])
    if mat.shape[1] != q.shape[0]:
        raise ValueError(f"dimension mismatch: crop {q.shape[0]} vs classes {mat.shape[1]}")
    cos = mat @ q / np.linalg.norm(mat, axis=1)
    best = int(np.argmax(cos))  # first maximum wins
    return class_feats[best].category, float(cos[best])


class SplitMixXorShift:
    """Portable 64-bit PRNG: xorshift64* seeded through splitmix64.

    Same seed, same stream on every platform; pure integer arithmetic.
    """

    def __init__(self, seed: int):
        z = (int(seed) + 0x9E3779B97F4A7C15) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        z ^= z >> 31
        self.state = z or 0x9E3779B97F4A7C15  # xorshift state must be non-zero

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n


def sample_vocab(vocab: ClassVocabulary, m: int, seed: int) -> ClassVocabulary:
    """Draw ``min(m, len(vocab))`` distinct categories with a partial Fisher-Yates shuffle."""
    if m < 1:
        raise ValueError("m must be >= 1")
    names = list(vocab.names)
    rng = SplitMixXorShift(seed)
    k = min(m, len(names))
    for i in range(k):
        j = i + rng.below(len(names) - i)
        names[i], names[j] = names[j], names[i]
    return ClassVocabulary(tuple(names[:k]))
