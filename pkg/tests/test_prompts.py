import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ov3d.losses import FeatureVec
from ov3d.prompts import (BUILTIN_TEMPLATES, PromptTemplateSet, SplitMixXorShift, classify_embedding,
                          expand_prompts, limit_per_class, mean_class_feature, sample_vocab)
from ov3d.scene import ClassVocabulary


def test_builtin_templates_verbatim():
    assert BUILTIN_TEMPLATES == (
        "Describe what {class} look like",
        "How can you identify {class} ?",
        "What does {class} look like?",
        "Describe an image from the internet of {class} ",
        "A caption of an image of {class}:",
    )


def test_expand_single():
    out = expand_prompts(ClassVocabulary(("chair",)), PromptTemplateSet(("What does {class} look like?",)))
    assert out == {"chair": ["What does chair look like?"]}


def test_expand_counts_and_order():
    vocab = ClassVocabulary(("sofa", "bed", "lamp"))
    out = expand_prompts(vocab)
    assert list(out) == ["sofa", "bed", "lamp"]
    assert sum(map(len, out.values())) == 15
    assert out["bed"][0] == "Describe what bed look like"
    out10 = expand_prompts(vocab, rounds=10)
    assert all(len(v) == 50 for v in out10.values())
    assert out10["bed"][:10] == ["Describe what bed look like"] * 10


def test_template_validation():
    with pytest.raises(ValueError):
        PromptTemplateSet(("no placeholder",))
    with pytest.raises(ValueError):
        PromptTemplateSet(("{class} and {class}",))
    with pytest.raises(ValueError):
        ClassVocabulary(("",))


def test_limit_per_class():
    prompts = {"a": [f"a{i}" for i in range(60)], "b": [f"b{i}" for i in range(60)]}
    for k in (12, 25, 51):
        out = limit_per_class(prompts, k)
        assert all(v == prompts[c][:k] for c, v in out.items())


def _fv(v, cat=None, i="x"):
    return FeatureVec(i, np.asarray(v, float), "text", cat)


def test_mean_class_feature():
    e1, e2 = np.eye(4)[0], np.eye(4)[1]
    single = mean_class_feature([_fv(2 * e1, "a")], "a")
    assert np.array_equal(single.values, e1)
    m = mean_class_feature([_fv(e1, "a"), _fv(e2, "a"), _fv(e2, "b")], "a")
    assert np.allclose(m.values, [math.sqrt(0.5), math.sqrt(0.5), 0, 0], atol=1e-15)
    with pytest.raises(ValueError):
        mean_class_feature([_fv(e1, "a"), _fv(-e1, "a")], "a")
    with pytest.raises(ValueError):
        mean_class_feature([_fv(e1, "a")], "b")


@given(st.lists(st.lists(st.floats(-5, 5), min_size=3, max_size=3), min_size=1, max_size=8))
def test_mean_feature_unit_norm(vecs):
    feats = [_fv(v, "c") for v in vecs if np.linalg.norm(v) > 1e-3]
    if not feats:
        return
    try:
        m = mean_class_feature(feats, "c")
    except ValueError:
        return
    assert abs(np.linalg.norm(m.values) - 1) <= 1e-12


def test_classify_examples():
    classes = [_fv(np.eye(3)[k], c) for k, c in enumerate(("a", "b", "c"))]
    assert classify_embedding(_fv([0, 1, 0]), classes) == ("b", 1.0)
    four = [_fv(np.eye(4)[k], c) for k, c in enumerate(("a", "b", "c"))]
    assert classify_embedding(_fv([0, 0, 0, 1]), four) == ("a", 0.0)
    # unit class vectors with prescribed cosines 0.2, 0.9, 0.4 against e1
    cos = (0.2, 0.9, 0.4)
    cls = [_fv([c, math.sqrt(1 - c * c), 0, 0] if k != 2 else [c, 0, math.sqrt(1 - c * c), 0], n)
           for k, (c, n) in enumerate(zip(cos, ("x", "y", "z")))]
    cat, score = classify_embedding(_fv([1, 0, 0, 0]), cls)
    assert cat == "y" and math.isclose(score, 0.9, rel_tol=1e-12)


@given(st.floats(0.01, 100))
def test_classify_scale_invariant(s):
    rng = np.random.default_rng(0)
    classes = [_fv(rng.normal(size=5), str(k)) for k in range(6)]
    q = rng.normal(size=5)
    assert classify_embedding(_fv(q), classes)[0] == classify_embedding(_fv(s * q), classes)[0]


def test_prng_reference_and_determinism():
    # splitmix64(0) first output, a published reference value
    assert SplitMixXorShift(0).state == 0xE220A8397B1DCDAF
    a, b = SplitMixXorShift(7), SplitMixXorShift(7)
    assert [a.next_u64() for _ in range(5)] == [b.next_u64() for _ in range(5)]
    r = SplitMixXorShift(1)
    assert all(0 <= r.below(3) < 3 for _ in range(100))


def test_sample_vocab_golden():
    vocab = ClassVocabulary(tuple("abcde"))
    assert sample_vocab(vocab, 2, 42).names == ("c", "e")
    assert sample_vocab(vocab, 2, 42) == sample_vocab(vocab, 2, 42)
    full = sample_vocab(vocab, 10, 3)
    assert sorted(full.names) == list("abcde")


@given(st.integers(1, 40), st.integers(0, 2**64 - 1), st.integers(1, 30))
def test_sample_vocab_subset(m, seed, n):
    vocab = ClassVocabulary(tuple(f"c{i}" for i in range(n)))
    out = sample_vocab(vocab, m, seed)
    assert len(out) == min(m, n)
    assert len(set(out.names)) == len(out.names)
    assert set(out.names) <= set(vocab.names)
