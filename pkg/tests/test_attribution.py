import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtconf.attribution import (
    AttributionConfig,
    HardAlignment,
    aggregate,
    alignment_projection,
    attention_projection,
    classify,
    gradient_uncertainty,
    parse_pharaoh_line,
    read_pharaoh_file,
    target_word_uncertainty,
    vector_norm,
)
from mtconf.errors import DataError, ValidationError


def test_hand_computed_norms():
    vec = [0.5, -0.5, 0.0]
    assert vector_norm(vec, "l1") == 1.0
    assert math.isclose(vector_norm(vec, "l2"), 0.7071067811865476)
    assert vector_norm(vec, "linf") == 0.5


def test_hand_computed_aggregations():
    values = [1.0, 2.0, 3.0]
    assert aggregate(values, "sum") == 6.0
    assert aggregate(values, "avg") == 2.0
    assert aggregate(values, "max") == 3.0


def test_config_rejects_unknown_members():
    with pytest.raises(ValidationError):
        AttributionConfig(norm="l3")
    with pytest.raises(ValidationError):
        AttributionConfig(aggregation="median")
    with pytest.raises(ValidationError):
        AttributionConfig(method="saliency")
    with pytest.raises(ValidationError):
        AttributionConfig(threshold=-0.1)


def test_gradient_uncertainty_word_scores():
    gradients = np.array([
        [0.5, -0.5, 0.0],
        [1.0, 1.0, 0.0],
        [0.0, 2.0, 1.0],
    ])
    spans = ((0, 1), (1, 3))
    result = gradient_uncertainty(gradients, spans, AttributionConfig(threshold=2.5))
    assert result.per_subword_scores == (1.0, 2.0, 3.0)
    assert result.per_word_scores == (1.0, 5.0)
    assert result.highlighted == (False, True)

    avg = gradient_uncertainty(gradients, spans, AttributionConfig(aggregation="avg"))
    assert avg.per_word_scores == (1.0, 2.5)
    mx = gradient_uncertainty(gradients, spans, AttributionConfig(aggregation="max"))
    assert mx.per_word_scores == (1.0, 3.0)


def test_zero_gradients_nothing_highlighted():
    gradients = np.zeros((4, 8))
    spans = ((0, 2), (2, 4))
    result = gradient_uncertainty(gradients, spans, AttributionConfig(threshold=1e-12))
    assert result.per_word_scores == (0.0, 0.0)
    assert result.highlighted == (False, False)


def test_gradient_length_mismatch_rejected():
    with pytest.raises(ValidationError, match="gradient"):
        gradient_uncertainty(np.zeros((2, 4)), ((0, 1), (1, 3)), AttributionConfig())


@given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=16), min_size=1, max_size=50))
@settings(max_examples=200, deadline=None)
def test_norm_ordering_property(vectors):
    for vec in vectors:
        l1 = vector_norm(vec, "l1")
        l2 = vector_norm(vec, "l2")
        linf = vector_norm(vec, "linf")
        assert l1 >= l2 - 1e-9 * max(l1, 1.0)
        assert l2 >= linf - 1e-9 * max(l2, 1.0)
        if sum(1 for v in vec if v != 0.0) <= 1:
            assert math.isclose(l1, l2, rel_tol=1e-12, abs_tol=1e-12)
            assert math.isclose(l2, linf, rel_tol=1e-12, abs_tol=1e-12)


def test_scaling_preserves_ranking():
    rng = np.random.default_rng(3)
    gradients = rng.normal(size=(6, 8))
    spans = ((0, 1), (1, 3), (3, 6))
    base = gradient_uncertainty(gradients, spans, AttributionConfig())
    scaled = gradient_uncertainty(gradients * 7.5, spans, AttributionConfig())
    np.testing.assert_allclose(np.asarray(scaled.per_word_scores),
                               7.5 * np.asarray(base.per_word_scores), rtol=1e-12)
    assert np.argsort(base.per_word_scores).tolist() == np.argsort(scaled.per_word_scores).tolist()


def test_target_word_uncertainty():
    probs = [0.5, 0.8, 1.0]
    spans = ((0, 2), (2, 3))
    scores = target_word_uncertainty(probs, spans)
    assert math.isclose(scores[0], 1 - 0.4)
    assert scores[1] == 0.0


def _uniform_attention(L, H, m, n):
    return np.full((L, H, m, n), 1.0 / n)


def test_attention_projection_uniform_split():
    attn = _uniform_attention(2, 2, 1, 2)
    result = attention_projection([0.6], attn, ((0, 1), (1, 2)), ((0, 1),))
    np.testing.assert_allclose(result.per_word_scores, [0.3, 0.3], atol=1e-12)


def test_attention_projection_one_hot():
    attn = np.zeros((1, 1, 1, 3))
    attn[..., 2] = 1.0  # all mass on the last source subword
    spans_src = ((0, 1), (1, 2), (2, 3))
    result = attention_projection([0.9], attn, spans_src, ((0, 1),))
    np.testing.assert_allclose(result.per_word_scores, [0.0, 0.0, 0.9], atol=1e-12)


def test_attention_projection_confident_target_scores_zero():
    attn = _uniform_attention(2, 2, 2, 2)
    result = attention_projection([0.0, 0.0], attn, ((0, 1), (1, 2)), ((0, 1), (1, 2)))
    assert result.per_word_scores == (0.0, 0.0)


def test_attention_projection_conserves_mass():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n, m = rng.integers(2, 9), rng.integers(1, 7)
        raw = rng.random((2, 2, m, n)) + 1e-3
        attn = raw / raw.sum(axis=-1, keepdims=True)
        src_bounds = sorted(rng.choice(np.arange(1, n), size=rng.integers(0, n - 1), replace=False))
        src_spans = tuple(zip([0] + list(src_bounds), list(src_bounds) + [n]))
        tgt_bounds = sorted(rng.choice(np.arange(1, m), size=rng.integers(0, m - 1), replace=False)) if m > 1 else []
        tgt_spans = tuple(zip([0] + list(tgt_bounds), list(tgt_bounds) + [m]))
        target_scores = rng.random(len(tgt_spans))
        result = attention_projection(target_scores, attn, src_spans, tgt_spans)
        assert math.isclose(sum(result.per_word_scores), float(target_scores.sum()), rel_tol=1e-6)


def test_attention_projection_shape_mismatch():
    attn = _uniform_attention(1, 1, 2, 2)
    with pytest.raises(ValidationError):
        attention_projection([0.5], attn, ((0, 1), (1, 2)), ((0, 1), (1, 2)))  # 1 score, 2 words
    with pytest.raises(ValidationError):
        attention_projection([0.5, 0.5], attn, ((0, 3),), ((0, 1), (1, 2)))  # 3 subwords vs n=2


def test_alignment_projection_rules():
    alignment = HardAlignment(frozenset({(0, 0), (1, 1)}), source_len=2, target_len=2)
    result = alignment_projection([0.2, 0.9], alignment)
    assert result.per_word_scores == (0.2, 0.9)

    fanout = HardAlignment(frozenset({(0, 0), (0, 1)}), source_len=2, target_len=2)
    result = alignment_projection([0.3, 0.7], fanout)
    assert result.per_word_scores == (0.7, 0.0)  # max rule, unaligned scores zero


def test_alignment_projection_validates():
    with pytest.raises(ValidationError):
        HardAlignment(frozenset({(2, 0)}), source_len=2, target_len=1)
    alignment = HardAlignment(frozenset({(0, 0)}), source_len=1, target_len=2)
    with pytest.raises(ValidationError):
        alignment_projection([0.5], alignment)  # 1 score for target_len 2


def test_classify_rules():
    assert classify([8.5, 2.0], 8.38) == (True, False)
    assert classify([0.1, 0.0], 0.0) == (True, False)
    assert classify([1e9, 5.0], float("inf")) == (False, False)
    with pytest.raises(ValidationError):
        classify([1.0], -1.0)


def test_methods_share_shape_contract():
    gradients = np.ones((3, 4))
    spans = ((0, 1), (1, 3))
    g = gradient_uncertainty(gradients, spans, AttributionConfig())
    attn = _uniform_attention(1, 1, 2, 3)
    a = attention_projection([0.5, 0.5], attn, spans, ((0, 1), (1, 2)),
                             AttributionConfig(method="attention_projection"))
    al = alignment_projection([0.5, 0.5],
                              HardAlignment(frozenset({(0, 0)}), source_len=2, target_len=2),
                              AttributionConfig(method="alignment_projection"))
    for result in (g, a, al):
        assert len(result.per_word_scores) == len(spans)
        assert len(result.highlighted) == len(spans)


def test_parse_pharaoh_line():
    alignment = parse_pharaoh_line("0-0 1-2 2-1", 3, 3)
    assert alignment.pairs == frozenset({(0, 0), (1, 2), (2, 1)})
    assert parse_pharaoh_line("", 2, 2).pairs == frozenset()
    with pytest.raises(DataError, match="malformed"):
        parse_pharaoh_line("0:0", 1, 1)
    with pytest.raises(DataError, match="duplicate"):
        parse_pharaoh_line("0-0 0-0", 1, 1)
    with pytest.raises(ValidationError, match="out of range"):
        parse_pharaoh_line("5-0", 2, 2)


def test_read_pharaoh_file(tmp_path):
    path = tmp_path / "alignments.txt"
    path.write_text("0-0 1-1\n0-1\n")
    alignments = read_pharaoh_file(path, [(2, 2), (1, 2)])
    assert alignments[0].pairs == frozenset({(0, 0), (1, 1)})
    assert alignments[1].pairs == frozenset({(0, 1)})
    with pytest.raises(DataError, match="alignment lines"):
        read_pharaoh_file(path, [(2, 2)])
