"""Finite-difference verification of the input embedding gradient.

This is the load-bearing numerical check: the per-source-word uncertainty
scores are norms of exactly this gradient, so it is compared component by
component against central differences of the sequence probability computed
in float64.
"""

import numpy as np
import pytest
import torch

from mtconf import input_embedding_gradient, sequence_score, translate
from mtconf.errors import ValidationError
from mtconf.model import _teacher_forced, _tensor

EPS = 1e-3
REL_TOL = 1e-3
ABS_FLOOR = 1e-8


def finite_difference_gradient(checkpoint, source, target, log_space=False):
    """Central differences of P (or log P) over every embedding component."""
    model = checkpoint.model
    base = model.embedding(_tensor(source.token_ids)).detach().clone()

    def objective(embeddings):
        with torch.no_grad():
            picked, _ = _teacher_forced(
                model, _tensor(source.token_ids), _tensor(target.token_ids),
                src_embeddings=embeddings,
            )
        total = picked.sum()
        return float(total) if log_space else float(total.exp())

    n, d = base.shape[1], base.shape[2]
    grad = np.zeros((n, d))
    for i in range(n):
        for k in range(d):
            up = base.clone()
            up[0, i, k] += EPS
            down = base.clone()
            down[0, i, k] -= EPS
            grad[i, k] = (objective(up) - objective(down)) / (2 * EPS)
    return grad


def assert_gradient_matches(analytic, numeric):
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    mismatch = np.abs(analytic - numeric)
    relative = np.where(scale >= ABS_FLOOR, mismatch / np.maximum(scale, ABS_FLOOR), 0.0)
    absolute_ok = (scale < ABS_FLOOR) & (mismatch <= ABS_FLOOR)
    ok = (relative <= REL_TOL) | absolute_ok
    assert ok.all(), f"worst relative error {relative.max():.3e} (tolerance {REL_TOL})"


def _sample_sentences(checkpoint, lines, count, seed=0):
    rng = np.random.default_rng(seed)
    picked = []
    for line in rng.permutation(lines):
        source = checkpoint.subwords.tokenize(line)
        target = translate(source, checkpoint).target
        if len(target.token_ids):
            picked.append((source, target))
        if len(picked) == count:
            break
    return picked


def test_gradient_matches_finite_differences(fd_checkpoint, copy_corpus):
    _, held = copy_corpus
    pairs = 0
    for source, target in _sample_sentences(fd_checkpoint, held, 3):
        analytic = input_embedding_gradient(source, target, fd_checkpoint)
        numeric = finite_difference_gradient(fd_checkpoint, source, target)
        assert_gradient_matches(analytic, numeric)
        pairs += len(source.token_ids)
    assert pairs >= 10  # every component of every source position was checked


def test_log_space_gradient_matches_finite_differences(fd_checkpoint, copy_corpus):
    _, held = copy_corpus
    ((source, target),) = _sample_sentences(fd_checkpoint, held, 1)
    analytic = input_embedding_gradient(source, target, fd_checkpoint, log_space=True)
    numeric = finite_difference_gradient(fd_checkpoint, source, target, log_space=True)
    assert_gradient_matches(analytic, numeric)


def test_log_space_is_gradient_over_probability(fd_checkpoint, copy_corpus):
    _, held = copy_corpus
    ((source, target),) = _sample_sentences(fd_checkpoint, held, 1, seed=1)
    p_space = input_embedding_gradient(source, target, fd_checkpoint)
    log_space = input_embedding_gradient(source, target, fd_checkpoint, log_space=True)
    probability = sequence_score(source, target, fd_checkpoint).probability
    np.testing.assert_allclose(p_space, log_space * probability, rtol=1e-9, atol=1e-300)


def test_padding_positions_zero_gradient(fd_checkpoint, copy_corpus):
    _, held = copy_corpus
    ((source, target),) = _sample_sentences(fd_checkpoint, held, 1, seed=2)
    n = len(source.token_ids)
    padded = input_embedding_gradient(source, target, fd_checkpoint, pad_to=n + 3)
    assert padded.shape[0] == n + 3
    np.testing.assert_array_equal(padded[n:], np.zeros((3, padded.shape[1])))
    unpadded = input_embedding_gradient(source, target, fd_checkpoint)
    np.testing.assert_allclose(padded[:n], unpadded, rtol=1e-9)


def test_pad_to_shorter_than_source_rejected(fd_checkpoint, copy_corpus):
    _, held = copy_corpus
    ((source, target),) = _sample_sentences(fd_checkpoint, held, 1, seed=3)
    with pytest.raises(ValidationError, match="pad_to"):
        input_embedding_gradient(source, target, fd_checkpoint, pad_to=1)


def test_stop_gradient_on_encoder_blocks_everything(fd_checkpoint, copy_corpus):
    _, held = copy_corpus
    ((source, target),) = _sample_sentences(fd_checkpoint, held, 1, seed=4)
    blocked = input_embedding_gradient(source, target, fd_checkpoint, detach_encoder=True)
    np.testing.assert_array_equal(blocked, np.zeros_like(blocked))
