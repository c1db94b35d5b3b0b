"""Shared fixtures: a trained copy-task model and its corpus.

The copy model (target == source over an invented word list) trains in about
half a minute and backs every test that needs a converged checkpoint:
decoding oracles, gradient scale, attention structure, the suggestion index,
and the service smoke tests.
"""

import numpy as np
import pytest

from mtconf import TrainConfig, train_model

COPY_SEED = 42
COPY_WORDS = None


def _copy_words():
    global COPY_WORDS
    if COPY_WORDS is None:
        rng = np.random.default_rng(COPY_SEED)
        COPY_WORDS = [
            "".join(rng.choice(list("abcdefghijklmnop"), size=rng.integers(3, 7)))
            for _ in range(40)
        ]
    return COPY_WORDS


def _copy_line(rng, words):
    return " ".join(words[i] for i in rng.integers(0, len(words), rng.integers(2, 6)))


@pytest.fixture(scope="session")
def copy_words():
    return list(_copy_words())


@pytest.fixture(scope="session")
def copy_corpus():
    rng = np.random.default_rng(COPY_SEED)
    words = _copy_words()
    train_lines = [_copy_line(rng, words) for _ in range(1200)]
    held_lines = [_copy_line(rng, words) for _ in range(60)]
    return train_lines, held_lines


@pytest.fixture(scope="session")
def copy_checkpoint(copy_corpus):
    train_lines, _ = copy_corpus
    config = TrainConfig(
        vocab_size=250, d_model=32, num_heads=2, num_layers=2, d_ff=64,
        max_len=48, batch_size=32, epochs=90, lr=3e-3, seed=1,
        corpus_id="copy-task",
    )
    return train_model([(line, line) for line in train_lines], config)


@pytest.fixture(scope="session")
def copy_checkpoint_dir(copy_checkpoint, tmp_path_factory):
    directory = tmp_path_factory.mktemp("checkpoint")
    copy_checkpoint.save(directory)
    return directory


@pytest.fixture(scope="session")
def benchmark():
    from mtconf.synthetic import make_benchmark

    return make_benchmark(
        n_train=3000, n_test=200, n_reliable=30, n_ambiguous=4, n_heldout=8, n_trap=0,
        test_mix=(0.45, 0.0, 0.0), rendering_noise=0.03, fertile_fraction=0.4, seed=5,
    )


@pytest.fixture(scope="session")
def benchmark_checkpoint(benchmark):
    config = TrainConfig(
        vocab_size=520, d_model=32, num_heads=4, num_layers=2, d_ff=64,
        max_len=48, batch_size=32, epochs=25, lr=3e-3, seed=3,
        corpus_id="synthetic-benchmark",
    )
    return train_model(benchmark.train_pairs, config)


@pytest.fixture(scope="session")
def benchmark_run(benchmark, benchmark_checkpoint, tmp_path_factory):
    from functools import partial

    from mtconf.annotator import AnnotationCache
    from mtconf.pipeline import run_evaluation
    from mtconf.synthetic import gold_alignments, scripted_annotator

    cache = AnnotationCache(tmp_path_factory.mktemp("annotations") / "cache.jsonl")
    return run_evaluation(
        benchmark.test_entries(), benchmark_checkpoint, scripted_annotator(benchmark),
        cache, alignments=partial(gold_alignments, benchmark), log_space_gradient=True,
    )


@pytest.fixture(scope="session")
def fd_checkpoint(copy_corpus):
    """Lightly trained model for finite-difference gradient checks.

    At this training depth the sequence probability is far from saturation,
    so the objective stays near-linear at the pinned difference step and the
    comparison measures the gradient implementation, not truncation error.
    """
    import copy as copy_module

    train_lines, _ = copy_corpus
    config = TrainConfig(
        vocab_size=250, d_model=32, num_heads=2, num_layers=2, d_ff=64,
        max_len=48, batch_size=32, epochs=10, max_steps=150, lr=3e-3, seed=1,
    )
    checkpoint = train_model([(line, line) for line in train_lines], config)
    model64 = copy_module.deepcopy(checkpoint.model).double()
    model64.eval()
    checkpoint.model = model64
    return checkpoint
