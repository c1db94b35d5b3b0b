"""Replacement-word suggestions via nearest neighbors over encoder embeddings.

The index stores one unit-norm vector per vocabulary word: the word is
encoded standalone, its final encoder states are averaged over subwords and
normalized. Words rarer than min_frequency are pruned, since low-frequency
entries tend to be inflected forms or compounds of more common words.
Queries use the contextual encoder states of the word inside its sentence,
so the neighbors reflect the word as used. With unit vectors the inner
product is exactly cosine similarity; search is an exact flat scan.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensorfile
from .errors import ConfigurationError, ValidationError
from .model import Checkpoint, encoder_states
from .subword import TokenizedSentence

INDEX_FORMAT = "mtconf-suggestion-index-v1"
DEFAULT_MIN_FREQUENCY = 10
DEFAULT_K = 5


@dataclass
class SuggestionIndex:
    words: list[str]
    frequencies: np.ndarray  # int64, aligned with words
    vectors: np.ndarray      # float32 (W, d), unit rows
    metadata: dict

    def __len__(self) -> int:
        return len(self.words)

    @property
    def index_id(self) -> str:
        return self.metadata.get("index_id", "unversioned")

    def save(self, path: str | Path) -> None:
        tensorfile.save_arrays(
            path,
            {"frequencies": self.frequencies.astype(np.int64), "vectors": self.vectors},
            metadata={"format": INDEX_FORMAT, "words": self.words, **self.metadata},
        )

    @classmethod
    def load(cls, path: str | Path) -> "SuggestionIndex":
        arrays, metadata = tensorfile.load_arrays(path)
        if metadata.get("format") != INDEX_FORMAT:
            raise ConfigurationError(f"{path}: unsupported index format {metadata.get('format')!r}")
        words = list(metadata.pop("words"))
        metadata.pop("format")
        return cls(words=words, frequencies=arrays["frequencies"],
                   vectors=arrays["vectors"], metadata=metadata)


@dataclass(frozen=True)
class SuggestionList:
    query_word: str
    entries: tuple[tuple[str, float], ...]  # (word, cosine score), descending
    k_requested: int
    exhausted: bool = False  # fewer candidates than requested


def word_frequencies(corpus_lines) -> Counter:
    counts: Counter = Counter()
    for line in corpus_lines:
        counts.update(line.split())
    return counts


def _embed_word(word: str, checkpoint: Checkpoint) -> np.ndarray | None:
    sentence = checkpoint.subwords.tokenize(word)
    states = encoder_states(sentence, checkpoint)
    vector = states.mean(axis=0)
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        return None
    return (vector / norm).astype(np.float32)


def build_index(corpus_lines, checkpoint: Checkpoint,
                min_frequency: int = DEFAULT_MIN_FREQUENCY,
                corpus_id: str = "") -> SuggestionIndex:
    """Build the pruned vocabulary index from corpus source lines.

    Deterministic: surviving words are ordered by (frequency desc, word asc).
    """
    counts = word_frequencies(corpus_lines)
    surviving = sorted(
        (w for w, c in counts.items() if c >= min_frequency),
        key=lambda w: (-counts[w], w),
    )
    if not surviving:
        raise ConfigurationError(
            f"no vocabulary words with frequency >= {min_frequency}; lower min_frequency"
        )
    words = []
    vectors = []
    for word in surviving:
        vec = _embed_word(word, checkpoint)
        if vec is None:
            continue
        words.append(word)
        vectors.append(vec)
    if not words:
        raise ConfigurationError("no embeddable vocabulary words survive pruning")
    return SuggestionIndex(
        words=words,
        frequencies=np.asarray([counts[w] for w in words], dtype=np.int64),
        vectors=np.stack(vectors),
        metadata={
            "checkpoint_id": checkpoint.model_id,
            "corpus_id": corpus_id,
            "min_frequency": min_frequency,
            "index_id": f"{checkpoint.model_id}-f{min_frequency}-{len(words)}",
        },
    )


def query_by_index(sentence: TokenizedSentence, word_index: int, checkpoint: Checkpoint,
                   index: SuggestionIndex, k: int = DEFAULT_K) -> SuggestionList:
    """Top-k neighbors for the sentence's word at ``word_index``.

    The query vector is built from the word's contextual encoder states in
    this sentence (subword-averaged, normalized). The query word's own
    surface form is excluded case-insensitively. Requesting more neighbors
    than the index holds returns everything, flagged exhausted.
    """
    if not 0 <= word_index < len(sentence.surface_words):
        raise ValidationError(
            f"word_index {word_index} out of range for {len(sentence.surface_words)} words"
        )
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    word = sentence.surface_words[word_index]
    start, end = sentence.word_spans[word_index]
    states = encoder_states(sentence, checkpoint)
    vector = states[start:end].mean(axis=0)
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        raise ValidationError(f"degenerate zero embedding for word {word!r}")
    query_vec = (vector / norm).astype(np.float32)

    scores = index.vectors @ query_vec
    order = np.lexsort((np.arange(len(scores)), -scores))
    entries = []
    exclude = word.casefold()
    for i in order:
        if index.words[i].casefold() == exclude:
            continue
        entries.append((index.words[i], float(scores[i])))
        if len(entries) == k:
            break
    return SuggestionList(
        query_word=word,
        entries=tuple(entries),
        k_requested=k,
        exhausted=len(entries) < k,
    )


def query(word: str, sentence: TokenizedSentence, checkpoint: Checkpoint,
          index: SuggestionIndex, k: int = DEFAULT_K, occurrence: int = 0) -> SuggestionList:
    """Like query_by_index but locating ``word`` in the sentence by surface
    form (``occurrence`` picks among repeats, left to right)."""
    positions = [i for i, w in enumerate(sentence.surface_words) if w == word]
    if not positions:
        raise ValidationError(f"word {word!r} does not occur in the sentence")
    if occurrence >= len(positions):
        raise ValidationError(
            f"occurrence {occurrence} out of range, {word!r} appears {len(positions)} time(s)"
        )
    return query_by_index(sentence, positions[occurrence], checkpoint, index, k=k)
