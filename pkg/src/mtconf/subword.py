"""Byte-pair subword model with word-boundary bookkeeping.

Words are marked sentencepiece-style: each surface word is prefixed with the
boundary symbol before being split into characters, and merges are learned
over those symbol sequences. Tokenization therefore never crosses word
boundaries, which is what lets TokenizedSentence carry an exact subword-to-
word span map.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError, ValidationError

BOUNDARY = "▁"  # "▁", marks the start of a surface word

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
SPECIAL_TOKENS = {"<pad>": PAD_ID, "<s>": BOS_ID, "</s>": EOS_ID, "<unk>": UNK_ID}
NUM_SPECIALS = len(SPECIAL_TOKENS)


@dataclass(frozen=True)
class TokenizedSentence:
    """Subword ids plus the span map back to surface words.

    ``token_ids`` holds content subwords only (no specials). ``word_spans``
    are half-open (start, end) ranges, one per surface word, disjoint and
    contiguous, covering every token position exactly once.
    """

    token_ids: tuple[int, ...]
    word_spans: tuple[tuple[int, int], ...]
    surface_words: tuple[str, ...]

    def __post_init__(self):
        if len(self.word_spans) != len(self.surface_words):
            raise ValidationError(
                f"{len(self.word_spans)} spans for {len(self.surface_words)} words"
            )
        cursor = 0
        for start, end in self.word_spans:
            if start != cursor or end <= start:
                raise ValidationError(f"word spans must partition token positions, got {self.word_spans}")
            cursor = end
        if cursor != len(self.token_ids):
            raise ValidationError(
                f"spans cover {cursor} tokens but sentence has {len(self.token_ids)}"
            )

    @property
    def text(self) -> str:
        return " ".join(self.surface_words)

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass
class SubwordModel:
    """Learned merge table plus id mappings. Immutable after training."""

    vocab: dict[str, int]
    merges: list[tuple[str, str]]
    vocab_size: int

    def __post_init__(self):
        self._id_to_symbol = {i: s for s, i in self.vocab.items()}
        self._merge_ranks = {pair: rank for rank, pair in enumerate(self.merges)}
        self._encode_cache: dict[str, tuple[int, ...]] = {}

    # -- encoding ----------------------------------------------------------

    def _split_word(self, word: str) -> list[str]:
        symbols = _seed_symbols(word)
        if len(self.merges) == 0:
            return symbols
        while len(symbols) > 1:
            best_rank = None
            best_pos = -1
            for pos in range(len(symbols) - 1):
                rank = self._merge_ranks.get((symbols[pos], symbols[pos + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
                    best_pos = pos
            if best_rank is None:
                break
            symbols[best_pos : best_pos + 2] = [symbols[best_pos] + symbols[best_pos + 1]]
        return symbols

    def encode_word(self, word: str) -> tuple[int, ...]:
        """Subword ids for one surface word (boundary-marked)."""
        cached = self._encode_cache.get(word)
        if cached is not None:
            return cached
        ids = tuple(self.vocab.get(sym, UNK_ID) for sym in self._split_word(word))
        self._encode_cache[word] = ids
        return ids

    def tokenize(self, text: str) -> TokenizedSentence:
        """Split ``text`` into surface words and encode each one.

        Raises ValidationError on empty or whitespace-only input.
        """
        words = text.split()
        if not words:
            raise ValidationError("cannot tokenize empty or whitespace-only text")
        token_ids: list[int] = []
        spans: list[tuple[int, int]] = []
        for word in words:
            ids = self.encode_word(word)
            spans.append((len(token_ids), len(token_ids) + len(ids)))
            token_ids.extend(ids)
        return TokenizedSentence(tuple(token_ids), tuple(spans), tuple(words))

    def detokenize(self, token_ids) -> str:
        """Inverse of tokenize up to whitespace normalization; specials are dropped."""
        parts = []
        for tid in token_ids:
            if tid < NUM_SPECIALS:
                continue
            parts.append(self._id_to_symbol.get(int(tid), ""))
        return "".join(parts).replace(BOUNDARY, " ").strip()

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "vocab": self.vocab,
            "merges": [list(m) for m in self.merges],
            "vocab_size": self.vocab_size,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SubwordModel":
        return cls(
            vocab=dict(data["vocab"]),
            merges=[tuple(m) for m in data["merges"]],
            vocab_size=int(data["vocab_size"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "SubwordModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _seed_symbols(word: str) -> list[str]:
    """Initial symbol sequence: boundary marker fused onto the first
    character, remaining characters standalone."""
    return [BOUNDARY + word[0]] + list(word[1:])


def train_subwords(corpus, vocab_size: int) -> SubwordModel:
    """Learn a byte-pair model of at most ``vocab_size`` entries from text lines.

    Deterministic: merge ties are broken lexicographically. The minimum usable
    vocab_size is the seed alphabet (characters plus boundary-marked initial
    characters) and the special tokens; anything smaller cannot represent the
    corpus and raises ConfigurationError.
    """
    word_freqs: dict[str, int] = {}
    for line in corpus:
        for word in line.split():
            word_freqs[word] = word_freqs.get(word, 0) + 1
    if not word_freqs:
        raise ConfigurationError("subword training corpus is empty")

    alphabet: set[str] = set()
    for word in word_freqs:
        alphabet.update(_seed_symbols(word))
    minimum = len(alphabet) + NUM_SPECIALS
    if vocab_size < minimum:
        raise ConfigurationError(
            f"vocab_size={vocab_size} too small: need at least {minimum} "
            f"({len(alphabet)} alphabet symbols + {NUM_SPECIALS} special tokens)"
        )

    vocab = dict(SPECIAL_TOKENS)
    for sym in sorted(alphabet):
        vocab[sym] = len(vocab)

    # Each distinct word is a symbol sequence; merges operate on these types,
    # weighted by word frequency.
    sequences: dict[str, list[str]] = {w: _seed_symbols(w) for w in word_freqs}
    merges: list[tuple[str, str]] = []
    while len(vocab) < vocab_size:
        pair_counts: dict[tuple[str, str], int] = {}
        for word, seq in sequences.items():
            freq = word_freqs[word]
            for i in range(len(seq) - 1):
                pair = (seq[i], seq[i + 1])
                pair_counts[pair] = pair_counts.get(pair, 0) + freq
        if not pair_counts:
            break
        best = min(pair_counts, key=lambda p: (-pair_counts[p], p))
        merges.append(best)
        merged = best[0] + best[1]
        vocab[merged] = len(vocab)
        a, b = best
        for word, seq in sequences.items():
            i = 0
            while i < len(seq) - 1:
                if seq[i] == a and seq[i + 1] == b:
                    seq[i : i + 2] = [merged]
                else:
                    i += 1
    return SubwordModel(vocab=vocab, merges=merges, vocab_size=len(vocab))
