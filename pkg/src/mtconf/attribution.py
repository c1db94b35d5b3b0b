"""Per-source-word uncertainty scores from model internals.

Three plug-compatible methods produce an AttributionResult over the same
source word spans:

    gradient_uncertainty    norm of the sequence-probability gradient at each
                            source subword embedding, aggregated per word
    attention_projection    target-word uncertainty distributed over source
                            words by layer/head-averaged cross-attention
    alignment_projection    target-word uncertainty projected through hard
                            word alignments (Pharaoh format)

Defaults are the L1 norm and sum aggregation, which performed best in our
sweeps. All functions are pure and safe for concurrent use.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ValidationError

NORMS = ("l1", "l2", "linf")
AGGREGATIONS = ("sum", "avg", "max")
METHODS = ("gradient", "attention_projection", "alignment_projection")


@dataclass(frozen=True)
class AttributionConfig:
    method: str = "gradient"
    norm: str = "l1"
    aggregation: str = "sum"
    threshold: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.norm not in NORMS:
            raise ValidationError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ValidationError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        if not self.threshold >= 0:
            raise ValidationError(f"threshold must be >= 0, got {self.threshold}")


@dataclass(frozen=True)
class AttributionResult:
    """Uncertainty scores for one sentence under one method.

    ``per_subword_scores`` is populated by the gradient method only; the
    projection baselines score words directly.
    """

    method: str
    config: AttributionConfig
    per_word_scores: tuple[float, ...]
    highlighted: tuple[bool, ...]
    per_subword_scores: tuple[float, ...] | None = None


@dataclass(frozen=True)
class HardAlignment:
    """Hard word alignment: (source index, target index) pairs, 0-indexed."""

    pairs: frozenset[tuple[int, int]]
    source_len: int
    target_len: int

    def __post_init__(self):
        for s, t in self.pairs:
            if not (0 <= s < self.source_len and 0 <= t < self.target_len):
                raise ValidationError(
                    f"alignment pair {s}-{t} out of range for "
                    f"{self.source_len} source / {self.target_len} target words"
                )


def vector_norm(vector, norm: str) -> float:
    vector = np.asarray(vector, dtype=np.float64)
    if norm == "l1":
        return float(np.abs(vector).sum())
    if norm == "l2":
        return float(np.sqrt((vector * vector).sum()))
    if norm == "linf":
        return float(np.abs(vector).max()) if vector.size else 0.0
    raise ValidationError(f"unknown norm {norm!r}")


def aggregate(values, aggregation: str) -> float:
    values = np.asarray(values, dtype=np.float64)
    if aggregation == "sum":
        return float(values.sum())
    if aggregation == "avg":
        return float(values.mean())
    if aggregation == "max":
        return float(values.max())
    raise ValidationError(f"unknown aggregation {aggregation!r}")


def classify(scores, threshold: float) -> tuple[bool, ...]:
    """Flag words whose score strictly exceeds the threshold."""
    if isinstance(scores, AttributionResult):
        scores = scores.per_word_scores
    if not threshold >= 0:
        raise ValidationError(f"threshold must be >= 0, got {threshold}")
    return tuple(bool(s > threshold) for s in scores)


def gradient_uncertainty(gradients, spans, config: AttributionConfig | None = None) -> AttributionResult:
    """Word uncertainty from per-subword embedding gradients.

    Each subword scores the configured norm of its gradient vector; word
    scores aggregate over the word's span.
    """
    config = config or AttributionConfig(method="gradient")
    if config.method != "gradient":
        raise ValidationError(f"config.method must be 'gradient', got {config.method!r}")
    gradients = np.asarray(gradients, dtype=np.float64)
    n_subwords = max((end for _, end in spans), default=0)
    if gradients.ndim != 2 or gradients.shape[0] != n_subwords:
        raise ValidationError(
            f"expected {n_subwords} gradient vectors to cover the word spans, "
            f"got shape {gradients.shape}"
        )
    subword_scores = tuple(vector_norm(g, config.norm) for g in gradients)
    word_scores = tuple(
        aggregate(subword_scores[start:end], config.aggregation) for start, end in spans
    )
    return AttributionResult(
        method="gradient",
        config=config,
        per_word_scores=word_scores,
        highlighted=classify(word_scores, config.threshold),
        per_subword_scores=subword_scores,
    )


def target_word_uncertainty(per_token_probs, target_spans) -> tuple[float, ...]:
    """Uncertainty of each target word: one minus the product of its subword
    probabilities. Bounded in [0, 1)."""
    probs = np.asarray(per_token_probs, dtype=np.float64)
    return tuple(float(1.0 - np.prod(probs[start:end])) for start, end in target_spans)


def attention_projection(target_scores, attention, source_spans, target_spans,
                         config: AttributionConfig | None = None) -> AttributionResult:
    """Distribute target-word uncertainty over source words via cross-attention.

    The (layer, head, target, source) tensor is averaged over layers and
    heads, collapsed to word level (sum over source subwords in a span, mean
    over target subwords), and each target word's row is renormalized to sum
    to one, so total uncertainty mass is conserved.
    """
    config = config or AttributionConfig(method="attention_projection")
    if config.method != "attention_projection":
        raise ValidationError(f"config.method must be 'attention_projection', got {config.method!r}")
    attention = np.asarray(attention, dtype=np.float64)
    if attention.ndim != 4:
        raise ValidationError(f"attention tensor must be 4-d (L, H, m, n), got shape {attention.shape}")
    target_scores = np.asarray(target_scores, dtype=np.float64)
    m_sub = max((end for _, end in target_spans), default=0)
    n_sub = max((end for _, end in source_spans), default=0)
    if attention.shape[2] != m_sub or attention.shape[3] != n_sub:
        raise ValidationError(
            f"attention tensor {attention.shape} does not cover "
            f"{m_sub} target / {n_sub} source subwords"
        )
    if target_scores.shape[0] != len(target_spans):
        raise ValidationError(
            f"{target_scores.shape[0]} target scores for {len(target_spans)} target words"
        )

    averaged = attention.mean(axis=(0, 1))  # (m, n) subword-level soft alignment
    word_matrix = np.zeros((len(target_spans), len(source_spans)))
    for ti, (t0, t1) in enumerate(target_spans):
        rows = averaged[t0:t1]
        for si, (s0, s1) in enumerate(source_spans):
            word_matrix[ti, si] = rows[:, s0:s1].sum(axis=1).mean()
    row_sums = word_matrix.sum(axis=1, keepdims=True)
    np.divide(word_matrix, row_sums, out=word_matrix, where=row_sums > 0)

    source_scores = tuple(float(v) for v in target_scores @ word_matrix)
    return AttributionResult(
        method="attention_projection",
        config=config,
        per_word_scores=source_scores,
        highlighted=classify(source_scores, config.threshold),
    )


def alignment_projection(target_scores, alignment: HardAlignment,
                         config: AttributionConfig | None = None) -> AttributionResult:
    """Project target-word uncertainty through hard alignments.

    A source word scores the maximum uncertainty over its aligned target
    words (pessimistic aggregation); unaligned source words score zero.
    """
    config = config or AttributionConfig(method="alignment_projection")
    if config.method != "alignment_projection":
        raise ValidationError(f"config.method must be 'alignment_projection', got {config.method!r}")
    target_scores = list(target_scores)
    if len(target_scores) != alignment.target_len:
        raise ValidationError(
            f"{len(target_scores)} target scores for alignment with target_len={alignment.target_len}"
        )
    by_source: dict[int, list[float]] = {}
    for s, t in alignment.pairs:
        by_source.setdefault(s, []).append(target_scores[t])
    source_scores = tuple(
        max(by_source[i]) if i in by_source else 0.0 for i in range(alignment.source_len)
    )
    return AttributionResult(
        method="alignment_projection",
        config=config,
        per_word_scores=source_scores,
        highlighted=classify(source_scores, config.threshold),
    )


# ---------------------------------------------------------------------------
# Pharaoh alignment ingestion
# ---------------------------------------------------------------------------

def parse_pharaoh_line(line: str, source_len: int, target_len: int) -> HardAlignment:
    """Parse one `i-j i-j ...` alignment line (0-indexed, source first)."""
    pairs = set()
    for token in line.split():
        try:
            s_str, t_str = token.split("-")
            pair = (int(s_str), int(t_str))
        except ValueError:
            raise DataError(f"malformed alignment token {token!r} (expected 'i-j')") from None
        if pair in pairs:
            raise DataError(f"duplicate alignment pair {token!r}")
        pairs.add(pair)
    return HardAlignment(pairs=frozenset(pairs), source_len=source_len, target_len=target_len)


def read_pharaoh_file(path: str | Path, sentence_lengths: list[tuple[int, int]]) -> list[HardAlignment]:
    """Read one alignment per line; ``sentence_lengths`` supplies the
    (source words, target words) count for each line."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) != len(sentence_lengths):
        raise DataError(
            f"{path}: {len(lines)} alignment lines for {len(sentence_lengths)} sentence pairs"
        )
    return [
        parse_pharaoh_line(line, src_len, tgt_len)
        for line, (src_len, tgt_len) in zip(lines, sentence_lengths)
    ]
