"""End-to-end evaluation pipeline: translate a test set, annotate the
candidates, resolve labels, score every attribution method, and report
metrics. Shared by the CLI and the benchmark harness."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import attribution
from .annotator import (
    AnnotationCache,
    AnnotationRequest,
    AnnotatorBackend,
    annotate,
    resolve_to_source,
)
from .attribution import AttributionConfig, AttributionResult, HardAlignment
from .errors import DataError
from .evaluation import MetricsReport, evaluate_method
from .model import Checkpoint, cross_attention, input_embedding_gradient, sequence_score, translate
from .subword import TokenizedSentence

logger = logging.getLogger(__name__)


def load_testset(path: str | Path) -> list[dict]:
    """JSON Lines test set: one {"source": ..., "reference": ...} per line."""
    entries = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from None
        if "source" not in obj or "reference" not in obj:
            raise DataError(f"{path}:{lineno}: entry needs 'source' and 'reference' fields")
        entries.append(obj)
    if not entries:
        raise DataError(f"{path}: empty test set")
    return entries


@dataclass
class SentenceEvaluation:
    sentence_id: str
    source: TokenizedSentence
    candidate: TokenizedSentence
    reference: str
    entry_index: int = 0
    positive_indices: set[int] = field(default_factory=set)
    unresolved: int = 0


@dataclass
class EvaluationRun:
    sentences: list[SentenceEvaluation]
    reports: dict[str, MetricsReport]
    skipped_sentences: int = 0


def _method_config(method: str, norm: str, aggregation: str) -> AttributionConfig:
    return AttributionConfig(method=method, norm=norm, aggregation=aggregation)


def run_evaluation(entries: list[dict], checkpoint: Checkpoint, backend: AnnotatorBackend,
                   cache: AnnotationCache, alignments=None,
                   source_lang: str = "English", target_lang: str = "German",
                   norm: str = "l1", aggregation: str = "sum",
                   log_space_gradient: bool = False,
                   decode_mode: str = "greedy", beam_width: int = 4) -> EvaluationRun:
    """Evaluate gradient, attention-projection and (when alignments are
    given) alignment-projection methods over a test set.

    ``alignments`` aligns source words to *candidate* words, as an external
    aligner run over (source, candidate) pairs would produce. It is either a
    list with one HardAlignment per test entry, or a callable receiving the
    translated sentences (for alignments derived from the candidates).
    """
    if isinstance(alignments, list) and len(alignments) != len(entries):
        raise DataError(f"{len(alignments)} alignments for {len(entries)} test sentences")

    sentences: list[SentenceEvaluation] = []
    requests: list[AnnotationRequest] = []
    skipped = 0
    for i, entry in enumerate(entries):
        source = checkpoint.subwords.tokenize(entry["source"])
        candidate = translate(source, checkpoint, mode=decode_mode, beam_width=beam_width).target
        if len(candidate) == 0:
            logger.warning("sentence %d produced an empty candidate, skipping", i)
            skipped += 1
            continue
        sentences.append(SentenceEvaluation(
            sentence_id=f"s{i:05d}",
            source=source,
            candidate=candidate,
            reference=entry["reference"],
            entry_index=i,
        ))
        requests.append(AnnotationRequest(
            source_lang=source_lang,
            target_lang=target_lang,
            source=source.text,
            candidate=candidate.text,
            reference=entry["reference"],
        ))

    kept_alignments: list[HardAlignment] | None = None
    if callable(alignments):
        kept_alignments = alignments(sentences)
    elif alignments is not None:
        kept_alignments = [alignments[s.entry_index] for s in sentences]

    records = annotate(requests, backend, cache)
    total_unresolved = 0
    for sent, record in zip(sentences, records):
        if record.failed:
            logger.warning("%s: annotation failed: %s", sent.sentence_id, record.error)
            continue
        resolved = resolve_to_source(record.triples, sent.source)
        sent.positive_indices = {
            t.resolved_source_index for t in resolved if t.resolved_source_index is not None
        }
        sent.unresolved = sum(1 for t in resolved if t.resolved_source_index is None)
        total_unresolved += sent.unresolved

    reports: dict[str, MetricsReport] = {}
    labels = {s.sentence_id: s.positive_indices for s in sentences}

    gradient_results = {
        s.sentence_id: score_gradient(s.source, s.candidate, checkpoint, norm, aggregation,
                                      log_space=log_space_gradient)
        for s in sentences
    }
    reports["gradient"] = evaluate_method(gradient_results, labels, "gradient",
                                          unresolved_triples=total_unresolved)

    attention_results = {
        s.sentence_id: score_attention_projection(s.source, s.candidate, checkpoint)
        for s in sentences
    }
    reports["attention"] = evaluate_method(attention_results, labels, "attention",
                                           unresolved_triples=total_unresolved)

    if kept_alignments is not None:
        alignment_results = {
            s.sentence_id: score_alignment_projection(s.source, s.candidate, checkpoint, al)
            for s, al in zip(sentences, kept_alignments)
        }
        reports["alignment"] = evaluate_method(alignment_results, labels, "alignment",
                                               unresolved_triples=total_unresolved)

    return EvaluationRun(sentences=sentences, reports=reports, skipped_sentences=skipped)


def score_gradient(source: TokenizedSentence, candidate: TokenizedSentence,
                   checkpoint: Checkpoint, norm: str = "l1", aggregation: str = "sum",
                   threshold: float = 0.0, log_space: bool = False) -> AttributionResult:
    gradients = input_embedding_gradient(source, candidate, checkpoint, log_space=log_space)
    config = AttributionConfig(method="gradient", norm=norm, aggregation=aggregation,
                               threshold=threshold)
    return attribution.gradient_uncertainty(gradients, source.word_spans, config)


def score_attention_projection(source: TokenizedSentence, candidate: TokenizedSentence,
                               checkpoint: Checkpoint) -> AttributionResult:
    score = sequence_score(source, candidate, checkpoint)
    target_scores = attribution.target_word_uncertainty(score.per_token_probs, candidate.word_spans)
    tensor = cross_attention(source, candidate, checkpoint)
    return attribution.attention_projection(
        target_scores, tensor, source.word_spans, candidate.word_spans,
        AttributionConfig(method="attention_projection"),
    )


def score_alignment_projection(source: TokenizedSentence, candidate: TokenizedSentence,
                               checkpoint: Checkpoint, alignment: HardAlignment) -> AttributionResult:
    score = sequence_score(source, candidate, checkpoint)
    target_scores = attribution.target_word_uncertainty(score.per_token_probs, candidate.word_spans)
    return attribution.alignment_projection(
        target_scores, alignment, AttributionConfig(method="alignment_projection")
    )


def diagonal_alignments(sentences: list[SentenceEvaluation]) -> list[HardAlignment]:
    """Positional gold alignments for monotone word-for-word benchmarks."""
    alignments = []
    for s in sentences:
        n = len(s.source.surface_words)
        m = len(s.candidate.surface_words)
        pairs = frozenset((i, i) for i in range(min(n, m)))
        alignments.append(HardAlignment(pairs=pairs, source_len=n, target_len=m))
    return alignments
