"""Training for the desk-scale translation model.

Single-threaded, CPU-oriented, reproducible given a seed. The trained
checkpoint records initial/final validation perplexity in its metadata so
callers can verify the run actually learned something.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DataError, NumericalError, ValidationError
from .model import Checkpoint, ModelConfig, TranslationModel
from .subword import BOS_ID, EOS_ID, PAD_ID, SubwordModel, train_subwords

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    vocab_size: int = 400
    d_model: int = 32
    num_heads: int = 2
    num_layers: int = 2
    d_ff: int = 64
    max_len: int = 64
    dropout: float = 0.0
    batch_size: int = 32
    epochs: int = 10
    max_steps: int | None = None
    lr: float = 1e-3
    grad_clip: float = 1.0
    val_fraction: float = 0.1
    seed: int = 0
    corpus_id: str = ""

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            d_model=self.d_model,
            num_heads=self.num_heads,
            num_layers=self.num_layers,
            d_ff=self.d_ff,
            max_len=self.max_len,
            dropout=self.dropout,
        )


def load_parallel_corpus(source_path: str | Path, target_path: str | Path | None = None) -> list[tuple[str, str]]:
    """Read sentence pairs from a tab-separated file or two aligned files."""
    source_path = Path(source_path)
    if target_path is None:
        pairs = []
        for lineno, line in enumerate(source_path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{source_path}:{lineno}: expected 'source<TAB>target', got {len(parts)} fields")
            pairs.append((parts[0].strip(), parts[1].strip()))
        return pairs
    src_lines = source_path.read_text(encoding="utf-8").splitlines()
    tgt_lines = Path(target_path).read_text(encoding="utf-8").splitlines()
    if len(src_lines) != len(tgt_lines):
        raise DataError(
            f"corpus length mismatch: {source_path} has {len(src_lines)} lines, "
            f"{target_path} has {len(tgt_lines)}"
        )
    return [(s.strip(), t.strip()) for s, t in zip(src_lines, tgt_lines) if s.strip() and t.strip()]


def _encode_pairs(pairs, subwords: SubwordModel, max_len: int):
    encoded = []
    skipped = 0
    for src, tgt in pairs:
        src_ids = [tid for w in src.split() for tid in subwords.encode_word(w)]
        tgt_ids = [tid for w in tgt.split() for tid in subwords.encode_word(w)]
        if not src_ids or not tgt_ids:
            skipped += 1
            continue
        if len(src_ids) > max_len or len(tgt_ids) + 1 > max_len:
            skipped += 1
            continue
        encoded.append((src_ids, tgt_ids))
    if skipped:
        logger.info("skipped %d/%d pairs (empty or over max_len=%d)", skipped, len(pairs), max_len)
    return encoded


def _pad_batch(rows: list[list[int]], pad_extra: int = 0) -> torch.Tensor:
    width = max(len(r) for r in rows) + pad_extra
    out = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
    for i, row in enumerate(rows):
        out[i, : len(row)] = torch.tensor(row, dtype=torch.long)
    return out


def _batch_tensors(batch):
    """Teacher-forcing tensors: decoder input [BOS y], labels [y EOS]."""
    src = _pad_batch([ids for ids, _ in batch])
    tgt_in = _pad_batch([[BOS_ID] + ids for _, ids in batch])
    labels = _pad_batch([ids + [EOS_ID] for _, ids in batch])
    src_mask = src.eq(PAD_ID)
    tgt_mask = tgt_in.eq(PAD_ID)
    return src, tgt_in, labels, src_mask, tgt_mask


def _evaluate_perplexity(model: TranslationModel, data, batch_size: int) -> float:
    """Token-level validation perplexity (includes the EOS prediction)."""
    model.eval()
    total_nll = 0.0
    total_tokens = 0
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            src, tgt_in, labels, src_mask, tgt_mask = _batch_tensors(data[start : start + batch_size])
            logits, _ = model.decode(tgt_in, model.encode(src, src_key_padding_mask=src_mask),
                                     tgt_key_padding_mask=tgt_mask, memory_key_padding_mask=src_mask)
            nll = F.cross_entropy(logits.transpose(1, 2), labels, ignore_index=PAD_ID, reduction="sum")
            total_nll += float(nll)
            total_tokens += int(labels.ne(PAD_ID).sum())
    return math.exp(total_nll / max(total_tokens, 1))


def train_model(pairs: list[tuple[str, str]], config: TrainConfig | None = None,
                seed: int | None = None) -> Checkpoint:
    """Train a model on parallel ``pairs`` and return a loadable checkpoint.

    The subword model is learned jointly over both corpus sides. Aborts with
    NumericalError on non-finite loss.
    """
    config = config or TrainConfig()
    if seed is None:
        seed = config.seed
    if not pairs:
        raise ValidationError("parallel corpus is empty")

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)

    subwords = train_subwords((line for pair in pairs for line in pair), config.vocab_size)
    data = _encode_pairs(pairs, subwords, config.max_len)
    if not data:
        raise ValidationError("no usable sentence pairs after encoding")

    order = rng.permutation(len(data))
    n_val = max(1, int(round(config.val_fraction * len(data)))) if len(data) > 1 else 0
    val_data = [data[i] for i in order[:n_val]]
    train_data = [data[i] for i in order[n_val:]] or data

    model = TranslationModel(config.model_config(subwords.vocab_size))
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)

    initial_ppl = _evaluate_perplexity(model, val_data or train_data, config.batch_size)

    step = 0
    done = False
    for epoch in range(config.epochs):
        model.train()
        epoch_order = rng.permutation(len(train_data))
        for start in range(0, len(train_data), config.batch_size):
            batch = [train_data[i] for i in epoch_order[start : start + config.batch_size]]
            src, tgt_in, labels, src_mask, tgt_mask = _batch_tensors(batch)
            logits, _ = model.decode(tgt_in, model.encode(src, src_key_padding_mask=src_mask),
                                     tgt_key_padding_mask=tgt_mask, memory_key_padding_mask=src_mask)
            loss = F.cross_entropy(logits.transpose(1, 2), labels, ignore_index=PAD_ID)
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite training loss at step {step} (epoch {epoch})")
            optimizer.zero_grad()
            loss.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            step += 1
            if config.max_steps is not None and step >= config.max_steps:
                done = True
                break
        if done:
            break

    final_ppl = _evaluate_perplexity(model, val_data or train_data, config.batch_size)
    logger.info("trained %d steps: val ppl %.2f -> %.2f", step, initial_ppl, final_ppl)
    model.eval()
    return Checkpoint(
        config=model.cfg,
        model=model,
        subwords=subwords,
        metadata={
            "steps": step,
            "seed": seed,
            "corpus_id": config.corpus_id,
            "initial_val_perplexity": initial_ppl,
            "final_val_perplexity": final_ppl,
        },
    )
