"""Desk-scale encoder-decoder translation model.

A standard pre-norm transformer, written out by hand so that cross-attention
probabilities and the source embedding leaf are directly accessible. The
public operations work on single sentences and a loaded checkpoint:

    translate            greedy or beam decoding of a source sentence
    sequence_score       teacher-forced probability of a fixed target
    cross_attention      raw (layer, head, target, source) attention tensor
    encoder_states       final encoder layer outputs, one per source subword
    input_embedding_gradient
                         d P(target | source) / d source-embedding, the
                         sensitivity signal behind source-side uncertainty

The gradient is taken at the token-embedding lookup output, before positional
encodings are added, and differentiates the sequence probability itself
(computed as exp of the summed log-probabilities for stability). A log_space
flag switches to d log P instead.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import tensorfile
from .errors import ConfigurationError, NumericalError, ValidationError
from .subword import BOS_ID, EOS_ID, PAD_ID, SubwordModel, TokenizedSentence

CHECKPOINT_FORMAT = "mtconf-checkpoint-v1"
WEIGHTS_FILE = "weights.mtcf"
CONFIG_FILE = "config.json"
SUBWORD_FILE = "subwords.json"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 32
    num_heads: int = 2
    num_layers: int = 2
    d_ff: int = 64
    max_len: int = 64
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.num_heads != 0:
            raise ConfigurationError(
                f"d_model={self.d_model} not divisible by num_heads={self.num_heads}"
            )
        if min(self.vocab_size, self.d_model, self.num_layers, self.d_ff, self.max_len) <= 0:
            raise ConfigurationError("all model dimensions must be positive")


def sinusoidal_encoding(length: int, d_model: int) -> torch.Tensor:
    position = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float64) * (-math.log(10000.0) / d_model))
    pe = torch.zeros(length, d_model, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(position * div)
    pe[:, 1::2] = torch.cos(position * div[: d_model // 2])
    return pe


class MultiHeadAttention(nn.Module):
    """Attention that exposes its per-head softmax weights."""

    def __init__(self, d_model: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = d_model // num_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)

    def forward(self, query, key, value, key_padding_mask=None, causal=False):
        # query (B, Tq, d), key/value (B, Tk, d); returns (out, attn (B, H, Tq, Tk))
        bsz, tq, d = query.shape
        tk = key.shape[1]
        q = self.q_proj(query).view(bsz, tq, self.num_heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(key).view(bsz, tk, self.num_heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(value).view(bsz, tk, self.num_heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if causal:
            future = torch.triu(torch.ones(tq, tk, dtype=torch.bool, device=query.device), diagonal=1)
            scores = scores.masked_fill(future, float("-inf"))
        if key_padding_mask is not None:
            scores = scores.masked_fill(key_padding_mask[:, None, None, :], float("-inf"))
        attn = F.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(bsz, tq, d)
        return self.out_proj(out), attn


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        # GELU keeps the sequence probability smooth in the embeddings,
        # which the finite-difference verification of the gradient relies on.
        return self.fc2(self.dropout(F.gelu(self.fc1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.num_heads)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, src_key_padding_mask=None):
        h = self.norm1(x)
        h, _ = self.self_attn(h, h, h, key_padding_mask=src_key_padding_mask)
        x = x + self.dropout(h)
        x = x + self.dropout(self.ff(self.norm2(x)))
        return x


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.num_heads)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.num_heads)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, memory, tgt_key_padding_mask=None, memory_key_padding_mask=None):
        h = self.norm1(x)
        h, _ = self.self_attn(h, h, h, key_padding_mask=tgt_key_padding_mask, causal=True)
        x = x + self.dropout(h)
        h, cross = self.cross_attn(self.norm2(x), memory, memory,
                                   key_padding_mask=memory_key_padding_mask)
        x = x + self.dropout(h)
        x = x + self.dropout(self.ff(self.norm3(x)))
        return x, cross


class TranslationModel(nn.Module):
    """Pre-norm transformer with a shared source/target embedding table."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embedding = nn.Embedding(cfg.vocab_size, cfg.d_model, padding_idx=PAD_ID)
        self.encoder_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.num_layers))
        self.decoder_layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.num_layers))
        self.encoder_norm = nn.LayerNorm(cfg.d_model)
        self.decoder_norm = nn.LayerNorm(cfg.d_model)
        self.output_proj = nn.Linear(cfg.d_model, cfg.vocab_size)
        self.dropout = nn.Dropout(cfg.dropout)
        # Positional table sized for the decode budget (2 x max_len), not just max_len.
        pe = sinusoidal_encoding(2 * cfg.max_len + 1, cfg.d_model).to(torch.float32)
        self.register_buffer("pos_encoding", pe)
        self._init_weights()

    def _init_weights(self):
        nn.init.normal_(self.embedding.weight, mean=0.0, std=self.cfg.d_model ** -0.5)
        with torch.no_grad():
            self.embedding.weight[PAD_ID].zero_()
        for module in self.modules():
            if isinstance(module, nn.Linear):
                nn.init.xavier_uniform_(module.weight)
                nn.init.zeros_(module.bias)

    def _add_positions(self, embeddings: torch.Tensor) -> torch.Tensor:
        length = embeddings.shape[1]
        scale = math.sqrt(self.cfg.d_model)
        pe = self.pos_encoding[:length].to(embeddings.dtype)
        return self.dropout(embeddings * scale + pe)

    def encode(self, src_ids, src_key_padding_mask=None, src_embeddings=None):
        """Final encoder states (B, n, d). ``src_embeddings`` overrides the
        table lookup so callers can differentiate with respect to it."""
        if src_embeddings is None:
            src_embeddings = self.embedding(src_ids)
        x = self._add_positions(src_embeddings)
        for layer in self.encoder_layers:
            x = layer(x, src_key_padding_mask=src_key_padding_mask)
        return self.encoder_norm(x)

    def decode(self, tgt_in_ids, memory, tgt_key_padding_mask=None, memory_key_padding_mask=None):
        """Logits (B, m, V) plus per-layer cross-attention (B, H, m, n)."""
        x = self._add_positions(self.embedding(tgt_in_ids))
        cross_layers = []
        for layer in self.decoder_layers:
            x, cross = layer(x, memory, tgt_key_padding_mask=tgt_key_padding_mask,
                             memory_key_padding_mask=memory_key_padding_mask)
            cross_layers.append(cross)
        logits = self.output_proj(self.decoder_norm(x))
        return logits, torch.stack(cross_layers, dim=1)  # (B, L, H, m, n)


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Loaded model plus its subword model and training metadata."""

    config: ModelConfig
    model: TranslationModel
    subwords: SubwordModel
    metadata: dict = field(default_factory=dict)

    @property
    def model_id(self) -> str:
        if "model_id" not in self.metadata:
            payload = b"".join(
                t.detach().cpu().to(torch.float32).numpy().tobytes()
                for _, t in sorted(self.model.state_dict().items())
            )
            self.metadata["model_id"] = hashlib.sha256(payload).hexdigest()[:12]
        return self.metadata["model_id"]

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        arrays = {
            name: tensor.detach().cpu().to(torch.float32).numpy()
            for name, tensor in self.model.state_dict().items()
            if name != "pos_encoding"
        }
        tensorfile.save_arrays(directory / WEIGHTS_FILE, arrays, metadata={"format": CHECKPOINT_FORMAT})
        config_payload = {
            "format": CHECKPOINT_FORMAT,
            "architecture": asdict(self.config),
            "metadata": {k: v for k, v in self.metadata.items() if k != "model_id"},
        }
        (directory / CONFIG_FILE).write_text(json.dumps(config_payload, sort_keys=True, indent=2))
        self.subwords.save(directory / SUBWORD_FILE)
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "Checkpoint":
        directory = Path(directory)
        config_payload = json.loads((directory / CONFIG_FILE).read_text())
        if config_payload.get("format") != CHECKPOINT_FORMAT:
            raise ConfigurationError(
                f"{directory}: unsupported checkpoint format {config_payload.get('format')!r}"
            )
        config = ModelConfig(**config_payload["architecture"])
        model = TranslationModel(config)
        arrays, _ = tensorfile.load_arrays(directory / WEIGHTS_FILE)
        state = {name: torch.from_numpy(arr) for name, arr in arrays.items()}
        state["pos_encoding"] = model.pos_encoding
        model.load_state_dict(state)
        model.eval()
        subwords = SubwordModel.load(directory / SUBWORD_FILE)
        return cls(config=config, model=model, subwords=subwords,
                   metadata=dict(config_payload.get("metadata", {})))


# ---------------------------------------------------------------------------
# Scoring / decoding results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SequenceScore:
    total_log_prob: float
    per_token_log_probs: tuple[float, ...]
    per_token_probs: tuple[float, ...]

    @property
    def probability(self) -> float:
        return math.exp(self.total_log_prob)


@dataclass(frozen=True)
class Translation:
    """Decoded target sentence. ``truncated`` is set when the decode budget
    ran out before end-of-sequence was emitted."""

    target: TokenizedSentence
    score: float
    truncated: bool = False


def _validate_ids(sentence: TokenizedSentence, checkpoint: Checkpoint, name: str) -> None:
    vocab = checkpoint.config.vocab_size
    for tid in sentence.token_ids:
        if not 0 <= tid < vocab:
            raise ValidationError(f"{name} token id {tid} outside vocabulary range [0, {vocab})")


def _tensor(ids, dtype=torch.long) -> torch.Tensor:
    return torch.tensor([list(ids)], dtype=dtype)


def _teacher_forced(model: TranslationModel, src_ids, tgt_ids,
                    src_embeddings=None, src_key_padding_mask=None, detach_encoder=False):
    """Per-token log-probs of ``tgt_ids`` given ``src_ids`` plus cross-attention.

    The decoder consumes BOS followed by the target prefix, so position j
    scores target token j. Returns (picked_log_probs (1, m), cross (1, L, H, m, n)).
    """
    memory = model.encode(src_ids, src_key_padding_mask=src_key_padding_mask,
                          src_embeddings=src_embeddings)
    if detach_encoder:
        memory = memory.detach()
    bos = torch.full((src_ids.shape[0], 1), BOS_ID, dtype=torch.long)
    tgt_in = torch.cat([bos, tgt_ids[:, :-1]], dim=1)
    logits, cross = model.decode(tgt_in, memory, memory_key_padding_mask=src_key_padding_mask)
    log_probs = F.log_softmax(logits, dim=-1)
    picked = log_probs.gather(-1, tgt_ids.unsqueeze(-1)).squeeze(-1)
    return picked, cross


def sequence_score(source: TokenizedSentence, target: TokenizedSentence,
                   checkpoint: Checkpoint) -> SequenceScore:
    """Teacher-forced score of ``target`` given ``source``.

    Per-token probabilities are the decoder softmax values of the realized
    target tokens; the total is their product in log space.
    """
    _validate_ids(source, checkpoint, "source")
    _validate_ids(target, checkpoint, "target")
    model = checkpoint.model
    model.eval()
    with torch.no_grad():
        picked, _ = _teacher_forced(model, _tensor(source.token_ids), _tensor(target.token_ids))
    log_probs = [float(v) for v in picked[0]]
    return SequenceScore(
        total_log_prob=float(sum(log_probs)),
        per_token_log_probs=tuple(log_probs),
        per_token_probs=tuple(math.exp(v) for v in log_probs),
    )


def cross_attention(source: TokenizedSentence, target: TokenizedSentence,
                    checkpoint: Checkpoint) -> np.ndarray:
    """Raw cross-attention tensor (L, H, m, n) under teacher forcing."""
    _validate_ids(source, checkpoint, "source")
    _validate_ids(target, checkpoint, "target")
    model = checkpoint.model
    model.eval()
    with torch.no_grad():
        _, cross = _teacher_forced(model, _tensor(source.token_ids), _tensor(target.token_ids))
    return cross[0].cpu().numpy()


def encoder_states(source: TokenizedSentence, checkpoint: Checkpoint) -> np.ndarray:
    """Final encoder layer output, one d-dim vector per source subword (n, d)."""
    _validate_ids(source, checkpoint, "source")
    model = checkpoint.model
    model.eval()
    with torch.no_grad():
        states = model.encode(_tensor(source.token_ids))
    return states[0].cpu().numpy()


def input_embedding_gradient(source: TokenizedSentence, target: TokenizedSentence,
                             checkpoint: Checkpoint, log_space: bool = False,
                             detach_encoder: bool = False, pad_to: int | None = None) -> np.ndarray:
    """Gradient of the target-sequence probability w.r.t. each source embedding.

    Differentiates P(target | source) itself, the product of the per-token
    probabilities, evaluated as exp of the summed log-probabilities.
    ``log_space=True`` differentiates log P instead (a non-default escape
    hatch for long targets where P underflows). ``pad_to`` right-pads the
    source with masked padding positions, whose gradient is exactly zero.

    Returns an (n, d) array, n = number of source subwords (or ``pad_to``).
    """
    _validate_ids(source, checkpoint, "source")
    _validate_ids(target, checkpoint, "target")
    model = checkpoint.model
    model.eval()

    src_ids = list(source.token_ids)
    mask = None
    if pad_to is not None:
        if pad_to < len(src_ids):
            raise ValidationError(f"pad_to={pad_to} shorter than source ({len(src_ids)} subwords)")
        pad_count = pad_to - len(src_ids)
        mask = torch.tensor([[False] * len(src_ids) + [True] * pad_count])
        src_ids = src_ids + [PAD_ID] * pad_count

    src_tensor = _tensor(src_ids)
    embeddings = model.embedding(src_tensor).detach().clone().requires_grad_(True)
    picked, _ = _teacher_forced(model, src_tensor, _tensor(target.token_ids),
                                src_embeddings=embeddings, src_key_padding_mask=mask,
                                detach_encoder=detach_encoder)
    objective = picked.sum() if log_space else picked.sum().exp()
    (gradient,) = torch.autograd.grad(objective, embeddings, allow_unused=True)
    if gradient is None:  # every path from the leaf was blocked (detached encoder)
        gradient = torch.zeros_like(embeddings)
    result = gradient[0].cpu().numpy()
    if not np.isfinite(result).all():
        bad = int(np.argwhere(~np.isfinite(result).all(axis=1))[0][0])
        raise NumericalError(f"non-finite embedding gradient at source position {bad}")
    return result


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

def _decode_step_logprobs(model, tgt_prefix_rows, memory, mask):
    """Next-token log-probs for a batch of target prefixes sharing one source."""
    rows = torch.tensor(tgt_prefix_rows, dtype=torch.long)
    mem = memory.expand(rows.shape[0], -1, -1)
    m = mask.expand(rows.shape[0], -1) if mask is not None else None
    logits, _ = model.decode(rows, mem, memory_key_padding_mask=m)
    return F.log_softmax(logits[:, -1, :], dim=-1).cpu().numpy().astype(np.float64)


def translate(source: TokenizedSentence, checkpoint: Checkpoint,
              mode: str = "greedy", beam_width: int = 4) -> Translation:
    """Decode a translation of ``source``.

    Greedy and beam search are deterministic; equal candidate scores are
    broken in favor of the lower token id. Decoding stops at end-of-sequence
    or after twice the configured maximum length, in which case the result is
    flagged truncated.
    """
    _validate_ids(source, checkpoint, "source")
    if len(source.token_ids) > checkpoint.config.max_len:
        raise ValidationError(
            f"source has {len(source.token_ids)} subwords, max is {checkpoint.config.max_len}"
        )
    if mode not in ("greedy", "beam"):
        raise ValidationError(f"unknown decode mode {mode!r}")
    if mode == "beam" and beam_width < 1:
        raise ValidationError("beam width must be >= 1")

    model = checkpoint.model
    model.eval()
    budget = 2 * checkpoint.config.max_len
    with torch.no_grad():
        memory = model.encode(_tensor(source.token_ids))
        width = 1 if mode == "greedy" else beam_width
        token_ids, score, truncated = _beam_search(model, memory, width, budget)

    detok = checkpoint.subwords.detokenize(token_ids)
    if detok:
        # Re-tokenize so the returned sentence carries a canonical span map,
        # even when the raw decode stream segmented words non-canonically.
        sentence = checkpoint.subwords.tokenize(detok)
    else:
        sentence = TokenizedSentence((), (), ())
    return Translation(target=sentence, score=score, truncated=truncated)


def _beam_search(model, memory, width: int, budget: int):
    """Sum-of-log-prob beam search; width 1 reduces exactly to greedy argmax."""
    beams = [(0.0, [BOS_ID], False)]  # (score, ids incl. BOS, finished)
    finished: list[tuple[float, list[int]]] = []
    for _ in range(budget):
        live = [b for b in beams if not b[2]]
        if not live:
            break
        step = _decode_step_logprobs(model, [b[1] for b in live], memory, None)
        candidates = []  # (-score, beam_idx, token_id)
        for bi, (score, ids, _) in enumerate(live):
            row = step[bi]
            for tid in range(row.shape[0]):
                if tid == PAD_ID or tid == BOS_ID:
                    continue
                candidates.append((-(score + row[tid]), bi, tid))
        candidates.sort()
        next_beams = []
        for neg_score, bi, tid in candidates[: width * 2]:
            score = -neg_score
            ids = live[bi][1] + [tid]
            if tid == EOS_ID:
                finished.append((score, ids))
            else:
                next_beams.append((score, ids, False))
            if len(next_beams) >= width:
                break
        beams = next_beams
        if finished and (not beams or max(f[0] for f in finished) >= max(b[0] for b in beams)):
            # Scores only decrease as length grows; the best finished beam is final.
            break
    if finished:
        finished.sort(key=lambda f: (-f[0], f[1]))
        score, ids = finished[0]
        return [t for t in ids if t not in (BOS_ID, EOS_ID)], score, False
    beams.sort(key=lambda b: (-b[0], b[1]))
    score, ids, _ = beams[0]
    return [t for t in ids if t not in (BOS_ID, EOS_ID)], score, True
