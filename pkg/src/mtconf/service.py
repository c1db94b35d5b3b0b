"""HTTP API for interactive translation with source-word highlighting.

Endpoints:

    POST /translate    {"text": ...} -> translation plus per-source-word
                       uncertainty and highlight flags
    POST /suggestions  {"text": ..., "word_index": ..., "k": ...} -> top-k
                       replacement candidates for one source word
    GET  /health       model/index status

Responses are pure functions of (request, loaded artifacts); there is no
per-session state, so retranslating an edited sentence is just another
/translate call. Gradient computations are the expensive path and are
bounded by a semaphore.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .attribution import AttributionConfig, gradient_uncertainty
from .errors import ConfigurationError, MtconfError, ValidationError
from .model import Checkpoint, input_embedding_gradient, translate
from .suggestions import DEFAULT_K, SuggestionIndex, query_by_index

logger = logging.getLogger(__name__)

API_VERSION = 1


@dataclass
class ServiceConfig:
    checkpoint: str | None = None
    index: str | None = None
    norm: str = "l1"
    aggregation: str = "sum"
    threshold: float | None = None
    metrics_summary: str | None = None
    k: int = DEFAULT_K
    max_input_len: int | None = None  # defaults to model max_len
    host: str = "127.0.0.1"
    port: int = 8300
    max_concurrent_gradients: int = 2
    cors_origins: list[str] = field(default_factory=lambda: ["*"])
    static_dir: str | None = None

    ENV_OVERRIDES = {
        "MTCONF_CHECKPOINT": "checkpoint",
        "MTCONF_INDEX": "index",
        "MTCONF_THRESHOLD": "threshold",
        "MTCONF_PORT": "port",
        "MTCONF_HOST": "host",
    }

    @classmethod
    def from_file(cls, path: str | Path | None = None, **overrides) -> "ServiceConfig":
        """Precedence: explicit overrides > environment > config file."""
        values: dict = {}
        if path is not None:
            values.update(json.loads(Path(path).read_text()))
        for env_name, attr in cls.ENV_OVERRIDES.items():
            if env_name in os.environ:
                raw = os.environ[env_name]
                values[attr] = float(raw) if attr == "threshold" else (
                    int(raw) if attr == "port" else raw)
        for key, value in overrides.items():
            if value is not None:
                values[key] = value
        config = cls(**values)
        if config.threshold is not None and config.threshold < 0:
            raise ConfigurationError(f"threshold must be >= 0, got {config.threshold}")
        return config


def resolve_threshold(config: ServiceConfig) -> float:
    """Explicit threshold wins; otherwise the gradient method's max-F1
    threshold from the most recent evaluation summary; otherwise 0."""
    if config.threshold is not None:
        return float(config.threshold)
    if config.metrics_summary and Path(config.metrics_summary).exists():
        summary = json.loads(Path(config.metrics_summary).read_text())
        entry = summary.get("gradient")
        if entry and "threshold_at_max_f1" in entry:
            return float(entry["threshold_at_max_f1"])
    logger.warning("no threshold configured and no metrics summary found; defaulting to 0.0")
    return 0.0


class TranslateBody(BaseModel):
    text: str
    v: int = API_VERSION


class SuggestionsBody(BaseModel):
    text: str
    word_index: int
    k: int | None = None
    v: int = API_VERSION


def create_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="mtconf", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=config.cors_origins,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    state = app.state
    state.config = config
    state.checkpoint = None
    state.index = None
    state.gradient_slots = threading.Semaphore(config.max_concurrent_gradients)

    if config.checkpoint:
        if not Path(config.checkpoint).exists():
            raise ConfigurationError(f"checkpoint path does not exist: {config.checkpoint}")
        state.checkpoint = Checkpoint.load(config.checkpoint)
        logger.info("loaded checkpoint %s (%s)", config.checkpoint, state.checkpoint.model_id)
    if config.index:
        if not Path(config.index).exists():
            raise ConfigurationError(f"index path does not exist: {config.index}")
        state.index = SuggestionIndex.load(config.index)
        logger.info("loaded suggestion index %s (%d words)", config.index, len(state.index))
    state.threshold = resolve_threshold(config)
    state.attribution_config = AttributionConfig(
        method="gradient", norm=config.norm, aggregation=config.aggregation,
        threshold=state.threshold,
    )

    @app.exception_handler(MtconfError)
    async def domain_error(request: Request, exc: MtconfError):
        return JSONResponse(status_code=400, content={"v": API_VERSION, "error": str(exc)})

    @app.exception_handler(Exception)
    async def internal_error(request: Request, exc: Exception):
        error_id = uuid.uuid4().hex[:12]
        logger.exception("internal error %s", error_id)
        return JSONResponse(status_code=500,
                            content={"v": API_VERSION, "error": "internal error", "id": error_id})

    def _require_model() -> Checkpoint:
        if state.checkpoint is None:
            raise _ServiceUnavailable("model not loaded")
        return state.checkpoint

    @app.get("/health")
    def health():
        ok = state.checkpoint is not None and state.index is not None
        body = {
            "v": API_VERSION,
            "status": "ok" if ok else "degraded",
            "model_id": state.checkpoint.model_id if state.checkpoint else None,
            "index_id": state.index.index_id if state.index else None,
            "threshold": state.threshold,
        }
        return JSONResponse(status_code=200 if ok else 503, content=body)

    @app.post("/translate")
    def translate_endpoint(body: TranslateBody):
        checkpoint = _require_model()
        text = body.text.strip()
        if not text:
            raise ValidationError("text is empty")
        started = time.monotonic()
        source = checkpoint.subwords.tokenize(text)
        max_len = state.config.max_input_len or checkpoint.config.max_len
        if len(source.token_ids) > max_len:
            raise ValidationError(f"input has {len(source.token_ids)} subwords, max is {max_len}")
        result = translate(source, checkpoint)
        with state.gradient_slots:
            gradients = input_embedding_gradient(source, result.target, checkpoint)
        scores = gradient_uncertainty(gradients, source.word_spans, state.attribution_config)
        return {
            "v": API_VERSION,
            "translation": result.target.text,
            "truncated": result.truncated,
            "source_words": [
                {"text": w, "uncertainty": s, "highlighted": h}
                for w, s, h in zip(source.surface_words, scores.per_word_scores,
                                   scores.highlighted)
            ],
            "threshold": state.threshold,
            "model_id": checkpoint.model_id,
            "timing_ms": round((time.monotonic() - started) * 1000.0, 3),
        }

    @app.post("/suggestions")
    def suggestions_endpoint(body: SuggestionsBody):
        checkpoint = _require_model()
        if state.index is None:
            raise _ServiceUnavailable("suggestion index not loaded")
        text = body.text.strip()
        if not text:
            raise ValidationError("text is empty")
        k = body.k if body.k is not None else state.config.k
        sentence = checkpoint.subwords.tokenize(text)
        suggestions = query_by_index(sentence, body.word_index, checkpoint, state.index, k=k)
        if not suggestions.entries:
            return JSONResponse(status_code=404, content={
                "v": API_VERSION,
                "error": f"no suggestions available for {suggestions.query_word!r}",
            })
        return {
            "v": API_VERSION,
            "word": suggestions.query_word,
            "word_index": body.word_index,
            "suggestions": [{"word": w, "score": s} for w, s in suggestions.entries],
            "exhausted": suggestions.exhausted,
        }

    if config.static_dir and Path(config.static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/app", StaticFiles(directory=config.static_dir, html=True), name="app")

    @app.exception_handler(_ServiceUnavailable)
    async def unavailable(request: Request, exc: "_ServiceUnavailable"):
        return JSONResponse(status_code=503, content={"v": API_VERSION, "error": str(exc)})

    return app


class _ServiceUnavailable(Exception):
    pass


def serve(config: ServiceConfig) -> None:
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
