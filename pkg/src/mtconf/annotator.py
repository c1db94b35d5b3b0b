"""Mistranslation annotation via a pluggable LLM backend.

The prompt instructs the annotator to list single-word translation errors as
`source word → candidate word → reference word` triples (or a fixed
no-errors sentinel), parses responses fail-open, resolves triple source words
to sentence positions, and caches every exchange in an append-only JSONL
file so reruns never hit the backend twice for the same request.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
import string
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from threading import Lock
from typing import Protocol

from .errors import DataError, ValidationError
from .subword import TokenizedSentence

logger = logging.getLogger(__name__)

PROMPT_VERSION = 1
ARROW = "→"  # →
TRIPLE_FORMAT_LINE = "(source word → candidate word → reference word)"
NO_ERRORS_SENTINEL = "No translation errors detected."

_INSTRUCTIONS = """\
Task:

Identify and list all single-word translation errors in a machine-translated sentence.

Instructions:

1. Identify Mistranslations: Compare each word in the candidate sentence with the source and reference sentences to find clear translation errors.

2. Focus on Single-Word Errors: Report errors at the word level. If a multi-word phrase is mistranslated, extract the most significant word.

3. Prioritize Meaningful Errors: Report only errors that significantly change meaning. Ignore acceptable variations, such as near-synonyms.

4. Ensure Contextual Accuracy: Identify words that, while potentially valid in isolation, do not fit the intended meaning in context.

5. Handle Ambiguity Carefully: Mark an error only if the candidate word is demonstrably incorrect when compared to the source and reference.

Strict Adherence Required: Always follow the output format exactly, and include detailed explanations that refer back to the instructions.

Output Format:

List each mistranslation as a triple in the following format:

(source word → candidate word → reference word)

If there are no translation errors, output:

No translation errors detected.
"""

_EXAMPLE_1 = """\
Example 1:

Input:

Source Language: English

Target Language: German

Source Sentence: The scientist presented a groundbreaking discovery.

Candidate Translation: Der Wissenschaftler präsentierte eine einfache Entdeckung.

Reference Translation: Der Wissenschaftler präsentierte eine bahnbrechende Entdeckung.

Expected Output:

groundbreaking → einfache → bahnbrechende

Explanation: "einfache" (simple) is a mistranslation of "groundbreaking", which significantly changes the meaning of the sentence. This violates the Prioritize Meaningful Errors rule because it downplays the significance of the discovery.
"""

_EXAMPLE_2 = """\
Example 2:

Input:

Source Language: English

Target Language: German

Source Sentence: The children played in the garden.

Candidate Translation: Die Kinder spielten im Garten.

Reference Translation: Die Kinder spielten im Garten.

Expected Output:

No translation errors detected.

Explanation: Every candidate word matches the intended meaning of the source, so per the Handle Ambiguity Carefully rule no error is reported.
"""

EXAMPLE_BLOCKS = {"default": (_EXAMPLE_1, _EXAMPLE_2)}


@dataclass(frozen=True)
class AnnotationRequest:
    source_lang: str
    target_lang: str
    source: str
    candidate: str
    reference: str
    examples_id: str = "default"

    def __post_init__(self):
        for name in ("source", "candidate", "reference"):
            if not getattr(self, name).strip():
                raise ValidationError(f"annotation request field {name!r} is empty")
        if self.examples_id not in EXAMPLE_BLOCKS:
            raise ValidationError(f"unknown examples block {self.examples_id!r}")


@dataclass
class MistranslationTriple:
    source_word: str
    candidate_word: str
    reference_word: str
    resolved_source_index: int | None = None
    explanation: str = ""

    def __post_init__(self):
        if not (self.source_word and self.candidate_word and self.reference_word):
            raise ValidationError("triple words must be non-empty")

    def format_line(self) -> str:
        return f"{self.source_word} {ARROW} {self.candidate_word} {ARROW} {self.reference_word}"


def request_hash(request: AnnotationRequest) -> str:
    payload = json.dumps(
        {"v": PROMPT_VERSION, **asdict(request)}, sort_keys=True, ensure_ascii=False
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def build_prompt(request: AnnotationRequest) -> str:
    """Deterministic annotation prompt: instructions, output format with the
    triple pattern and no-errors sentinel, worked examples, then the input."""
    example_1, example_2 = EXAMPLE_BLOCKS[request.examples_id]
    input_block = (
        "Input:\n\n"
        f"Source Language: {request.source_lang}\n\n"
        f"Target Language: {request.target_lang}\n\n"
        f"Source Sentence: {request.source}\n\n"
        f"Candidate Translation: {request.candidate}\n\n"
        f"Reference Translation: {request.reference}\n\n"
        "Output:"
    )
    return "\n".join([_INSTRUCTIONS, example_1, example_2, input_block])


_TRIPLE_RE = re.compile(
    r"^\s*\(?\s*(?P<src>[^()→]+?)\s*(?:→|->)\s*(?P<cand>[^()→]+?)"
    r"\s*(?:→|->)\s*(?P<ref>[^()→]+?)\s*\)?\s*$"
)
_TEMPLATE_WORDS = ("source word", "candidate word", "reference word")


def parse_response_detailed(text: str) -> tuple[list[MistranslationTriple], str | None]:
    """Extract `A → B → C` lines; returns (triples, parse warning or None).

    The no-errors sentinel yields an empty list with no warning. Text with
    neither triples nor sentinel yields an empty list plus a warning
    (fail-open). Explanation text after an `Explanation:` marker is attached
    to every triple of the batch.
    """
    if NO_ERRORS_SENTINEL in text:
        return [], None
    explanation = ""
    marker = text.find("Explanation:")
    if marker >= 0:
        explanation = text[marker + len("Explanation:"):].strip()
        body = text[:marker]
    else:
        body = text
    triples = []
    for line in body.splitlines():
        match = _TRIPLE_RE.match(line)
        if not match:
            continue
        words = (match["src"].strip(), match["cand"].strip(), match["ref"].strip())
        if tuple(w.lower() for w in words) == _TEMPLATE_WORDS:
            continue  # echoed format template, not a finding
        if not all(words):
            continue
        triples.append(MistranslationTriple(*words, explanation=explanation))
    if not triples:
        return [], "response contained neither triples nor the no-errors sentinel"
    return triples, None


def parse_response(text: str) -> list[MistranslationTriple]:
    triples, warning = parse_response_detailed(text)
    if warning:
        logger.warning("annotator parse: %s", warning)
    return triples


_PUNCT = string.punctuation + "“”‘’«»"


def _match_key(word: str) -> str:
    return word.strip(_PUNCT).casefold()


def resolve_to_source(triples: list[MistranslationTriple],
                      source: TokenizedSentence) -> list[MistranslationTriple]:
    """Attach source word positions to triples.

    Matching is case-insensitive and punctuation-stripped. A multi-word
    source phrase resolves to the head (last) word of the leftmost matching
    span. Repeated surface forms are consumed left to right across triples;
    a source index is never assigned twice. Unresolvable triples keep
    resolved_source_index None.
    """
    keys = [_match_key(w) for w in source.surface_words]
    used: set[int] = set()
    resolved = []
    for triple in triples:
        phrase = [_match_key(w) for w in triple.source_word.split()]
        index = None
        if phrase and all(phrase):
            for start in range(len(keys) - len(phrase) + 1):
                head = start + len(phrase) - 1
                if head in used:
                    continue
                if keys[start : start + len(phrase)] == phrase:
                    index = head
                    break
        if index is not None:
            used.add(index)
        resolved.append(MistranslationTriple(
            source_word=triple.source_word,
            candidate_word=triple.candidate_word,
            reference_word=triple.reference_word,
            resolved_source_index=index,
            explanation=triple.explanation,
        ))
    return resolved


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

class AnnotatorBackend(Protocol):
    backend_id: str
    snapshot: str

    def send(self, prompt: str) -> str: ...


class MockBackend:
    """Scripted backend for tests and offline runs.

    ``script`` may be a callable prompt -> response, a dict keyed by exact
    prompt text, or a list consumed in order.
    """

    backend_id = "mock"

    def __init__(self, script, snapshot: str = "mock-0"):
        self.snapshot = snapshot
        self._script = script
        self._cursor = 0
        self.calls = 0

    def send(self, prompt: str) -> str:
        self.calls += 1
        if callable(self._script):
            return self._script(prompt)
        if isinstance(self._script, dict):
            if prompt not in self._script:
                raise DataError("mock backend has no scripted response for this prompt")
            return self._script[prompt]
        if self._cursor >= len(self._script):
            raise DataError("mock backend script exhausted")
        response = self._script[self._cursor]
        self._cursor += 1
        return response


class HttpBackend:
    """Chat-completions style HTTP backend. The API credential is read from
    an environment variable, never from config files."""

    backend_id = "http"

    def __init__(self, endpoint: str, snapshot: str, api_key_env: str = "MTCONF_API_KEY",
                 timeout: float = 60.0):
        import os

        self.endpoint = endpoint
        self.snapshot = snapshot
        self.timeout = timeout
        self._api_key = os.environ.get(api_key_env, "")

    def send(self, prompt: str) -> str:
        import httpx

        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        response = httpx.post(
            self.endpoint,
            json={"model": self.snapshot, "messages": [{"role": "user", "content": prompt}]},
            headers=headers,
            timeout=self.timeout,
        )
        response.raise_for_status()
        payload = response.json()
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise DataError(f"unexpected annotator API payload: {str(payload)[:200]}") from None


# ---------------------------------------------------------------------------
# Cache + batch annotation
# ---------------------------------------------------------------------------

@dataclass
class AnnotationRecord:
    request_hash: str
    backend_id: str
    snapshot: str
    raw_response: str
    triples: list[MistranslationTriple] = field(default_factory=list)
    timestamp: float = 0.0
    parse_warning: str | None = None
    failed: bool = False
    error: str | None = None

    def to_json(self) -> str:
        payload = asdict(self)
        return json.dumps(payload, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "AnnotationRecord":
        payload = json.loads(line)
        payload["triples"] = [MistranslationTriple(**t) for t in payload.get("triples", [])]
        return cls(**payload)


class AnnotationCache:
    """Append-only JSONL store keyed by request hash.

    Refuses to open a corrupt file, naming the offending entry. Verifies
    cache coherence on load: re-parsing the stored raw response must give
    back the stored triples.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._records: dict[str, AnnotationRecord] = {}
        self._lock = Lock()
        if self.path.exists():
            for lineno, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), 1):
                if not line.strip():
                    continue
                try:
                    record = AnnotationRecord.from_json(line)
                except (json.JSONDecodeError, TypeError, KeyError, ValidationError) as exc:
                    raise DataError(f"{self.path}:{lineno}: corrupt cache entry ({exc})") from None
                if not record.failed:
                    reparsed, _ = parse_response_detailed(record.raw_response)
                    stored = [(t.source_word, t.candidate_word, t.reference_word) for t in record.triples]
                    fresh = [(t.source_word, t.candidate_word, t.reference_word) for t in reparsed]
                    if stored != fresh:
                        raise DataError(
                            f"{self.path}:{lineno}: cache incoherent, stored triples do not "
                            f"match re-parsed response for {record.request_hash}"
                        )
                self._records[record.request_hash] = record

    def __contains__(self, key: str) -> bool:
        return key in self._records and not self._records[key].failed

    def get(self, key: str) -> AnnotationRecord | None:
        return self._records.get(key)

    def put(self, record: AnnotationRecord) -> None:
        with self._lock:
            self._records[record.request_hash] = record
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(record.to_json() + "\n")
                f.flush()

    def __len__(self) -> int:
        return len(self._records)


def annotate(requests: list[AnnotationRequest], backend: AnnotatorBackend,
             cache: AnnotationCache, max_attempts: int = 3,
             backoff_base: float = 0.5) -> list[AnnotationRecord]:
    """Annotate every request, short-circuiting through the cache.

    Each result is persisted immediately, so an interrupted run resumes
    where it stopped. Backend failures are retried with exponential backoff
    and recorded as failed entries once attempts are exhausted.
    """
    records = []
    for request in requests:
        key = request_hash(request)
        if key in cache:
            records.append(cache.get(key))
            continue
        prompt = build_prompt(request)
        record = _call_with_retries(prompt, key, backend, max_attempts, backoff_base)
        cache.put(record)
        records.append(record)
    return records


def _call_with_retries(prompt: str, key: str, backend: AnnotatorBackend,
                       max_attempts: int, backoff_base: float) -> AnnotationRecord:
    last_error = None
    for attempt in range(max_attempts):
        try:
            raw = backend.send(prompt)
        except Exception as exc:
            last_error = exc
            if attempt + 1 < max_attempts:
                delay = backoff_base * (2 ** attempt) * (1 + 0.1 * random.random())
                logger.warning("annotator backend failed (attempt %d/%d): %s; retrying in %.1fs",
                               attempt + 1, max_attempts, exc, delay)
                time.sleep(delay)
            continue
        triples, warning = parse_response_detailed(raw)
        if warning:
            logger.warning("annotator parse (%s): %s", key[:12], warning)
        return AnnotationRecord(
            request_hash=key,
            backend_id=backend.backend_id,
            snapshot=backend.snapshot,
            raw_response=raw,
            triples=triples,
            timestamp=time.time(),
            parse_warning=warning,
        )
    return AnnotationRecord(
        request_hash=key,
        backend_id=backend.backend_id,
        snapshot=backend.snapshot,
        raw_response="",
        triples=[],
        timestamp=time.time(),
        failed=True,
        error=f"backend failed after {max_attempts} attempts: {last_error}",
    )
