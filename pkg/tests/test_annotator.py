import pytest

from mtconf import train_subwords
from mtconf.annotator import (
    ARROW,
    NO_ERRORS_SENTINEL,
    TRIPLE_FORMAT_LINE,
    AnnotationCache,
    AnnotationRecord,
    AnnotationRequest,
    MistranslationTriple,
    MockBackend,
    annotate,
    build_prompt,
    parse_response,
    parse_response_detailed,
    request_hash,
    resolve_to_source,
)
from mtconf.errors import DataError, ValidationError

SHARK_SOURCE = ("Greenland sharks swim leisurely along the sea floor of the North "
                "Atlantic, covering an average of 1,220 metres in an hour.")
SHARK_CANDIDATE = ("Grönland schwimmt rasch entlang des Meeresbodens des "
                   "Nordatlantiks und umfasst durchschnittlich 1 220 m pro Stunde.")
SHARK_REFERENCE = ("Gemächlich schwimmt der Grönlandhai am Grund des "
                   "Nordatlantiks entlang, in einer Stunde kommt er im Durchschnitt "
                   "gerade 1.220 Meter weit.")
SHARK_RESPONSE = f"""Output:

Greenland sharks {ARROW} Grönland {ARROW} Grönlandhai

leisurely {ARROW} rasch {ARROW} Gemächlich

Explanation:
"Grönland" (Greenland) is incorrectly used for "Greenland sharks", which should be
"Grönlandhai". Similarly, "rasch" (quickly) is a mistranslation of "leisurely".
"""


@pytest.fixture()
def request_obj():
    return AnnotationRequest(
        source_lang="English", target_lang="German",
        source=SHARK_SOURCE, candidate=SHARK_CANDIDATE, reference=SHARK_REFERENCE,
    )


def test_prompt_contains_format_contract(request_obj):
    prompt = build_prompt(request_obj)
    assert TRIPLE_FORMAT_LINE in prompt
    assert NO_ERRORS_SENTINEL in prompt
    assert "Identify and list all single-word translation errors" in prompt
    for instruction in ("1. Identify Mistranslations:", "2. Focus on Single-Word Errors:",
                        "3. Prioritize Meaningful Errors:", "4. Ensure Contextual Accuracy:",
                        "5. Handle Ambiguity Carefully:"):
        assert instruction in prompt
    assert "Strict Adherence Required:" in prompt
    assert f"groundbreaking {ARROW} einfache {ARROW} bahnbrechende" in prompt
    assert prompt.index("Example 1:") < prompt.index(f"Source Sentence: {SHARK_SOURCE}")


def test_prompt_deterministic(request_obj):
    assert build_prompt(request_obj) == build_prompt(request_obj)


def test_request_validation():
    with pytest.raises(ValidationError, match="candidate"):
        AnnotationRequest("English", "German", "source text", "  ", "reference text")


def test_parse_shark_response():
    triples = parse_response(SHARK_RESPONSE)
    assert [(t.source_word, t.candidate_word, t.reference_word) for t in triples] == [
        ("Greenland sharks", "Grönland", "Grönlandhai"),
        ("leisurely", "rasch", "Gemächlich"),
    ]
    assert all("mistranslation" in t.explanation for t in triples)


def test_parse_sentinel_yields_empty():
    triples, warning = parse_response_detailed("No translation errors detected.")
    assert triples == [] and warning is None


def test_parse_single_triple_ascii_arrow():
    triples = parse_response("groundbreaking -> einfache -> bahnbrechende")
    assert len(triples) == 1
    assert triples[0].source_word == "groundbreaking"


def test_parse_garbage_fail_open():
    triples, warning = parse_response_detailed("I could not process this request.")
    assert triples == []
    assert warning is not None


def test_parse_skips_echoed_template():
    text = f"(source word {ARROW} candidate word {ARROW} reference word)\nfoo {ARROW} bar {ARROW} baz"
    triples = parse_response(text)
    assert [(t.source_word, t.candidate_word, t.reference_word) for t in triples] == [
        ("foo", "bar", "baz")
    ]


def test_parse_round_trip_idempotent():
    triples = parse_response(SHARK_RESPONSE)
    rendered = "\n".join(t.format_line() for t in triples)
    again = parse_response(rendered)
    assert [(t.source_word, t.candidate_word, t.reference_word) for t in again] == [
        (t.source_word, t.candidate_word, t.reference_word) for t in triples
    ]


@pytest.fixture(scope="module")
def subwords():
    return train_subwords([SHARK_SOURCE.lower(), SHARK_SOURCE, "the cat sat on the mat"], 300)


def test_resolve_multi_word_head(subwords):
    sentence = subwords.tokenize(SHARK_SOURCE)
    triples = parse_response(SHARK_RESPONSE)
    resolved = resolve_to_source(triples, sentence)
    words = sentence.surface_words
    assert resolved[0].resolved_source_index == list(words).index("sharks")
    assert resolved[1].resolved_source_index == list(words).index("leisurely")


def test_resolve_case_and_punctuation_insensitive(subwords):
    sentence = subwords.tokenize("The cat sat, on the mat.")
    triples = [MistranslationTriple("MAT", "x", "y"), MistranslationTriple("cat,", "x", "y")]
    resolved = resolve_to_source(triples, sentence)
    assert resolved[0].resolved_source_index == 5
    assert resolved[1].resolved_source_index == 1


def test_resolve_unmatched_flagged(subwords):
    sentence = subwords.tokenize("the cat sat")
    resolved = resolve_to_source([MistranslationTriple("zebra", "x", "y")], sentence)
    assert resolved[0].resolved_source_index is None


def test_resolve_repeated_forms_consumed_left_to_right(subwords):
    sentence = subwords.tokenize("the cat sat on the mat")
    triples = [MistranslationTriple("the", "a", "b"), MistranslationTriple("the", "c", "d")]
    resolved = resolve_to_source(triples, sentence)
    assert resolved[0].resolved_source_index == 0
    assert resolved[1].resolved_source_index == 4


def test_resolve_never_reuses_indices(subwords):
    sentence = subwords.tokenize("cat cat cat")
    triples = [MistranslationTriple("cat", "x", "y") for _ in range(4)]
    resolved = resolve_to_source(triples, sentence)
    indices = [t.resolved_source_index for t in resolved]
    assert indices == [0, 1, 2, None]


# -- cache + batch annotation -------------------------------------------------

def _requests(n):
    return [
        AnnotationRequest("English", "German", f"source sentence {i}",
                          f"candidate {i}", f"reference {i}")
        for i in range(n)
    ]


def test_annotate_caches_and_short_circuits(tmp_path):
    cache_path = tmp_path / "cache.jsonl"
    requests = _requests(3)
    backend = MockBackend(lambda prompt: NO_ERRORS_SENTINEL)
    records = annotate(requests, backend, AnnotationCache(cache_path))
    assert backend.calls == 3
    assert all(r.triples == [] for r in records)

    backend2 = MockBackend(lambda prompt: NO_ERRORS_SENTINEL)
    records2 = annotate(requests, backend2, AnnotationCache(cache_path))
    assert backend2.calls == 0  # warm cache, zero backend calls
    assert [r.request_hash for r in records2] == [r.request_hash for r in records]


def test_annotate_parses_scripted_triples(tmp_path):
    requests = _requests(1)
    backend = MockBackend([SHARK_RESPONSE])
    (record,) = annotate(requests, backend, AnnotationCache(tmp_path / "c.jsonl"))
    assert len(record.triples) == 2
    assert record.parse_warning is None


def test_annotate_garbage_fail_open(tmp_path):
    backend = MockBackend(["complete nonsense"])
    (record,) = annotate(_requests(1), backend, AnnotationCache(tmp_path / "c.jsonl"))
    assert record.triples == []
    assert record.parse_warning is not None
    assert not record.failed


def test_annotate_retries_then_records_failure(tmp_path):
    calls = []

    def flaky(prompt):
        calls.append(1)
        raise RuntimeError("backend down")

    backend = MockBackend(flaky)
    (record,) = annotate(_requests(1), backend, AnnotationCache(tmp_path / "c.jsonl"),
                         max_attempts=3, backoff_base=0.001)
    assert len(calls) == 3
    assert record.failed and "backend down" in record.error

    # failed records are retried on the next run rather than reused
    ok_backend = MockBackend([NO_ERRORS_SENTINEL])
    (retry,) = annotate(_requests(1), ok_backend, AnnotationCache(tmp_path / "c.jsonl"),
                        max_attempts=1)
    assert not retry.failed


def test_annotate_recovers_after_transient_failure(tmp_path):
    attempts = []

    def flaky(prompt):
        attempts.append(1)
        if len(attempts) < 3:
            raise RuntimeError("blip")
        return NO_ERRORS_SENTINEL

    (record,) = annotate(_requests(1), MockBackend(flaky),
                         AnnotationCache(tmp_path / "c.jsonl"), backoff_base=0.001)
    assert not record.failed
    assert len(attempts) == 3


def test_cache_rejects_corrupt_line(tmp_path):
    path = tmp_path / "cache.jsonl"
    path.write_text('{"request_hash": "x"\n')
    with pytest.raises(DataError, match="cache.jsonl:1"):
        AnnotationCache(path)


def test_cache_rejects_incoherent_triples(tmp_path):
    record = AnnotationRecord(
        request_hash="abc", backend_id="mock", snapshot="s",
        raw_response=NO_ERRORS_SENTINEL,
        triples=[MistranslationTriple("a", "b", "c")],
    )
    path = tmp_path / "cache.jsonl"
    path.write_text(record.to_json() + "\n")
    with pytest.raises(DataError, match="incoherent"):
        AnnotationCache(path)


def test_request_hash_stability():
    r = _requests(1)[0]
    assert request_hash(r) == request_hash(_requests(1)[0])
    other = AnnotationRequest("English", "German", "source sentence 0",
                              "different candidate", "reference 0")
    assert request_hash(r) != request_hash(other)


def test_record_json_round_trip():
    record = AnnotationRecord(
        request_hash="h", backend_id="mock", snapshot="tag",
        raw_response=SHARK_RESPONSE, triples=parse_response(SHARK_RESPONSE),
        timestamp=123.0,
    )
    again = AnnotationRecord.from_json(record.to_json())
    assert again.request_hash == record.request_hash
    assert [(t.source_word, t.reference_word) for t in again.triples] == [
        (t.source_word, t.reference_word) for t in record.triples
    ]
