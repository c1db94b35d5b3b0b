"""Controlled synthetic benchmark with planted translation failure modes.

Generates a toy parallel language in which every source word has a known
rendering (one or two target words), plus three planted hazards:

    ambiguous words   render to either of two targets with equal training
                      probability, so a model stays genuinely torn
    held-out words    never occur in training, mirroring rare words: the
                      model produces some rendering that cannot reliably
                      match the reference
    trap words        render normally, except when a trigger word appears in
                      the sentence, which flips the rendering; the trigger is
                      rare in training, so models underfit the rule and are
                      confidently wrong in triggered test sentences

References always use the true rendering rules. A scripted annotator backend
aligns the candidate against the reference (sequence matching over words,
tolerant of insertions and shifts) and labels exactly the source words whose
rendering was replaced or dropped. That gives an offline, deterministic
ground truth for comparing attribution methods under the same conditions
that make real confidence estimation hard: uncertain-but-right words and
confidently-wrong ones.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .annotator import ARROW, NO_ERRORS_SENTINEL, MockBackend
from .attribution import HardAlignment

_SRC_SYLLABLES = ["ba", "de", "ki", "lo", "mu", "na", "po", "ri", "su", "ta", "ve", "zo"]
_TGT_SYLLABLES = ["ag", "el", "im", "ok", "ur", "ath", "esh", "ith", "oth", "usk", "arn", "eld"]
MISSING_MARKER = "missing"


def _make_words(syllables, count, rng, length=(2, 3)):
    words = []
    seen = set()
    while len(words) < count:
        n = rng.integers(length[0], length[1] + 1)
        word = "".join(rng.choice(syllables) for _ in range(n))
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


@dataclass
class SyntheticBenchmark:
    train_pairs: list[tuple[str, str]]
    test_sources: list[str]
    test_references: list[str]
    rendering: dict[str, tuple[str, ...]]    # source word -> primary rendering
    alternatives: dict[str, tuple[str, ...]] # ambiguous/trap word -> flipped rendering
    synonyms: dict[str, tuple[str, ...]] = field(default_factory=dict)
    ambiguous_words: set[str] = field(default_factory=set)
    heldout_words: set[str] = field(default_factory=set)
    trap_words: set[str] = field(default_factory=set)
    trigger_word: str = ""

    def test_entries(self) -> list[dict]:
        return [
            {"source": s, "reference": r}
            for s, r in zip(self.test_sources, self.test_references)
        ]


def make_benchmark(n_train: int = 3000, n_test: int = 120, n_reliable: int = 30,
                   n_ambiguous: int = 4, n_heldout: int = 8, n_trap: int = 6,
                   fertile_fraction: float = 0.25,
                   sentence_len: tuple[int, int] = (7, 7),
                   test_mix: tuple[float, float, float] = (0.3, 0.15, 0.3),
                   trigger_train_rate: float = 0.1,
                   rendering_noise: float = 0.0,
                   swap_rate: float = 0.0,
                   seed: int = 0) -> SyntheticBenchmark:
    """Build corpus and test set.

    ``test_mix`` gives the fractions of test sentences containing one
    held-out word, one ambiguous word, or one trap word with its trigger;
    the remainder are fully reliable. ``fertile_fraction`` of reliable words
    render as two-word phrases so word alignment is not purely positional.
    ``rendering_noise`` gives every reliable word a rare synonym rendering in
    the training data, mimicking the natural variability of real parallel
    text so that model confidence on correct words is not saturated.
    """
    rng = np.random.default_rng(seed)
    n_source = n_reliable + n_ambiguous + n_heldout + n_trap
    source_words = _make_words(_SRC_SYLLABLES, n_source, rng)
    # Enough distinct target words for primary renderings, flips, phrase
    # second-halves, and synonyms.
    target_pool = _make_words(_TGT_SYLLABLES, 3 * n_source + n_reliable, rng)
    pool_iter = iter(target_pool)

    reliable = source_words[:n_reliable]
    ambiguous = source_words[n_reliable : n_reliable + n_ambiguous]
    heldout = source_words[n_reliable + n_ambiguous : n_reliable + n_ambiguous + n_heldout]
    traps = source_words[n_reliable + n_ambiguous + n_heldout :]
    trigger = reliable[0]  # plain reliable word doubling as the trap trigger

    rendering: dict[str, tuple[str, ...]] = {}
    for i, word in enumerate(source_words):
        primary = next(pool_iter)
        if word in reliable and word != trigger and rng.random() < fertile_fraction:
            rendering[word] = (primary, next(pool_iter))
        else:
            rendering[word] = (primary,)
    alternatives = {w: (next(pool_iter),) for w in list(ambiguous) + list(traps)}
    synonyms = {w: (next(pool_iter),) for w in source_words}

    noisy_words = set(reliable) - {trigger}

    def render_sentence(words: list[str], for_training: bool) -> str:
        has_trigger = trigger in words
        groups: list[list[str]] = []
        for w in words:
            if (for_training and rendering_noise and w in noisy_words
                    and rng.random() < rendering_noise):
                groups.append(list(synonyms[w]))
            elif w in alternatives:
                if w in ambiguous:
                    flip = for_training and rng.random() < 0.5
                else:  # trap word: rendering is a deterministic context rule
                    flip = has_trigger
                groups.append(list(alternatives[w] if flip else rendering[w]))
            else:
                groups.append(list(rendering[w]))
        if swap_rate:
            # Local reordering, as real language pairs show: adjacent
            # rendering groups swap, so target order is not a copy of source
            # order and attention cannot be purely positional.
            i = 0
            while i < len(groups) - 1:
                if rng.random() < swap_rate:
                    groups[i], groups[i + 1] = groups[i + 1], groups[i]
                    i += 2
                else:
                    i += 1
        return " ".join(w for g in groups for w in g)

    def sample_words(special: list[str] | None, with_trigger: bool = False,
                     distinct: bool = False, n_special: int = 1) -> list[str]:
        length = int(rng.integers(sentence_len[0], sentence_len[1] + 1))
        pool = [w for w in reliable if w != trigger]
        if distinct:
            # Distinct words keep annotation position resolution exact.
            picks = rng.choice(len(pool), size=length, replace=False)
        else:
            picks = rng.integers(0, len(pool), size=length)
        words = [pool[i] for i in picks]
        slots = list(rng.permutation(length))
        if special:
            chosen = rng.choice(len(special), size=min(n_special, len(special)), replace=False)
            for idx in chosen:
                words[slots.pop()] = special[int(idx)]
        if with_trigger:
            words[slots.pop()] = trigger
        return words

    train_pairs = []
    for _ in range(n_train):
        draw = rng.random()
        if draw < 0.3:
            words = sample_words(ambiguous)
        elif draw < 0.6:
            # Trap words are common in training, their trigger rarely is, so
            # the context rule stays underfit.
            words = sample_words(traps, with_trigger=rng.random() < trigger_train_rate)
        else:
            words = sample_words(None, with_trigger=rng.random() < trigger_train_rate)
        train_pairs.append((" ".join(words), render_sentence(words, for_training=True)))

    heldout_rate, ambiguous_rate, trap_rate = test_mix
    test_sources = []
    test_references = []
    for _ in range(n_test):
        draw = rng.random()
        if draw < heldout_rate:
            # Real sentences often carry several rare words at once.
            words = sample_words(heldout, distinct=True,
                                 n_special=1 + int(rng.random() < 0.5))
        elif draw < heldout_rate + ambiguous_rate:
            words = sample_words(ambiguous, distinct=True)
        elif draw < heldout_rate + ambiguous_rate + trap_rate:
            words = sample_words(traps, with_trigger=True, distinct=True)
        else:
            words = sample_words(None, distinct=True)
        test_sources.append(" ".join(words))
        test_references.append(render_sentence(words, for_training=False))

    return SyntheticBenchmark(
        train_pairs=train_pairs,
        test_sources=test_sources,
        test_references=test_references,
        rendering=rendering,
        alternatives=alternatives,
        synonyms=synonyms,
        ambiguous_words=set(ambiguous),
        heldout_words=set(heldout),
        trap_words=set(traps),
        trigger_word=trigger,
    )


_INPUT_FIELD_RE = {
    "source": re.compile(r"^Source Sentence: (.*)$", re.MULTILINE),
    "candidate": re.compile(r"^Candidate Translation: (.*)$", re.MULTILINE),
    "reference": re.compile(r"^Reference Translation: (.*)$", re.MULTILINE),
}


def _last_field(prompt: str, name: str) -> str:
    matches = _INPUT_FIELD_RE[name].findall(prompt)
    if not matches:
        raise ValueError(f"prompt has no {name} field")
    return matches[-1].strip()


def expected_rendering(benchmark: SyntheticBenchmark, src_words: list[str],
                       word: str) -> tuple[str, ...]:
    """Context-appropriate rendering of ``word`` inside this sentence."""
    if word in benchmark.trap_words and benchmark.trigger_word in src_words:
        return benchmark.alternatives[word]
    return benchmark.rendering.get(word, (word,))


def acceptable_forms(benchmark: SyntheticBenchmark, src_words: list[str],
                     word: str) -> tuple[tuple[str, ...], ...]:
    """Renderings an annotator would accept: the context-appropriate one,
    plus the word's synonym for reliable words (near-synonyms are explicitly
    not errors)."""
    forms = [expected_rendering(benchmark, src_words, word)]
    special = benchmark.ambiguous_words | benchmark.heldout_words | benchmark.trap_words
    if word not in special and word in benchmark.synonyms:
        forms.append(benchmark.synonyms[word])
    return tuple(forms)


def planted_mistranslations(benchmark: SyntheticBenchmark, source: str,
                            candidate: str, reference: str) -> list[tuple[str, str, str]]:
    """Triples for every source word whose expected rendering was replaced by
    some other word in the candidate.

    Membership is checked as a multiset, so renderings that merely shifted
    position still count as correct. A rendering that is missing with no
    replacement word left over is an omission, not a mistranslation; the
    triple task reports words that were translated wrongly, and an omission
    has no candidate word to report.
    """
    src_words = source.split()
    cand_words = candidate.split()
    available = Counter(cand_words)

    def try_consume(form: tuple[str, ...]) -> bool:
        if all(available[part] > 0 for part in Counter(form)):
            needed = Counter(form)
            if all(available[p] >= c for p, c in needed.items()):
                for p, c in needed.items():
                    available[p] -= c
                return True
        return False

    failures = []
    for i, w in enumerate(src_words):
        forms = acceptable_forms(benchmark, src_words, w)
        if not any(try_consume(form) for form in forms):
            failures.append((w, forms[0][0]))
    stray = [w for w, c in available.items() for _ in range(c)]

    triples = []
    for w, expected in failures:
        if stray:
            triples.append((w, stray.pop(0), expected))
    return triples


def gold_alignments(benchmark: SyntheticBenchmark, sentences) -> list[HardAlignment]:
    """Source-to-candidate alignments from the true lexicon.

    Each candidate word is aligned to the leftmost source word whose
    context-appropriate rendering (primary or flipped) contains it and has
    capacity left; unmatched words on either side stay unaligned. This is
    what a perfect statistical aligner would recover, including fertility-2
    renderings.
    """
    alignments = []
    for s in sentences:
        src_words = list(s.source.surface_words)
        cand_words = list(s.candidate.surface_words)
        capacity = []
        for w in src_words:
            forms = set(expected_rendering(benchmark, src_words, w))
            forms.update(benchmark.rendering.get(w, ()))
            if w in benchmark.alternatives:
                forms.update(benchmark.alternatives[w])
            if w in benchmark.synonyms:
                forms.update(benchmark.synonyms[w])
            capacity.append([forms, len(benchmark.rendering.get(w, (w,)))])
        pairs = set()
        matched_j = set()
        for j, cw in enumerate(cand_words):
            for i, (forms, left) in enumerate(capacity):
                if left > 0 and cw in forms:
                    pairs.add((i, j))
                    matched_j.add(j)
                    capacity[i][1] -= 1
                    break
        # Statistical aligners link leftover words by position; mirror that,
        # since a mistranslated word must align to its wrong rendering for
        # projection to see it at all.
        leftover_src = [i for i, (_, left) in enumerate(capacity) if left > 0]
        leftover_cand = [j for j in range(len(cand_words)) if j not in matched_j]
        for i, j in zip(leftover_src, leftover_cand):
            pairs.add((i, j))
        alignments.append(HardAlignment(pairs=frozenset(pairs),
                                        source_len=len(src_words),
                                        target_len=len(cand_words)))
    return alignments


def scripted_annotator(benchmark: SyntheticBenchmark) -> MockBackend:
    """Backend that labels exactly the planted mistranslations.

    It reads the request's input block from the prompt, so it exercises the
    real prompt/parse round trip.
    """

    def respond(prompt: str) -> str:
        source = _last_field(prompt, "source")
        candidate = _last_field(prompt, "candidate")
        reference = _last_field(prompt, "reference")
        triples = planted_mistranslations(benchmark, source, candidate, reference)
        if not triples:
            return NO_ERRORS_SENTINEL
        lines = [f"{s} {ARROW} {c} {ARROW} {r}" for s, c, r in triples]
        return "\n".join(lines)

    return MockBackend(respond, snapshot="synthetic-oracle")
