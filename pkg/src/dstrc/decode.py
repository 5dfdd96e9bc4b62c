"""Turn raw reader logits into slot values.

Span decoding maximizes start_logit[i] + end_logit[j] over pairs with
1 <= i <= j <= i + max_span_len - 1 and compares the winner against the
sentinel pair (0, 0); the sentinel wins ties (plus an optional margin
tau), which encodes "not mentioned". Choice decoding is a plain argmax
with the two reserved options mapped back to unset / "no preference".
Canonicalization snaps off-ontology span text onto the closest candidate
value by contiguous-matching-block similarity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from difflib import SequenceMatcher

from .core import KIND_NONE, KIND_VALUE, SlotName, SlotValue
from .corpus import Ontology
from .examples import CHOICE_DONTCARE, CHOICE_NOT_MENTIONED, SerializedContext
from .readers import ChoiceScores, SpanScores

DEFAULT_MAX_SPAN_LEN = 10
DEFAULT_NULL_THRESHOLD = 0.0
DEFAULT_SIMILARITY_CUTOFF = 0.6

# Normalized phrases that signal "no preference" in a user utterance.
# Used only by the span-side DontCare rule below.
DONTCARE_PHRASES = (
    "do not care",
    "dont care",
    "don ' t care",
    "do n ' t care",
    "no preference",
    "does not matter",
    "doesn ' t matter",
)


class UnknownSlotInOntology(KeyError):
    pass


@dataclass(frozen=True, slots=True)
class DecodeConfig:
    max_span_len: int = DEFAULT_MAX_SPAN_LEN
    null_threshold: float = DEFAULT_NULL_THRESHOLD
    canonicalize: bool = True
    similarity_cutoff: float = DEFAULT_SIMILARITY_CUTOFF

    def __post_init__(self):
        if self.max_span_len < 1:
            raise ValueError("max_span_len must be >= 1")
        if not (0.0 <= self.similarity_cutoff <= 1.0):
            raise ValueError("similarity_cutoff must be within [0, 1]")

    def as_dict(self) -> dict:
        return {
            "max_span_len": self.max_span_len,
            "null_threshold": self.null_threshold,
            "canonicalize": self.canonicalize,
            "similarity_cutoff": self.similarity_cutoff,
        }


@dataclass(frozen=True, slots=True)
class SlotPrediction:
    slot: SlotName
    value: SlotValue
    score: float
    # (start, end, span text) when the value came out of span decoding
    # with a non-sentinel span; None otherwise.
    evidence: tuple[int, int, str] | None = None


def softmax(logits) -> list[float]:
    """Max-shifted so large logits cannot overflow."""
    if not logits:
        return []
    peak = max(logits)
    exps = [math.exp(v - peak) for v in logits]
    total = sum(exps)
    return [v / total for v in exps]


def decode_span(
    scores: SpanScores, context: SerializedContext | None, config: DecodeConfig = DecodeConfig()
) -> tuple[str, int, int, float]:
    """Best constrained span vs. the sentinel.

    Returns (kind, start, end, score) where kind is "none" or "value";
    (start, end) is (0, 0) for none. The score is the product of the
    softmax start/end probabilities of the chosen pair, so it is
    invariant to shifting all logits by a constant. Decoding only needs
    the context for a length cross-check, so None skips it.
    """
    start_logits, end_logits = scores.start_logits, scores.end_logits
    n = len(start_logits)
    if n != len(end_logits) or (context is not None and n != len(context.tokens)):
        raise ValueError("score vectors do not match the context")
    best_sum = -math.inf
    best_pair: tuple[int, int] | None = None
    for i in range(1, n):
        s = start_logits[i]
        j_stop = min(i + config.max_span_len, n)
        for j in range(i, j_stop):
            total = s + end_logits[j]
            if total > best_sum:
                best_sum = total
                best_pair = (i, j)
    null_sum = start_logits[0] + end_logits[0]
    p_start = softmax(start_logits)
    p_end = softmax(end_logits)
    if best_pair is None or null_sum + config.null_threshold >= best_sum:
        return KIND_NONE, 0, 0, p_start[0] * p_end[0]
    i, j = best_pair
    return KIND_VALUE, i, j, p_start[i] * p_end[j]


def decode_choice(scores: ChoiceScores, options) -> tuple[SlotValue, float]:
    """Argmax option (ties go to the lowest index), with the reserved
    options mapped to their value kinds. Score is the softmax
    probability of the chosen option."""
    options = tuple(options)
    logits = scores.option_logits
    if len(logits) != len(options):
        raise ValueError(f"{len(logits)} logits for {len(options)} options")
    best = 0
    for k in range(1, len(logits)):
        if logits[k] > logits[best]:
            best = k
    probability = softmax(logits)[best]
    option = options[best]
    if option == CHOICE_NOT_MENTIONED:
        return SlotValue.none(), probability
    if option == CHOICE_DONTCARE:
        return SlotValue.dontcare(), probability
    return SlotValue.of(option), probability


def similarity(candidate: str, text: str) -> float:
    """2M / (len(candidate) + len(text)) with M the total size of the
    longest contiguous matching blocks. Character-level on normalized
    text."""
    return SequenceMatcher(None, candidate, text).ratio()


def canonicalize(
    span_text: str,
    slot: SlotName,
    ontology: Ontology,
    config: DecodeConfig = DecodeConfig(),
) -> str:
    """Snap span text onto the slot's candidate list.

    Alias hits return the canonical candidate; otherwise the candidate
    with the highest similarity ratio wins, with ties going to the
    candidate listed earlier in the ontology. Below-cutoff best matches
    leave the text unchanged. Idempotent: output is either a candidate
    (fixed by the membership fast path) or the unchanged input.
    """
    if slot not in ontology.values:
        raise UnknownSlotInOntology(str(slot))
    candidates = ontology.values[slot]
    aliased = ontology.alias(span_text)
    if aliased in candidates:
        return aliased
    best_ratio = 0.0
    best_candidate: str | None = None
    matcher = SequenceMatcher(None)
    matcher.set_seq2(span_text)
    for candidate in candidates:
        matcher.set_seq1(candidate)
        # cheap length-based bounds first; both overestimate ratio()
        if matcher.real_quick_ratio() <= best_ratio or matcher.quick_ratio() <= best_ratio:
            continue
        ratio = matcher.ratio()
        if ratio > best_ratio:
            best_ratio = ratio
            best_candidate = candidate
    if best_candidate is not None and best_ratio >= config.similarity_cutoff:
        return best_candidate
    return span_text


def _span_in_user_utterance(
    context: SerializedContext, start: int, end: int
) -> tuple[int, int] | None:
    """User-utterance token range containing [start, end], if any."""
    for bounds in context.turn_boundaries.values():
        if bounds.user_start <= start and end <= bounds.user_end:
            return bounds.user_start, bounds.user_end
    return None


def _contains_phrase(texts, lo: int, hi: int, phrase_words) -> bool:
    m = len(phrase_words)
    for i in range(lo, hi - m + 2):
        if list(texts[i : i + m]) == phrase_words:
            return True
    return False


def resolve_span_prediction(
    slot: SlotName,
    kind: str,
    start: int,
    end: int,
    score: float,
    context: SerializedContext,
    ontology: Ontology,
    config: DecodeConfig = DecodeConfig(),
) -> SlotPrediction:
    """Map a decoded span to a slot value.

    A non-null span normally yields its (canonicalized) text. One
    exception: training labels "no preference" as a span over the whole
    user utterance that said so, and such spans cannot canonicalize onto
    the ontology; so a span that sits inside a user utterance, fails
    canonicalization, and whose utterance contains a no-preference
    phrase resolves to DontCare instead of junk text.
    """
    if kind == KIND_NONE:
        return SlotPrediction(slot=slot, value=SlotValue.none(), score=score)
    span_text = " ".join(context.texts[start : end + 1])
    candidates = ontology.values.get(slot)
    if candidates is None:
        raise UnknownSlotInOntology(str(slot))
    if config.canonicalize:
        resolved = canonicalize(span_text, slot, ontology, config)
        failed = resolved not in candidates
    else:
        resolved = span_text
        failed = ontology.alias(span_text) not in candidates
    evidence = (start, end, span_text)
    if failed:
        bounds = _span_in_user_utterance(context, start, end)
        if bounds is not None:
            texts = context.texts
            for phrase in DONTCARE_PHRASES:
                if _contains_phrase(texts, bounds[0], bounds[1], phrase.split()):
                    return SlotPrediction(
                        slot=slot, value=SlotValue.dontcare(), score=score, evidence=evidence
                    )
    value = SlotValue.of(resolved)
    if value.kind == KIND_NONE:
        # Degenerate span text ("none" etc.) collapses to unset.
        return SlotPrediction(slot=slot, value=value, score=score)
    return SlotPrediction(slot=slot, value=value, score=score, evidence=evidence)
