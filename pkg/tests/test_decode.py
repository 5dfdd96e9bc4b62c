from __future__ import annotations

import math

import pytest
from hypothesis import given, settings, strategies as st

from dstrc.core import KIND_DONTCARE, KIND_NONE, KIND_VALUE, SlotName, SlotValue
from dstrc.corpus import corpus_from_records, ontology_from_values
from dstrc.decode import (
    DEFAULT_MAX_SPAN_LEN,
    DEFAULT_NULL_THRESHOLD,
    DEFAULT_SIMILARITY_CUTOFF,
    DONTCARE_PHRASES,
    DecodeConfig,
    UnknownSlotInOntology,
    canonicalize,
    decode_choice,
    decode_span,
    resolve_span_prediction,
    similarity,
    softmax,
)
from dstrc.examples import serialize_context
from dstrc.readers import ChoiceScores, SpanScores
from dstrc.rng import SplitMix64


def brute_force_decode(start, end, max_span_len, null_threshold):
    """Reference decoder: enumerate every admissible span explicitly."""
    n = len(start)
    best = None
    best_sum = -math.inf
    for i in range(1, n):
        for j in range(i, min(i + max_span_len - 1, n - 1) + 1):
            if start[i] + end[j] > best_sum:
                best_sum = start[i] + end[j]
                best = (i, j)
    if best is None or start[0] + end[0] + null_threshold >= best_sum:
        return None
    return best


def _decode(start, end, config):
    kind, s, e, score = decode_span(SpanScores(tuple(start), tuple(end)), None, config)
    if kind == KIND_NONE:
        return None
    return (s, e)


@settings(max_examples=300, deadline=None)
@given(
    st.integers(min_value=2, max_value=12).flatmap(
        lambda n: st.tuples(
            st.lists(st.floats(-8, 8, allow_nan=False), min_size=n, max_size=n),
            st.lists(st.floats(-8, 8, allow_nan=False), min_size=n, max_size=n),
        )
    ),
    st.integers(min_value=1, max_value=12),
    st.floats(min_value=-4, max_value=4),
)
def test_decode_matches_brute_force(logits, max_span_len, null_threshold):
    start, end = logits
    config = DecodeConfig(max_span_len=max_span_len, null_threshold=null_threshold)
    assert _decode(start, end, config) == brute_force_decode(
        start, end, max_span_len, null_threshold
    )


def test_decode_prefers_earlier_span_on_ties():
    # two spans with identical sums: (1,1) and (3,3)
    start = [0.0, 2.0, 0.0, 2.0]
    end = [0.0, 1.0, 0.0, 1.0]
    assert _decode(start, end, DecodeConfig()) == (1, 1)


def test_decode_null_wins_exact_tie():
    # null sum equals best span sum; threshold 0 keeps None
    start = [1.0, 1.0, 0.0]
    end = [1.0, 1.0, 0.0]
    assert _decode(start, end, DecodeConfig()) is None
    # a negative threshold hands the tie to the span
    assert _decode(start, end, DecodeConfig(null_threshold=-0.5)) == (1, 1)


def test_decode_window_limits_span_length():
    start = [0.0, 5.0, 0.0, 0.0, 0.0]
    end = [0.0, 0.0, 0.0, 0.0, 5.0]
    assert _decode(start, end, DecodeConfig(max_span_len=10)) == (1, 4)
    # with a window of 2 the (1,4) pair is inadmissible
    assert _decode(start, end, DecodeConfig(max_span_len=2)) != (1, 4)


def test_decode_score_is_probability_product():
    start = [0.0, 3.0, 0.0]
    end = [0.0, 3.0, 0.0]
    kind, s, e, score = decode_span(SpanScores(tuple(start), tuple(end)), None, DecodeConfig())
    assert kind == KIND_VALUE
    p = softmax(start)[1] * softmax(end)[1]
    assert score == pytest.approx(p)


# Dyadic-rational logits and shift: every sum below is exact in binary
# floating point, so exact ties survive the shift. Arbitrary floats do
# not have that property (a subnormal shift can flip a tie by rounding),
# which is a fact about addition, not about the decoder.
_eighths = st.integers(min_value=-48, max_value=48).map(lambda k: k / 8)


@settings(max_examples=200, deadline=None)
@given(
    st.integers(min_value=2, max_value=10).flatmap(
        lambda n: st.tuples(
            st.lists(_eighths, min_size=n, max_size=n),
            st.lists(_eighths, min_size=n, max_size=n),
        )
    ),
    st.integers(min_value=-160, max_value=160).map(lambda k: k / 8),
)
def test_decode_is_shift_invariant(logits, shift):
    start, end = logits
    config = DecodeConfig()
    base = decode_span(SpanScores(tuple(start), tuple(end)), None, config)
    moved = decode_span(
        SpanScores(tuple(x + shift for x in start), tuple(x + shift for x in end)),
        None,
        config,
    )
    assert base[:3] == moved[:3]
    assert base[3] == pytest.approx(moved[3], rel=1e-9, abs=1e-12)


def test_decode_config_validation():
    with pytest.raises(ValueError):
        DecodeConfig(max_span_len=0)
    with pytest.raises(ValueError):
        DecodeConfig(similarity_cutoff=-0.1)
    with pytest.raises(ValueError):
        DecodeConfig(similarity_cutoff=1.5)
    assert DecodeConfig().as_dict() == {
        "max_span_len": DEFAULT_MAX_SPAN_LEN,
        "null_threshold": DEFAULT_NULL_THRESHOLD,
        "canonicalize": True,
        "similarity_cutoff": DEFAULT_SIMILARITY_CUTOFF,
    }


def test_softmax_normalizes_and_handles_large_inputs():
    probs = softmax([1000.0, 1000.0, 999.0])
    assert sum(probs) == pytest.approx(1.0)
    assert probs[0] == pytest.approx(probs[1])


def test_decode_choice_argmax_and_reserved_mapping():
    options = ("cheap", "moderate", "do not care", "not mentioned")
    value, prob = decode_choice(ChoiceScores((0.0, 3.0, 0.0, 0.0)), options)
    assert value.kind == KIND_VALUE and value.text == "moderate"
    assert prob == pytest.approx(softmax([0.0, 3.0, 0.0, 0.0])[1])
    value, _ = decode_choice(ChoiceScores((0.0, 0.0, 5.0, 0.0)), options)
    assert value.kind == KIND_DONTCARE
    value, _ = decode_choice(ChoiceScores((0.0, 0.0, 0.0, 5.0)), options)
    assert value.kind == KIND_NONE
    # exact tie keeps the lowest index
    value, _ = decode_choice(ChoiceScores((2.0, 2.0, 0.0, 0.0)), options)
    assert value.text == "cheap"


# --- canonicalization -----------------------------------------------------------

_TAXI_DEP = SlotName.parse("taxi.semi.departure")


def test_canonicalize_fuzzy_anchor(ontology):
    config = DecodeConfig()
    assert canonicalize("the hong house", _TAXI_DEP, ontology, config) == "lan hong house"
    # below the cutoff the span stays as is
    strict = DecodeConfig(similarity_cutoff=0.8)
    assert canonicalize("the hong house", _TAXI_DEP, ontology, strict) == "the hong house"


def test_canonicalize_identity_and_alias(ontology):
    config = DecodeConfig()
    area = SlotName.parse("hotel.semi.area")
    for candidate in ontology.candidates(area):
        assert canonicalize(candidate, area, ontology, config) == candidate
    # alias fast path resolves without fuzzy matching
    assert canonicalize("center", area, ontology, config) == "centre"
    ptype = SlotName.parse("hotel.semi.type")
    assert canonicalize("guesthouse", ptype, ontology, config) == "guest house"


def test_canonicalize_unknown_slot(ontology):
    with pytest.raises(UnknownSlotInOntology):
        canonicalize("x", SlotName.parse("spa.semi.area"), ontology, DecodeConfig())


def test_canonicalize_prefers_earlier_candidate_on_ratio_ties():
    ontology = ontology_from_values({"hotel.semi.area": ["abcd", "abce", "zbcd"]})
    slot = SlotName.parse("hotel.semi.area")
    # "abcz" ties abcd/abce at ratio 0.75 ("zbcd" only reaches 0.5);
    # the earlier ontology entry wins
    assert similarity("abcd", "abcz") == similarity("abce", "abcz") == 0.75
    assert canonicalize("abcz", slot, ontology, DecodeConfig()) == "abcd"


def test_canonicalize_is_idempotent_on_random_spans(ontology):
    gen = SplitMix64(97)
    slots = sorted(ontology.values, key=str)
    vocabulary = "abcdefghijklmnopqrstuvwxyz 0123456789:"
    config = DecodeConfig()
    for _ in range(250):
        slot = slots[gen.below(len(slots))]
        length = 1 + gen.below(18)
        span = "".join(vocabulary[gen.below(len(vocabulary))] for _ in range(length)).strip()
        if not span:
            continue
        once = canonicalize(span, slot, ontology, config)
        assert canonicalize(once, slot, ontology, config) == once


# --- span resolution ------------------------------------------------------------


def _context_and_ontology(user_texts, agent_texts=None):
    agent_texts = agent_texts or [None] * len(user_texts)
    turns = [
        {"user": u, "agent": a, "state": {}}
        for u, a in zip(user_texts, agent_texts)
    ]
    values = {
        "restaurant.semi.pricerange": ["cheap", "moderate"],
        "restaurant.semi.food": ["thai", "italian"],
    }
    corpus = corpus_from_records(
        [{"id": "d1", "domains": ["restaurant"], "turns": turns}],
        ontology_from_values(values),
    )
    context = serialize_context(corpus.dialogues[0], len(user_texts))
    return context, corpus.ontology


def _resolve(slot, kind, start, end, context, ontology, config=None):
    return resolve_span_prediction(
        slot, kind, start, end, 0.9, context, ontology, config or DecodeConfig()
    )


def test_resolve_passes_canonical_value_through():
    context, ontology = _context_and_ontology(["i want something cheap"])
    slot = SlotName.parse("restaurant.semi.pricerange")
    prediction = _resolve(slot, KIND_VALUE, 4, 4, context, ontology)
    assert prediction.value.kind == KIND_VALUE
    assert prediction.value.text == "cheap"
    assert prediction.evidence == (4, 4, "cheap")


def test_resolve_fuzzy_canonicalizes_near_miss():
    context, ontology = _context_and_ontology(["i want it cheaper"])
    slot = SlotName.parse("restaurant.semi.pricerange")
    prediction = _resolve(slot, KIND_VALUE, 4, 4, context, ontology)
    # "cheaper" ~ "cheap" at ratio 10/12 >= 0.6
    assert prediction.value.text == "cheap"


def test_resolve_dontcare_requires_all_three_conditions():
    phrase_text = f"i {DONTCARE_PHRASES[0]} about the price"
    slot = SlotName.parse("restaurant.semi.pricerange")

    # hedge phrase + user turn + failed canonicalization: dontcare
    context, ontology = _context_and_ontology([phrase_text])
    bounds = context.turn_boundaries[1]
    prediction = _resolve(slot, KIND_VALUE, bounds.user_start, bounds.user_end, context, ontology)
    assert prediction.value.kind == KIND_DONTCARE

    # same span text inside an agent turn: plain unresolved value
    context2, ontology2 = _context_and_ontology(
        ["hello there you", "yes"], [phrase_text, None]
    )
    bounds2 = context2.turn_boundaries[1]
    prediction2 = _resolve(
        slot, KIND_VALUE, bounds2.agent_start, bounds2.agent_end, context2, ontology2
    )
    assert prediction2.value.kind == KIND_VALUE

    # user turn without a hedge phrase: plain unresolved value
    context3, ontology3 = _context_and_ontology(["i want the special menu"])
    b3 = context3.turn_boundaries[1]
    prediction3 = _resolve(slot, KIND_VALUE, b3.user_start, b3.user_end, context3, ontology3)
    assert prediction3.value.kind == KIND_VALUE

    # canonicalization succeeding blocks the dontcare reading
    context4, ontology4 = _context_and_ontology(["i do not care , cheap"])
    prediction4 = _resolve(slot, KIND_VALUE, 6, 6, context4, ontology4)
    assert prediction4.value.kind == KIND_VALUE
    assert prediction4.value.text == "cheap"


def test_resolve_dontcare_with_canonicalization_disabled():
    phrase_text = f"i {DONTCARE_PHRASES[1]} about food"
    slot = SlotName.parse("restaurant.semi.food")
    context, ontology = _context_and_ontology([phrase_text])
    bounds = context.turn_boundaries[1]
    config = DecodeConfig(canonicalize=False)
    prediction = _resolve(
        slot, KIND_VALUE, bounds.user_start, bounds.user_end, context, ontology, config
    )
    assert prediction.value.kind == KIND_DONTCARE
    # with canonicalization off, an exact candidate span stays a value
    context2, ontology2 = _context_and_ontology(["thai food but i have no preference really"])
    prediction2 = _resolve(slot, KIND_VALUE, 1, 1, context2, ontology2, config)
    assert prediction2.value.kind == KIND_VALUE and prediction2.value.text == "thai"


def test_resolve_none_kind():
    context, ontology = _context_and_ontology(["anything works"])
    slot = SlotName.parse("restaurant.semi.food")
    prediction = _resolve(slot, KIND_NONE, 0, 0, context, ontology)
    assert prediction.value.kind == KIND_NONE
    assert prediction.evidence is None


def test_dontcare_phrases_are_normalized_forms():
    from dstrc.core import normalize_text

    for phrase in DONTCARE_PHRASES:
        assert normalize_text(phrase) == phrase
