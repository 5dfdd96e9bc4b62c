from __future__ import annotations

import json

import pytest

from dstrc.core import KIND_DONTCARE, KIND_NONE, KIND_VALUE, SlotName, SlotValue
from dstrc.corpus import corpus_from_records, ontology_from_values
from dstrc.examples import (
    CHOICE_DONTCARE,
    CHOICE_NOT_MENTIONED,
    GenerationReport,
    SpanExample,
    TurnOutOfRange,
    ValueNotInOntology,
    example_id,
    example_to_json,
    find_value_span,
    generate_corpus,
    iter_contexts,
    make_choice_example,
    make_span_example,
    read_examples_jsonl,
    serialize_context,
    write_examples_jsonl,
)
from dstrc.stats import SlotSpec

_ONTOLOGY = {
    "restaurant.semi.pricerange": ["cheap", "moderate"],
    "restaurant.semi.food": ["thai", "italian"],
}

_PRICE = SlotName.parse("restaurant.semi.pricerange")
_FOOD = SlotName.parse("restaurant.semi.food")


def _dialogue(records_turns):
    records = [{"id": "d1", "domains": ["restaurant"], "turns": records_turns}]
    corpus = corpus_from_records(records, ontology_from_values(_ONTOLOGY))
    return corpus, corpus.dialogues[0]


def _price_spec(categorical=False, extractive=True):
    return SlotSpec(
        slot=_PRICE,
        question="how much does the user want to spend?",
        is_categorical=categorical,
        is_extractive=extractive,
        choice_values=("cheap", "moderate") if categorical else (),
    )


def test_serialize_context_structure():
    _, dialogue = _dialogue(
        [
            {"user": "i want cheap food", "agent": "how about thai?", "state": {}},
            {"user": "thai works", "agent": "done", "state": {}},
        ]
    )
    first = serialize_context(dialogue, 1)
    assert first.texts[0] == "[ctx]"
    # the current turn's agent reply is not part of the passage
    assert first.texts[1:] == ("i", "want", "cheap", "food")
    second = serialize_context(dialogue, 2)
    assert second.texts[1:] == (
        "i", "want", "cheap", "food",
        "how", "about", "thai", "?",
        "thai", "works",
    )
    bounds1 = second.turn_boundaries[1]
    assert (bounds1.user_start, bounds1.user_end) == (1, 4)
    assert (bounds1.agent_start, bounds1.agent_end) == (5, 8)
    bounds2 = second.turn_boundaries[2]
    assert (bounds2.user_start, bounds2.user_end) == (9, 10)
    assert bounds2.agent_start is None
    for i, token in enumerate(second.tokens):
        assert second.texts[i] == token.text


def test_serialize_context_range_check():
    _, dialogue = _dialogue([{"user": "hi", "agent": None, "state": {}}])
    with pytest.raises(TurnOutOfRange):
        serialize_context(dialogue, 2)
    with pytest.raises(TurnOutOfRange):
        serialize_context(dialogue, 0)


def test_iter_contexts_matches_serialize(train_corpus):
    dialogue = train_corpus.dialogues[0]
    for turn_index, context in iter_contexts(dialogue):
        direct = serialize_context(dialogue, turn_index)
        assert context.texts == direct.texts
        assert context.turn_boundaries == direct.turn_boundaries


def test_find_value_span_takes_last_occurrence():
    _, dialogue = _dialogue(
        [
            {"user": "cheap food , really cheap", "agent": None, "state": {}},
        ]
    )
    context = serialize_context(dialogue, 1)
    span = find_value_span(context, SlotValue.of("cheap"))
    assert span == (5, 5)
    assert context.texts[5] == "cheap"


def test_find_value_span_multiword_and_alternatives():
    _, dialogue = _dialogue(
        [{"user": "maybe thai , maybe italian food", "agent": None, "state": {}}]
    )
    context = serialize_context(dialogue, 1)
    value = SlotValue.from_annotation("korean|italian food")
    assert find_value_span(context, value) == (5, 6)
    assert find_value_span(context, SlotValue.of("vegan")) is None


def test_make_span_example_value_none_and_unspannable():
    _, dialogue = _dialogue(
        [
            {"user": "something cheap please", "agent": "ok",
             "state": {"restaurant.semi.pricerange": "cheap"}},
            {"user": "cheaply priced i said", "agent": None,
             "state": {"restaurant.semi.pricerange": "moderate"}},
        ]
    )
    spec = _price_spec()
    first = make_span_example(dialogue, 1, spec)
    assert first.answer_kind == KIND_VALUE
    assert (first.answer_start, first.answer_end) == (2, 2)
    # gold "moderate" never appears: unspannable
    assert make_span_example(dialogue, 2, spec) is None
    # a slot never mentioned answers the sentinel
    food_spec = SlotSpec(slot=_FOOD, question="what food?", is_categorical=False,
                         is_extractive=True)
    none_example = make_span_example(dialogue, 1, food_spec)
    assert none_example.answer_kind == KIND_NONE
    assert (none_example.answer_start, none_example.answer_end) == (0, 0)


def test_make_span_example_dontcare_points_at_earliest_dontcare_turn():
    _, dialogue = _dialogue(
        [
            {"user": "price does not matter", "agent": "ok",
             "state": {"restaurant.semi.pricerange": "dontcare"}},
            {"user": "thai food", "agent": None,
             "state": {"restaurant.semi.pricerange": "dontcare",
                       "restaurant.semi.food": "thai"}},
        ]
    )
    example = make_span_example(dialogue, 2, _price_spec())
    assert example.answer_kind == KIND_DONTCARE
    context = serialize_context(dialogue, 2)
    bounds = context.turn_boundaries[1]
    assert (example.answer_start, example.answer_end) == (bounds.user_start, bounds.user_end)


def test_span_example_invariants():
    _, dialogue = _dialogue([{"user": "hi there", "agent": None, "state": {}}])
    context = serialize_context(dialogue, 1)
    with pytest.raises(ValueError):
        SpanExample(
            dialogue_id="d1", turn_index=1, slot=_PRICE, question="q", context=context,
            gold_value=SlotValue.none(), answer_start=1, answer_end=1, answer_kind=KIND_NONE,
        )
    with pytest.raises(ValueError):
        SpanExample(
            dialogue_id="d1", turn_index=1, slot=_PRICE, question="q", context=context,
            gold_value=SlotValue.of("x"), answer_start=2, answer_end=1, answer_kind=KIND_VALUE,
        )


def test_make_choice_example_index_mapping():
    _, dialogue = _dialogue(
        [
            {"user": "nice and cheap", "agent": "ok",
             "state": {"restaurant.semi.pricerange": "cheap"}},
            {"user": "actually whatever", "agent": None,
             "state": {"restaurant.semi.pricerange": "dontcare"}},
        ]
    )
    spec = _price_spec(categorical=True)
    first = make_choice_example(dialogue, 1, spec)
    assert first.options == ("cheap", "moderate", CHOICE_DONTCARE, CHOICE_NOT_MENTIONED)
    assert first.options[first.gold_index] == "cheap"
    second = make_choice_example(dialogue, 2, spec)
    assert second.options[second.gold_index] == CHOICE_DONTCARE
    food_spec = SlotSpec(slot=_FOOD, question="what food?", is_categorical=True,
                         is_extractive=False, choice_values=("thai", "italian"))
    never = make_choice_example(dialogue, 1, food_spec)
    assert never.options[never.gold_index] == CHOICE_NOT_MENTIONED


def test_make_choice_example_alias_resolution():
    _, dialogue = _dialogue(
        [{"user": "x", "agent": None, "state": {"restaurant.semi.pricerange": "low cost"}}]
    )
    spec = _price_spec(categorical=True)
    example = make_choice_example(dialogue, 1, spec, aliases={"low cost": "cheap"})
    assert example.options[example.gold_index] == "cheap"
    with pytest.raises(ValueNotInOntology):
        make_choice_example(dialogue, 1, spec, aliases={})


def test_example_id_format():
    assert example_id("d9", 3, _PRICE) == "d9|3|restaurant.semi.pricerange"


def test_generate_corpus_counts_and_report():
    corpus, _ = _dialogue(
        [
            {"user": "something cheap", "agent": "ok",
             "state": {"restaurant.semi.pricerange": "cheap"}},
            {"user": "cheaply priced thai", "agent": None,
             "state": {"restaurant.semi.pricerange": "moderate",
                       "restaurant.semi.food": "thai"}},
        ]
    )
    specs = [
        _price_spec(categorical=True, extractive=True),
        SlotSpec(slot=_FOOD, question="what food?", is_categorical=False, is_extractive=True),
    ]
    report = GenerationReport()
    examples = list(generate_corpus(corpus, specs, report=report))
    # price: 2 choice + 1 span (turn 2 unspannable); food: 2 span
    assert report.choice_examples == 2
    assert report.span_examples == 3
    assert report.unspannable == 1
    assert report.unspannable_by_slot == {"restaurant.semi.pricerange": 1}
    assert report.total == len(examples) == 5
    assert report.by_kind["value"] > 0


def test_jsonl_round_trip(tmp_path):
    corpus, _ = _dialogue(
        [{"user": "cheap thai food", "agent": None,
          "state": {"restaurant.semi.pricerange": "cheap", "restaurant.semi.food": "thai"}}]
    )
    specs = [
        _price_spec(categorical=True, extractive=True),
        SlotSpec(slot=_FOOD, question="what food?", is_categorical=False, is_extractive=True),
    ]
    path = tmp_path / "examples.jsonl"
    count = write_examples_jsonl(str(path), generate_corpus(corpus, specs))
    rows = list(read_examples_jsonl(str(path)))
    assert len(rows) == count == 3
    types = sorted(r["type"] for r in rows)
    assert types == ["choice", "span", "span"]
    span_rows = [r for r in rows if r["type"] == "span"]
    for row in span_rows:
        assert row["tokens"][0] == "[ctx]"
        start, end = row["answer"]["start"], row["answer"]["end"]
        assert 0 <= start <= end < len(row["tokens"])
    choice_row = next(r for r in rows if r["type"] == "choice")
    assert choice_row["options"][-2:] == [CHOICE_DONTCARE, CHOICE_NOT_MENTIONED]
    assert 0 <= choice_row["gold_index"] < len(choice_row["options"])


def test_read_examples_jsonl_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"type": "span"}\nnot json\n', encoding="utf-8")
    with pytest.raises(ValueError) as err:
        list(read_examples_jsonl(str(path)))
    assert ":2:" in str(err.value)

    path2 = tmp_path / "badtype.jsonl"
    path2.write_text('{"type": "mystery"}\n', encoding="utf-8")
    with pytest.raises(ValueError) as err:
        list(read_examples_jsonl(str(path2)))
    assert ":1:" in str(err.value)


def test_example_to_json_is_sorted_and_stable():
    corpus, dialogue = _dialogue(
        [{"user": "cheap food", "agent": None,
          "state": {"restaurant.semi.pricerange": "cheap"}}]
    )
    example = make_span_example(dialogue, 1, _price_spec())
    payload = example_to_json(example)
    assert payload["id"] == "d1|1|restaurant.semi.pricerange"
    assert payload["slot"] == "restaurant.semi.pricerange"
    assert payload["answer"] == {"start": 1, "end": 1, "kind": "value"}
    assert payload == example_to_json(make_span_example(dialogue, 1, _price_spec()))
