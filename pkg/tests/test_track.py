from __future__ import annotations

import json

import pytest

from dstrc.core import KIND_NONE, SlotName, SlotValue
from dstrc.corpus import corpus_from_records, ontology_from_values
from dstrc.decode import DecodeConfig, SlotPrediction
from dstrc.readers import OracleReader, RandomReader, Reader, ReaderFailure
from dstrc.rng import SplitMix64
from dstrc.stats import SlotSpec
from dstrc.track import (
    ROUTE_CHOICE,
    ROUTE_SPAN,
    MissingPrediction,
    StatePrediction,
    config_fingerprint,
    error_breakdown,
    evaluate,
    joint_goal_accuracy,
    prediction_from_json,
    prediction_to_json,
    predict_state,
    route_slots,
    slot_metrics,
    track_corpus,
    values_match,
    write_slot_accuracy_csv,
)

_PRICE = SlotName.parse("restaurant.semi.pricerange")
_FOOD = SlotName.parse("restaurant.semi.food")

_ONTOLOGY = {
    "restaurant.semi.pricerange": ["cheap", "moderate"],
    "restaurant.semi.food": ["thai", "italian"],
}


def _specs(price_categorical=True):
    return [
        SlotSpec(slot=_PRICE, question="price?", is_categorical=price_categorical,
                 is_extractive=not price_categorical,
                 choice_values=("cheap", "moderate") if price_categorical else ()),
        SlotSpec(slot=_FOOD, question="food?", is_categorical=False, is_extractive=True),
    ]


def _corpus(turns, dialogue_id="d1"):
    records = [{"id": dialogue_id, "domains": ["restaurant"], "turns": turns}]
    return corpus_from_records(records, ontology_from_values(_ONTOLOGY))


def _prediction(dialogue_id, turn_index, **slot_values):
    state = {}
    for slot_text, value in slot_values.items():
        slot = SlotName.parse(slot_text.replace("_", "."))
        state[slot] = SlotPrediction(slot=slot, value=value, score=1.0)
    return StatePrediction(dialogue_id=dialogue_id, turn_index=turn_index, state=state)


def test_route_slots_dual_goes_categorical():
    routes = route_slots(_specs())
    assert routes[_PRICE] == ROUTE_CHOICE
    assert routes[_FOOD] == ROUTE_SPAN
    ablated = route_slots(_specs(), no_categorical_model=True)
    assert set(ablated.values()) == {ROUTE_SPAN}


def test_values_match_kinds_and_aliases():
    aliases = {"center": "centre"}
    assert values_match(SlotValue.none(), SlotValue.none(), aliases)
    assert values_match(SlotValue.dontcare(), SlotValue.dontcare(), aliases)
    assert not values_match(SlotValue.none(), SlotValue.dontcare(), aliases)
    assert values_match(SlotValue.of("center"), SlotValue.of("centre"), aliases)
    assert values_match(
        SlotValue.of("centre"), SlotValue.from_annotation("west|center"), aliases
    )
    assert not values_match(SlotValue.of("north"), SlotValue.of("centre"), aliases)


def test_joint_goal_accuracy_one_wrong_slot_in_two_turns():
    corpus = _corpus(
        [
            {"user": "cheap thai food", "agent": "ok",
             "state": {"restaurant.semi.pricerange": "cheap",
                       "restaurant.semi.food": "thai"}},
            {"user": "make it italian", "agent": None,
             "state": {"restaurant.semi.pricerange": "cheap",
                       "restaurant.semi.food": "italian"}},
        ]
    )
    specs = _specs()
    good = _prediction("d1", 1, restaurant_semi_pricerange=SlotValue.of("cheap"),
                       restaurant_semi_food=SlotValue.of("thai"))
    bad = _prediction("d1", 2, restaurant_semi_pricerange=SlotValue.of("cheap"),
                      restaurant_semi_food=SlotValue.of("thai"))  # stale food value
    assert joint_goal_accuracy([good, bad], corpus, specs) == 0.5
    fixed = _prediction("d1", 2, restaurant_semi_pricerange=SlotValue.of("cheap"),
                        restaurant_semi_food=SlotValue.of("italian"))
    assert joint_goal_accuracy([good, fixed], corpus, specs) == 1.0


def test_joint_goal_requires_every_turn():
    corpus = _corpus(
        [
            {"user": "cheap", "agent": "ok", "state": {"restaurant.semi.pricerange": "cheap"}},
            {"user": "thai", "agent": None, "state": {"restaurant.semi.pricerange": "cheap"}},
        ]
    )
    only_first = [_prediction("d1", 1, restaurant_semi_pricerange=SlotValue.of("cheap"),
                              restaurant_semi_food=SlotValue.none())]
    with pytest.raises(MissingPrediction):
        joint_goal_accuracy(only_first, corpus, _specs())


def test_joint_goal_never_exceeds_any_slot_accuracy():
    corpus = _corpus(
        [
            {"user": "cheap thai", "agent": "a",
             "state": {"restaurant.semi.pricerange": "cheap", "restaurant.semi.food": "thai"}},
            {"user": "italian now", "agent": "b",
             "state": {"restaurant.semi.pricerange": "cheap",
                       "restaurant.semi.food": "italian"}},
            {"user": "moderate works", "agent": None,
             "state": {"restaurant.semi.pricerange": "moderate",
                       "restaurant.semi.food": "italian"}},
        ]
    )
    specs = _specs()
    pool = [SlotValue.of("cheap"), SlotValue.of("moderate"), SlotValue.of("thai"),
            SlotValue.of("italian"), SlotValue.none(), SlotValue.dontcare()]
    gen = SplitMix64(41)
    for _ in range(100):
        predictions = [
            _prediction("d1", t,
                        restaurant_semi_pricerange=pool[gen.below(len(pool))],
                        restaurant_semi_food=pool[gen.below(len(pool))])
            for t in (1, 2, 3)
        ]
        jga = joint_goal_accuracy(predictions, corpus, specs)
        per_slot = slot_metrics(predictions, corpus, specs)
        assert jga <= min(per_slot.values()) + 1e-12


def test_slot_metrics_nonempty_excludes_gold_none():
    corpus = _corpus(
        [
            {"user": "cheap", "agent": None,
             "state": {"restaurant.semi.pricerange": "cheap"}},
        ]
    )
    specs = _specs()
    prediction = _prediction("d1", 1, restaurant_semi_pricerange=SlotValue.of("cheap"),
                             restaurant_semi_food=SlotValue.none())
    per_slot = slot_metrics([prediction], corpus, specs)
    assert per_slot[_PRICE] == 1.0 and per_slot[_FOOD] == 1.0
    nonempty = slot_metrics([prediction], corpus, specs, nonempty_only=True)
    assert nonempty[_PRICE] == 1.0
    assert nonempty[_FOOD] == 0.0  # no nonempty gold pairs at all


def test_error_breakdown_partitions_by_model_type():
    corpus = _corpus(
        [
            {"user": "cheap thai", "agent": None,
             "state": {"restaurant.semi.pricerange": "cheap",
                       "restaurant.semi.food": "thai"}},
        ]
    )
    specs = _specs()
    wrong = _prediction("d1", 1, restaurant_semi_pricerange=SlotValue.none(),
                        restaurant_semi_food=SlotValue.of("italian"))
    breakdown = error_breakdown([wrong], corpus, specs)
    assert set(breakdown) == {"categorical", "extractive"}
    cat = breakdown["categorical"]
    assert cat["total_errors"] == 1
    assert cat["counts"]["ref_not_none_pred_none"] == 1
    assert cat["percent"]["ref_not_none_pred_none"] == 100.0
    ext = breakdown["extractive"]
    assert ext["total_errors"] == 1
    assert ext["counts"]["both_not_none_mismatch"] == 1
    for section in breakdown.values():
        assert sum(section["counts"].values()) == section["total_errors"]
    ablated = error_breakdown([wrong], corpus, specs, no_categorical_model=True)
    assert ablated["categorical"]["total_errors"] == 0
    assert ablated["extractive"]["total_errors"] == 2


def test_track_corpus_with_oracle_and_carryover():
    corpus = _corpus(
        [
            {"user": "i want cheap thai food", "agent": "ok",
             "state": {"restaurant.semi.pricerange": "cheap",
                       "restaurant.semi.food": "thai"}},
            {"user": "thanks", "agent": None,
             "state": {"restaurant.semi.pricerange": "cheap",
                       "restaurant.semi.food": "thai"}},
        ]
    )
    specs = _specs()
    from dstrc.examples import generate_corpus

    oracle = OracleReader.from_examples(generate_corpus(corpus, specs))
    predictions, report = track_corpus(corpus, specs, oracle, DecodeConfig())
    assert report.num_dialogues == 1 and report.num_turns == 2
    assert joint_goal_accuracy(predictions, corpus, specs) == 1.0

    # a reader that answers turn 2 with nothing: carryover repairs it
    class Forgetful(Reader):
        def __init__(self, inner):
            self.inner = inner

        def infer(self, request):
            turn = int(request.id.split("|")[1])
            if turn == 2:
                if request.type == "span":
                    n = len(request.tokens)
                    one_hot = [0.0] * n
                    one_hot[0] = 1.0
                    from dstrc.readers import SpanScores

                    return SpanScores(tuple(one_hot), tuple(one_hot))
                from dstrc.readers import ChoiceScores

                logits = [0.0] * len(request.options)
                logits[-1] = 1.0  # "not mentioned"
                return ChoiceScores(tuple(logits))
            return self.inner.infer(request)

    forgetful = Forgetful(OracleReader.from_examples(generate_corpus(corpus, specs)))
    flat, _ = track_corpus(corpus, specs, forgetful, DecodeConfig())
    assert joint_goal_accuracy(flat, corpus, specs) == 0.5
    carried, _ = track_corpus(corpus, specs, forgetful, DecodeConfig(), carryover=True)
    assert joint_goal_accuracy(carried, corpus, specs) == 1.0


def test_track_corpus_jobs_equivalence(dev_corpus, train_specs):
    reader = RandomReader(9)
    config = DecodeConfig()
    serial, _ = track_corpus(dev_corpus, train_specs, reader, config, jobs=1)
    threaded, _ = track_corpus(dev_corpus, train_specs, reader, config, jobs=4)
    assert [(p.dialogue_id, p.turn_index) for p in serial] == [
        (p.dialogue_id, p.turn_index) for p in threaded
    ]
    for a, b in zip(serial, threaded):
        assert a.state == b.state


class _FailsOneSlot(Reader):
    def __init__(self, bad_slot: str):
        self.bad_slot = bad_slot

    def infer(self, request):
        if request.id.endswith(self.bad_slot):
            raise ReaderFailure("backend offline")
        from dstrc.readers import ChoiceScores, SpanScores

        if request.type == "span":
            n = len(request.tokens)
            one = [1.0] + [0.0] * (n - 1)
            return SpanScores(tuple(one), tuple(one))
        logits = [0.0] * len(request.options)
        logits[-1] = 1.0
        return ChoiceScores(tuple(logits))


def test_partial_records_failures_and_fails_fast_otherwise():
    corpus = _corpus(
        [{"user": "cheap thai", "agent": None,
          "state": {"restaurant.semi.pricerange": "cheap",
                    "restaurant.semi.food": "thai"}}]
    )
    specs = _specs()
    reader = _FailsOneSlot("restaurant.semi.food")
    with pytest.raises(ReaderFailure) as err:
        track_corpus(corpus, specs, reader, DecodeConfig())
    assert "d1" in str(err.value) and "restaurant.semi.food" in str(err.value)

    predictions, report = track_corpus(corpus, specs, reader, DecodeConfig(), partial=True)
    assert report.failures == [("d1", 1, "restaurant.semi.food")]
    assert predictions[0].state[_FOOD].value.kind == KIND_NONE


def test_predict_state_shape():
    corpus = _corpus(
        [{"user": "cheap thai", "agent": None,
          "state": {"restaurant.semi.pricerange": "cheap",
                    "restaurant.semi.food": "thai"}}]
    )
    specs = _specs()
    from dstrc.examples import generate_corpus

    oracle = OracleReader.from_examples(generate_corpus(corpus, specs))
    prediction, failures = predict_state(
        corpus.dialogues[0], 1, specs, oracle, corpus.ontology, DecodeConfig()
    )
    assert not failures
    assert prediction.dialogue_id == "d1" and prediction.turn_index == 1
    assert set(prediction.state) == {_PRICE, _FOOD}
    assert prediction.state[_FOOD].value.text == "thai"
    assert prediction.state[_FOOD].evidence is not None


def test_config_fingerprint_sensitivity():
    specs = _specs()
    base = config_fingerprint(DecodeConfig(), specs)
    assert base == config_fingerprint(DecodeConfig(), specs)
    assert base != config_fingerprint(DecodeConfig(max_span_len=9), specs)
    assert base != config_fingerprint(DecodeConfig(), specs[:1])
    assert base != config_fingerprint(DecodeConfig(), specs, extra={"split": "dev"})
    assert len(base) == 16


def test_evaluate_report_round_trip(tmp_path):
    corpus = _corpus(
        [{"user": "cheap thai", "agent": None,
          "state": {"restaurant.semi.pricerange": "cheap",
                    "restaurant.semi.food": "thai"}}]
    )
    specs = _specs()
    from dstrc.examples import generate_corpus

    oracle = OracleReader.from_examples(generate_corpus(corpus, specs))
    predictions, report = track_corpus(corpus, specs, oracle, DecodeConfig())
    result = evaluate(predictions, corpus, specs, reader="oracle", oracle=True)
    assert result.joint_goal_accuracy == 1.0
    assert result.average_slot_accuracy == 1.0
    assert result.oracle is True
    payload = result.as_dict()
    assert payload["per_slot_accuracy"]["restaurant.semi.food"] == 1.0
    assert json.loads(result.to_json()) == payload

    csv_path = tmp_path / "slots.csv"
    write_slot_accuracy_csv(str(csv_path), result)
    lines = csv_path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "slot,accuracy,nonempty_accuracy"
    assert lines[1].startswith("restaurant.semi.food,1.0000")


def test_prediction_json_round_trip():
    prediction = _prediction(
        "d7", 3,
        restaurant_semi_pricerange=SlotValue.of("cheap"),
        restaurant_semi_food=SlotValue.dontcare(),
    )
    payload = prediction_to_json(prediction)
    assert payload["type"] == "prediction"
    back = prediction_from_json(json.loads(json.dumps(payload)))
    assert back.dialogue_id == "d7" and back.turn_index == 3
    assert back.state[_PRICE].value.text == "cheap"
    assert back.state[_FOOD].value.kind == "dontcare"
