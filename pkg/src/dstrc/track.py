"""Per-turn state prediction over whole dialogues plus evaluation:
joint goal accuracy, per-slot accuracy (with a nonempty-only mode),
and an error-type breakdown per model type.

Each turn is predicted from the full serialized history; no value is
carried over from the previous turn unless the experimental carryover
flag is set. Dual-type slots are answered by the categorical model,
mirroring the classification policy, unless the no-categorical ablation
reroutes everything to span decoding.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from .core import KIND_NONE, KIND_VALUE, Dialogue, SlotName, SlotValue
from .corpus import DialogueCorpus, Ontology
from .decode import DecodeConfig, SlotPrediction, decode_choice, decode_span, resolve_span_prediction
from .examples import RESERVED_CHOICES, example_id, iter_contexts
from .readers import Reader, ReaderFailure, score_choice, score_span
from .stats import SlotSpec

log = logging.getLogger("dstrc")

ROUTE_SPAN = "span"
ROUTE_CHOICE = "choice"

ERROR_KINDS = ("ref_not_none_pred_none", "ref_none_pred_not_none", "both_not_none_mismatch")


class MissingPrediction(KeyError):
    pass


@dataclass(frozen=True, slots=True)
class StatePrediction:
    dialogue_id: str
    turn_index: int
    state: dict[SlotName, SlotPrediction]


@dataclass(slots=True)
class TrackReport:
    num_dialogues: int = 0
    num_turns: int = 0
    # (dialogue_id, turn_index, slot) triples that failed under --partial
    failures: list[tuple[str, int, str]] = field(default_factory=list)


def route_slots(slot_specs, no_categorical_model: bool = False) -> dict[SlotName, str]:
    """Model type actually answering each slot. Categorical wins for
    dual-type slots; the no-categorical ablation sends everything to
    span decoding."""
    routes = {}
    for spec in slot_specs:
        if no_categorical_model:
            routes[spec.slot] = ROUTE_SPAN
        else:
            routes[spec.slot] = ROUTE_CHOICE if spec.is_categorical else ROUTE_SPAN
    return routes


def _predict_slot(
    reader: Reader,
    context,
    spec: SlotSpec,
    route: str,
    ontology: Ontology,
    config: DecodeConfig,
) -> SlotPrediction:
    request_id = example_id(context.dialogue_id, context.turn_index, spec.slot)
    if route == ROUTE_CHOICE:
        # choice routing implies a categorical spec, so choice_values is set
        options = tuple(spec.choice_values) + RESERVED_CHOICES
        scores = score_choice(reader, spec.question, context, options, request_id=request_id)
        value, score = decode_choice(scores, options)
        return SlotPrediction(slot=spec.slot, value=value, score=score)
    scores = score_span(reader, spec.question, context, request_id=request_id)
    kind, start, end, score = decode_span(scores, context, config)
    return resolve_span_prediction(
        spec.slot, kind, start, end, score, context, ontology, config
    )


def predict_state(
    dialogue: Dialogue,
    turn_index: int,
    slot_specs,
    reader: Reader,
    ontology: Ontology,
    config: DecodeConfig = DecodeConfig(),
    no_categorical_model: bool = False,
    partial: bool = False,
    context=None,
) -> tuple[StatePrediction, list[tuple[str, int, str]]]:
    """Predict the full state at one turn from the serialized history.

    Returns the prediction and the list of failed (dialogue, turn, slot)
    triples; failures raise instead unless ``partial`` is set, in which
    case the failed slot is recorded as unset with score 0.
    """
    from .examples import serialize_context

    if context is None:
        context = serialize_context(dialogue, turn_index)
    routes = route_slots(slot_specs, no_categorical_model)
    state: dict[SlotName, SlotPrediction] = {}
    failures: list[tuple[str, int, str]] = []
    for spec in slot_specs:
        try:
            state[spec.slot] = _predict_slot(
                reader, context, spec, routes[spec.slot], ontology, config
            )
        except ReaderFailure as e:
            if not partial:
                raise ReaderFailure(
                    f"{dialogue.id} turn {turn_index} slot {spec.slot}: {e}"
                ) from e
            log.warning("reader failed on %s turn %d slot %s: %s",
                        dialogue.id, turn_index, spec.slot, e)
            failures.append((dialogue.id, turn_index, str(spec.slot)))
            state[spec.slot] = SlotPrediction(slot=spec.slot, value=SlotValue.none(), score=0.0)
    return StatePrediction(dialogue.id, turn_index, state), failures


def _track_dialogue(dialogue, slot_specs, reader, ontology, config,
                    no_categorical_model, partial, carryover):
    predictions = []
    failures = []
    previous: dict[SlotName, SlotPrediction] = {}
    for turn_index, context in iter_contexts(dialogue):
        prediction, failed = predict_state(
            dialogue, turn_index, slot_specs, reader, ontology, config,
            no_categorical_model=no_categorical_model, partial=partial, context=context,
        )
        failures.extend(failed)
        if carryover and previous:
            merged = dict(prediction.state)
            for slot, prev in previous.items():
                if merged[slot].value.kind == KIND_NONE and prev.value.kind != KIND_NONE:
                    merged[slot] = prev
            prediction = replace(prediction, state=merged)
        previous = prediction.state
        predictions.append(prediction)
    return predictions, failures


def track_corpus(
    corpus: DialogueCorpus,
    slot_specs,
    reader: Reader,
    config: DecodeConfig = DecodeConfig(),
    no_categorical_model: bool = False,
    partial: bool = False,
    carryover: bool = False,
    jobs: int = 1,
) -> tuple[list[StatePrediction], TrackReport]:
    """Predict every turn of every dialogue, in corpus order.

    ``jobs`` > 1 fans dialogues out over a thread pool (useful when the
    reader is an external process that batches); readers that declare
    concurrency_safe=False are serialized regardless.
    """
    slot_specs = list(slot_specs)
    report = TrackReport(num_dialogues=len(corpus.dialogues))
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    if jobs == 1 or not reader.concurrency_safe or len(corpus.dialogues) <= 1:
        results = [
            _track_dialogue(d, slot_specs, reader, corpus.ontology, config,
                            no_categorical_model, partial, carryover)
            for d in corpus.dialogues
        ]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(
                pool.map(
                    lambda d: _track_dialogue(d, slot_specs, reader, corpus.ontology, config,
                                              no_categorical_model, partial, carryover),
                    corpus.dialogues,
                )
            )
    predictions: list[StatePrediction] = []
    for dialogue_predictions, failures in results:
        predictions.extend(dialogue_predictions)
        report.failures.extend(failures)
    report.num_turns = len(predictions)
    return predictions, report


# --- evaluation ---------------------------------------------------------------


def values_match(pred: SlotValue, gold: SlotValue, aliases: dict[str, str]) -> bool:
    """Normalized-text equality through the alias map; a concrete
    prediction matches if it equals any gold alternative."""
    if pred.kind != gold.kind:
        return False
    if pred.kind != KIND_VALUE:
        return True
    canonical = aliases.get(pred.text, pred.text)
    return any(aliases.get(alt, alt) == canonical for alt in gold.alternatives)


def _prediction_index(predictions) -> dict[tuple[str, int], StatePrediction]:
    index = {}
    for p in predictions:
        index[(p.dialogue_id, p.turn_index)] = p
    return index


def _require(index, dialogue: Dialogue, turn_index: int) -> StatePrediction:
    try:
        return index[(dialogue.id, turn_index)]
    except KeyError:
        raise MissingPrediction(f"no prediction for {dialogue.id} turn {turn_index}") from None


def joint_goal_accuracy(predictions, corpus: DialogueCorpus, slot_specs) -> float:
    """Fraction of turns whose every slot is predicted correctly."""
    index = _prediction_index(predictions)
    aliases = corpus.ontology.aliases
    slots = [spec.slot for spec in slot_specs]
    correct = 0
    total = 0
    for dialogue in corpus.dialogues:
        for turn in dialogue.turns:
            prediction = _require(index, dialogue, turn.index)
            total += 1
            if all(
                values_match(prediction.state[slot].value, turn.gold(slot), aliases)
                for slot in slots
            ):
                correct += 1
    return correct / total if total else 0.0


def slot_metrics(
    predictions, corpus: DialogueCorpus, slot_specs, nonempty_only: bool = False
) -> dict[SlotName, float]:
    """Per-slot accuracy over (turn, slot) pairs. nonempty_only drops
    pairs whose gold value is unset, which is the zero-shot view."""
    index = _prediction_index(predictions)
    aliases = corpus.ontology.aliases
    slots = [spec.slot for spec in slot_specs]
    correct = {slot: 0 for slot in slots}
    total = {slot: 0 for slot in slots}
    for dialogue in corpus.dialogues:
        for turn in dialogue.turns:
            prediction = _require(index, dialogue, turn.index)
            for slot in slots:
                gold = turn.gold(slot)
                if nonempty_only and gold.kind == KIND_NONE:
                    continue
                total[slot] += 1
                if values_match(prediction.state[slot].value, gold, aliases):
                    correct[slot] += 1
    return {
        slot: (correct[slot] / total[slot]) if total[slot] else 0.0 for slot in slots
    }


def error_breakdown(
    predictions, corpus: DialogueCorpus, slot_specs, no_categorical_model: bool = False
) -> dict[str, dict]:
    """Classify every erroneous (turn, slot) pair into exactly one of
    three categories, tabulated per answering model type, with counts
    and percentages."""
    index = _prediction_index(predictions)
    aliases = corpus.ontology.aliases
    routes = route_slots(slot_specs, no_categorical_model)
    counts = {
        "categorical": {kind: 0 for kind in ERROR_KINDS},
        "extractive": {kind: 0 for kind in ERROR_KINDS},
    }
    for dialogue in corpus.dialogues:
        for turn in dialogue.turns:
            prediction = _require(index, dialogue, turn.index)
            for spec in slot_specs:
                gold = turn.gold(spec.slot)
                predicted = prediction.state[spec.slot].value
                if values_match(predicted, gold, aliases):
                    continue
                if gold.kind != KIND_NONE and predicted.kind == KIND_NONE:
                    kind = "ref_not_none_pred_none"
                elif gold.kind == KIND_NONE and predicted.kind != KIND_NONE:
                    kind = "ref_none_pred_not_none"
                else:
                    kind = "both_not_none_mismatch"
                model = "categorical" if routes[spec.slot] == ROUTE_CHOICE else "extractive"
                counts[model][kind] += 1
    breakdown = {}
    for model, table in counts.items():
        total = sum(table.values())
        breakdown[model] = {
            "counts": dict(table),
            "total_errors": total,
            "percent": {
                kind: round(100.0 * n / total, 1) if total else 0.0
                for kind, n in table.items()
            },
        }
    return breakdown


def config_fingerprint(config: DecodeConfig, slot_specs, extra: dict | None = None) -> str:
    """Short stable hash over the decode settings and the slot
    classification, embedded in reports to catch config drift."""
    payload = {
        "decode": config.as_dict(),
        "slots": [
            {
                "slot": str(spec.slot),
                "categorical": spec.is_categorical,
                "extractive": spec.is_extractive,
                "num_choices": len(spec.choice_values),
            }
            for spec in sorted(slot_specs, key=lambda s: str(s.slot))
        ],
    }
    if extra:
        payload["extra"] = extra
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(slots=True)
class EvalReport:
    joint_goal_accuracy: float
    per_slot_accuracy: dict[SlotName, float]
    average_slot_accuracy: float
    nonempty_slot_accuracy: dict[SlotName, float]
    error_breakdown: dict[str, dict]
    config_fingerprint: str
    num_dialogues: int
    num_turns: int
    reader: str = ""
    oracle: bool = False
    failures: int = 0

    def as_dict(self) -> dict:
        return {
            "joint_goal_accuracy": self.joint_goal_accuracy,
            "average_slot_accuracy": self.average_slot_accuracy,
            "per_slot_accuracy": {str(k): v for k, v in sorted(
                self.per_slot_accuracy.items(), key=lambda kv: str(kv[0]))},
            "nonempty_slot_accuracy": {str(k): v for k, v in sorted(
                self.nonempty_slot_accuracy.items(), key=lambda kv: str(kv[0]))},
            "error_breakdown": self.error_breakdown,
            "config_fingerprint": self.config_fingerprint,
            "num_dialogues": self.num_dialogues,
            "num_turns": self.num_turns,
            "reader": self.reader,
            "oracle": self.oracle,
            "failures": self.failures,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


def evaluate(
    predictions,
    corpus: DialogueCorpus,
    slot_specs,
    config: DecodeConfig = DecodeConfig(),
    no_categorical_model: bool = False,
    reader: str = "",
    oracle: bool = False,
    failures: int = 0,
    fingerprint_extra: dict | None = None,
) -> EvalReport:
    per_slot = slot_metrics(predictions, corpus, slot_specs, nonempty_only=False)
    nonempty = slot_metrics(predictions, corpus, slot_specs, nonempty_only=True)
    return EvalReport(
        joint_goal_accuracy=joint_goal_accuracy(predictions, corpus, slot_specs),
        per_slot_accuracy=per_slot,
        average_slot_accuracy=sum(per_slot.values()) / len(per_slot) if per_slot else 0.0,
        nonempty_slot_accuracy=nonempty,
        error_breakdown=error_breakdown(predictions, corpus, slot_specs, no_categorical_model),
        config_fingerprint=config_fingerprint(
            config,
            slot_specs,
            extra={"no_categorical_model": no_categorical_model, **(fingerprint_extra or {})},
        ),
        num_dialogues=len(corpus.dialogues),
        num_turns=sum(len(d.turns) for d in corpus.dialogues),
        reader=reader,
        oracle=oracle,
        failures=failures,
    )


def write_slot_accuracy_csv(path: str, report: EvalReport) -> None:
    """Plot-ready per-slot accuracies (all pairs and nonempty-only)."""
    import csv

    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["slot", "accuracy", "nonempty_accuracy"])
        for slot in sorted(report.per_slot_accuracy, key=str):
            writer.writerow(
                [
                    str(slot),
                    f"{report.per_slot_accuracy[slot]:.4f}",
                    f"{report.nonempty_slot_accuracy.get(slot, 0.0):.4f}",
                ]
            )


# --- prediction (de)serialization --------------------------------------------


def prediction_to_json(prediction: StatePrediction) -> dict:
    state = {}
    for slot in sorted(prediction.state, key=str):
        p = prediction.state[slot]
        entry: dict = {"kind": p.value.kind, "score": round(p.score, 9)}
        if p.value.kind == KIND_VALUE:
            entry["text"] = p.value.text
            if len(p.value.alternatives) > 1:
                entry["alternatives"] = list(p.value.alternatives)
        if p.evidence is not None:
            entry["evidence"] = [p.evidence[0], p.evidence[1], p.evidence[2]]
        state[str(slot)] = entry
    return {
        "type": "prediction",
        "dialogue_id": prediction.dialogue_id,
        "turn_index": prediction.turn_index,
        "state": state,
    }


def prediction_from_json(record: dict) -> StatePrediction:
    state: dict[SlotName, SlotPrediction] = {}
    for key, entry in record["state"].items():
        slot = SlotName.parse(key)
        kind = entry["kind"]
        if kind == KIND_VALUE:
            alts = entry.get("alternatives") or [entry["text"]]
            value = SlotValue(kind=KIND_VALUE, raw=entry["text"], alternatives=tuple(alts))
        elif kind == KIND_NONE:
            value = SlotValue.none()
        else:
            value = SlotValue.dontcare()
        evidence = entry.get("evidence")
        state[slot] = SlotPrediction(
            slot=slot,
            value=value,
            score=float(entry.get("score", 0.0)),
            evidence=tuple(evidence) if evidence else None,
        )
    return StatePrediction(
        dialogue_id=record["dialogue_id"],
        turn_index=int(record["turn_index"]),
        state=state,
    )
