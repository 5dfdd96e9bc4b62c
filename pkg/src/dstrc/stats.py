"""Per-slot statistics and the categorical/extractive classification.

Two numbers drive the split: the ontology's candidate count and the
exact match rate, i.e. how often a concrete gold value appears verbatim
(as a normalized token subsequence) in the passage of its turn. The
slots with the fewest candidate values are answered by multiple choice;
slots whose values are reliably quotable from the dialogue are answered
by span extraction; anything left over falls back to multiple choice so
every slot has a model.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources

from .core import KIND_VALUE, SlotName
from .corpus import DialogueCorpus, Ontology
from .examples import find_value_span, iter_contexts

DEFAULT_NUM_CATEGORICAL = 15
DEFAULT_EXTRACTIVE_THRESHOLD = 0.80


class EmptyCorpus(ValueError):
    pass


class InvalidConfig(ValueError):
    pass


class MissingQuestion(KeyError):
    """A slot has no entry in the question table."""


@dataclass(frozen=True, slots=True)
class SlotStats:
    slot: SlotName
    num_possible_values: int
    exact_match_rate: float
    occurrences: int  # (turn, slot) pairs with a concrete gold value

    def __post_init__(self):
        if self.num_possible_values < 1:
            raise ValueError(f"{self.slot}: num_possible_values must be >= 1")
        if not (0.0 <= self.exact_match_rate <= 1.0):
            raise ValueError(f"{self.slot}: exact_match_rate out of [0, 1]")


@dataclass(frozen=True, slots=True)
class SlotSpec:
    slot: SlotName
    question: str
    is_categorical: bool
    is_extractive: bool
    choice_values: tuple[str, ...] = ()

    def __post_init__(self):
        if not (self.is_categorical or self.is_extractive):
            raise ValueError(f"{self.slot}: needs at least one model type")
        if bool(self.choice_values) != self.is_categorical:
            raise ValueError(f"{self.slot}: choice_values required iff categorical")


def load_questions(path: str | None = None) -> dict[str, str]:
    """Question templates: slot name -> question text. Without a path,
    the built-in table for the standard 30 slots is loaded."""
    if path is None:
        text = resources.files("dstrc").joinpath("data/questions.json").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    data = json.loads(text)
    if not isinstance(data, dict) or not all(
        isinstance(k, str) and isinstance(v, str) and v for k, v in data.items()
    ):
        raise ValueError("question table must map slot names to non-empty strings")
    return data


def compute_slot_stats(corpus: DialogueCorpus) -> list[SlotStats]:
    """One SlotStats per ontology slot, rates measured over every
    (turn, slot) pair carrying a concrete gold value. A multi-valued
    gold counts as matched if any alternative has a span."""
    if not corpus.dialogues:
        raise EmptyCorpus("cannot compute slot statistics without dialogues")
    slots = sorted(corpus.ontology.values, key=str)
    matched = {slot: 0 for slot in slots}
    total = {slot: 0 for slot in slots}
    for dialogue in corpus.dialogues:
        for turn_index, context in iter_contexts(dialogue):
            state = dialogue.turns[turn_index - 1].gold_state
            for slot, gold in state.items():
                if gold.kind != KIND_VALUE:
                    continue
                total[slot] += 1
                if find_value_span(context, gold) is not None:
                    matched[slot] += 1
    return [
        SlotStats(
            slot=slot,
            num_possible_values=len(corpus.ontology.values[slot]),
            exact_match_rate=(matched[slot] / total[slot]) if total[slot] else 0.0,
            occurrences=total[slot],
        )
        for slot in slots
    ]


def classify_slots(
    stats: list[SlotStats],
    ontology: Ontology,
    questions: dict[str, str] | None = None,
    num_categorical: int = DEFAULT_NUM_CATEGORICAL,
    extractive_threshold: float = DEFAULT_EXTRACTIVE_THRESHOLD,
) -> list[SlotSpec]:
    """Assign model types per slot.

    Slots are sorted ascending by num_possible_values (ties by slot name)
    and the first ``num_categorical`` become categorical; independently,
    any slot with exact_match_rate >= ``extractive_threshold`` becomes
    extractive; a slot with neither flag is forced categorical. The
    returned list keeps the sorted order.
    """
    if not stats:
        raise InvalidConfig("no slot statistics to classify")
    if not (0 <= num_categorical <= len(stats)):
        raise InvalidConfig(
            f"num_categorical must be within 0..{len(stats)}, got {num_categorical}"
        )
    if questions is None:
        questions = load_questions()
    ordered = sorted(stats, key=lambda s: (s.num_possible_values, str(s.slot)))
    specs = []
    for rank, entry in enumerate(ordered):
        is_categorical = rank < num_categorical
        is_extractive = entry.exact_match_rate >= extractive_threshold
        if not (is_categorical or is_extractive):
            is_categorical = True
        key = str(entry.slot)
        if key not in questions:
            raise MissingQuestion(key)
        specs.append(
            SlotSpec(
                slot=entry.slot,
                question=questions[key],
                is_categorical=is_categorical,
                is_extractive=is_extractive,
                choice_values=ontology.values[entry.slot] if is_categorical else (),
            )
        )
    return specs


def write_analysis_csv(path: str, stats: list[SlotStats], specs: list[SlotSpec]) -> None:
    """Slot table as CSV: slot, num_possible_values, exact_match_rate,
    is_categorical, is_extractive. Row order follows the classification
    sort; rates carry 4 decimals for stable diffs."""
    by_slot = {spec.slot: spec for spec in specs}
    ordered = sorted(stats, key=lambda s: (s.num_possible_values, str(s.slot)))
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["slot", "num_possible_values", "exact_match_rate", "is_categorical", "is_extractive"]
        )
        for entry in ordered:
            spec = by_slot[entry.slot]
            writer.writerow(
                [
                    str(entry.slot),
                    entry.num_possible_values,
                    f"{entry.exact_match_rate:.4f}",
                    str(spec.is_categorical).lower(),
                    str(spec.is_extractive).lower(),
                ]
            )
