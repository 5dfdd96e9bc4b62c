"""Serialize dialogue history into token passages and build span /
multiple-choice examples from gold states.

The passage for turn t is: sentinel token, then the normalized tokens of
u_1, a_1, ..., a_{t-1}, u_t (the agent response of turn t is excluded
because the state is annotated after the user utterance). Span answers
are inclusive token index pairs into this passage; (0, 0) is the
reserved "not mentioned" span on the sentinel.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Iterator

from .core import (
    KIND_DONTCARE,
    KIND_NONE,
    KIND_VALUE,
    SENTINEL_TOKEN,
    SPEAKER_AGENT,
    SPEAKER_SENTINEL,
    SPEAKER_USER,
    Dialogue,
    SlotName,
    SlotValue,
    Token,
    normalize_text,
    tokenize,
)

if TYPE_CHECKING:
    from .corpus import DialogueCorpus
    from .stats import SlotSpec

log = logging.getLogger("dstrc")

# The two reserved multiple-choice options, always appended last in this
# order after the slot's candidate values.
CHOICE_DONTCARE = "do not care"
CHOICE_NOT_MENTIONED = "not mentioned"
RESERVED_CHOICES = (CHOICE_DONTCARE, CHOICE_NOT_MENTIONED)

_SENTINEL = Token(SENTINEL_TOKEN, 0, 0, 0, SPEAKER_SENTINEL)


class TurnOutOfRange(IndexError):
    pass


class ValueNotInOntology(ValueError):
    """A gold categorical value is not among the slot's options even
    after alias resolution."""


@dataclass(frozen=True, slots=True)
class TurnSpan:
    """Inclusive token ranges contributed by one turn. Agent fields are
    None when the turn's agent utterance is excluded, missing, or empty."""

    user_start: int
    user_end: int
    agent_start: int | None = None
    agent_end: int | None = None


@dataclass(frozen=True, slots=True)
class SerializedContext:
    dialogue_id: str
    turn_index: int
    tokens: tuple[Token, ...]
    texts: tuple[str, ...]  # tokens[i].text, precomputed for matching
    turn_boundaries: dict[int, TurnSpan]

    def __len__(self) -> int:
        return len(self.tokens)


def _utterance_tokens(utterance: str, turn_index: int, speaker: str) -> list[Token]:
    return tokenize(normalize_text(utterance), turn_index, speaker)


def serialize_context(dialogue: Dialogue, turn_index: int) -> SerializedContext:
    """Passage for ``turn_index``: sentinel + u_1, a_1, ..., u_t."""
    if not (1 <= turn_index <= len(dialogue.turns)):
        raise TurnOutOfRange(
            f"turn {turn_index} out of range 1..{len(dialogue.turns)} "
            f"for dialogue {dialogue.id!r}"
        )
    for t, context in iter_contexts(dialogue, stop=turn_index):
        if t == turn_index:
            return context
    raise AssertionError("unreachable")


def iter_contexts(dialogue: Dialogue, stop: int | None = None) -> Iterator[tuple[int, SerializedContext]]:
    """Yield (turn_index, context) for each turn, sharing the token
    prefix work across turns. Contexts snapshot immutable tuples, so
    holding earlier ones is safe."""
    last = len(dialogue.turns) if stop is None else stop
    tokens: list[Token] = [_SENTINEL]
    boundaries: dict[int, TurnSpan] = {}
    for turn in dialogue.turns[:last]:
        t = turn.index
        user_tokens = _utterance_tokens(turn.user_utterance, t, SPEAKER_USER)
        user_start = len(tokens)
        tokens.extend(user_tokens)
        boundaries[t] = TurnSpan(user_start, len(tokens) - 1)
        snapshot = tuple(tokens)
        yield t, SerializedContext(
            dialogue_id=dialogue.id,
            turn_index=t,
            tokens=snapshot,
            texts=tuple(tok.text for tok in snapshot),
            turn_boundaries=dict(boundaries),
        )
        # The agent response joins the passage only from the next turn on.
        if turn.agent_utterance:
            agent_tokens = _utterance_tokens(turn.agent_utterance, t, SPEAKER_AGENT)
            if agent_tokens:
                agent_start = len(tokens)
                tokens.extend(agent_tokens)
                boundaries[t] = TurnSpan(
                    user_start, agent_start - 1, agent_start, len(tokens) - 1
                )


def find_value_span(context: SerializedContext, gold: SlotValue) -> tuple[int, int] | None:
    """Last contiguous token subsequence equal to any gold alternative.

    "Last" prefers the larger start index, then the larger end index, so
    repeated mentions resolve to the most recent (and, on nested matches
    at the same start, the longest alternative).
    """
    if gold.kind != KIND_VALUE:
        raise ValueError(f"find_value_span needs a concrete value, got {gold.kind}")
    texts = context.texts
    n = len(texts)
    best: tuple[int, int] | None = None
    for alt in gold.alternatives:
        words = alt.split()
        m = len(words)
        if m == 0 or n - m < 1:
            continue
        first = words[0]
        for i in range(n - m, 0, -1):
            if texts[i] == first and list(texts[i : i + m]) == words:
                candidate = (i, i + m - 1)
                if best is None or candidate > best:
                    best = candidate
                break
    return best


@dataclass(frozen=True, slots=True)
class SpanExample:
    dialogue_id: str
    turn_index: int
    slot: SlotName
    question: str
    context: SerializedContext
    answer_start: int
    answer_end: int
    answer_kind: str
    gold_value: SlotValue

    def __post_init__(self):
        if not (0 <= self.answer_start <= self.answer_end < len(self.context.tokens)):
            raise ValueError(
                f"span ({self.answer_start}, {self.answer_end}) out of range "
                f"for {len(self.context.tokens)} tokens"
            )
        if (self.answer_kind == KIND_NONE) != (
            self.answer_start == 0 and self.answer_end == 0
        ):
            raise ValueError("the (0, 0) sentinel span encodes exactly the None answer")


@dataclass(frozen=True, slots=True)
class ChoiceExample:
    dialogue_id: str
    turn_index: int
    slot: SlotName
    question: str
    context: SerializedContext
    options: tuple[str, ...]
    gold_index: int

    def __post_init__(self):
        if self.options[-2:] != RESERVED_CHOICES:
            raise ValueError(f"options must end with {RESERVED_CHOICES}")
        if len(set(self.options)) != len(self.options):
            raise ValueError("options must be distinct")
        if not (0 <= self.gold_index < len(self.options)):
            raise ValueError(f"gold_index {self.gold_index} out of range")


def example_id(dialogue_id: str, turn_index: int, slot: SlotName) -> str:
    return f"{dialogue_id}|{turn_index}|{slot}"


def _first_dontcare_turn(dialogue: Dialogue, turn_index: int, slot: SlotName) -> int:
    for turn in dialogue.turns[:turn_index]:
        if turn.gold(slot).kind == KIND_DONTCARE:
            return turn.index
    raise AssertionError(f"no dontcare turn for {slot} by turn {turn_index}")


def make_span_example(
    dialogue: Dialogue,
    turn_index: int,
    slot_spec: "SlotSpec",
    context: SerializedContext | None = None,
) -> SpanExample | None:
    """Build the extractive example for one (turn, slot), or None when
    the concrete gold value has no token span in the passage (the caller
    counts these).

    Gold None answers the sentinel span (0, 0). Gold DontCare answers
    the full user utterance of the earliest turn at which the slot was
    DontCare. A passed-in ``context`` must be serialize_context(dialogue,
    turn_index); callers iterating whole dialogues reuse iter_contexts.
    """
    if context is None:
        context = serialize_context(dialogue, turn_index)
    gold = dialogue.turns[turn_index - 1].gold(slot_spec.slot)
    common = dict(
        dialogue_id=dialogue.id,
        turn_index=turn_index,
        slot=slot_spec.slot,
        question=slot_spec.question,
        context=context,
        gold_value=gold,
    )
    if gold.kind == KIND_NONE:
        return SpanExample(answer_start=0, answer_end=0, answer_kind=KIND_NONE, **common)
    if gold.kind == KIND_DONTCARE:
        bounds = context.turn_boundaries[_first_dontcare_turn(dialogue, turn_index, slot_spec.slot)]
        return SpanExample(
            answer_start=bounds.user_start,
            answer_end=bounds.user_end,
            answer_kind=KIND_DONTCARE,
            **common,
        )
    span = find_value_span(context, gold)
    if span is None:
        return None
    return SpanExample(answer_start=span[0], answer_end=span[1], answer_kind=KIND_VALUE, **common)


def make_choice_example(
    dialogue: Dialogue,
    turn_index: int,
    slot_spec: "SlotSpec",
    aliases: dict[str, str] | None = None,
    context: SerializedContext | None = None,
) -> ChoiceExample:
    """Build the multiple-choice example for one (turn, slot). Gold
    concrete values resolve through the alias map; a value that still is
    not an option raises ValueNotInOntology."""
    if context is None:
        context = serialize_context(dialogue, turn_index)
    gold = dialogue.turns[turn_index - 1].gold(slot_spec.slot)
    options = tuple(slot_spec.choice_values) + RESERVED_CHOICES
    if gold.kind == KIND_NONE:
        gold_index = len(options) - 1
    elif gold.kind == KIND_DONTCARE:
        gold_index = len(options) - 2
    else:
        aliases = aliases or {}
        gold_index = -1
        for alt in gold.alternatives:
            canonical = aliases.get(alt, alt)
            if canonical in slot_spec.choice_values:
                gold_index = slot_spec.choice_values.index(canonical)
                break
        if gold_index < 0:
            raise ValueNotInOntology(
                f"{dialogue.id} turn {turn_index}: {slot_spec.slot} gold "
                f"{gold.alternatives} not among {len(slot_spec.choice_values)} options"
            )
    return ChoiceExample(
        dialogue_id=dialogue.id,
        turn_index=turn_index,
        slot=slot_spec.slot,
        question=slot_spec.question,
        context=context,
        options=options,
        gold_index=gold_index,
    )


@dataclass(slots=True)
class GenerationReport:
    total: int = 0
    span_examples: int = 0
    choice_examples: int = 0
    by_kind: dict[str, int] = field(default_factory=lambda: {k: 0 for k in (KIND_NONE, KIND_DONTCARE, KIND_VALUE)})
    unspannable: int = 0
    unspannable_by_slot: dict[str, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "span_examples": self.span_examples,
            "choice_examples": self.choice_examples,
            "by_kind": dict(self.by_kind),
            "unspannable": self.unspannable,
            "unspannable_by_slot": dict(sorted(self.unspannable_by_slot.items())),
        }


def generate_corpus(
    corpus: "DialogueCorpus",
    slot_specs: Iterable["SlotSpec"],
    mode: str = "both",
    report: GenerationReport | None = None,
) -> Iterator[SpanExample | ChoiceExample]:
    """Emit examples for every (dialogue, turn, applicable slot).

    mode selects which model types to emit ("span", "choice", "both");
    a dual slot yields one example per applicable type. The report is
    filled in as the stream is consumed.
    """
    if mode not in ("span", "choice", "both"):
        raise ValueError(f"mode must be span/choice/both, got {mode!r}")
    if report is None:
        report = GenerationReport()
    specs = list(slot_specs)
    aliases = corpus.ontology.aliases
    for dialogue in corpus.dialogues:
        for turn_index, context in iter_contexts(dialogue):
            gold_kinds = {
                spec.slot: dialogue.turns[turn_index - 1].gold(spec.slot).kind for spec in specs
            }
            for spec in specs:
                if spec.is_extractive and mode in ("span", "both"):
                    example = make_span_example(dialogue, turn_index, spec, context=context)
                    if example is None:
                        report.unspannable += 1
                        key = str(spec.slot)
                        report.unspannable_by_slot[key] = (
                            report.unspannable_by_slot.get(key, 0) + 1
                        )
                        log.debug(
                            "unspannable value: %s turn %d slot %s",
                            dialogue.id,
                            turn_index,
                            spec.slot,
                        )
                    else:
                        report.total += 1
                        report.span_examples += 1
                        report.by_kind[example.answer_kind] += 1
                        yield example
                if spec.is_categorical and mode in ("choice", "both"):
                    example = make_choice_example(
                        dialogue, turn_index, spec, aliases=aliases, context=context
                    )
                    report.total += 1
                    report.choice_examples += 1
                    report.by_kind[gold_kinds[spec.slot]] += 1
                    yield example
    return


# --- JSONL serialization ------------------------------------------------------


def example_to_json(example: SpanExample | ChoiceExample) -> dict:
    base = {
        "id": example_id(example.dialogue_id, example.turn_index, example.slot),
        "slot": str(example.slot),
        "question": example.question,
        "tokens": list(example.context.texts),
    }
    if isinstance(example, SpanExample):
        base["type"] = "span"
        base["answer"] = {
            "start": example.answer_start,
            "end": example.answer_end,
            "kind": example.answer_kind,
        }
    else:
        base["type"] = "choice"
        base["options"] = list(example.options)
        base["gold_index"] = example.gold_index
    return base


def write_examples_jsonl(path: str, examples: Iterable[SpanExample | ChoiceExample]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for example in examples:
            f.write(json.dumps(example_to_json(example), ensure_ascii=False, sort_keys=True))
            f.write("\n")
            count += 1
    return count


def read_examples_jsonl(path: str) -> Iterator[dict]:
    """Yield raw example dicts; schema errors carry the line number."""
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {e.msg}") from e
            if record.get("type") not in ("span", "choice"):
                raise ValueError(f"{path}:{lineno}: unknown example type {record.get('type')!r}")
            yield record
