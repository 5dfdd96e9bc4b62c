"""Shared domain types, text normalization, and whitespace tokenization.

Everything downstream (corpus loading, statistics, example generation,
decoding, evaluation) works in the token space defined here, so readers
can be swapped without re-tokenizing the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

# Answer/value kinds used across the pipeline and in the JSONL schemas.
KIND_NONE = "none"
KIND_DONTCARE = "dontcare"
KIND_VALUE = "value"

SPEAKER_USER = "user"
SPEAKER_AGENT = "agent"
SPEAKER_SENTINEL = "sentinel"

#: Context position 0 is always this sentinel token; the (0, 0) span encodes
#: the "slot not mentioned" answer. Readers may map it to their own special
#: token internally.
SENTINEL_TOKEN = "[ctx]"

VALID_GROUPS = ("semi", "book")

# Annotation literals that mean "unset" / "no preference". Compared after
# normalization, so apostrophe variants collapse to the same form.
_NONE_LITERALS = frozenset({"", "none", "not mentioned"})
_DONTCARE_LITERALS = frozenset(
    {"dontcare", "dont care", "don ' t care", "do not care", "do n ' t care"}
)


class InvalidSlotName(ValueError):
    """Slot name text does not have the domain.group.name shape."""


@dataclass(frozen=True, slots=True)
class SlotName:
    """A (domain, group, name) triple such as hotel.semi.parking."""

    domain: str
    group: str
    name: str

    def __post_init__(self):
        for part in (self.domain, self.group, self.name):
            if not part or any(ch.isspace() for ch in part):
                raise InvalidSlotName(f"empty or whitespace part in {self!r}")
        if self.group not in VALID_GROUPS:
            raise InvalidSlotName(f"group must be one of {VALID_GROUPS}, got {self.group!r}")

    def __str__(self) -> str:
        return f"{self.domain}.{self.group}.{self.name}"

    @classmethod
    def parse(cls, text: str) -> "SlotName":
        parts = text.split(".")
        if len(parts) != 3:
            raise InvalidSlotName(f"expected domain.group.name, got {text!r}")
        return cls(*parts)


@dataclass(frozen=True, slots=True)
class SlotValue:
    """A dialogue-state value: unset, "no preference", or concrete text.

    Concrete values keep the full list of normalized annotation
    alternatives (MultiWOZ joins them with "|"); the first alternative is
    the primary one. A prediction counts as correct if it matches any
    alternative.
    """

    kind: str
    raw: str = ""
    alternatives: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind == KIND_VALUE:
            if not self.alternatives or not self.alternatives[0]:
                raise ValueError("concrete SlotValue needs at least one non-empty alternative")
        elif self.kind in (KIND_NONE, KIND_DONTCARE):
            if self.alternatives:
                raise ValueError(f"{self.kind} value carries no text payload")
        else:
            raise ValueError(f"unknown value kind {self.kind!r}")

    @property
    def text(self) -> str:
        """Primary normalized text; empty for none/dontcare."""
        return self.alternatives[0] if self.alternatives else ""

    @classmethod
    def none(cls) -> "SlotValue":
        return _NONE

    @classmethod
    def dontcare(cls) -> "SlotValue":
        return _DONTCARE

    @classmethod
    def of(cls, text: str) -> "SlotValue":
        """Concrete value from already-meaningful text (normalized here)."""
        return cls.from_annotation(text)

    @classmethod
    def from_annotation(cls, raw: str) -> "SlotValue":
        """Parse an annotation string, recognizing none/dontcare literals
        and "|"-joined alternatives."""
        normalized = normalize_text(raw)
        if normalized in _NONE_LITERALS:
            return _NONE
        if normalized in _DONTCARE_LITERALS:
            return _DONTCARE
        alts = []
        for part in raw.split("|"):
            norm = normalize_text(part)
            if norm and norm not in alts:
                alts.append(norm)
        if not alts:
            return _NONE
        return cls(kind=KIND_VALUE, raw=raw, alternatives=tuple(alts))


_NONE = SlotValue(kind=KIND_NONE)
_DONTCARE = SlotValue(kind=KIND_DONTCARE)


@dataclass(frozen=True, slots=True)
class Turn:
    """One user/agent exchange with the gold dialogue state after the
    user utterance. ``agent_utterance`` is None when the corpus ends on a
    user turn awaiting a response."""

    index: int
    user_utterance: str
    agent_utterance: str | None
    gold_state: dict[SlotName, SlotValue] = field(default_factory=dict)

    def gold(self, slot: SlotName) -> SlotValue:
        return self.gold_state.get(slot, _NONE)


@dataclass(frozen=True, slots=True)
class Dialogue:
    id: str
    domains: frozenset[str]
    turns: tuple[Turn, ...]

    def __post_init__(self):
        if not self.turns:
            raise ValueError(f"dialogue {self.id!r} has no turns")
        for expected, turn in enumerate(self.turns, start=1):
            if turn.index != expected:
                raise ValueError(
                    f"dialogue {self.id!r}: turn indices must be consecutive from 1, "
                    f"got {turn.index} at position {expected}"
                )


@dataclass(frozen=True, slots=True)
class Token:
    """A whitespace token with character offsets into its source text.

    The sentinel context token is the only one allowed zero-width
    offsets (0, 0).
    """

    text: str
    char_start: int
    char_end: int
    turn_index: int = 0
    speaker: str = SPEAKER_USER


_SPLIT_PUNCT = frozenset(".,?!'\"")


def normalize_text(raw: str) -> str:
    """Lowercase and split punctuation into standalone tokens.

    The characters . , ? ! ' " : are padded with spaces so they tokenize
    on their own, except that ':' between two digits is kept intact to
    preserve clock times such as "15:29". Whitespace runs collapse to
    single spaces. Idempotent by construction.
    """
    text = raw.lower()
    n = len(text)
    out = []
    for i, ch in enumerate(text):
        if ch in _SPLIT_PUNCT:
            out.append(f" {ch} ")
        elif ch == ":":
            if 0 < i < n - 1 and text[i - 1].isdigit() and text[i + 1].isdigit():
                out.append(ch)
            else:
                out.append(f" {ch} ")
        else:
            out.append(ch)
    return " ".join("".join(out).split())


def tokenize(normalized: str, turn_index: int = 0, speaker: str = SPEAKER_USER) -> list[Token]:
    """Split normalized text on whitespace, recording character offsets."""
    tokens: list[Token] = []
    i = 0
    n = len(normalized)
    while i < n:
        if normalized[i] == " ":
            i += 1
            continue
        j = i
        while j < n and normalized[j] != " ":
            j += 1
        tokens.append(Token(normalized[i:j], i, j, turn_index, speaker))
        i = j
    return tokens
