"""Corpus ingestion: dialogue/ontology file parsing, raw MultiWOZ
conversion, and deterministic few-shot subsampling.

File schemas (all JSON, UTF-8):

* dialogue file: array of ``{id, domains: [str], turns: [{user,
  agent|null, state: {"domain.group.name": "value"}}]}``. State values
  may be "dontcare", "a|b" alternatives, or absent when unset.
* ontology file: object ``{"domain.group.name": [values]}``.
* alias file (optional): object ``{alias: canonical}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

from .core import Dialogue, SlotName, SlotValue, Turn, InvalidSlotName, normalize_text
from .rng import sample_indices

DEFAULT_EXCLUDED_DOMAINS = frozenset({"hospital", "police"})

# Ontology entries that would collide with the reserved unset/no-preference
# handling are dropped at load time.
_RESERVED_VALUE_LITERALS = frozenset(
    {"", "none", "not mentioned", "dontcare", "dont care", "don ' t care", "do not care"}
)


class MalformedCorpus(Exception):
    """A corpus/ontology/alias file violates its schema. The message
    carries the path to the offending record."""


class UnknownSlot(MalformedCorpus):
    """A gold state references a slot absent from the ontology."""


class InvalidFraction(ValueError):
    """Few-shot fraction outside (0, 1]."""


@dataclass(frozen=True, slots=True)
class Ontology:
    """Candidate values per slot plus an optional alias map.

    Values are normalized, deduplicated, ordered as listed in the file.
    Aliases map normalized surface forms to a canonical candidate; chains
    are resolved at load so one lookup suffices.
    """

    values: dict[SlotName, tuple[str, ...]]
    aliases: dict[str, str]

    def candidates(self, slot: SlotName) -> tuple[str, ...]:
        return self.values[slot]

    def alias(self, text: str) -> str:
        """Canonical form of ``text`` (itself when unaliased)."""
        return self.aliases.get(text, text)


@dataclass(frozen=True, slots=True)
class DialogueCorpus:
    dialogues: tuple[Dialogue, ...]
    ontology: Ontology
    slot_specs: tuple | None = None  # tuple[SlotSpec, ...] once classified

    def with_specs(self, slot_specs) -> "DialogueCorpus":
        return replace(self, slot_specs=tuple(slot_specs))

    def __len__(self) -> int:
        return len(self.dialogues)


def ontology_from_values(data: dict, where: str = "<memory>") -> Ontology:
    """Build an Ontology from a slot -> value-list mapping, normalizing
    and deduplicating values and dropping reserved literals."""
    if not isinstance(data, dict):
        raise MalformedCorpus(f"{where}: expected a JSON object of slot -> values")
    values: dict[SlotName, tuple[str, ...]] = {}
    for key, raw_values in data.items():
        try:
            slot = SlotName.parse(key)
        except InvalidSlotName as e:
            raise MalformedCorpus(f"{where}: bad slot key {key!r}: {e}") from e
        if not isinstance(raw_values, list):
            raise MalformedCorpus(f"{where}: {key}: values must be a list")
        seen = []
        for v in raw_values:
            norm = normalize_text(str(v))
            if norm in _RESERVED_VALUE_LITERALS or norm in seen:
                continue
            seen.append(norm)
        if not seen:
            raise MalformedCorpus(f"{where}: {key}: no usable candidate values")
        values[slot] = tuple(seen)
    return Ontology(values=values, aliases={})


def load_ontology(path: str) -> Ontology:
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise MalformedCorpus(f"{path}: invalid JSON at byte {e.pos}: {e.msg}") from e
    return ontology_from_values(data, where=path)


def load_aliases(path: str, ontology: Ontology) -> dict[str, str]:
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise MalformedCorpus(f"{path}: invalid JSON at byte {e.pos}: {e.msg}") from e
    if not isinstance(data, dict):
        raise MalformedCorpus(f"{path}: expected a JSON object of alias -> canonical")
    raw = {normalize_text(str(k)): normalize_text(str(v)) for k, v in data.items()}
    all_candidates = {v for vals in ontology.values.values() for v in vals}
    resolved: dict[str, str] = {}
    for alias in raw:
        target = raw[alias]
        hops = 0
        while target in raw:
            target = raw[target]
            hops += 1
            if hops > len(raw):
                raise MalformedCorpus(f"{path}: alias cycle involving {alias!r}")
        if target not in all_candidates:
            raise MalformedCorpus(
                f"{path}: alias {alias!r} -> {target!r} is not an ontology candidate"
            )
        if alias != target:
            resolved[alias] = target
    return resolved


def _parse_dialogue(record, position: int, path: str, ontology: Ontology) -> Dialogue:
    where = f"{path}: dialogue #{position}"
    if not isinstance(record, dict):
        raise MalformedCorpus(f"{where}: expected an object")
    dialogue_id = record.get("id")
    if not isinstance(dialogue_id, str) or not dialogue_id:
        raise MalformedCorpus(f"{where}: missing or empty 'id'")
    where = f"{path}: dialogue {dialogue_id!r}"
    domains = record.get("domains")
    if not isinstance(domains, list) or not all(isinstance(d, str) for d in domains):
        raise MalformedCorpus(f"{where}: 'domains' must be a list of strings")
    raw_turns = record.get("turns")
    if not isinstance(raw_turns, list) or not raw_turns:
        raise MalformedCorpus(f"{where}: 'turns' must be a non-empty list")

    turns = []
    for t, raw_turn in enumerate(raw_turns, start=1):
        if not isinstance(raw_turn, dict):
            raise MalformedCorpus(f"{where}, turn {t}: expected an object")
        user = raw_turn.get("user")
        if not isinstance(user, str) or not normalize_text(user):
            raise MalformedCorpus(f"{where}, turn {t}: 'user' must be non-empty text")
        agent = raw_turn.get("agent")
        if agent is not None and not isinstance(agent, str):
            raise MalformedCorpus(f"{where}, turn {t}: 'agent' must be text or null")
        state_obj = raw_turn.get("state", {})
        if not isinstance(state_obj, dict):
            raise MalformedCorpus(f"{where}, turn {t}: 'state' must be an object")
        state: dict[SlotName, SlotValue] = {}
        for key, raw_value in state_obj.items():
            try:
                slot = SlotName.parse(key)
            except InvalidSlotName as e:
                raise MalformedCorpus(f"{where}, turn {t}: bad slot key {key!r}: {e}") from e
            if slot not in ontology.values:
                raise UnknownSlot(f"{where}, turn {t}: slot {key!r} not in ontology")
            value = SlotValue.from_annotation(str(raw_value))
            if value.kind != "none":
                state[slot] = value
        turns.append(Turn(index=t, user_utterance=user, agent_utterance=agent, gold_state=state))

    return Dialogue(id=dialogue_id, domains=frozenset(domains), turns=tuple(turns))


def corpus_from_records(
    records: list,
    ontology: Ontology,
    where: str = "<memory>",
    filter_domains: set[str] | None = None,
    exclude_domains: frozenset[str] = DEFAULT_EXCLUDED_DOMAINS,
) -> DialogueCorpus:
    """Build a corpus from already-parsed dialogue records (the JSON
    array of the dialogue file schema)."""
    if not isinstance(records, list):
        raise MalformedCorpus(f"{where}: expected a JSON array of dialogues")
    dialogues = []
    seen_ids = set()
    for position, record in enumerate(records):
        domains = record.get("domains", []) if isinstance(record, dict) else []
        if isinstance(domains, list):
            domain_set = {d for d in domains if isinstance(d, str)}
            if domain_set & exclude_domains:
                continue
            if filter_domains is not None and not (domain_set & set(filter_domains)):
                continue
        dialogue = _parse_dialogue(record, position, where, ontology)
        if dialogue.id in seen_ids:
            raise MalformedCorpus(f"{where}: duplicate dialogue id {dialogue.id!r}")
        seen_ids.add(dialogue.id)
        dialogues.append(dialogue)
    return DialogueCorpus(dialogues=tuple(dialogues), ontology=ontology)


def load_corpus(
    dialogue_file: str,
    ontology_file: str,
    aliases_file: str | None = None,
    filter_domains: set[str] | None = None,
    exclude_domains: frozenset[str] = DEFAULT_EXCLUDED_DOMAINS,
) -> DialogueCorpus:
    """Parse dialogue and ontology files into an immutable corpus.

    Dialogues touching ``exclude_domains`` (hospital/police by default)
    are dropped; when ``filter_domains`` is given, only dialogues whose
    domain set intersects it are kept.
    """
    ontology = load_ontology(ontology_file)
    if aliases_file:
        ontology = Ontology(values=ontology.values, aliases=load_aliases(aliases_file, ontology))

    with open(dialogue_file, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise MalformedCorpus(
                f"{dialogue_file}: invalid JSON at byte {e.pos}: {e.msg}"
            ) from e
    return corpus_from_records(
        data,
        ontology,
        where=dialogue_file,
        filter_domains=filter_domains,
        exclude_domains=exclude_domains,
    )


def fewshot_size(n_dialogues: int, fraction: float) -> int:
    # ceil(fraction * N), with the product rounded to 9 decimals first so
    # binary float artifacts (e.g. 0.05 * 100 == 5.000000000000001) cannot
    # bump the count. Documented for cross-language reproduction.
    if not (0 < fraction <= 1):  # also rejects nan
        raise InvalidFraction(f"fraction must be in (0, 1], got {fraction}")
    return math.ceil(round(fraction * n_dialogues, 9))


def subsample_fewshot(corpus: DialogueCorpus, fraction: float, seed: int) -> DialogueCorpus:
    """Keep ceil(fraction * N) whole dialogues, selected uniformly by the
    documented SplitMix64 partial Fisher-Yates scheme (see dstrc.rng).
    Original dialogue order is preserved. fewshot_size validates the
    fraction."""
    n = len(corpus.dialogues)
    if n == 0:
        raise InvalidFraction("cannot subsample an empty corpus")
    k = fewshot_size(n, fraction)
    chosen = sample_indices(n, k, seed)
    selected = tuple(corpus.dialogues[i] for i in chosen)
    return replace(corpus, dialogues=selected)


# --- raw MultiWOZ conversion -------------------------------------------------

_MULTIWOZ_DOMAINS = ("attraction", "hotel", "restaurant", "taxi", "train", "hospital", "police")


def convert_raw_multiwoz(raw: dict) -> list[dict]:
    """Map a raw MultiWOZ 2.0/2.1 ``data.json`` object into the dialogue
    file schema.

    The raw log alternates user/system turns; the system turn's metadata
    holds the belief state after the preceding user utterance. Booking
    confirmations ("booked") are not state and are skipped, as are empty
    / "not mentioned" values. A trailing user turn without a system
    response has no state annotation and is dropped. Dialogue-act and
    database content is ignored.
    """
    if not isinstance(raw, dict):
        raise MalformedCorpus("raw MultiWOZ data must be a JSON object keyed by dialogue id")
    out = []
    for key in sorted(raw):
        record = raw[key]
        if not isinstance(record, dict) or not isinstance(record.get("log"), list):
            raise MalformedCorpus(f"dialogue {key!r}: expected an object with a 'log' list")
        log = record["log"]
        goal = record.get("goal", {})
        domains = sorted(
            d for d in _MULTIWOZ_DOMAINS if isinstance(goal, dict) and goal.get(d)
        )
        turns = []
        state_domains = set()
        for t in range(len(log) // 2):
            user_entry, system_entry = log[2 * t], log[2 * t + 1]
            user = user_entry.get("text") if isinstance(user_entry, dict) else None
            agent = system_entry.get("text") if isinstance(system_entry, dict) else None
            if not isinstance(user, str) or not isinstance(agent, str):
                raise MalformedCorpus(f"dialogue {key!r}, log entries {2*t}-{2*t+1}: missing text")
            metadata = system_entry.get("metadata") or {}
            state = {}
            for domain, groups in metadata.items():
                if not isinstance(groups, dict):
                    continue
                for group in ("semi", "book"):
                    for slot, value in (groups.get(group) or {}).items():
                        if slot == "booked":
                            continue
                        if isinstance(value, list):
                            value = value[0] if value else ""
                        if not isinstance(value, str):
                            continue
                        value = value.strip()
                        if value.lower() in ("", "none", "not mentioned"):
                            continue
                        state[f"{domain}.{group}.{slot.lower().replace(' ', '')}"] = value
                        state_domains.add(domain)
            turns.append({"user": user, "agent": agent, "state": state})
        if not turns:
            continue
        dialogue_id = key[:-5] if key.endswith(".json") else key
        out.append(
            {
                "id": dialogue_id,
                "domains": domains or sorted(state_domains),
                "turns": turns,
            }
        )
    return out


def convert_raw_ontology(raw: dict) -> dict[str, list[str]]:
    """Map a raw MultiWOZ ``ontology.json`` ("domain-slot" or
    "domain-book slot" keys) into the ontology file schema."""
    if not isinstance(raw, dict):
        raise MalformedCorpus("raw ontology must be a JSON object")
    out: dict[str, list[str]] = {}
    for key, values in raw.items():
        if "-" not in key:
            raise MalformedCorpus(f"raw ontology key {key!r} has no domain separator")
        domain, slot = key.split("-", 1)
        slot = slot.strip().lower()
        if slot.startswith("book "):
            group, name = "book", slot[len("book "):]
        else:
            group, name = "semi", slot
        name = name.replace(" ", "")
        if not isinstance(values, list):
            raise MalformedCorpus(f"raw ontology key {key!r}: values must be a list")
        out[f"{domain.strip().lower()}.{group}.{name}"] = [str(v) for v in values]
    return out
