"""Deterministic synthetic dialogue corpus with controlled statistics.

Real copyrighted dialogue corpora cannot ship with this package, so the
pipeline is exercised on a generated replica: 30 slots across 5 domains
whose ontology sizes are fixed exactly and whose per-slot exact match
rates are steered onto published-style targets, as measured by the same
matcher the taxonomy module uses. Generation is two-phase: scripted
multi-turn dialogues first, then single-turn correction dialogues chosen
so every slot's final rate lands within tolerance of its target. All
randomness flows through SplitMix64, so a (seed, split) pair always
produces byte-identical output.

The generator also emits the same dialogues in the raw nested log format
(for converter tests) and can build fully span-representable fixtures
where every concrete gold value is quotable from its passage.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

from .core import KIND_VALUE
from .corpus import DialogueCorpus, Ontology, corpus_from_records, ontology_from_values
from .examples import find_value_span, iter_contexts
from .rng import SplitMix64, derive_seed
from .stats import compute_slot_stats


@dataclass(frozen=True, slots=True)
class SlotTarget:
    slot: str
    num_values: int
    match_rate: float


# Generation targets: ontology size is hit exactly; the match rate is a
# steering target (see generate_split tolerances).
TARGETS = (
    SlotTarget("hotel.semi.type", 3, 0.611),
    SlotTarget("hotel.semi.internet", 3, 0.621),
    SlotTarget("hotel.semi.parking", 4, 0.631),
    SlotTarget("restaurant.semi.pricerange", 4, 0.978),
    SlotTarget("hotel.semi.pricerange", 6, 0.977),
    SlotTarget("hotel.semi.area", 6, 0.988),
    SlotTarget("attraction.semi.area", 6, 0.990),
    SlotTarget("restaurant.semi.area", 6, 0.992),
    SlotTarget("hotel.semi.stars", 7, 0.992),
    SlotTarget("hotel.book.people", 8, 0.982),
    SlotTarget("hotel.book.stay", 8, 0.989),
    SlotTarget("train.semi.day", 8, 0.993),
    SlotTarget("restaurant.book.day", 8, 0.987),
    SlotTarget("restaurant.book.people", 8, 0.991),
    SlotTarget("hotel.book.day", 11, 0.981),
    SlotTarget("train.book.people", 12, 0.947),
    SlotTarget("train.semi.destination", 27, 0.982),
    SlotTarget("attraction.semi.type", 27, 0.866),
    SlotTarget("train.semi.departure", 31, 0.976),
    SlotTarget("restaurant.book.time", 67, 0.972),
    SlotTarget("hotel.semi.name", 78, 0.887),
    SlotTarget("taxi.semi.arriveby", 97, 0.919),
    SlotTarget("restaurant.semi.food", 103, 0.964),
    SlotTarget("taxi.semi.leaveat", 108, 0.811),
    SlotTarget("train.semi.arriveby", 156, 0.915),
    SlotTarget("attraction.semi.name", 158, 0.843),
    SlotTarget("restaurant.semi.name", 182, 0.939),
    SlotTarget("train.semi.leaveat", 201, 0.874),
    SlotTarget("taxi.semi.destination", 251, 0.879),
    SlotTarget("taxi.semi.departure", 253, 0.846),
)

TARGET_BY_SLOT = {t.slot: t for t in TARGETS}

# Slots steered by per-introduction sampling rather than always-verbatim
# mentions: exactly those with sub-0.8 targets.
_LOW_RATE_SLOTS = {t.slot for t in TARGETS if t.match_rate < 0.8}

DOMAIN_SLOTS = {
    "restaurant": (
        "restaurant.semi.food",
        "restaurant.semi.pricerange",
        "restaurant.semi.area",
        "restaurant.semi.name",
        "restaurant.book.day",
        "restaurant.book.time",
        "restaurant.book.people",
    ),
    "hotel": (
        "hotel.semi.type",
        "hotel.semi.internet",
        "hotel.semi.parking",
        "hotel.semi.pricerange",
        "hotel.semi.area",
        "hotel.semi.stars",
        "hotel.semi.name",
        "hotel.book.day",
        "hotel.book.people",
        "hotel.book.stay",
    ),
    "train": (
        "train.semi.destination",
        "train.semi.departure",
        "train.semi.day",
        "train.semi.leaveat",
        "train.semi.arriveby",
        "train.book.people",
    ),
    "taxi": (
        "taxi.semi.departure",
        "taxi.semi.destination",
        "taxi.semi.leaveat",
        "taxi.semi.arriveby",
    ),
    "attraction": ("attraction.semi.type", "attraction.semi.area", "attraction.semi.name"),
}

_SINGLE_DOMAIN_WEIGHTS = (
    ("restaurant", 25),
    ("hotel", 25),
    ("train", 20),
    ("taxi", 15),
    ("attraction", 15),
)
_DOMAIN_PAIRS = (("restaurant", "taxi"), ("hotel", "taxi"), ("attraction", "train"))


# --- ontology ------------------------------------------------------------------

_AREAS = ("centre", "north", "south", "east", "west", "riverside")
_DAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")

_CITIES = (
    "ashmere", "briddleton", "carwick", "dunmere", "elsworth", "farrowden",
    "gribley", "harlowe", "ilvington", "jardale", "kelbrook", "lowdham",
    "marnwick", "nethergate", "oakhampton", "pelbrook", "quarring", "rastowe",
    "selwick", "thornden", "ulverhay", "vexley", "wadhurst", "yelverton",
    "zelstead", "bramcote", "crowhurst", "densford", "eastell", "fenwick",
    "gorleton",
)

_PLACE_ADJS = (
    "amber", "bracken", "cobalt", "dewberry", "ember", "fennel", "garnet",
    "hollow", "keld", "larch", "mulberry", "nettle", "onyx", "pewter",
    "quill", "russet", "sable", "tamarind", "umber", "vellum", "wicker",
    "juniper",
)
_PLACE_NOUNS = (
    "arcade", "bakery", "chapel", "depot", "forge", "granary", "grove",
    "hall", "jetty", "kiln", "landing", "mews", "orchard", "pier", "quay",
    "rise", "stile", "terrace", "vault", "walk", "wharf", "yard", "parade",
    "crescent",
)

_NAME_WORDS = (
    "alder", "bramble", "cedar", "damson", "elderflower", "foxglove",
    "gorse", "hawthorn", "knapweed", "larkspur", "mallow", "nutmeg",
    "oleander", "primrose", "quillwort", "rosehip", "saffron", "tansy",
    "umbel", "verbena", "woodruff", "yarrow", "zinnia", "aster",
    "bellflower", "campion", "dittany", "eyebright", "goldenrod",
    "heathbell", "ironwort", "jessamine", "kingcup", "lavenderleaf",
    "marjoram", "nightshade", "orris", "pimpernel", "rueberry", "seaholly",
)

_FOOD_BASES = (
    "italian", "chinese", "indian", "thai", "french", "spanish", "greek",
    "turkish", "korean", "japanese", "mexican", "lebanese", "persian",
    "moroccan", "ethiopian", "vietnamese", "malaysian", "polish",
    "hungarian", "german", "british", "irish", "welsh", "portuguese",
    "brazilian", "cuban", "peruvian", "danish", "swedish", "norwegian",
    "austrian", "swiss", "belgian", "dutch", "russian", "ukrainian",
    "georgian", "armenian", "israeli", "egyptian", "tunisian", "kenyan",
    "nigerian", "ghanaian", "senegalese", "jamaican", "filipino",
    "indonesian", "burmese", "nepalese", "tibetan", "mongolian",
    "cambodian", "laotian", "singaporean", "taiwanese", "basque",
    "catalan", "sicilian", "tuscan", "venetian", "bavarian", "alsatian",
    "breton", "corsican", "sardinian", "maltese", "cypriot", "balkan",
    "bohemian", "andalusian",
)

_ATTRACTION_TYPES = (
    "museum", "gallery", "cinema", "nightclub", "theatre", "aquarium",
    "planetarium", "observatory", "castle", "cathedral", "stadium", "zoo",
    "library", "market", "funfair", "waxworks", "boating lake",
    "bowling alley", "climbing wall", "escape room", "mini golf",
    "laser quest", "ghost walk", "street fair", "puppet show",
    "science fair", "sculpture trail",
)

TAXI_DEPARTURE_ANCHOR = "lan hong house"
RESTAURANT_NAME_ANCHOR = "fitzbillies restaurant"
LEAVEAT_ANCHOR = "15:29"
ARRIVEBY_ANCHOR = "16:07"


def _times(count: int, offset: int, anchor: str | None = None) -> list[str]:
    """Distinct clock times; slots get disjoint slices of one global
    cycle so no time string belongs to two slots."""
    out = [anchor] if anchor else []
    k = offset
    while len(out) < count:
        minute = 300 + (k * 7) % 1140  # 05:00 .. 23:59
        k += 1
        text = f"{minute // 60:02d}:{minute % 60:02d}"
        if text in (LEAVEAT_ANCHOR, ARRIVEBY_ANCHOR) or text in out:
            continue
        out.append(text)
    return out


def _named(prefix_words, suffix: str, count: int, anchor: str | None = None) -> list[str]:
    out = [anchor] if anchor else []
    for word in prefix_words:
        if len(out) >= count:
            break
        out.append(f"{word} {suffix}")
    return out[:count]


def _compound_names(suffixes, count: int, anchor: str | None = None) -> list[str]:
    out = [anchor] if anchor else []
    for suffix in suffixes:
        for word in _NAME_WORDS:
            if len(out) >= count:
                return out
            out.append(f"{word} {suffix}")
    if len(out) < count:
        raise AssertionError(f"name bank exhausted at {len(out)}/{count}")
    return out


def build_ontology_values() -> dict[str, list[str]]:
    """Slot -> candidates, sizes exactly matching TARGETS."""
    places = [f"{adj} {noun}" for adj in _PLACE_ADJS for noun in _PLACE_NOUNS]
    foods = list(_FOOD_BASES) + [f"modern {b}" for b in _FOOD_BASES]
    values = {
        "hotel.semi.type": ["hotel", "guest house", "hostel"],
        "hotel.semi.internet": ["yes", "no", "free"],
        "hotel.semi.parking": ["yes", "no", "free", "limited"],
        "restaurant.semi.pricerange": ["cheap", "moderate", "expensive", "very expensive"],
        "hotel.semi.pricerange": ["cheap", "moderate", "expensive", "budget", "premium", "luxury"],
        "hotel.semi.area": list(_AREAS),
        "attraction.semi.area": list(_AREAS),
        "restaurant.semi.area": list(_AREAS),
        "hotel.semi.stars": [str(n) for n in range(7)],
        "hotel.book.people": [str(n) for n in range(1, 9)],
        "hotel.book.stay": [str(n) for n in range(1, 9)],
        "train.semi.day": list(_DAYS) + ["tomorrow"],
        "restaurant.book.day": list(_DAYS) + ["tomorrow"],
        "restaurant.book.people": [str(n) for n in range(1, 9)],
        "hotel.book.day": list(_DAYS) + ["tomorrow", "today", "tonight", "the weekend"],
        "train.book.people": [str(n) for n in range(1, 13)],
        "train.semi.destination": list(_CITIES[:27]),
        "attraction.semi.type": list(_ATTRACTION_TYPES),
        "train.semi.departure": list(_CITIES[:31]),
        "restaurant.book.time": _times(67, 0),
        "hotel.semi.name": _compound_names(("lodge", "inn", "manor"), 78),
        "taxi.semi.arriveby": _times(97, 70),
        "restaurant.semi.food": foods[:103],
        "taxi.semi.leaveat": _times(108, 170),
        "train.semi.arriveby": _times(156, 280, anchor=ARRIVEBY_ANCHOR),
        "attraction.semi.name": _compound_names(
            ("pavilion", "gardens", "tower", "court", "corner"), 158
        ),
        "restaurant.semi.name": _compound_names(
            ("kitchen", "bistro", "eatery", "canteen", "diner"), 182,
            anchor=RESTAURANT_NAME_ANCHOR,
        ),
        "train.semi.leaveat": _times(201, 440, anchor=LEAVEAT_ANCHOR),
        "taxi.semi.destination": places[252:503],
        "taxi.semi.departure": [TAXI_DEPARTURE_ANCHOR] + places[:252],
    }
    for target in TARGETS:
        got = len(values[target.slot])
        if got != target.num_values:
            raise AssertionError(f"{target.slot}: built {got} values, want {target.num_values}")
        if len(set(values[target.slot])) != got:
            raise AssertionError(f"{target.slot}: duplicate candidate values")
    return values


def build_aliases() -> dict[str, str]:
    """Surface-form aliases, including a chain ("centre of town" resolves
    through "center") to exercise chain flattening at load time."""
    return {
        "center": "centre",
        "centre of town": "center",
        "guesthouse": "guest house",
        "moderately priced": "moderate",
        "inexpensive": "cheap",
    }


def build_ontology() -> Ontology:
    ontology = ontology_from_values(build_ontology_values())
    # aliases resolved the same way corpus.load_aliases does
    raw = {k: v for k, v in build_aliases().items()}
    resolved = {}
    for alias, target in raw.items():
        while target in raw:
            target = raw[target]
        resolved[alias] = target
    return Ontology(values=ontology.values, aliases=resolved)


# --- utterance templates --------------------------------------------------------

_OPENERS = {
    "restaurant": "i am looking for a place to eat",
    "hotel": "i need a place to stay",
    "train": "i need a train",
    "taxi": "i need a taxi",
    "attraction": "i am looking for something to visit",
}

_CONTINUATIONS = ("also", "next", "and another thing", "oh and")

_VERBATIM = {
    "restaurant.semi.food": ("serving {v} food", "that does {v} cooking"),
    "restaurant.semi.pricerange": ("in the {v} price range", "priced {v}"),
    "hotel.semi.pricerange": ("in the {v} price range", "priced {v}"),
    "restaurant.semi.area": ("in the {v} part of town", "located in the {v} area"),
    "hotel.semi.area": ("in the {v} part of town", "located in the {v} area"),
    "attraction.semi.area": ("in the {v} part of town", "located in the {v} area"),
    "restaurant.semi.name": ("called {v}", "named {v}"),
    "hotel.semi.name": ("called {v}", "named {v}"),
    "attraction.semi.name": ("called {v}", "named {v}"),
    "restaurant.book.day": ("on {v}", "for {v}"),
    "hotel.book.day": ("on {v}", "for {v}"),
    "train.semi.day": ("travelling on {v}", "on {v}"),
    "restaurant.book.time": ("at {v}", "for {v}"),
    "restaurant.book.people": ("for {v} people", "for a party of {v}"),
    "hotel.book.people": ("for {v} people", "for a party of {v}"),
    "train.book.people": ("for {v} tickets", "{v} tickets please"),
    "hotel.book.stay": ("for {v} nights", "staying {v} nights"),
    "hotel.semi.stars": ("with {v} stars", "rated {v} stars"),
    "hotel.semi.type": ("it should be a {v}", "looking for a {v}"),
    "train.semi.leaveat": ("leaving at {v}", "departing at {v}"),
    "taxi.semi.leaveat": ("leaving at {v}", "departing at {v}"),
    "train.semi.arriveby": ("arriving by {v}", "there by {v}"),
    "taxi.semi.arriveby": ("arriving by {v}", "there by {v}"),
    "train.semi.destination": ("going to {v}", "headed to {v}"),
    "train.semi.departure": ("from {v}", "starting in {v}"),
    "taxi.semi.destination": ("taking me to {v}", "dropped off at {v}"),
    "taxi.semi.departure": ("picking me up at {v}", "picked up from {v}"),
    "attraction.semi.type": ("maybe a {v}", "some kind of {v}"),
}

# The yes/no style slots read badly with generic carriers, so their
# verbatim mentions are keyed by value.
_VALUE_KEYED = {
    "hotel.semi.internet": {
        "yes": "yes , i will want internet",
        "no": "no , i can skip the internet",
        "free": "free internet would be ideal",
    },
    "hotel.semi.parking": {
        "yes": "yes , i need parking too",
        "no": "no , parking is not needed",
        "free": "free parking would be ideal",
        "limited": "limited parking is acceptable",
    },
}

# Concrete-but-unquoted mentions for the sampled low-rate slots.
_PARAPHRASE = {
    "hotel.semi.type": "the kind of lodging we used before",
    "hotel.semi.internet": "with the connectivity my work demands",
    "hotel.semi.parking": "with the vehicle arrangements we expect",
}

_DESCRIPTORS = {
    "restaurant.semi.food": "the type of food",
    "restaurant.semi.pricerange": "the price range",
    "hotel.semi.pricerange": "the price range",
    "restaurant.semi.area": "the area",
    "hotel.semi.area": "the area",
    "attraction.semi.area": "the area",
    "restaurant.semi.name": "which one we pick",
    "hotel.semi.name": "which one we pick",
    "attraction.semi.name": "which one we pick",
    "restaurant.book.day": "the day",
    "hotel.book.day": "the day",
    "train.semi.day": "the day",
    "restaurant.book.time": "the exact time",
    "restaurant.book.people": "the group size",
    "hotel.book.people": "the group size",
    "train.book.people": "the group size",
    "hotel.book.stay": "how long we stay",
    "hotel.semi.stars": "the star rating",
    "hotel.semi.type": "the style of place",
    "hotel.semi.internet": "internet",
    "hotel.semi.parking": "parking",
    "train.semi.leaveat": "the departure time",
    "taxi.semi.leaveat": "the departure time",
    "train.semi.arriveby": "the arrival time",
    "taxi.semi.arriveby": "the arrival time",
    "train.semi.destination": "the exact stop",
    "train.semi.departure": "the starting stop",
    "taxi.semi.destination": "the exact drop off",
    "taxi.semi.departure": "the pickup point",
    "attraction.semi.type": "the kind of outing",
}

_DONTCARE_LEADS = (
    "i do not care about {d}",
    "i have no preference on {d}",
    "i dont care about {d}",
)

_ACKS = (
    "certainly , one moment .",
    "of course , let me check .",
    "right away , searching now .",
    "understood , give me a second .",
    "sure , i can help with that .",
)

_CLOSINGS = (
    "you are all set , enjoy .",
    "all booked , have a great day .",
    "done , anything else ?",
)

_FILLER_USERS = (
    "what would you suggest for me ?",
    "could you narrow it down a little ?",
)

_MATCHED_OPENERS = {
    "restaurant": "i need a table",
    "hotel": "i need a room",
    "train": "i need a train ticket",
    "taxi": "i need a ride",
    "attraction": "i want an outing",
}

_UNMATCHED_TEXTS = {
    "restaurant": "i will let you choose the details , just find me somewhere to eat .",
    "hotel": "i will let you choose the details , just find me somewhere to sleep .",
    "train": "i will let you sort out the journey , just get me a seat .",
    "taxi": "i will let you arrange the ride , just send a cab .",
    "attraction": "i will let you suggest an outing , surprise me completely .",
}


def _pick(gen: SplitMix64, seq):
    return seq[gen.below(len(seq))]


def _weighted(gen: SplitMix64, pairs):
    total = sum(w for _, w in pairs)
    roll = gen.below(total)
    for item, weight in pairs:
        roll -= weight
        if roll < 0:
            return item
    raise AssertionError("unreachable")


def _verbatim_fragment(gen: SplitMix64, slot: str, value: str) -> str:
    keyed = _VALUE_KEYED.get(slot)
    if keyed is not None:
        return keyed[value]
    return _pick(gen, _VERBATIM[slot]).format(v=value)


def _sample_value(gen: SplitMix64, values: dict[str, list[str]], slot: str,
                  taken: dict[str, str]) -> str:
    candidates = values[slot]
    value = _pick(gen, candidates)
    # trains should not depart from their destination; resample a few
    # times, deterministically
    other = {"train.semi.destination": "train.semi.departure",
             "train.semi.departure": "train.semi.destination"}.get(slot)
    if other and other in taken:
        for _ in range(8):
            if value != taken[other]:
                break
            value = _pick(gen, candidates)
    return value


def _annotate(gen: SplitMix64, slot: str, value: str) -> str:
    # occasionally annotate the canonical area plus its alias to exercise
    # multi-alternative gold values downstream
    if slot.endswith(".semi.area") and value == "centre" and gen.below(2) == 0:
        return "centre|center"
    return value


@dataclass(slots=True)
class _Intro:
    slot: str
    value: str | None  # None for a dontcare introduction
    verbatim: bool
    annotation: str


def _script_dialogue(gen: SplitMix64, values: dict[str, list[str]], dialogue_id: str,
                     force_matched: bool) -> dict:
    if not force_matched and gen.below(100) < 15:
        domains = list(_pick(gen, _DOMAIN_PAIRS))
    else:
        domains = [_weighted(gen, _SINGLE_DOMAIN_WEIGHTS)]

    intros: list[_Intro] = []
    taken: dict[str, str] = {}
    for domain in domains:
        pool = DOMAIN_SLOTS[domain]
        count = 2 + gen.below(min(4, len(pool) - 1))
        indices = list(range(len(pool)))
        for _ in range(count):
            slot = pool[indices.pop(gen.below(len(indices)))]
            # dontcare is orthogonal to matchability, so fixtures keep it
            if gen.below(100) < 6:
                intros.append(_Intro(slot, None, False, "dontcare"))
                continue
            value = _sample_value(gen, values, slot, taken)
            taken[slot] = value
            if force_matched or slot not in _LOW_RATE_SLOTS:
                verbatim = True
            else:
                verbatim = gen.uniform() < TARGET_BY_SLOT[slot].match_rate
            intros.append(_Intro(slot, value, verbatim, _annotate(gen, slot, value)))

    # Dontcare statements always get a turn of their own; mixing them
    # with concrete mentions would put candidate tokens inside the same
    # utterance as the hedge phrase, which downstream span decoding must
    # be able to treat as pure hedging.
    concrete_intros = [i for i in intros if i.value is not None]
    dontcare_intros = [i for i in intros if i.value is None]

    n_turns = 2 + gen.below(3)
    base, extra = divmod(len(concrete_intros), n_turns)
    batches: list[list[_Intro]] = []
    cursor = 0
    for t in range(n_turns):
        size = base + (1 if t < extra else 0)
        batches.append(concrete_intros[cursor : cursor + size])
        cursor += size
    if dontcare_intros:
        batches.insert(gen.below(len(batches) + 1), list(dontcare_intros))

    # optional correction turn restating one verbatim value
    change: _Intro | None = None
    changeable = [i for i in concrete_intros if i.verbatim]
    if changeable and gen.below(100) < 12:
        source = _pick(gen, changeable)
        new_value = _sample_value(gen, values, source.slot, {})
        if new_value != source.value:
            change = _Intro(source.slot, new_value, True, _annotate(gen, source.slot, new_value))
            batches.append([change])

    state: dict[str, str] = {}
    turns = []
    for t, batch in enumerate(batches, start=1):
        dontcares = [i for i in batch if i.value is None]
        concrete = [i for i in batch if i.value is not None]
        is_change_turn = len(batch) == 1 and batch[0] is change
        fragments = []
        for intro in concrete:
            if intro is change:
                continue
            if intro.verbatim:
                fragments.append(_verbatim_fragment(gen, intro.slot, intro.value))
            else:
                fragments.append(_PARAPHRASE[intro.slot])
        if is_change_turn:
            user = "i changed my mind , " + _verbatim_fragment(gen, change.slot, change.value) + " ."
        elif dontcares:
            described = " or ".join(_DESCRIPTORS[i.slot] for i in dontcares)
            user = _pick(gen, _DONTCARE_LEADS).format(d=described) + " ."
        elif fragments:
            lead = _OPENERS[domains[0]] if t == 1 else _pick(gen, _CONTINUATIONS)
            user = f"{lead} {' and '.join(fragments)} ."
        else:
            user = _OPENERS[domains[0]] + " ." if t == 1 else _pick(gen, _FILLER_USERS)
        for intro in batch:
            state[intro.slot] = intro.annotation
        echoable = [i for i in concrete if i.verbatim and i is not change]
        if t == len(batches):
            agent = _pick(gen, _CLOSINGS)
        elif echoable and gen.below(100) < 30:
            agent = f"got it , {_pick(gen, echoable).value} noted ."
        else:
            agent = _pick(gen, _ACKS)
        turns.append({"user": user, "agent": agent, "state": dict(state)})

    return {"id": dialogue_id, "domains": sorted(set(domains)), "turns": turns}


# --- correction phase -----------------------------------------------------------


def _correction_counts(matched: int, total: int, target: float, tolerance: float,
                       floor: float | None, cap: int = 4000) -> tuple[int, int]:
    """Smallest (k_matched, k_unmatched) addition that lands
    (matched + k_m) / (total + k_m + k_u) within tolerance of target,
    never below floor. Additions are single-pair dialogues downstream."""
    for k_total in range(cap + 1):
        denominator = total + k_total
        if denominator == 0:
            continue
        ideal = target * denominator - matched
        for k_m in {math.floor(ideal), math.ceil(ideal)}:
            k_m = min(max(k_m, 0), k_total)
            rate = (matched + k_m) / denominator
            if floor is not None and rate < floor:
                continue
            if abs(rate - target) <= tolerance:
                return k_m, k_total - k_m
    raise RuntimeError(
        f"cannot steer rate {matched}/{total} to {target} +/- {tolerance} within {cap} additions"
    )


def _chunk_needs(needs: dict[str, int], limit: int = 3) -> list[list[str]]:
    """Greedy packing: each chunk takes one pending pair from up to
    ``limit`` distinct slots, largest backlog first (name-tiebreak)."""
    remaining = {slot: n for slot, n in needs.items() if n > 0}
    chunks = []
    while remaining:
        ordered = sorted(remaining, key=lambda s: (-remaining[s], s))[:limit]
        for slot in ordered:
            remaining[slot] -= 1
            if not remaining[slot]:
                del remaining[slot]
        chunks.append(sorted(ordered))
    return chunks


def _correction_dialogues(gen: SplitMix64, values: dict[str, list[str]],
                          needs_matched: dict[str, int], needs_unmatched: dict[str, int],
                          id_prefix: str, start: int) -> list[dict]:
    records = []
    index = start
    for domain in sorted(DOMAIN_SLOTS):
        domain_slots = set(DOMAIN_SLOTS[domain])
        for matched, needs in ((True, needs_matched), (False, needs_unmatched)):
            local = {s: n for s, n in needs.items() if s in domain_slots}
            for chunk in _chunk_needs(local):
                taken: dict[str, str] = {}
                assignments = []
                for slot in chunk:
                    value = _sample_value(gen, values, slot, taken)
                    taken[slot] = value
                    assignments.append((slot, value))
                if matched:
                    frags = " and ".join(
                        _verbatim_fragment(gen, slot, value) for slot, value in assignments
                    )
                    user = f"{_MATCHED_OPENERS[domain]} {frags} ."
                else:
                    user = _UNMATCHED_TEXTS[domain]
                records.append(
                    {
                        "id": f"{id_prefix}{index:04d}",
                        "domains": [domain],
                        "turns": [
                            {
                                "user": user,
                                "agent": _pick(gen, _ACKS),
                                "state": {slot: value for slot, value in assignments},
                            }
                        ],
                    }
                )
                index += 1
    return records


def _measure(records: list[dict], ontology: Ontology) -> dict[str, tuple[int, int]]:
    """slot -> (matched, total) concrete pairs under the real matcher."""
    corpus = corpus_from_records(records, ontology)
    out = {}
    for entry in compute_slot_stats(corpus):
        matched = round(entry.exact_match_rate * entry.occurrences)
        out[str(entry.slot)] = (matched, entry.occurrences)
    return out


def generate_split(
    split: str,
    n_scripted: int,
    seed: int,
    tolerance: float = 0.004,
    force_matched: bool = False,
    corrections: bool = True,
) -> list[dict]:
    """One corpus split as dialogue records.

    force_matched makes every concrete mention verbatim and skips the
    correction phase: the result is fully span-representable (used for
    oracle fixtures). Otherwise single-turn correction dialogues are
    appended until every slot's measured match rate is within
    ``tolerance`` of its target (never below 0.8005 for slots whose
    target is at least 0.8).
    """
    values = build_ontology_values()
    ontology = build_ontology()
    prefix = f"SYN{split[:2].upper()}"
    gen = SplitMix64(derive_seed(seed, split, "script"))
    records = [
        _script_dialogue(gen, values, f"{prefix}{i:04d}", force_matched)
        for i in range(1, n_scripted + 1)
    ]
    if force_matched or not corrections:
        return records

    measured = _measure(records, ontology)
    needs_matched: dict[str, int] = {}
    needs_unmatched: dict[str, int] = {}
    for target in TARGETS:
        matched, total = measured.get(target.slot, (0, 0))
        floor = 0.8005 if target.match_rate >= 0.8 else None
        k_m, k_u = _correction_counts(matched, total, target.match_rate, tolerance, floor)
        if k_m:
            needs_matched[target.slot] = k_m
        if k_u:
            needs_unmatched[target.slot] = k_u
    correction_gen = SplitMix64(derive_seed(seed, split, "correct"))
    records += _correction_dialogues(
        correction_gen, values, needs_matched, needs_unmatched, prefix, n_scripted + 1
    )

    final = _measure(records, ontology)
    for target in TARGETS:
        matched, total = final.get(target.slot, (0, 0))
        rate = matched / total if total else 0.0
        if abs(rate - target.match_rate) > tolerance or (
            target.match_rate >= 0.8 and rate < 0.8
        ):
            raise RuntimeError(
                f"{split}: {target.slot} rate {rate:.4f} missed target "
                f"{target.match_rate:.4f} +/- {tolerance}"
            )
    return records


def fixture_records(n_dialogues: int = 50, seed: int = 23) -> list[dict]:
    """Fully span-representable corpus for oracle identity runs."""
    return generate_split("fixture", n_dialogues, seed, force_matched=True)


# --- raw-format emission and representability ----------------------------------


def to_raw_multiwoz(records: list[dict]) -> dict:
    """Re-encode records in the nested raw log format (alternating
    user/system entries, belief state in the system turn's metadata)."""
    raw = {}
    for record in records:
        log = []
        for turn in record["turns"]:
            log.append({"text": turn["user"], "metadata": {}})
            metadata: dict = {}
            for slot_key, value in turn["state"].items():
                domain, group, name = slot_key.split(".")
                metadata.setdefault(domain, {"book": {}, "semi": {}})
                metadata[domain][group][name] = value
            log.append({"text": turn["agent"], "metadata": metadata})
        raw[record["id"] + ".json"] = {
            "goal": {domain: {"info": {"present": True}} for domain in record["domains"]},
            "log": log,
        }
    return raw


def span_representable_subset(corpus: DialogueCorpus) -> DialogueCorpus:
    """Dialogues in which every concrete gold value is quotable: the
    subset on which a perfect span reader can express the gold state."""
    kept = []
    for dialogue in corpus.dialogues:
        ok = True
        for turn_index, context in iter_contexts(dialogue):
            for slot, gold in dialogue.turns[turn_index - 1].gold_state.items():
                if gold.kind == KIND_VALUE and find_value_span(context, gold) is None:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            kept.append(dialogue)
    return DialogueCorpus(dialogues=tuple(kept), ontology=corpus.ontology)


DEFAULT_SPLITS = {"train": (300, 0.004), "dev": (80, 0.025), "test": (80, 0.025)}


def write_replica(out_dir: str, seed: int = 11, splits: dict | None = None,
                  with_raw: bool = True) -> dict[str, str]:
    """Write ontology, aliases, per-split dialogue files, and raw-format
    mirrors. Returns the path map."""
    splits = splits or DEFAULT_SPLITS
    os.makedirs(out_dir, exist_ok=True)
    paths: dict[str, str] = {}

    def _dump(name: str, payload) -> str:
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, ensure_ascii=False, indent=1, sort_keys=True)
            f.write("\n")
        return path

    paths["ontology"] = _dump("ontology.json", build_ontology_values())
    paths["aliases"] = _dump("aliases.json", build_aliases())
    for split, (size, tolerance) in splits.items():
        records = generate_split(split, size, derive_seed(seed, split), tolerance)
        paths[split] = _dump(f"{split}.dialogues.json", records)
        if with_raw:
            paths[f"{split}_raw"] = _dump(f"{split}.raw.json", to_raw_multiwoz(records))
    return paths
