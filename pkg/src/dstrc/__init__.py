"""Dialogue state tracking via reading comprehension.

Dialogue history is serialized into a token passage; each slot becomes a
natural-language question. Extractive slots are answered by span
selection over the passage, categorical slots by multiple choice over
the slot's candidate values plus two reserved options. This package
covers the non-neural pipeline: corpus ingestion, slot classification,
example generation, answer decoding, model communication, and
evaluation. Scoring models plug in over a newline-delimited JSON
protocol (see dstrc.readers).
"""

__version__ = "0.1.0"

from .core import Dialogue, SlotName, SlotValue, Token, Turn
from .corpus import DialogueCorpus, Ontology, load_corpus, subsample_fewshot

__all__ = [
    "Dialogue",
    "DialogueCorpus",
    "Ontology",
    "SlotName",
    "SlotValue",
    "Token",
    "Turn",
    "load_corpus",
    "subsample_fewshot",
    "__version__",
]
