"""Reader abstraction: anything that scores span/choice questions.

A reader receives the question text, the passage tokens, and (for
multiple choice) the option list, and returns raw logits; decoding and
thresholding happen downstream, so readers never emit probabilities.
Three deterministic built-ins cover verification and baselines, and
ExternalReader speaks a newline-delimited JSON protocol to a model
process (child stdio or TCP), matching responses to requests by id so
the model may batch or reorder internally.

Wire protocol, one JSON object per line, UTF-8:
  request  {"id": "...", "type": "span", "question": "...", "tokens": [...]}
           {"id": "...", "type": "choice", "question": "...", "tokens": [...], "options": [...]}
  response {"id": "...", "start_logits": [...], "end_logits": [...]}
           {"id": "...", "option_logits": [...]}
           {"id": "...", "error": "..."}        (failure for that request)
  session  {"type": "shutdown"}                 (no response expected)
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import shlex
import socket
import subprocess
import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

from .core import KIND_VALUE
from .examples import (
    CHOICE_DONTCARE,
    CHOICE_NOT_MENTIONED,
    ChoiceExample,
    SerializedContext,
    SpanExample,
    example_id,
)
from .rng import SplitMix64

log = logging.getLogger("dstrc")

REQUEST_SPAN = "span"
REQUEST_CHOICE = "choice"


class ReaderFailure(RuntimeError):
    """A single request failed (timeout, reader-side error, dropped
    response). Other requests on the same reader are unaffected."""


class ShapeMismatch(ValueError):
    """Returned logit vectors do not fit the request (wrong length or
    non-finite values)."""


class ConnectFailure(ConnectionError):
    """The external reader endpoint could not be reached or died."""


@dataclass(frozen=True, slots=True)
class SpanScores:
    start_logits: tuple[float, ...]
    end_logits: tuple[float, ...]


@dataclass(frozen=True, slots=True)
class ChoiceScores:
    option_logits: tuple[float, ...]


@dataclass(frozen=True, slots=True)
class ReaderRequest:
    id: str
    type: str
    question: str
    tokens: tuple[str, ...]
    options: tuple[str, ...] | None = None

    def to_wire(self) -> dict:
        payload = {
            "id": self.id,
            "type": self.type,
            "question": self.question,
            "tokens": list(self.tokens),
        }
        if self.type == REQUEST_CHOICE:
            payload["options"] = list(self.options or ())
        return payload


class Reader:
    """Base scoring interface. Subclasses implement infer(); shape and
    finiteness checks happen in score_span/score_choice so every reader
    gets the same validation."""

    #: readers that cannot take interleaved infer() calls set this False
    #: and the pipeline serializes around them.
    concurrency_safe = True

    #: gold-backed readers set this True so reports can watermark their
    #: scores as upper bounds rather than model results.
    is_oracle = False

    def infer(self, request: ReaderRequest) -> SpanScores | ChoiceScores:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self) -> "Reader":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _check_finite(name: str, values: tuple[float, ...], expected_len: int) -> None:
    if len(values) != expected_len:
        raise ShapeMismatch(f"{name}: expected {expected_len} values, got {len(values)}")
    for v in values:
        if not math.isfinite(v):
            raise ShapeMismatch(f"{name}: non-finite logit {v!r}")


def score_span(
    reader: Reader,
    question: str,
    context: SerializedContext,
    request_id: str | None = None,
) -> SpanScores:
    """Ask ``reader`` for start/end logits over the passage tokens."""
    if request_id is None:
        request_id = example_id(context.dialogue_id, context.turn_index, "?")
    request = ReaderRequest(
        id=request_id, type=REQUEST_SPAN, question=question, tokens=context.texts
    )
    scores = reader.infer(request)
    if not isinstance(scores, SpanScores):
        raise ShapeMismatch(f"span request answered with {type(scores).__name__}")
    n = len(context.texts)
    _check_finite("start_logits", scores.start_logits, n)
    _check_finite("end_logits", scores.end_logits, n)
    return scores


def score_choice(
    reader: Reader,
    question: str,
    context: SerializedContext,
    options: Iterable[str],
    request_id: str | None = None,
) -> ChoiceScores:
    """Ask ``reader`` for one logit per option."""
    options = tuple(options)
    if len(options) < 3:
        raise ValueError(f"need candidate values plus the two reserved options, got {options}")
    if request_id is None:
        request_id = example_id(context.dialogue_id, context.turn_index, "?")
    request = ReaderRequest(
        id=request_id,
        type=REQUEST_CHOICE,
        question=question,
        tokens=context.texts,
        options=options,
    )
    scores = reader.infer(request)
    if not isinstance(scores, ChoiceScores):
        raise ShapeMismatch(f"choice request answered with {type(scores).__name__}")
    _check_finite("option_logits", scores.option_logits, len(options))
    return scores


# --- built-in readers ---------------------------------------------------------


class OracleReader(Reader):
    """Replays gold labels as one-hot logits. Exists to verify the
    pipeline end to end (decode must recover the gold state exactly);
    reports carry an oracle watermark so its numbers are not mistaken
    for model results."""

    is_oracle = True

    def __init__(self, span_answers: dict[str, tuple[int, int]], choice_answers: dict[str, int]):
        self._spans = dict(span_answers)
        self._choices = dict(choice_answers)

    @classmethod
    def from_examples(cls, examples: Iterable[SpanExample | ChoiceExample]) -> "OracleReader":
        spans: dict[str, tuple[int, int]] = {}
        choices: dict[str, int] = {}
        for ex in examples:
            key = example_id(ex.dialogue_id, ex.turn_index, ex.slot)
            if isinstance(ex, SpanExample):
                spans[key] = (ex.answer_start, ex.answer_end)
            else:
                choices[key] = ex.gold_index
        return cls(spans, choices)

    def infer(self, request: ReaderRequest) -> SpanScores | ChoiceScores:
        if request.type == REQUEST_SPAN:
            answer = self._spans.get(request.id)
            if answer is None:
                raise ReaderFailure(f"oracle has no span answer for {request.id!r}")
            start = [0.0] * len(request.tokens)
            end = [0.0] * len(request.tokens)
            start[answer[0]] = 1.0
            end[answer[1]] = 1.0
            return SpanScores(tuple(start), tuple(end))
        index = self._choices.get(request.id)
        if index is None:
            raise ReaderFailure(f"oracle has no choice answer for {request.id!r}")
        logits = [0.0] * len(request.options or ())
        logits[index] = 1.0
        return ChoiceScores(tuple(logits))


@lru_cache(maxsize=16)
def _position_index(tokens: tuple[str, ...]) -> dict[str, tuple[int, ...]]:
    """token text -> positions (ascending), skipping the sentinel slot 0."""
    index: dict[str, list[int]] = {}
    for pos in range(1, len(tokens)):
        index.setdefault(tokens[pos], []).append(pos)
    return {text: tuple(positions) for text, positions in index.items()}


def _last_occurrence(
    tokens: tuple[str, ...], index: dict[str, tuple[int, ...]], phrase_words: list[str]
) -> tuple[int, int] | None:
    m = len(phrase_words)
    if m == 0:
        return None
    best_start = -1
    for pos in index.get(phrase_words[0], ()):
        if pos > best_start and list(tokens[pos : pos + m]) == phrase_words:
            best_start = pos
    if best_start < 0:
        return None
    return best_start, best_start + m - 1


class ExactMatchReader(Reader):
    """Trainingless baseline: string lookup of ontology values.

    Span queries get logit 1.0 at the start/end of the last occurrence
    of any candidate value of the queried slot, 0.5 on the sentinel, 0
    elsewhere; with no occurrence the sentinel wins. Choice queries get
    1.0 for options whose text occurs anywhere in the passage, with the
    reserved options fixed at 0.0 ("do not care") and 0.5 ("not
    mentioned") so an unmatched query falls back to unset.

    The queried slot is recovered from the question text, so the
    question table must be injective over slots.
    """

    def __init__(self, question_to_candidates: dict[str, tuple[str, ...]]):
        self._candidates = {
            question: tuple(values) for question, values in question_to_candidates.items()
        }
        self._candidate_words = {
            question: [value.split() for value in values]
            for question, values in self._candidates.items()
        }

    @classmethod
    def from_specs(cls, specs, ontology) -> "ExactMatchReader":
        mapping: dict[str, tuple[str, ...]] = {}
        for spec in specs:
            if spec.question in mapping:
                raise ValueError(
                    f"question {spec.question!r} is shared by two slots; the exact-match "
                    "reader needs one slot per question"
                )
            mapping[spec.question] = ontology.values[spec.slot]
        return cls(mapping)

    def infer(self, request: ReaderRequest) -> SpanScores | ChoiceScores:
        tokens = request.tokens
        index = _position_index(tokens)
        if request.type == REQUEST_SPAN:
            start = [0.0] * len(tokens)
            end = [0.0] * len(tokens)
            start[0] = end[0] = 0.5
            best: tuple[int, int] | None = None
            for words in self._candidate_words.get(request.question, ()):
                found = _last_occurrence(tokens, index, words)
                if found is not None and (best is None or found > best):
                    best = found
            if best is not None:
                start[best[0]] = 1.0
                end[best[1]] = 1.0
            return SpanScores(tuple(start), tuple(end))
        logits = []
        for option in request.options or ():
            if option == CHOICE_NOT_MENTIONED:
                logits.append(0.5)
            elif option == CHOICE_DONTCARE:
                logits.append(0.0)
            elif _last_occurrence(tokens, index, option.split()) is not None:
                logits.append(1.0)
            else:
                logits.append(0.0)
        return ChoiceScores(tuple(logits))


class RandomReader(Reader):
    """Noise baseline: logits drawn from a generator seeded by a hash of
    (seed, request content), so repeated calls on identical inputs give
    identical scores while different inputs decorrelate. The request id
    is deliberately excluded from the key."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)

    def _stream(self, request: ReaderRequest) -> SplitMix64:
        payload = json.dumps(
            [self.seed, request.type, request.question, list(request.tokens),
             list(request.options or ())],
            ensure_ascii=False,
            separators=(",", ":"),
        ).encode("utf-8")
        digest = hashlib.sha256(payload).digest()
        return SplitMix64(int.from_bytes(digest[:8], "big"))

    def infer(self, request: ReaderRequest) -> SpanScores | ChoiceScores:
        gen = self._stream(request)
        if request.type == REQUEST_SPAN:
            n = len(request.tokens)
            start = tuple(gen.uniform() for _ in range(n))
            end = tuple(gen.uniform() for _ in range(n))
            return SpanScores(start, end)
        n = len(request.options or ())
        return ChoiceScores(tuple(gen.uniform() for _ in range(n)))


# --- external protocol client ---------------------------------------------


class _Pending:
    __slots__ = ("event", "response")

    def __init__(self):
        self.event = threading.Event()
        self.response: dict | None = None


class ExternalReader(Reader):
    """Client for a reader process speaking the line protocol.

    endpoint forms:
      "tcp://host:port" or "host:port"  connect over TCP
      anything else                     command line, spawned as a child
                                        process wired via stdin/stdout

    Requests are pipelined up to ``max_inflight``; a demux thread
    matches response lines to pending requests by id. A request that
    sees no response within ``timeout`` seconds fails alone with
    ReaderFailure; transport death fails everything pending.
    """

    def __init__(self, endpoint: str, timeout: float = 60.0, max_inflight: int = 32):
        if timeout <= 0 or max_inflight < 1:
            raise ValueError("timeout must be positive and max_inflight >= 1")
        self.endpoint = endpoint
        self.timeout = timeout
        self._inflight = threading.Semaphore(max_inflight)
        self._pending: dict[str, _Pending] = {}
        self._lock = threading.Lock()  # guards _pending/_dead only
        self._wlock = threading.Lock()  # serializes stream writes; never
        # held together with _lock, so a blocked write cannot stall the
        # demux thread
        self._dead: str | None = None
        self._proc: subprocess.Popen | None = None
        self._sock: socket.socket | None = None
        self._connect()
        self._demux = threading.Thread(target=self._demux_loop, daemon=True)
        self._demux.start()

    def _connect(self) -> None:
        target = self.endpoint
        if target.startswith("tcp://"):
            target = target[len("tcp://") :]
        host, sep, port = target.rpartition(":")
        if sep and host and port.isdigit() and " " not in target:
            try:
                self._sock = socket.create_connection((host, int(port)), timeout=self.timeout)
            except OSError as e:
                raise ConnectFailure(f"cannot connect to {self.endpoint!r}: {e}") from e
            self._writer = self._sock.makefile("wb")
            self._lines = self._sock.makefile("rb")
            return
        argv = shlex.split(self.endpoint)
        if not argv:
            raise ConnectFailure("empty reader command")
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
            )
        except OSError as e:
            raise ConnectFailure(f"cannot spawn reader {argv!r}: {e}") from e
        self._writer = self._proc.stdin
        self._lines = self._proc.stdout

    def _demux_loop(self) -> None:
        try:
            for raw in self._lines:
                line = raw.strip()
                if not line:
                    continue
                try:
                    response = json.loads(line.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError):
                    log.warning("external reader: undecodable line %r", raw[:200])
                    continue
                rid = response.get("id") if isinstance(response, dict) else None
                if not isinstance(rid, str):
                    log.warning("external reader: response without id: %r", line[:200])
                    continue
                with self._lock:
                    pending = self._pending.get(rid)
                if pending is None:
                    log.warning("external reader: response for unknown id %r", rid)
                    continue
                pending.response = response
                pending.event.set()
        except Exception as e:  # transport torn down
            log.debug("external reader stream closed: %s", e)
        self._fail_all("reader stream ended")

    def _fail_all(self, reason: str) -> None:
        with self._lock:
            self._dead = self._dead or reason
            pending = list(self._pending.values())
        for p in pending:
            p.event.set()

    def infer(self, request: ReaderRequest) -> SpanScores | ChoiceScores:
        if self._dead:
            raise ReaderFailure(f"reader unavailable: {self._dead}")
        data = json.dumps(request.to_wire(), ensure_ascii=False) + "\n"
        pending = _Pending()
        with self._inflight:
            with self._lock:
                if request.id in self._pending:
                    raise ReaderFailure(f"duplicate in-flight request id {request.id!r}")
                self._pending[request.id] = pending
            try:
                with self._wlock:
                    self._writer.write(data.encode("utf-8"))
                    self._writer.flush()
            except (OSError, ValueError) as e:
                with self._lock:
                    self._pending.pop(request.id, None)
                    self._dead = f"write failed: {e}"
                raise ReaderFailure(f"write failed: {e}") from e
            ok = pending.event.wait(self.timeout)
            with self._lock:
                self._pending.pop(request.id, None)
        if not ok:
            raise ReaderFailure(f"request {request.id!r} timed out after {self.timeout}s")
        response = pending.response
        if response is None:
            raise ReaderFailure(f"request {request.id!r} failed: {self._dead or 'stream ended'}")
        if "error" in response:
            raise ReaderFailure(f"request {request.id!r} failed: {response['error']}")
        try:
            if request.type == REQUEST_SPAN:
                return SpanScores(
                    tuple(float(v) for v in response["start_logits"]),
                    tuple(float(v) for v in response["end_logits"]),
                )
            return ChoiceScores(tuple(float(v) for v in response["option_logits"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ShapeMismatch(f"request {request.id!r}: malformed response: {e}") from e

    def close(self) -> None:
        try:
            with self._wlock:
                self._writer.write(b'{"type": "shutdown"}\n')
                self._writer.flush()
        except (OSError, ValueError):
            pass
        for stream in ("_writer", "_lines"):
            try:
                getattr(self, stream).close()
            except (OSError, ValueError, AttributeError):
                pass
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        if self._proc is not None:
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        self._fail_all("reader closed")
        if self._demux.is_alive():
            self._demux.join(timeout=5)


def serve_stdio(handler) -> None:
    """Run one protocol session on this process's stdin/stdout.

    ``handler(request_dict) -> response_dict`` (without "id"; it is
    filled in here). Used by stub readers in tests and usable by any
    Python-side model server. Reads until EOF or a shutdown message.
    """
    import sys

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        request = json.loads(line)
        if request.get("type") == "shutdown":
            break
        rid = request.get("id")
        try:
            response = handler(request)
        except Exception as e:  # per-request error, session continues
            response = {"error": f"{type(e).__name__}: {e}"}
        response["id"] = rid
        sys.stdout.write(json.dumps(response, ensure_ascii=False) + "\n")
        sys.stdout.flush()
