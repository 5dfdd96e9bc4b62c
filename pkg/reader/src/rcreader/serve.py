"""NDJSON protocol loop over stdio or TCP.

One JSON request per line; responses carry the request id. A bad
request yields {"id", "error"} without ending the session, and
{"type": "shutdown"} ends it cleanly. Scores are deterministic: eval
mode, no dropout, single thread.
"""

from __future__ import annotations

import json
import logging
import socket
import sys

import torch

from rcreader.model import ModelConfig, TinyReader, pad_batch
from rcreader.subword import choice_sequence, span_sequence

log = logging.getLogger("rcreader")

FLOOR = -30.0  # score for token positions lost to truncation


def load_checkpoint(path: str) -> tuple[TinyReader, dict]:
    checkpoint = torch.load(path, map_location="cpu", weights_only=False)
    model = TinyReader(ModelConfig(**checkpoint["model_config"]))
    model.load_state_dict(checkpoint["state_dict"])
    model.eval()
    torch.set_num_threads(1)
    return model, checkpoint


class ProtocolSession:
    def __init__(self, model: TinyReader):
        self.model = model
        self.buckets = model.config.buckets
        self.max_positions = model.config.max_positions

    def _span(self, request: dict) -> dict:
        tokens = request["tokens"]
        if not isinstance(tokens, list) or not tokens:
            raise ValueError("tokens must be a non-empty list")
        ids, positions = span_sequence(
            str(request["question"]), tokens, self.buckets, self.max_positions
        )
        with torch.no_grad():
            start_pieces, end_pieces = self.model.span_scores(pad_batch([ids]))
        start, end = [], []
        for p in positions:
            if p < 0:
                start.append(FLOOR)
                end.append(FLOOR)
            else:
                start.append(float(start_pieces[0, p]))
                end.append(float(end_pieces[0, p]))
        return {"start_logits": start, "end_logits": end}

    def _choice(self, request: dict) -> dict:
        options = request["options"]
        if not isinstance(options, list) or not options:
            raise ValueError("options must be a non-empty list")
        sequences = [
            choice_sequence(
                str(request["question"]), str(option), request["tokens"],
                self.buckets, self.max_positions, self.model.config.choice_context,
            )
            for option in options
        ]
        with torch.no_grad():
            logits = self.model.choice_scores(pad_batch(sequences))
        return {"option_logits": [float(x) for x in logits]}

    def answer(self, request: dict) -> dict | None:
        """Response dict for one request; None means shutdown."""
        kind = request.get("type")
        if kind == "shutdown":
            return None
        request_id = request.get("id")
        try:
            if kind == "span":
                body = self._span(request)
            elif kind == "choice":
                body = self._choice(request)
            else:
                raise ValueError(f"unknown request type {kind!r}")
        except Exception as exc:  # one bad request never ends the session
            return {"id": request_id, "error": f"{type(exc).__name__}: {exc}"}
        return {"id": request_id, **body}


def _loop(session: ProtocolSession, lines, out) -> None:
    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            response = {"id": None, "error": f"invalid JSON: {exc.msg}"}
        else:
            response = session.answer(request)
            if response is None:
                break
        out.write(json.dumps(response) + "\n")
        out.flush()


def serve_stdio(model: TinyReader) -> int:
    _loop(ProtocolSession(model), sys.stdin, sys.stdout)
    return 0


def serve_tcp(model: TinyReader, host: str, port: int) -> int:
    session = ProtocolSession(model)
    with socket.create_server((host, port)) as server:
        log.info("listening on %s:%d", host, server.getsockname()[1])
        connection, peer = server.accept()
        log.info("client %s connected", peer)
        with connection, connection.makefile("r", encoding="utf-8") as reader, \
                connection.makefile("w", encoding="utf-8") as writer:
            _loop(session, reader, writer)
    return 0
