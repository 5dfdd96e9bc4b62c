"""JSONL example loading with line-addressed schema errors."""

from __future__ import annotations

import json


class SchemaError(ValueError):
    pass


def _require(row: dict, key: str, kinds, where: str):
    if key not in row:
        raise SchemaError(f"{where}: missing field {key!r}")
    value = row[key]
    if not isinstance(value, kinds):
        raise SchemaError(f"{where}: field {key!r} has type {type(value).__name__}")
    return value


def _check_span(row: dict, where: str) -> None:
    tokens = _require(row, "tokens", list, where)
    answer = _require(row, "answer", dict, where)
    start = _require(answer, "start", int, where)
    end = _require(answer, "end", int, where)
    _require(answer, "kind", str, where)
    if not (0 <= start <= end < len(tokens)):
        raise SchemaError(f"{where}: answer ({start}, {end}) out of range for {len(tokens)} tokens")


def _check_choice(row: dict, where: str) -> None:
    options = _require(row, "options", list, where)
    gold = _require(row, "gold_index", int, where)
    if not options:
        raise SchemaError(f"{where}: empty options")
    if not (0 <= gold < len(options)):
        raise SchemaError(f"{where}: gold_index {gold} out of range for {len(options)} options")


def load_examples(path: str) -> list[dict]:
    """Parse and validate one JSONL example per line."""
    rows: list[dict] = []
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{number}"
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{where}: invalid JSON ({exc.msg})") from None
            if not isinstance(row, dict):
                raise SchemaError(f"{where}: expected an object")
            kind = _require(row, "type", str, where)
            _require(row, "question", str, where)
            _require(row, "tokens", list, where)
            if kind == "span":
                _check_span(row, where)
            elif kind == "choice":
                _check_choice(row, where)
            else:
                raise SchemaError(f"{where}: unknown example type {kind!r}")
            rows.append(row)
    if not rows:
        raise SchemaError(f"{path}: no examples")
    return rows
