"""Fine-tuning on generated JSONL examples, with staged checkpoints.

Two stages mirror the coarse-then-fine workflow: an "rc-coarse"
checkpoint trained on generic reading-comprehension-shaped examples can
seed a "dst-fine" run, which records its parent stage. Training is
deterministic for a given config (single thread, fixed seeds, no
dropout).
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field

import torch
from torch import nn

from rcreader.data import SchemaError, load_examples
from rcreader.model import ModelConfig, TinyReader, pad_batch
from rcreader.subword import choice_sequence, span_sequence

log = logging.getLogger("rcreader")

STAGES = ("rc-coarse", "dst-fine")


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "dst-fine"
    base_model: str = "hashpiece-tiny"
    seed: int = 0
    epochs: int = 2
    lr: float = 3e-4
    batch_size: int = 32
    init_from: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise SchemaError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise SchemaError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise SchemaError("lr must be positive")

    @classmethod
    def from_file(cls, path: str) -> "TrainConfig":
        with open(path, encoding="utf-8") as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(raw, dict):
            raise SchemaError(f"{path}: expected a config object")
        model_raw = raw.pop("model", {})
        known = {f for f in cls.__dataclass_fields__ if f != "model"}
        unknown = set(raw) - known
        if unknown:
            raise SchemaError(f"{path}: unknown config keys {sorted(unknown)}")
        try:
            model = ModelConfig(**model_raw)
        except TypeError as exc:
            raise SchemaError(f"{path}: bad model section ({exc})") from None
        return cls(model=model, **raw)


@dataclass(frozen=True)
class _SpanItem:
    ids: list[int]
    positions: list[int]  # per-token first-piece position, -1 if truncated
    start: int
    end: int


@dataclass(frozen=True)
class _ChoiceItem:
    option_ids: list[list[int]]
    gold: int


def prepare(rows: list[dict], model_config: ModelConfig) -> tuple[list[_SpanItem], list[_ChoiceItem]]:
    """Encode every example once; epochs reshuffle these prepared items."""
    spans: list[_SpanItem] = []
    choices: list[_ChoiceItem] = []
    skipped = 0
    for row in rows:
        if row["type"] == "span":
            ids, positions = span_sequence(
                row["question"], row["tokens"], model_config.buckets,
                model_config.max_positions,
            )
            start, end = row["answer"]["start"], row["answer"]["end"]
            if positions[start] < 0 or positions[end] < 0:
                skipped += 1
                continue
            spans.append(_SpanItem(ids, positions, start, end))
        else:
            option_ids = [
                choice_sequence(
                    row["question"], option, row["tokens"], model_config.buckets,
                    model_config.max_positions, model_config.choice_context,
                )
                for option in row["options"]
            ]
            choices.append(_ChoiceItem(option_ids, row["gold_index"]))
    if skipped:
        log.warning("%d span answers truncated at %d positions, skipped",
                    skipped, model_config.max_positions)
    return spans, choices


def _span_loss(model: TinyReader, batch: list[_SpanItem]) -> torch.Tensor:
    """Summed start+end cross-entropy over token positions (first-subword
    pooling). The (0, 0) sentinel answer trains the None decision."""
    start_pieces, end_pieces = model.span_scores(pad_batch([item.ids for item in batch]))
    width = max(len(item.positions) for item in batch)
    start_rows, end_rows = [], []
    for row_index, item in enumerate(batch):
        index = torch.tensor([max(p, 0) for p in item.positions], dtype=torch.long)
        mask = torch.tensor([p >= 0 for p in item.positions])
        srow = torch.full((width,), -30.0)
        erow = torch.full((width,), -30.0)
        srow[: len(item.positions)] = torch.where(mask, start_pieces[row_index, index], -30.0)
        erow[: len(item.positions)] = torch.where(mask, end_pieces[row_index, index], -30.0)
        start_rows.append(srow)
        end_rows.append(erow)
    target = torch.tensor([(item.start, item.end) for item in batch], dtype=torch.long)
    loss = nn.functional.cross_entropy(torch.stack(start_rows), target[:, 0], reduction="sum")
    loss = loss + nn.functional.cross_entropy(torch.stack(end_rows), target[:, 1], reduction="sum")
    return loss


def _choice_loss(model: TinyReader, batch: list[_ChoiceItem]) -> torch.Tensor:
    """Summed loss over a group of choice items; each item's options are
    jointly softmaxed against its gold index."""
    sequences: list[list[int]] = []
    extents: list[tuple[int, int, int]] = []
    for item in batch:
        extents.append((len(sequences), len(item.option_ids), item.gold))
        sequences.extend(item.option_ids)
    logits = model.choice_scores(pad_batch(sequences))
    loss = logits.new_zeros(())
    for offset, count, gold in extents:
        target = torch.tensor([gold], dtype=torch.long)
        loss = loss + nn.functional.cross_entropy(logits[offset : offset + count][None, :], target)
    return loss


def train(examples_path: str, config: TrainConfig, out_path: str) -> dict:
    """Fine-tune and save a checkpoint; returns the checkpoint metadata.

    Per-epoch mean losses are recorded in the checkpoint so downstream
    sanity checks (loss strictly decreasing on a toy set) need no
    retraining.
    """
    torch.manual_seed(config.seed)
    torch.set_num_threads(1)
    rows = load_examples(examples_path)
    spans, choices = prepare(rows, config.model)

    parent_stage = None
    model = TinyReader(config.model)
    if config.init_from:
        parent = torch.load(config.init_from, map_location="cpu", weights_only=False)
        if parent.get("model_config") != config.model.as_dict():
            raise SchemaError("init_from checkpoint has a different model shape")
        model.load_state_dict(parent["state_dict"])
        parent_stage = parent["stage"]

    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    shuffler = random.Random(config.seed)
    epoch_losses: list[float] = []
    model.train()
    # one step is either all-span or all-choice; choice groups are
    # smaller because every option is its own encoded sequence
    choice_group = max(1, config.batch_size // 4)
    try:
        for epoch in range(config.epochs):
            span_order = spans[:]
            choice_order = choices[:]
            shuffler.shuffle(span_order)
            shuffler.shuffle(choice_order)
            steps: list[tuple[str, list]] = []
            for at in range(0, len(span_order), config.batch_size):
                steps.append(("span", span_order[at : at + config.batch_size]))
            for at in range(0, len(choice_order), choice_group):
                steps.append(("choice", choice_order[at : at + choice_group]))
            shuffler.shuffle(steps)

            total = 0.0
            counted = 0
            for kind, batch in steps:
                loss = _span_loss(model, batch) if kind == "span" else _choice_loss(model, batch)
                optimizer.zero_grad()
                (loss / len(batch)).backward()
                optimizer.step()
                total += float(loss.detach())
                counted += len(batch)
            mean = total / counted if counted else 0.0
            epoch_losses.append(mean)
            log.info("epoch %d/%d loss %.4f", epoch + 1, config.epochs, mean)
    except (MemoryError, RuntimeError) as exc:
        raise SchemaError(f"training aborted: {exc}") from None

    checkpoint = {
        "stage": config.stage,
        "base_model": config.base_model,
        "parent_stage": parent_stage,
        "seed": config.seed,
        "epoch_losses": epoch_losses,
        "model_config": config.model.as_dict(),
        "state_dict": model.state_dict(),
    }
    torch.save(checkpoint, out_path)
    return {k: v for k, v in checkpoint.items() if k != "state_dict"}
