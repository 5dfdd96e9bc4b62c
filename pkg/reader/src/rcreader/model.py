"""Tiny transformer encoder with span and choice heads.

Sized for CPU fine-tuning in seconds, not for leaderboard accuracy: the
published results this substitutes for came from large pretrained
encoders, which are out of scope here. The heads mirror the serving
contract: per-piece start/end scores pooled to tokens by the caller,
and one scalar per (question, option, context) sequence pooled at CLS,
jointly softmaxed across an item's options by the training loss.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from rcreader.subword import PAD


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    ffn: int = 128
    buckets: int = 4096
    max_positions: int = 512
    choice_context: int = 0  # >0: trailing context pieces kept in choice sequences

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError("d_model must divide evenly into heads")
        if min(self.d_model, self.layers, self.heads, self.ffn, self.buckets) < 1:
            raise ValueError("all model dimensions must be positive")
        if self.choice_context < 0:
            raise ValueError("choice_context must be >= 0")

    def as_dict(self) -> dict:
        return asdict(self)


class TinyReader(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        vocab = config.buckets + 3  # PAD/CLS/SEP ahead of the hash buckets
        self.embed = nn.Embedding(vocab, config.d_model, padding_idx=PAD)
        self.positions = nn.Embedding(config.max_positions, config.d_model)
        layer = nn.TransformerEncoderLayer(
            d_model=config.d_model,
            nhead=config.heads,
            dim_feedforward=config.ffn,
            batch_first=True,
            dropout=0.0,  # deterministic in train and eval alike
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=config.layers)
        self.span_head = nn.Linear(config.d_model, 2)
        self.choice_head = nn.Linear(config.d_model, 1)

    def encode(self, ids: torch.Tensor) -> torch.Tensor:
        """(B, L) int ids -> (B, L, d) states; PAD positions are masked."""
        index = torch.arange(ids.shape[1], device=ids.device)
        states = self.embed(ids) + self.positions(index)[None, :, :]
        return self.encoder(states, src_key_padding_mask=ids.eq(PAD))

    def span_scores(self, ids: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, L) -> per-piece start and end score tensors, each (B, L)."""
        heads = self.span_head(self.encode(ids))
        return heads[..., 0], heads[..., 1]

    def choice_scores(self, ids: torch.Tensor) -> torch.Tensor:
        """(m, L) option sequences -> (m,) logits pooled at CLS."""
        return self.choice_head(self.encode(ids)[:, 0, :]).squeeze(-1)


def pad_batch(sequences: list[list[int]]) -> torch.Tensor:
    width = max(len(s) for s in sequences)
    out = torch.full((len(sequences), width), PAD, dtype=torch.long)
    for row, seq in enumerate(sequences):
        out[row, : len(seq)] = torch.tensor(seq, dtype=torch.long)
    return out
