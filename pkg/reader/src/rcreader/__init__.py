"""Neural reader speaking the dialogue-tracker wire protocol.

The tracker side is a separate package; the only shared surface is the
JSONL example schema (training data) and the NDJSON request/response
protocol (serving). Nothing here imports the tracker.
"""

from rcreader.data import SchemaError, load_examples
from rcreader.model import ModelConfig, TinyReader
from rcreader.serve import ProtocolSession, load_checkpoint
from rcreader.subword import first_piece_positions, piece_ids, segment
from rcreader.train import TrainConfig, train

__all__ = [
    "SchemaError",
    "load_examples",
    "ModelConfig",
    "TinyReader",
    "ProtocolSession",
    "load_checkpoint",
    "segment",
    "piece_ids",
    "first_piece_positions",
    "TrainConfig",
    "train",
]
