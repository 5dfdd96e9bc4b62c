"""Hash-bucket subword pieces and the token alignment contract.

Tokens are split into fixed-width character chunks and each chunk is
hashed into an embedding bucket, so there is no vocabulary file and any
string encodes. The pipeline's score vectors are per whitespace token,
while the encoder works per piece; the documented alignment is
first-subword pooling: token t's score is read at the position of its
first piece. Alternate implementations must match that rule to be
score-compatible.
"""

from __future__ import annotations

PAD = 0
CLS = 1
SEP = 2
RESERVED = 3

PIECE_WIDTH = 4

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def segment(token: str) -> tuple[str, ...]:
    """Fixed-width chunks; short tokens are a single piece."""
    if len(token) <= PIECE_WIDTH:
        return (token,)
    return tuple(
        token[i : i + PIECE_WIDTH] for i in range(0, len(token), PIECE_WIDTH)
    )


def piece_id(piece: str, buckets: int) -> int:
    return RESERVED + _fnv1a(piece.encode("utf-8")) % buckets


def piece_ids(tokens, buckets: int) -> list[int]:
    out: list[int] = []
    for token in tokens:
        out.extend(piece_id(p, buckets) for p in segment(token))
    return out


def first_piece_positions(tokens, offset: int) -> list[int]:
    """Sequence position of each token's first piece, given that the
    token block starts at ``offset`` in the assembled sequence."""
    positions = []
    at = offset
    for token in tokens:
        positions.append(at)
        at += len(segment(token))
    return positions


def span_sequence(
    question: str, tokens, buckets: int, max_positions: int
) -> tuple[list[int], list[int]]:
    """[CLS] question [SEP] context pieces.

    Returns (ids, per-token first-piece positions). A token whose first
    piece falls beyond max_positions gets position -1; callers must give
    such tokens a floor score rather than dropping them, because the
    response vector length always matches len(tokens).
    """
    ids = [CLS]
    ids.extend(piece_ids(question.split(), buckets))
    ids.append(SEP)
    positions = first_piece_positions(tokens, offset=len(ids))
    ids.extend(piece_ids(tokens, buckets))
    if len(ids) > max_positions:
        ids = ids[:max_positions]
        positions = [p if p < max_positions else -1 for p in positions]
    return ids, positions


def choice_sequence(
    question: str, option: str, tokens, buckets: int, max_positions: int,
    context_budget: int = 0,
) -> list[int]:
    """[CLS] question [SEP] option [SEP] context pieces, clipped.

    A positive context_budget keeps only that many trailing context
    pieces (the most recent turns) before assembly; scores stay
    comparable across options because every option sees the same window.
    """
    ids = [CLS]
    ids.extend(piece_ids(question.split(), buckets))
    ids.append(SEP)
    ids.extend(piece_ids(option.split(), buckets))
    ids.append(SEP)
    context = piece_ids(tokens, buckets)
    if context_budget > 0:
        context = context[-context_budget:]
    ids.extend(context)
    return ids[:max_positions]
