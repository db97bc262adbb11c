"""Marshalling layer over the topdec library.

Nothing here reimplements decoding or masking: inputs are converted to the
library's types, the library does the work, and results come back as
strings and plain dictionaries.  Callers producing scores in another
framework hand over either the JSON wire format or a dense array.
Exceptions are the library's own error classes, unchanged.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from topdec import (
    DecodeResult,
    PartialTree,
    ScoreMatrix,
    Vocabulary,
    apply_structural_mask,
    build_node_set,
    decode,
    extract_mask,
    matrix_from_json,
    parse_to_top,
    serialize_top,
)
from topdec.errors import InvalidParse, UnanchoredSubtree
from topdec.symbol_table import DEFAULT_REPLICA_PAD
from topdec.top_ir import SupervisionMode, parse_partial


class BridgeScoreMatrix:
    """A score matrix assembled from external data.

    ``from_json`` accepts the interchange format (row-major scores with
    null for forbidden edges).  ``from_dense`` takes an in-memory array;
    NaN, None-free -inf, and the structurally forbidden entries all end up
    as forbidden edges.
    """

    def __init__(self, matrix: ScoreMatrix):
        self.matrix = matrix

    @classmethod
    def from_json(
        cls, payload: str | dict, vocab: Vocabulary, pad: int | None = None
    ) -> "BridgeScoreMatrix":
        return cls(matrix_from_json(payload, vocab, pad))

    @classmethod
    def from_dense(
        cls,
        tokens: Sequence[str],
        vocab: Vocabulary,
        scores,
        pad: int = DEFAULT_REPLICA_PAD,
    ) -> "BridgeScoreMatrix":
        node_set = build_node_set(tokens, vocab, pad)
        raw = np.array(scores, dtype=float)
        raw = np.where(np.isnan(raw), -np.inf, raw)
        matrix = ScoreMatrix(node_set, apply_structural_mask(raw, node_set))
        matrix.validate()
        return cls(matrix)


INVALID_SENTINEL = "<INVALID:{}>"


def _tree_text(result: DecodeResult) -> str:
    try:
        return serialize_top(parse_to_top(result.parse))
    except InvalidParse as exc:
        return INVALID_SENTINEL.format(exc.reason)
    except UnanchoredSubtree:
        return INVALID_SENTINEL.format("unanchored_subtree")


def bridge_decode(
    scores: BridgeScoreMatrix | str | dict,
    vocab: Vocabulary | None = None,
    pad: int | None = None,
) -> dict:
    """Decode external scores; returns the serialized tree and diagnostics.

    The ``top`` entry matches the decode CLI byte for byte, including the
    ``<INVALID:reason>`` sentinel when the best tree is not a valid
    meaning representation.
    """
    if not isinstance(scores, BridgeScoreMatrix):
        if vocab is None:
            raise ValueError("decoding raw JSON requires a vocabulary")
        scores = BridgeScoreMatrix.from_json(scores, vocab, pad)
    result = decode(scores.matrix)
    d = result.diagnostics
    return {
        "top": _tree_text(result),
        "total_score": float(result.total_score),
        "unused_depth_repairs": d.unused_depth_repairs,
        "root_candidates": d.root_candidates,
        "root_fallback": d.root_fallback,
    }


def format_prediction_line(decoded: Mapping, line_no: int) -> str:
    """Render a bridge_decode result exactly as the CLI prediction dump does."""
    return "\t".join(
        (
            str(line_no),
            decoded["top"],
            f"{decoded['total_score']:.6f}",
            str(decoded["unused_depth_repairs"]),
            str(decoded["root_candidates"]),
        )
    )


def bridge_mask(
    partial: PartialTree | str,
    tokens: Sequence[str],
    vocab: Vocabulary,
    mode: str | SupervisionMode | None = None,
    pad: int = DEFAULT_REPLICA_PAD,
) -> list[tuple[int, int]]:
    """Observed (child, parent) node-index pairs for a partial annotation.

    Accepts an already-parsed annotation or its dataset payload string
    (``mode`` required in that case).
    """
    if isinstance(partial, str):
        if mode is None:
            raise ValueError("parsing a payload string requires a mode")
        if isinstance(mode, str):
            mode = SupervisionMode(mode)
        partial = parse_partial(mode, partial, tokens)
    node_set = build_node_set(tokens, vocab, pad)
    return list(extract_mask(partial, node_set).observed)
