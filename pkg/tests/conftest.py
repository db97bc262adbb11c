"""Shared fixtures: the worked example from the docs plus tiny vocabularies."""

from __future__ import annotations

import numpy as np
import pytest

from topdec import (
    PartialTree,
    ScoreMatrix,
    SymbolLabel,
    TopTree,
    Vocabulary,
    apply_structural_mask,
    build_node_set,
    parse_top,
)
from topdec.top_ir import intent, slot

EXAMPLE_STRING = (
    "[IN:GET_DIRECTION directions to [SL:DESTINATION [IN:FIND_EVENT "
    "[SL:ORGANIZER John ] 's [SL:CATEGORY party ] ] ] ]"
)
EXAMPLE_TOKENS = ("directions", "to", "John", "'s", "party")

IN_GET_DIRECTION = intent("IN:GET_DIRECTION")
IN_FIND_EVENT = intent("IN:FIND_EVENT")
IN_GET_EVENT = intent("IN:GET_EVENT")
SL_DESTINATION = slot("SL:DESTINATION")
SL_ORGANIZER = slot("SL:ORGANIZER")
SL_CATEGORY = slot("SL:CATEGORY")
SL_DATE_TIME = slot("SL:DATE_TIME")

EXAMPLE_SYMBOLS = (
    IN_FIND_EVENT,
    IN_GET_DIRECTION,
    IN_GET_EVENT,
    SL_CATEGORY,
    SL_DATE_TIME,
    SL_DESTINATION,
    SL_ORGANIZER,
)


@pytest.fixture
def example_tree() -> TopTree:
    return parse_top(EXAMPLE_STRING, EXAMPLE_TOKENS)


@pytest.fixture
def example_vocab() -> Vocabulary:
    return Vocabulary(EXAMPLE_SYMBOLS, {label: 1 for label in EXAMPLE_SYMBOLS})


@pytest.fixture
def example_node_set(example_vocab):
    return build_node_set(EXAMPLE_TOKENS, example_vocab)


@pytest.fixture
def tiny_vocab() -> Vocabulary:
    la, lb = intent("IN:A"), slot("SL:B")
    return Vocabulary((la, lb), {la: 1, lb: 1})


def random_matrix(node_set, rng: np.random.Generator, scale: float = 1.0) -> ScoreMatrix:
    raw = rng.normal(size=(len(node_set), len(node_set))) * scale
    return ScoreMatrix(node_set, apply_structural_mask(raw, node_set))


def integer_matrix(node_set, rng: np.random.Generator, lo: int = -20, hi: int = 20) -> ScoreMatrix:
    raw = rng.integers(lo, hi + 1, size=(len(node_set), len(node_set))).astype(float)
    return ScoreMatrix(node_set, apply_structural_mask(raw, node_set))
