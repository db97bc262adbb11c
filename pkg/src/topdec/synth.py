"""Synthetic data: random valid trees and a compositional toy grammar.

The random generator drives property tests (round-trips, mask algebra).
The grammar produces train/test corpora for desk-scale end-to-end runs:
enough lexical variety that small fully annotated subsets undersample the
word/slot pairings, which is exactly where partially annotated data helps.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from .top_ir import (
    Example,
    SymbolKind,
    SymbolLabel,
    TopNode,
    TopTree,
    intent,
    slot,
    token_node,
)

_GEN_INTENTS = tuple(intent(f"IN:GEN_{c}") for c in "ABC")
_GEN_SLOTS = tuple(slot(f"SL:GEN_{c}") for c in "PQRS")
_GEN_WORDS = tuple(f"w{i:02d}" for i in range(40))


@dataclass(frozen=True)
class TreeGenConfig:
    """Knobs for the random tree generator.

    mask_safe forces every symbol node to keep at least one direct token
    and forbids a label from repeating along an ancestor chain, the two
    conditions under which left-to-right fragment indexing provably agrees
    with pre-order replica indexing.
    """

    max_depth: int = 3
    max_children: int = 3
    max_tokens: int = 10
    symbol_child_prob: float = 0.35
    mask_safe: bool = False
    intents: tuple[SymbolLabel, ...] = _GEN_INTENTS
    slots: tuple[SymbolLabel, ...] = _GEN_SLOTS
    words: tuple[str, ...] = _GEN_WORDS


def random_top_tree(
    rng: random.Random, config: TreeGenConfig = TreeGenConfig()
) -> TopTree:
    """Draw one valid tree: alternating kinds, every symbol anchored to a token."""

    budget = [rng.randint(1, config.max_tokens)]

    def pick_label(kind: SymbolKind, forbidden: frozenset[SymbolLabel]) -> SymbolLabel:
        pool = config.intents if kind is SymbolKind.INTENT else config.slots
        if config.mask_safe:
            pool = tuple(l for l in pool if l not in forbidden) or pool
        return rng.choice(pool)

    def grow(kind: SymbolKind, depth: int, forbidden: frozenset[SymbolLabel]) -> TopNode:
        label = pick_label(kind, forbidden)
        child_kind = (
            SymbolKind.SLOT if kind is SymbolKind.INTENT else SymbolKind.INTENT
        )
        n_children = rng.randint(1, config.max_children)
        children: list[TopNode] = []
        has_token = False
        for _ in range(n_children):
            want_symbol = (
                depth < config.max_depth
                and budget[0] > 1
                and rng.random() < config.symbol_child_prob
            )
            if want_symbol:
                children.append(
                    grow(child_kind, depth + 1, forbidden | {label} if config.mask_safe else forbidden)
                )
            elif budget[0] > 0:
                budget[0] -= 1
                has_token = True
                children.append(token_node(-1, rng.choice(config.words)))
        need_token = config.mask_safe or not children
        if (need_token and not has_token) or not children:
            if budget[0] > 0:
                budget[0] -= 1
            children.append(token_node(-1, rng.choice(config.words)))
        return TopNode(label, tuple(children))

    skeleton = grow(SymbolKind.INTENT, 1, frozenset())
    counter = [0]

    def number(node: TopNode) -> TopNode:
        if node.is_token:
            position = counter[0]
            counter[0] += 1
            return token_node(position, node.label.text)
        return TopNode(node.label, tuple(number(c) for c in node.children))

    return TopTree(number(skeleton))


# ---------------------------------------------------------------------------
# Compositional grammar
# ---------------------------------------------------------------------------

IN_DIRECTION = intent("IN:GET_DIRECTION")
IN_EVENT = intent("IN:FIND_EVENT")
IN_WEATHER = intent("IN:GET_WEATHER")
IN_REMINDER = intent("IN:CREATE_REMINDER")
SL_DESTINATION = slot("SL:DESTINATION")
SL_CATEGORY = slot("SL:CATEGORY_EVENT")
SL_ORGANIZER = slot("SL:ORGANIZER")
SL_DATE = slot("SL:DATE_TIME")
SL_LOCATION = slot("SL:LOCATION")
SL_TODO = slot("SL:TODO")

_PLACES = tuple(f"place{i:02d}" for i in range(96))
_CITIES = tuple(f"city{i:02d}" for i in range(96))
_NAMES = tuple(f"name{i:02d}" for i in range(96))
_CATEGORIES = tuple(f"event{i:02d}" for i in range(72))
_DATES = (
    "tomorrow",
    "today",
    "tonight",
    "monday",
    "tuesday",
    "wednesday",
    "thursday",
    "friday",
    "saturday",
    "sunday",
    "this weekend",
    "next week",
    "this evening",
    "next month",
    "friday night",
    "sunday morning",
)
_TODOS = tuple(f"chore{i:02d}" for i in range(72))


def _words(rng: random.Random, pool: Sequence[str]) -> list[str]:
    return rng.choice(pool).split(" ")


def _leaf_slot(rng: random.Random, label: SymbolLabel, pool: Sequence[str]) -> list:
    return [(label, _words(rng, pool))]


def _date(rng: random.Random) -> list:
    return _leaf_slot(rng, SL_DATE, _DATES)


def _event(rng: random.Random, allow_date: bool) -> list:
    """Children of IN:FIND_EVENT as (label, words) slot specs and bare words."""
    pattern = rng.randrange(4 if allow_date else 2)
    if pattern == 0:
        out = ["find", "the", (SL_CATEGORY, _words(rng, _CATEGORIES)), "by", (SL_ORGANIZER, _words(rng, _NAMES))]
    elif pattern == 1:
        out = [(SL_ORGANIZER, _words(rng, _NAMES)), "'s", (SL_CATEGORY, _words(rng, _CATEGORIES))]
    elif pattern == 2:
        out = ["the", (SL_CATEGORY, _words(rng, _CATEGORIES)), "on", (SL_DATE, _words(rng, _DATES))]
    else:
        out = ["events", "from", (SL_DATE, _words(rng, _DATES)), "to", (SL_DATE, _words(rng, _DATES))]
    return out


def _spec_to_node(spec, positions: list[int]) -> TopNode:
    if isinstance(spec, str):
        idx = positions[0]
        positions[0] += 1
        return token_node(idx, spec)
    label, payload = spec
    return TopNode(label, tuple(_spec_to_node(item, positions) for item in payload))


def grammar_example(rng: random.Random) -> Example:
    """One sampled query/tree pair from the toy task grammar."""
    top = rng.randrange(4)
    if top == 0:
        lead = rng.choice((["directions", "to"], ["navigate", "to"], ["route", "to"]))
        if rng.random() < 0.45:
            dest: list = [(SL_DESTINATION, [(IN_EVENT, _event(rng, allow_date=False))])]
        else:
            dest = [(SL_DESTINATION, _words(rng, _PLACES))]
        items = lead + dest
        if rng.random() < 0.35:
            items += ["leaving"] + _date(rng)
        spec = (IN_DIRECTION, items)
    elif top == 1:
        spec = (IN_EVENT, _event(rng, allow_date=True))
    elif top == 2:
        items = ["weather", "in", (SL_LOCATION, _words(rng, _CITIES))]
        if rng.random() < 0.5:
            items += ["for"] + _date(rng)
        spec = (IN_WEATHER, items)
    else:
        items = ["remind", "me", "to", (SL_TODO, _words(rng, _TODOS))]
        if rng.random() < 0.5:
            items += ["at"] + _date(rng)
        spec = (IN_REMINDER, items)

    positions = [0]
    root = _spec_to_node(spec, positions)
    tree = TopTree(root)
    tokens = tree.tokens()
    return Example(" ".join(tokens), tokens, tree)


def grammar_dataset(count: int, seed: int) -> list[Example]:
    rng = random.Random(seed)
    return [grammar_example(rng) for _ in range(count)]
