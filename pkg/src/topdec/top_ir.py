"""Tree representations, bracketed serialization, and exact-match comparison.

A meaning representation is an ordered tree whose internal nodes carry
intent (``IN:``) or slot (``SL:``) labels and whose leaves are query
tokens.  Intents nest slots, slots nest intents, and the leaf tokens read
left to right reproduce the tokenized query.
"""

from __future__ import annotations

import enum
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import (
    DataFormatError,
    IllegalLabel,
    IllegalNesting,
    TokenMismatch,
    UnbalancedBrackets,
)

INTENT_PREFIX = "IN:"
SLOT_PREFIX = "SL:"


class SymbolKind(enum.Enum):
    INTENT = "intent"
    SLOT = "slot"


@dataclass(frozen=True)
class SymbolLabel:
    """An intent or slot label such as ``IN:GET_DIRECTION``.

    Labels are case-sensitive and must carry the prefix matching their kind.
    """

    kind: SymbolKind
    name: str

    def __post_init__(self) -> None:
        prefix = INTENT_PREFIX if self.kind is SymbolKind.INTENT else SLOT_PREFIX
        if not self.name.startswith(prefix):
            raise IllegalLabel(f"label {self.name!r} does not start with {prefix!r}")

    @classmethod
    def from_name(cls, name: str) -> "SymbolLabel":
        if name.startswith(INTENT_PREFIX):
            return cls(SymbolKind.INTENT, name)
        if name.startswith(SLOT_PREFIX):
            return cls(SymbolKind.SLOT, name)
        raise IllegalLabel(f"label {name!r} must start with {INTENT_PREFIX!r} or {SLOT_PREFIX!r}")

    def __str__(self) -> str:
        return self.name


def intent(name: str) -> SymbolLabel:
    return SymbolLabel(SymbolKind.INTENT, name)


def slot(name: str) -> SymbolLabel:
    return SymbolLabel(SymbolKind.SLOT, name)


@dataclass(frozen=True)
class TokenRef:
    """A query token leaf: 0-based position plus surface text."""

    position: int
    text: str


@dataclass(frozen=True)
class TopNode:
    """One tree node: a symbol with ordered children, or a childless token."""

    label: SymbolLabel | TokenRef
    children: tuple["TopNode", ...] = ()

    def __post_init__(self) -> None:
        if isinstance(self.label, TokenRef) and self.children:
            raise IllegalNesting("token nodes cannot have children")

    @property
    def is_token(self) -> bool:
        return isinstance(self.label, TokenRef)


def token_node(position: int, text: str) -> TopNode:
    return TopNode(TokenRef(position, text))


@dataclass(frozen=True)
class TopTree:
    """A complete meaning representation rooted at an intent.

    Construction validates structure: the root is an intent, intents and
    slots strictly alternate down the tree, and leaf positions are exactly
    0..n-1 in left-to-right order.
    """

    root: TopNode

    def __post_init__(self) -> None:
        if self.root.is_token:
            raise IllegalNesting("tree root must be an intent, not a token")
        if self.root.label.kind is not SymbolKind.INTENT:
            raise IllegalNesting(f"tree root must be an intent, got {self.root.label}")
        _check_alternation(self.root)
        leaves = list(iter_token_refs(self.root))
        for expected, ref in enumerate(leaves):
            if ref.position != expected:
                raise TokenMismatch(
                    f"leaf positions must be consecutive from 0; "
                    f"found {ref.position} at leaf {expected}"
                )

    def tokens(self) -> tuple[str, ...]:
        return tuple(ref.text for ref in iter_token_refs(self.root))


def _check_alternation(node: TopNode) -> None:
    for child in node.children:
        if child.is_token:
            continue
        if child.label.kind == node.label.kind:
            raise IllegalNesting(
                f"{child.label} cannot be a direct child of {node.label}"
            )
        _check_alternation(child)


def iter_token_refs(node: TopNode) -> Iterator[TokenRef]:
    if isinstance(node.label, TokenRef):
        yield node.label
        return
    for child in node.children:
        yield from iter_token_refs(child)


def iter_symbol_nodes(node: TopNode) -> Iterator[TopNode]:
    """Pre-order iterator over symbol (non-token) nodes."""
    if node.is_token:
        return
    yield node
    for child in node.children:
        yield from iter_symbol_nodes(child)


def exact_match(predicted: TopTree, gold: TopTree) -> bool:
    """True iff the trees are identical, including child order and token positions."""
    return predicted == gold


# ---------------------------------------------------------------------------
# Bracketed serialization
# ---------------------------------------------------------------------------


def serialize_top(tree: TopTree) -> str:
    """Serialize to the space-separated bracket format, e.g. ``[IN:X hi ]``."""
    return serialize_node(tree.root)


def serialize_node(node: TopNode) -> str:
    if isinstance(node.label, TokenRef):
        return node.label.text
    parts = [f"[{node.label.name}"]
    parts.extend(serialize_node(child) for child in node.children)
    parts.append("]")
    return " ".join(parts)


def parse_top(serialized: str, tokens: Sequence[str]) -> TopTree:
    """Parse a bracketed tree, checking leaves against the tokenized query.

    Comparison is whitespace-normalized; emission via :func:`serialize_top`
    is byte-exact.
    """
    root, consumed = _parse_items(serialized.split(), tokens, allow_tokens=True)
    if consumed != len(tokens):
        raise TokenMismatch(
            f"tree uses {consumed} tokens but the query has {len(tokens)}"
        )
    return TopTree(root)


def parse_symbol_tree(serialized: str) -> TopNode:
    """Parse a token-free bracketed tree (used by nonterminal-only rows)."""
    root, _ = _parse_items(serialized.split(), (), allow_tokens=False)
    if root.is_token or root.label.kind is not SymbolKind.INTENT:
        raise IllegalNesting("symbol tree root must be an intent")
    _check_alternation(root)
    return root


def _parse_items(
    items: Sequence[str], tokens: Sequence[str], allow_tokens: bool
) -> tuple[TopNode, int]:
    stack: list[tuple[SymbolLabel, list[TopNode]]] = []
    root: TopNode | None = None
    pos = 0
    for item in items:
        if item.startswith("["):
            label = SymbolLabel.from_name(item[1:])
            if stack:
                if stack[-1][0].kind == label.kind:
                    raise IllegalNesting(
                        f"{label} cannot nest directly under {stack[-1][0]}"
                    )
            else:
                if root is not None:
                    raise UnbalancedBrackets("content after the root closed")
                if label.kind is not SymbolKind.INTENT:
                    raise IllegalNesting(f"root must be an intent, got {label}")
            stack.append((label, []))
        elif item == "]":
            if not stack:
                raise UnbalancedBrackets("unmatched ']'")
            label, children = stack.pop()
            node = TopNode(label, tuple(children))
            if stack:
                stack[-1][1].append(node)
            else:
                root = node
        else:
            if not allow_tokens:
                raise TokenMismatch(f"unexpected token {item!r} in token-free tree")
            if not stack:
                raise UnbalancedBrackets(f"token {item!r} outside any bracket")
            if pos >= len(tokens):
                raise TokenMismatch(f"tree has extra token {item!r}")
            if tokens[pos] != item:
                raise TokenMismatch(
                    f"tree token {item!r} != query token {tokens[pos]!r} at position {pos}"
                )
            stack[-1][1].append(token_node(pos, item))
            pos += 1
    if stack:
        raise UnbalancedBrackets("unclosed '['")
    if root is None:
        raise UnbalancedBrackets("empty serialization")
    return root, pos


# ---------------------------------------------------------------------------
# Partial supervision
# ---------------------------------------------------------------------------


class SupervisionMode(enum.Enum):
    FULL = "FULL"
    TERMINAL_ONLY = "TERM"
    NONTERMINAL_ONLY = "NONTERM"


@dataclass(frozen=True)
class PartialTree:
    """A possibly partial annotation.

    FULL holds the complete tree.  TERM holds depth-2 fragments, one symbol
    over its directly attached tokens.  NONTERM holds the symbol tree with
    every token deleted.
    """

    mode: SupervisionMode
    tree: TopTree | None = None
    fragments: tuple[TopNode, ...] = ()
    symbols: TopNode | None = None

    def __post_init__(self) -> None:
        if self.mode is SupervisionMode.FULL:
            if self.tree is None:
                raise DataFormatError("FULL annotation requires a tree")
        elif self.mode is SupervisionMode.TERMINAL_ONLY:
            for frag in self.fragments:
                _check_fragment(frag)
        else:
            if self.symbols is None:
                raise DataFormatError("NONTERM annotation requires a symbol tree")
            if any(True for _ in iter_token_refs(self.symbols)):
                raise TokenMismatch("nonterminal-only tree must not contain tokens")

    @classmethod
    def full(cls, tree: TopTree) -> "PartialTree":
        return cls(SupervisionMode.FULL, tree=tree)

    @classmethod
    def terminal_only(cls, fragments: Iterable[TopNode]) -> "PartialTree":
        return cls(SupervisionMode.TERMINAL_ONLY, fragments=tuple(fragments))

    @classmethod
    def nonterminal_only(cls, symbols: TopNode) -> "PartialTree":
        return cls(SupervisionMode.NONTERMINAL_ONLY, symbols=symbols)


def _check_fragment(frag: TopNode) -> None:
    if frag.is_token:
        raise IllegalNesting("fragment root must be a symbol")
    for child in frag.children:
        if not child.is_token:
            raise IllegalNesting("fragments are depth 2: symbol over tokens only")


def terminal_projection(tree: TopTree) -> PartialTree:
    """Keep only per-token labels: one fragment per symbol with direct tokens.

    Fragments are ordered by their first token position.
    """
    fragments = []
    for node in iter_symbol_nodes(tree.root):
        direct = tuple(child for child in node.children if child.is_token)
        if direct:
            fragments.append(TopNode(node.label, direct))
    fragments.sort(key=lambda f: f.children[0].label.position)
    return PartialTree.terminal_only(fragments)


def nonterminal_projection(tree: TopTree) -> PartialTree:
    """Delete every token node, keeping the full symbol tree."""

    def strip(node: TopNode) -> TopNode:
        kids = tuple(strip(c) for c in node.children if not c.is_token)
        return TopNode(node.label, kids)

    return PartialTree.nonterminal_only(strip(tree.root))


# ---------------------------------------------------------------------------
# Fragment serialization
#
# Fragment tokens normally serialize as bare text.  A token whose text
# repeats elsewhere in the query (or itself looks like ``text@3``) gets an
# explicit ``text@position`` suffix so parsing is always unambiguous.
# ---------------------------------------------------------------------------

_AT_DIGITS = re.compile(r"@\d+$")
FRAGMENT_SEP = " | "


def serialize_fragments(fragments: Sequence[TopNode], tokens: Sequence[str]) -> str:
    counts = Counter(tokens)
    parts = []
    for frag in fragments:
        items = [f"[{frag.label.name}"]
        for child in frag.children:
            ref = child.label
            if counts[ref.text] > 1 or _AT_DIGITS.search(ref.text):
                items.append(f"{ref.text}@{ref.position}")
            else:
                items.append(ref.text)
        items.append("]")
        parts.append(" ".join(items))
    return FRAGMENT_SEP.join(parts)


def parse_fragments(serialized: str, tokens: Sequence[str]) -> tuple[TopNode, ...]:
    if not serialized.strip():
        return ()
    used = [False] * len(tokens)
    fragments = []
    for part in serialized.split(FRAGMENT_SEP):
        items = part.split()
        if len(items) < 2 or not items[0].startswith("[") or items[-1] != "]":
            raise UnbalancedBrackets(f"malformed fragment {part!r}")
        label = SymbolLabel.from_name(items[0][1:])
        children = []
        prev = -1
        for item in items[1:-1]:
            if item.startswith("[") or item == "]":
                raise IllegalNesting("fragments are depth 2: symbol over tokens only")
            text, position = _resolve_fragment_token(item, tokens, used, prev)
            used[position] = True
            prev = position
            children.append(token_node(position, text))
        if not children:
            raise TokenMismatch(f"fragment {part!r} has no tokens")
        fragments.append(TopNode(label, tuple(children)))
    return tuple(fragments)


def _resolve_fragment_token(
    item: str, tokens: Sequence[str], used: Sequence[bool], prev: int
) -> tuple[str, int]:
    if _AT_DIGITS.search(item):
        text, _, suffix = item.rpartition("@")
        position = int(suffix)
        if position >= len(tokens) or tokens[position] != text:
            raise TokenMismatch(f"fragment token {item!r} does not match the query")
        if used[position] or position <= prev:
            raise TokenMismatch(f"fragment token {item!r} reuses position {position}")
        return text, position
    for position in range(prev + 1, len(tokens)):
        if not used[position] and tokens[position] == item:
            return item, position
    raise TokenMismatch(f"fragment token {item!r} not found in the query")


def serialize_partial(partial: PartialTree, tokens: Sequence[str]) -> str:
    if partial.mode is SupervisionMode.FULL:
        return serialize_top(partial.tree)
    if partial.mode is SupervisionMode.TERMINAL_ONLY:
        return serialize_fragments(partial.fragments, tokens)
    return serialize_node(partial.symbols)


def parse_partial(mode: SupervisionMode, payload: str, tokens: Sequence[str]) -> PartialTree:
    if mode is SupervisionMode.FULL:
        return PartialTree.full(parse_top(payload, tokens))
    if mode is SupervisionMode.TERMINAL_ONLY:
        return PartialTree.terminal_only(parse_fragments(payload, tokens))
    return PartialTree.nonterminal_only(parse_symbol_tree(payload))


# ---------------------------------------------------------------------------
# Dataset files
#
# Full dataset: one example per line, ``raw TAB tokenized TAB tree``.
# Partial dataset: a leading mode column, ``MODE TAB raw TAB tokenized TAB
# payload``; TERM payloads join fragments with " | ".
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Example:
    raw: str
    tokens: tuple[str, ...]
    tree: TopTree


@dataclass(frozen=True)
class PartialExample:
    raw: str
    tokens: tuple[str, ...]
    partial: PartialTree

    @property
    def mode(self) -> SupervisionMode:
        return self.partial.mode


def example_to_line(example: Example) -> str:
    return "\t".join((example.raw, " ".join(example.tokens), serialize_top(example.tree)))


def example_from_line(line: str) -> Example:
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 3:
        raise DataFormatError(f"expected 3 tab-separated fields, got {len(fields)}")
    raw, tokenized, serialized = fields
    tokens = tuple(tokenized.split())
    return Example(raw, tokens, parse_top(serialized, tokens))


def partial_to_line(example: PartialExample) -> str:
    return "\t".join(
        (
            example.mode.value,
            example.raw,
            " ".join(example.tokens),
            serialize_partial(example.partial, example.tokens),
        )
    )


def partial_from_line(line: str) -> PartialExample:
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 4:
        raise DataFormatError(f"expected 4 tab-separated fields, got {len(fields)}")
    mode_str, raw, tokenized, payload = fields
    try:
        mode = SupervisionMode(mode_str)
    except ValueError:
        raise DataFormatError(f"unknown supervision mode {mode_str!r}") from None
    tokens = tuple(tokenized.split())
    return PartialExample(raw, tokens, parse_partial(mode, payload, tokens))


def read_examples(path: str | Path) -> list[Example]:
    return _read_lines(path, example_from_line)


def read_partial_examples(path: str | Path) -> list[PartialExample]:
    return _read_lines(path, partial_from_line)


def _read_lines(path, parse_line):
    out = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                out.append(parse_line(line))
            except Exception as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_examples(path: str | Path, examples: Iterable[Example]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for example in examples:
            handle.write(example_to_line(example) + "\n")


def write_partial_examples(path: str | Path, examples: Iterable[PartialExample]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for example in examples:
            handle.write(partial_to_line(example) + "\n")
