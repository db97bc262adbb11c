"""Output vocabulary with replica budgets, and per-query node sets.

Every query is decoded over a fixed set of candidate nodes: its tokens,
a block of indexed symbol replicas (a symbol seen at most ``k`` times in
one training tree gets ``k + pad`` replicas, pad defaulting to 2), and the
special ROOT and UNUSED nodes.  Node ordering is pinned so score matrices
are reproducible: tokens by position, then replicas in vocabulary order
(then index), then ROOT, then UNUSED.
"""

from __future__ import annotations

import enum
import hashlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import DataFormatError, EmptyCorpus
from .top_ir import SymbolLabel, TopTree, iter_symbol_nodes

DEFAULT_REPLICA_PAD = 2


@dataclass(frozen=True)
class Vocabulary:
    """Output symbols with their maximum per-tree occurrence counts."""

    symbols: tuple[SymbolLabel, ...]
    max_occurrences: Mapping[SymbolLabel, int]

    def __post_init__(self) -> None:
        names = [s.name for s in self.symbols]
        if names != sorted(names):
            raise DataFormatError("vocabulary symbols must be sorted by name")
        if set(self.symbols) != set(self.max_occurrences):
            raise DataFormatError("symbols and max_occurrences disagree")
        if any(k < 1 for k in self.max_occurrences.values()):
            raise DataFormatError("occurrence counts must be >= 1")

    def __contains__(self, label: SymbolLabel) -> bool:
        return label in self.max_occurrences

    def replica_count(self, label: SymbolLabel, pad: int = DEFAULT_REPLICA_PAD) -> int:
        return self.max_occurrences[label] + pad

    def replica_slots(
        self, pad: int = DEFAULT_REPLICA_PAD
    ) -> tuple[tuple[SymbolLabel, int], ...]:
        """All (label, index) replica slots in canonical order; indices are 1-based."""
        slots = []
        for label in self.symbols:
            for index in range(1, self.replica_count(label, pad) + 1):
                slots.append((label, index))
        return tuple(slots)


def count_symbols(tree: TopTree) -> Counter:
    return Counter(node.label for node in iter_symbol_nodes(tree.root))


def build_vocabulary(corpus: Iterable[TopTree]) -> Vocabulary:
    """Collect symbols and their maximum single-tree occurrence counts."""
    maxima: dict[SymbolLabel, int] = {}
    seen_any = False
    for tree in corpus:
        seen_any = True
        for label, count in count_symbols(tree).items():
            if count > maxima.get(label, 0):
                maxima[label] = count
    if not seen_any:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    symbols = tuple(sorted(maxima, key=lambda s: s.name))
    return Vocabulary(symbols, maxima)


def vocabulary_from_counters(counters: Iterable[Mapping[SymbolLabel, int]]) -> Vocabulary:
    """Build a vocabulary from per-example occurrence counters.

    Lets partially annotated examples (which have no full tree) contribute:
    terminal-only rows count fragments per label, nonterminal-only rows
    count symbol-tree occurrences.
    """
    maxima: dict[SymbolLabel, int] = {}
    seen_any = False
    for counter in counters:
        seen_any = True
        for label, count in counter.items():
            if count > maxima.get(label, 0):
                maxima[label] = count
    if not seen_any:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    symbols = tuple(sorted(maxima, key=lambda s: s.name))
    return Vocabulary(symbols, maxima)


def save_vocabulary(path: str | Path, vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(vocabulary_text(vocab))


def vocabulary_text(vocab: Vocabulary) -> str:
    return "".join(
        f"{label.name}\t{vocab.max_occurrences[label]}\n" for label in vocab.symbols
    )


def load_vocabulary(path: str | Path) -> Vocabulary:
    maxima: dict[SymbolLabel, int] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 2:
                raise DataFormatError(f"{path}:{lineno}: expected NAME<TAB>count")
            label = SymbolLabel.from_name(fields[0])
            maxima[label] = int(fields[1])
    symbols = tuple(sorted(maxima, key=lambda s: s.name))
    return Vocabulary(symbols, maxima)


def vocab_hash(vocab: Vocabulary) -> str:
    """Stable 16-hex-digit digest of the vocabulary file content."""
    digest = hashlib.sha256(vocabulary_text(vocab).encode("utf-8")).hexdigest()
    return digest[:16]


# ---------------------------------------------------------------------------
# Node sets
# ---------------------------------------------------------------------------


class NodeKind(enum.Enum):
    TOKEN = "token"
    SYMBOL = "symbol"
    ROOT = "root"
    UNUSED = "unused"


@dataclass(frozen=True)
class Node:
    kind: NodeKind
    position: int = -1
    label: SymbolLabel | None = None
    index: int = 0

    @classmethod
    def token(cls, position: int) -> "Node":
        return cls(NodeKind.TOKEN, position=position)

    @classmethod
    def symbol(cls, label: SymbolLabel, index: int) -> "Node":
        return cls(NodeKind.SYMBOL, label=label, index=index)

    @classmethod
    def root(cls) -> "Node":
        return cls(NodeKind.ROOT)

    @classmethod
    def unused(cls) -> "Node":
        return cls(NodeKind.UNUSED)

    def display(self, tokens: Sequence[str] | None = None) -> str:
        if self.kind is NodeKind.TOKEN:
            text = tokens[self.position] if tokens is not None else "?"
            return f"token:{self.position}:{text}"
        if self.kind is NodeKind.SYMBOL:
            return f"{self.label.name}:{self.index}"
        return "ROOT" if self.kind is NodeKind.ROOT else "UNUSED"


class NodeSet:
    """The pinned, indexable node universe for one query.

    Index layout: token i at index i; replica slots follow in vocabulary
    order; then ROOT; UNUSED last.
    """

    def __init__(self, tokens: Sequence[str], vocab: Vocabulary, pad: int = DEFAULT_REPLICA_PAD):
        if not tokens:
            raise DataFormatError("node sets require at least one query token")
        if pad < 0:
            raise DataFormatError("replica pad must be >= 0")
        self.tokens = tuple(tokens)
        self.vocab = vocab
        self.pad = pad
        nodes: list[Node] = [Node.token(i) for i in range(len(self.tokens))]
        self._symbol_offset = len(nodes)
        self._symbol_lookup: dict[tuple[SymbolLabel, int], int] = {}
        for label, index in vocab.replica_slots(pad):
            self._symbol_lookup[(label, index)] = len(nodes)
            nodes.append(Node.symbol(label, index))
        self.root_index = len(nodes)
        nodes.append(Node.root())
        self.unused_index = len(nodes)
        nodes.append(Node.unused())
        self.nodes = tuple(nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def num_tokens(self) -> int:
        return len(self.tokens)

    @property
    def num_symbols(self) -> int:
        return len(self._symbol_lookup)

    @property
    def symbol_offset(self) -> int:
        return self._symbol_offset

    def token_index(self, position: int) -> int:
        if not 0 <= position < len(self.tokens):
            raise IndexError(f"token position {position} out of range")
        return position

    def symbol_index(self, label: SymbolLabel, index: int) -> int:
        return self._symbol_lookup[(label, index)]

    def has_symbol(self, label: SymbolLabel, index: int = 1) -> bool:
        return (label, index) in self._symbol_lookup

    def is_token(self, idx: int) -> bool:
        return idx < self._symbol_offset

    def is_symbol(self, idx: int) -> bool:
        return self._symbol_offset <= idx < self.root_index

    def symbol_indices(self) -> range:
        return range(self._symbol_offset, self.root_index)

    def display(self, idx: int) -> str:
        return self.nodes[idx].display(self.tokens)

    def iter_displays(self) -> Iterator[str]:
        for idx in range(len(self.nodes)):
            yield self.display(idx)


def build_node_set(
    query_tokens: Sequence[str], vocab: Vocabulary, pad: int = DEFAULT_REPLICA_PAD
) -> NodeSet:
    """Assemble the candidate node universe for one query."""
    return NodeSet(query_tokens, vocab, pad)
