"""Deterministic mapping between meaning trees and dependency parses.

A parse assigns every non-ROOT node exactly one parent.  Symbol
occurrences map to replicas indexed by pre-order position; replicas the
tree does not use hang off UNUSED, whose own parent is always ROOT.  The
mapping inverts exactly: converting back discards the UNUSED subtree,
erases replica indices, and orders children by the smallest token
position in their yield.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .errors import (
    DataFormatError,
    IllegalNesting,
    InvalidParse,
    ReplicaBudgetExceeded,
    TokenMismatch,
    UnanchoredSubtree,
    UnknownSymbol,
    VocabMismatch,
)
from .symbol_table import NodeSet, vocab_hash
from .top_ir import (
    PartialTree,
    SupervisionMode,
    SymbolLabel,
    TokenRef,
    TopNode,
    TopTree,
    token_node,
)

# InvalidParse reason categories (stable strings used in eval reports).
NOT_SPANNING = "not_spanning"
CYCLE = "cycle"
BAD_ROOT_CHILDREN = "bad_root_children"
BAD_UNUSED_PARENT = "bad_unused_parent"
UNUSED_TOO_DEEP = "unused_too_deep"
TOKEN_PARENT = "token_parent"
ROOT_NOT_INTENT = "root_not_intent"
ILLEGAL_NESTING = "illegal_nesting"
MISSING_TOKENS = "missing_tokens"


@dataclass(frozen=True)
class ParseTree:
    """Dense parent map over a node set; ROOT's entry is -1."""

    node_set: NodeSet
    parent: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.parent) != len(self.node_set):
            raise InvalidParse(NOT_SPANNING, "parent map size does not match node set")

    def edges(self) -> Iterator[tuple[int, int]]:
        """(child, parent) pairs for every non-ROOT node."""
        for child, parent in enumerate(self.parent):
            if child != self.node_set.root_index:
                yield child, parent

    def children_of(self, idx: int) -> list[int]:
        return [c for c, p in enumerate(self.parent) if p == idx and c != self.node_set.root_index]

    def validate(self) -> None:
        """Check every structural invariant; raise InvalidParse on the first failure."""
        ns = self.node_set
        root, unused = ns.root_index, ns.unused_index
        if self.parent[root] != -1:
            raise InvalidParse(BAD_ROOT_CHILDREN, "ROOT must not have a parent")
        for child, parent in self.edges():
            if not 0 <= parent < len(ns):
                raise InvalidParse(NOT_SPANNING, f"node {child} has parent {parent} out of range")
            if ns.is_token(parent):
                raise InvalidParse(TOKEN_PARENT, f"token {ns.display(parent)} is a parent")
        if self.parent[unused] != root:
            raise InvalidParse(BAD_UNUSED_PARENT, "UNUSED must attach to ROOT")
        root_children = self.children_of(root)
        non_unused = [c for c in root_children if c != unused]
        if len(non_unused) != 1:
            raise InvalidParse(
                BAD_ROOT_CHILDREN, f"ROOT must have exactly one child besides UNUSED, got {len(non_unused)}"
            )
        for child in self.children_of(unused):
            if self.children_of(child):
                raise InvalidParse(UNUSED_TOO_DEEP, f"{ns.display(child)} under UNUSED has children")
        # Every node must reach ROOT without revisiting a node.
        for start in range(len(ns)):
            if start == root:
                continue
            seen = set()
            node = start
            while node != root:
                if node in seen:
                    raise InvalidParse(CYCLE, f"cycle through {ns.display(start)}")
                seen.add(node)
                node = self.parent[node]
                if node == -1 or not 0 <= node < len(ns):
                    raise InvalidParse(NOT_SPANNING, f"{ns.display(start)} does not reach ROOT")


@dataclass(frozen=True)
class SupervisionMask:
    """Observed child->parent edges; children absent from it are unsupervised."""

    observed: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        children = [c for c, _ in self.observed]
        if len(set(children)) != len(children):
            raise DataFormatError("mask observes a child twice")
        if list(self.observed) != sorted(self.observed):
            raise DataFormatError("mask pairs must be sorted by child index")

    @classmethod
    def from_pairs(cls, pairs) -> "SupervisionMask":
        return cls(tuple(sorted(pairs)))

    def as_dict(self) -> dict[int, int]:
        return dict(self.observed)

    def __len__(self) -> int:
        return len(self.observed)


def top_to_parse(tree: TopTree, node_set: NodeSet) -> ParseTree:
    """Map a meaning tree onto the node set's replica universe.

    Repeated symbols take replica indices in pre-order; unused replicas
    attach to UNUSED.
    """
    if tree.tokens() != node_set.tokens:
        raise TokenMismatch("tree tokens do not match the node set's query tokens")
    parent = [-1] * len(node_set)
    for idx in node_set.symbol_indices():
        parent[idx] = node_set.unused_index
    parent[node_set.unused_index] = node_set.root_index
    counts: dict[SymbolLabel, int] = {}

    def place(node: TopNode, parent_idx: int) -> None:
        if isinstance(node.label, TokenRef):
            parent[node_set.token_index(node.label.position)] = parent_idx
            return
        label = node.label
        occurrence = counts.get(label, 0) + 1
        counts[label] = occurrence
        if label not in node_set.vocab:
            raise UnknownSymbol(f"{label} is not in the vocabulary")
        if not node_set.has_symbol(label, occurrence):
            budget = node_set.vocab.replica_count(label, node_set.pad)
            raise ReplicaBudgetExceeded(
                f"{label} occurs more than its {budget} replicas allow"
            )
        me = node_set.symbol_index(label, occurrence)
        parent[me] = parent_idx
        for child in node.children:
            place(child, me)

    place(tree.root, node_set.root_index)
    return ParseTree(node_set, tuple(parent))


def parse_to_top(parse: ParseTree) -> TopTree:
    """Invert top_to_parse: drop the UNUSED subtree and rebuild the tree.

    Children are ordered by the smallest token position in their yield;
    a retained symbol subtree with no tokens has no defined place and is
    rejected.
    """
    parse.validate()
    ns = parse.node_set
    children: list[list[int]] = [[] for _ in range(len(ns))]
    for child, parent in parse.edges():
        children[parent].append(child)
    root_child = next(c for c in children[ns.root_index] if c != ns.unused_index)
    if ns.is_token(root_child):
        raise InvalidParse(ROOT_NOT_INTENT, "the tree root cannot be a token")

    min_yield: dict[int, int] = {}

    def compute_yield(idx: int) -> int | None:
        if ns.is_token(idx):
            min_yield[idx] = idx
            return idx
        best = None
        for child in children[idx]:
            got = compute_yield(child)
            if got is not None and (best is None or got < best):
                best = got
        if best is None:
            raise UnanchoredSubtree(
                f"{ns.display(idx)} is used but dominates no tokens"
            )
        min_yield[idx] = best
        return best

    compute_yield(root_child)

    reachable_tokens = {idx for idx in min_yield if ns.is_token(idx)}
    if len(reachable_tokens) != ns.num_tokens:
        raise InvalidParse(
            MISSING_TOKENS,
            f"only {len(reachable_tokens)} of {ns.num_tokens} tokens are in the tree",
        )

    def build(idx: int) -> TopNode:
        if ns.is_token(idx):
            return token_node(idx, ns.tokens[idx])
        kids = sorted(children[idx], key=lambda c: min_yield[c])
        return TopNode(ns.nodes[idx].label, tuple(build(k) for k in kids))

    try:
        return TopTree(build(root_child))
    except (IllegalNesting, TokenMismatch) as exc:
        # Structurally legal parse that is not the image of any valid tree.
        raise InvalidParse(ILLEGAL_NESTING, str(exc)) from exc


def extract_mask(partial: PartialTree, node_set: NodeSet) -> SupervisionMask:
    """Observed edges for an annotation.

    FULL observes every edge of the mapped parse.  TERM observes only the
    token edges: each token attaches to the replica of its fragment's
    label, fragments of the same label indexed left to right by first
    token position.  NONTERM observes every symbol, UNUSED, and ROOT edge
    (the unused replicas are determined once the symbol tree is known)
    and leaves token edges unsupervised.
    """
    if partial.mode is SupervisionMode.FULL:
        parse = top_to_parse(partial.tree, node_set)
        return SupervisionMask.from_pairs(parse.edges())

    if partial.mode is SupervisionMode.TERMINAL_ONLY:
        fragments = sorted(
            partial.fragments, key=lambda f: f.children[0].label.position
        )
        counts: dict[SymbolLabel, int] = {}
        pairs = []
        for fragment in fragments:
            label = fragment.label
            occurrence = counts.get(label, 0) + 1
            counts[label] = occurrence
            if label not in node_set.vocab:
                raise UnknownSymbol(f"{label} is not in the vocabulary")
            if not node_set.has_symbol(label, occurrence):
                budget = node_set.vocab.replica_count(label, node_set.pad)
                raise ReplicaBudgetExceeded(
                    f"{label} occurs more than its {budget} replicas allow"
                )
            replica = node_set.symbol_index(label, occurrence)
            for child in fragment.children:
                pairs.append((node_set.token_index(child.label.position), replica))
        return SupervisionMask.from_pairs(pairs)

    # Nonterminal-only: the full symbol multiset is known.
    assigned: dict[int, int] = {}
    counts = {}

    def place(node: TopNode, parent_idx: int) -> None:
        label = node.label
        occurrence = counts.get(label, 0) + 1
        counts[label] = occurrence
        if label not in node_set.vocab:
            raise UnknownSymbol(f"{label} is not in the vocabulary")
        if not node_set.has_symbol(label, occurrence):
            budget = node_set.vocab.replica_count(label, node_set.pad)
            raise ReplicaBudgetExceeded(
                f"{label} occurs more than its {budget} replicas allow"
            )
        me = node_set.symbol_index(label, occurrence)
        assigned[me] = parent_idx
        for child in node.children:
            place(child, me)

    place(partial.symbols, node_set.root_index)
    pairs = list(assigned.items())
    for idx in node_set.symbol_indices():
        if idx not in assigned:
            pairs.append((idx, node_set.unused_index))
    pairs.append((node_set.unused_index, node_set.root_index))
    return SupervisionMask.from_pairs(pairs)


# ---------------------------------------------------------------------------
# Parse tree files: header with token count and vocabulary hash, then one
# ``child TAB parent`` line per non-ROOT node.
# ---------------------------------------------------------------------------


def parse_tree_text(parse: ParseTree) -> str:
    ns = parse.node_set
    lines = [f"tokens\t{ns.num_tokens}\tvocab\t{vocab_hash(ns.vocab)}"]
    for child, parent in parse.edges():
        lines.append(f"{child}\t{parent}")
    return "\n".join(lines) + "\n"


def save_parse_tree(path: str | Path, parse: ParseTree) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(parse_tree_text(parse))


def load_parse_tree(path: str | Path, node_set: NodeSet) -> ParseTree:
    with open(path, "r", encoding="utf-8") as handle:
        lines = [line.rstrip("\n") for line in handle if line.strip()]
    if not lines:
        raise DataFormatError(f"{path}: empty parse file")
    header = lines[0].split("\t")
    if len(header) != 4 or header[0] != "tokens" or header[2] != "vocab":
        raise DataFormatError(f"{path}: malformed header")
    if int(header[1]) != node_set.num_tokens:
        raise DataFormatError(
            f"{path}: header token count {header[1]} != node set {node_set.num_tokens}"
        )
    if header[3] != vocab_hash(node_set.vocab):
        raise VocabMismatch(f"{path}: vocabulary hash mismatch")
    parent = [-1] * len(node_set)
    for line in lines[1:]:
        child_str, parent_str = line.split("\t")
        parent[int(child_str)] = int(parent_str)
    return ParseTree(node_set, tuple(parent))
