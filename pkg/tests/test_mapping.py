"""Tree <-> parse bijection, pre-order replica indexing, supervision masks."""

import random

import pytest

from topdec import (
    PartialTree,
    build_node_set,
    build_vocabulary,
    exact_match,
    extract_mask,
    nonterminal_projection,
    parse_to_top,
    parse_top,
    terminal_projection,
    top_to_parse,
)
from topdec.errors import (
    InvalidParse,
    ReplicaBudgetExceeded,
    UnanchoredSubtree,
    VocabMismatch,
)
from topdec.mapping import load_parse_tree, ParseTree, save_parse_tree
from topdec.symbol_table import Vocabulary
from topdec.synth import TreeGenConfig, random_top_tree
from topdec.top_ir import intent, slot

from conftest import EXAMPLE_TOKENS


def _edge_set(parse):
    ns = parse.node_set
    return {(ns.display(c), ns.display(p)) for c, p in parse.edges()}


class TestTopToParse:
    def test_example_edges(self, example_tree, example_node_set):
        parse = top_to_parse(example_tree, example_node_set)
        edges = _edge_set(parse)
        expected_core = {
            ("IN:GET_DIRECTION:1", "ROOT"),
            ("token:0:directions", "IN:GET_DIRECTION:1"),
            ("token:1:to", "IN:GET_DIRECTION:1"),
            ("SL:DESTINATION:1", "IN:GET_DIRECTION:1"),
            ("IN:FIND_EVENT:1", "SL:DESTINATION:1"),
            ("SL:ORGANIZER:1", "IN:FIND_EVENT:1"),
            ("token:2:John", "SL:ORGANIZER:1"),
            ("token:3:'s", "IN:FIND_EVENT:1"),
            ("SL:CATEGORY:1", "IN:FIND_EVENT:1"),
            ("token:4:party", "SL:CATEGORY:1"),
            ("UNUSED", "ROOT"),
        }
        assert expected_core <= edges
        # every other node is an unused replica parked under UNUSED
        others = edges - expected_core
        assert all(parent == "UNUSED" for _, parent in others)
        assert all(not child.startswith("token:") for child, _ in others)
        assert ("IN:GET_EVENT:1", "UNUSED") in others
        assert ("SL:DATE_TIME:1", "UNUSED") in others

    def test_preorder_indexing_double_slot(self):
        tree = parse_top(
            "[IN:GET_EVENT [SL:DATE_TIME Holiday ] events [SL:DATE_TIME this weekend ] ]",
            ["Holiday", "events", "this", "weekend"],
        )
        vocab = build_vocabulary([tree])
        ns = build_node_set(tree.tokens(), vocab)
        parse = top_to_parse(tree, ns)
        edges = _edge_set(parse)
        assert ("token:0:Holiday", "SL:DATE_TIME:1") in edges
        assert ("token:2:this", "SL:DATE_TIME:2") in edges
        assert ("token:3:weekend", "SL:DATE_TIME:2") in edges

    def test_preorder_before_token_order(self):
        # The ancestor occurrence is visited first even though its own
        # tokens come later in the query.
        tree = parse_top("[IN:A [SL:S [IN:A x ] ] y ]", ["x", "y"])
        vocab = build_vocabulary([tree, parse_top("[IN:A [SL:S a ] b ]", ["a", "b"])])
        ns = build_node_set(tree.tokens(), vocab)
        edges = _edge_set(top_to_parse(tree, ns))
        assert ("IN:A:1", "ROOT") in edges
        assert ("token:1:y", "IN:A:1") in edges
        assert ("token:0:x", "IN:A:2") in edges

    def test_budget_exceeded(self):
        a, s = intent("IN:A"), slot("SL:S")
        vocab = Vocabulary((a, s), {a: 1, s: 1})
        text = "[IN:A [SL:S p ] q [SL:S r ] s [SL:S t ] u [SL:S v ] ]"
        tree = parse_top(text, ["p", "q", "r", "s", "t", "u", "v"])
        ns = build_node_set(tree.tokens(), vocab, pad=2)  # budget 3 < 4 occurrences
        with pytest.raises(ReplicaBudgetExceeded):
            top_to_parse(tree, ns)

    def test_unused_symbol_goes_to_unused(self, example_vocab):
        tree = parse_top("[IN:GET_DIRECTION directions to John 's party ]", EXAMPLE_TOKENS)
        ns = build_node_set(EXAMPLE_TOKENS, example_vocab)
        parse = top_to_parse(tree, ns)
        unused_children = {
            ns.display(c) for c, p in parse.edges() if p == ns.unused_index
        }
        for label in ("SL:DESTINATION", "IN:FIND_EVENT", "SL:ORGANIZER", "SL:CATEGORY"):
            for idx in (1, 2, 3):
                assert f"{label}:{idx}" in unused_children


class TestParseToTop:
    def test_example_round_trip(self, example_tree, example_node_set):
        parse = top_to_parse(example_tree, example_node_set)
        assert exact_match(parse_to_top(parse), example_tree)

    def test_flat_tree(self, example_vocab):
        tree = parse_top("[IN:GET_DIRECTION directions to John 's party ]", EXAMPLE_TOKENS)
        ns = build_node_set(EXAMPLE_TOKENS, example_vocab)
        assert exact_match(parse_to_top(top_to_parse(tree, ns)), tree)

    def test_round_trip_many(self):
        rng = random.Random(77)
        trees = [random_top_tree(rng) for _ in range(400)]
        vocab = build_vocabulary(trees)
        for tree in trees:
            ns = build_node_set(tree.tokens(), vocab)
            assert exact_match(parse_to_top(top_to_parse(tree, ns)), tree)

    def test_missing_token_rejected(self, example_tree, example_node_set):
        ns = example_node_set
        parse = top_to_parse(example_tree, ns)
        parent = list(parse.parent)
        # park "directions" under UNUSED; its old parent keeps other tokens
        parent[ns.token_index(0)] = ns.unused_index
        with pytest.raises(InvalidParse) as err:
            parse_to_top(ParseTree(ns, tuple(parent)))
        assert err.value.reason == "missing_tokens"

    def test_unanchored_subtree_rejected(self, example_tree, example_node_set):
        ns = example_node_set
        parse = top_to_parse(example_tree, ns)
        parent = list(parse.parent)
        # retain a replica with no token yield under the real root
        idx = ns.symbol_index(slot("SL:DATE_TIME"), 1)
        parent[idx] = ns.symbol_index(intent("IN:GET_DIRECTION"), 1)
        with pytest.raises(UnanchoredSubtree):
            parse_to_top(ParseTree(ns, tuple(parent)))

    def test_child_order_recovered_from_positions(self, example_vocab):
        # Build a parse directly and check children sort by token yield.
        tree = parse_top(
            "[IN:GET_DIRECTION [SL:ORGANIZER directions ] to [SL:CATEGORY John ] 's party ]",
            EXAMPLE_TOKENS,
        )
        ns = build_node_set(EXAMPLE_TOKENS, example_vocab)
        assert exact_match(parse_to_top(top_to_parse(tree, ns)), tree)


class TestParseValidate:
    def test_cycle_rejected(self, example_node_set):
        ns = example_node_set
        parent = [-1] * len(ns)
        a = ns.symbol_index(intent("IN:GET_DIRECTION"), 1)
        b = ns.symbol_index(slot("SL:DESTINATION"), 1)
        for idx in range(len(ns)):
            if idx not in (ns.root_index, ns.unused_index, a, b):
                parent[idx] = ns.unused_index
        parent[ns.unused_index] = ns.root_index
        parent[a], parent[b] = b, a  # cycle, and nobody is ROOT's child
        with pytest.raises(InvalidParse):
            ParseTree(ns, tuple(parent)).validate()

    def test_token_parent_rejected(self, example_tree, example_node_set):
        ns = example_node_set
        parse = top_to_parse(example_tree, ns)
        parent = list(parse.parent)
        parent[ns.token_index(2)] = ns.token_index(3)
        with pytest.raises(InvalidParse) as err:
            ParseTree(ns, tuple(parent)).validate()
        assert err.value.reason == "token_parent"

    def test_unused_depth_rejected(self, example_tree, example_node_set):
        ns = example_node_set
        parse = top_to_parse(example_tree, ns)
        parent = list(parse.parent)
        a = ns.symbol_index(intent("IN:GET_EVENT"), 1)  # under UNUSED
        b = ns.symbol_index(slot("SL:DATE_TIME"), 1)
        parent[b] = a
        with pytest.raises(InvalidParse) as err:
            ParseTree(ns, tuple(parent)).validate()
        assert err.value.reason == "unused_too_deep"


class TestMasks:
    def test_terminal_only_example(self, example_tree, example_node_set):
        ns = example_node_set
        mask = extract_mask(terminal_projection(example_tree), ns)
        named = {(ns.display(c), ns.display(p)) for c, p in mask.observed}
        assert named == {
            ("token:0:directions", "IN:GET_DIRECTION:1"),
            ("token:1:to", "IN:GET_DIRECTION:1"),
            ("token:2:John", "SL:ORGANIZER:1"),
            ("token:3:'s", "IN:FIND_EVENT:1"),
            ("token:4:party", "SL:CATEGORY:1"),
        }

    def test_nonterminal_only_example(self, example_tree, example_node_set):
        ns = example_node_set
        mask = extract_mask(nonterminal_projection(example_tree), ns)
        named = {(ns.display(c), ns.display(p)) for c, p in mask.observed}
        core = {
            ("IN:GET_DIRECTION:1", "ROOT"),
            ("SL:DESTINATION:1", "IN:GET_DIRECTION:1"),
            ("IN:FIND_EVENT:1", "SL:DESTINATION:1"),
            ("SL:ORGANIZER:1", "IN:FIND_EVENT:1"),
            ("SL:CATEGORY:1", "IN:FIND_EVENT:1"),
            ("UNUSED", "ROOT"),
        }
        assert core <= named
        assert all(not c.startswith("token:") for c, _ in named)
        used = {c for c, _ in core}
        for name in named - core:
            assert name[1] == "UNUSED" and name[0] not in used

    def test_full_mask_equals_parse_edges(self, example_tree, example_node_set):
        parse = top_to_parse(example_tree, example_node_set)
        mask = extract_mask(PartialTree.full(example_tree), example_node_set)
        assert set(mask.observed) == set(parse.edges())

    def test_masks_partition_full_edges(self):
        rng = random.Random(5)
        config = TreeGenConfig(mask_safe=True)
        trees = [random_top_tree(rng, config) for _ in range(300)]
        vocab = build_vocabulary(trees)
        for tree in trees:
            ns = build_node_set(tree.tokens(), vocab)
            full = set(extract_mask(PartialTree.full(tree), ns).observed)
            term = set(extract_mask(terminal_projection(tree), ns).observed)
            nonterm = set(extract_mask(nonterminal_projection(tree), ns).observed)
            assert term | nonterm == full
            assert not (term & nonterm)
            assert all(ns.is_token(c) for c, _ in term)
            assert all(not ns.is_token(c) for c, _ in nonterm)

    def test_terminal_replicas_indexed_left_to_right(self):
        tree = parse_top(
            "[IN:GET_EVENT [SL:DATE_TIME Holiday ] events [SL:DATE_TIME this weekend ] ]",
            ["Holiday", "events", "this", "weekend"],
        )
        vocab = build_vocabulary([tree])
        ns = build_node_set(tree.tokens(), vocab)
        mask = extract_mask(terminal_projection(tree), ns)
        named = dict((ns.display(c), ns.display(p)) for c, p in mask.observed)
        assert named["token:0:Holiday"] == "SL:DATE_TIME:1"
        assert named["token:2:this"] == "SL:DATE_TIME:2"
        assert named["token:3:weekend"] == "SL:DATE_TIME:2"

    def test_empty_fragments_empty_mask(self, example_node_set):
        mask = extract_mask(PartialTree.terminal_only(()), example_node_set)
        assert len(mask) == 0


def test_parse_file_round_trip(tmp_path, example_tree, example_node_set):
    parse = top_to_parse(example_tree, example_node_set)
    path = tmp_path / "parse.txt"
    save_parse_tree(path, parse)
    again = load_parse_tree(path, example_node_set)
    assert again == parse
    header = path.read_text().splitlines()[0]
    assert header.startswith("tokens\t5\tvocab\t")


def test_parse_file_vocab_mismatch(tmp_path, example_tree, example_node_set, tiny_vocab):
    parse = top_to_parse(example_tree, example_node_set)
    path = tmp_path / "parse.txt"
    save_parse_tree(path, parse)
    other = build_node_set(EXAMPLE_TOKENS, tiny_vocab)
    with pytest.raises(VocabMismatch):
        load_parse_tree(path, other)
