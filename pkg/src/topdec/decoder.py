"""Constrained maximum-arborescence decoding and its exhaustive oracle.

The pipeline: pick the best parent per node, repair the UNUSED subtree
down to depth 2 (choosing per offender between re-parenting it or all of
its children, whichever costs less), freeze that subtree, resolve the
single-root constraint by trying each candidate root child, and run
cycle-contracting maximum-arborescence search over the remaining nodes.

The repairs and the root shortlist are approximations; ``oracle_decode``
enumerates every constraint-satisfying parent assignment on small
instances so the gap is measurable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DataFormatError,
    InfeasibleGraph,
    NoRootCandidate,
    TooLarge,
    VocabMismatch,
)
from .mapping import ParseTree
from .symbol_table import NodeSet, Vocabulary, build_node_set, vocab_hash

NEG_INF = float("-inf")


@dataclass(frozen=True)
class ScoreMatrix:
    """Dense parent-by-child edge scores with -inf marking forbidden edges.

    Forbidden everywhere: token rows (tokens never parent anything), the
    ROOT column (ROOT has no parent), and the diagonal.
    """

    node_set: NodeSet
    scores: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.node_set)
        if self.scores.shape != (n, n):
            raise DataFormatError(f"scores must be {n}x{n}, got {self.scores.shape}")

    def validate(self) -> None:
        ns = self.node_set
        if not np.all(np.isneginf(self.scores[: ns.num_tokens, :])):
            raise DataFormatError("token parent rows must be -inf")
        if not np.all(np.isneginf(self.scores[:, ns.root_index])):
            raise DataFormatError("the ROOT column must be -inf")
        if not np.all(np.isneginf(np.diag(self.scores))):
            raise DataFormatError("the diagonal must be -inf")
        finite = self.scores[np.isfinite(self.scores)]
        if finite.size and not np.all(np.isfinite(finite)):
            raise DataFormatError("scores must be finite or -inf")
        if np.any(np.isnan(self.scores)) or np.any(np.isposinf(self.scores)):
            raise DataFormatError("scores must be finite or -inf")


def apply_structural_mask(scores: np.ndarray, node_set: NodeSet) -> np.ndarray:
    """Force the always-forbidden entries of a raw score array to -inf."""
    out = np.array(scores, dtype=float, copy=True)
    out[: node_set.num_tokens, :] = NEG_INF
    out[:, node_set.root_index] = NEG_INF
    np.fill_diagonal(out, NEG_INF)
    return out


@dataclass(frozen=True)
class DecodeDiagnostics:
    unused_depth_repairs: int
    root_candidates: int
    root_fallback: bool = False


@dataclass(frozen=True)
class DecodeResult:
    parse: ParseTree
    total_score: float
    diagnostics: DecodeDiagnostics


def tree_score(matrix: ScoreMatrix, parent: Sequence[int]) -> float:
    """Sum of edge scores over every non-ROOT node's parent edge."""
    total = 0.0
    for child, par in enumerate(parent):
        if child == matrix.node_set.root_index:
            continue
        value = matrix.scores[par, child]
        if not math.isfinite(value):
            raise InfeasibleGraph(
                f"edge {par}->{child} is forbidden but appears in the tree"
            )
        total += value
    return total


# ---------------------------------------------------------------------------
# Maximum arborescence (cycle-contracting greedy search)
# ---------------------------------------------------------------------------


def max_arborescence(scores: np.ndarray, root: int) -> np.ndarray:
    """Maximum-weight arborescence over a dense score array.

    ``scores[p, c]`` is the weight of edge p->c; -inf means absent.
    Returns the parent index per node with ``parent[root] == -1``.
    Ties break toward the lowest parent index.
    """
    n = scores.shape[0]
    if not 0 <= root < n:
        raise ValueError(f"root {root} out of range for {n} nodes")
    parent = np.full(n, -1, dtype=np.int64)
    for child in range(n):
        if child == root:
            continue
        column = scores[:, child].copy()
        column[child] = NEG_INF
        if np.all(np.isneginf(column)):
            raise InfeasibleGraph(f"node {child} has no finite-score parent")
        parent[child] = int(np.argmax(column))

    cycle = _find_cycle(parent, root)
    if cycle is None:
        return parent

    in_cycle = np.zeros(n, dtype=bool)
    in_cycle[cycle] = True
    kept = [v for v in range(n) if not in_cycle[v]]
    super_idx = len(kept)
    m = len(kept) + 1
    cycle_gain = np.array([scores[parent[c], c] for c in cycle])

    contracted = np.full((m, m), NEG_INF)
    kept_arr = np.array(kept, dtype=np.int64)
    contracted[: m - 1, : m - 1] = scores[np.ix_(kept_arr, kept_arr)]
    np.fill_diagonal(contracted, NEG_INF)

    # Edges entering the cycle are discounted by the cycle edge they evict.
    enter = scores[np.ix_(kept_arr, np.array(cycle))] - cycle_gain[None, :]
    enter_best = np.argmax(enter, axis=1)
    contracted[: m - 1, super_idx] = enter[np.arange(m - 1), enter_best]
    # Edges leaving the cycle take the best cycle-internal tail.
    leave = scores[np.ix_(np.array(cycle), kept_arr)]
    leave_best = np.argmax(leave, axis=0)
    contracted[super_idx, : m - 1] = leave[leave_best, np.arange(m - 1)]

    sub_parent = max_arborescence(contracted, kept.index(root))

    parent_out = np.full(n, -1, dtype=np.int64)
    for ci, v in enumerate(kept):
        p = sub_parent[ci]
        if p == -1:
            continue
        parent_out[v] = cycle[leave_best[ci]] if p == super_idx else kept[p]
    entering = sub_parent[super_idx]
    if entering == -1 or entering == super_idx:
        raise InfeasibleGraph("contracted cycle has no parent")
    entry_parent = kept[entering]
    entry_child = cycle[enter_best[entering]]
    for c in cycle:
        parent_out[c] = parent[c]
    parent_out[entry_child] = entry_parent
    return parent_out


def _find_cycle(parent: np.ndarray, root: int) -> list[int] | None:
    n = len(parent)
    color = np.zeros(n, dtype=np.int8)  # 0 new, 1 active, 2 done
    color[root] = 2
    for start in range(n):
        if color[start]:
            continue
        path = []
        node = start
        while color[node] == 0:
            color[node] = 1
            path.append(node)
            node = parent[node]
        if color[node] == 1:
            cycle = path[path.index(node) :]
            return cycle
        for v in path:
            color[v] = 2
    return None


def cle(
    matrix: ScoreMatrix, root_child: int, active: Sequence[int] | None = None
) -> dict[int, int]:
    """Maximum arborescence rooted at ``root_child`` over an active node subset.

    ``active`` defaults to every node except ROOT and UNUSED.  Returns a
    child -> parent map over the active nodes (the root child is absent).
    """
    ns = matrix.node_set
    if active is None:
        active = [
            v for v in range(len(ns)) if v not in (ns.root_index, ns.unused_index)
        ]
    active = sorted(active)
    if root_child not in active:
        raise ValueError("root_child must be a member of the active set")
    idx = np.array(active, dtype=np.int64)
    sub = matrix.scores[np.ix_(idx, idx)].copy()
    parent = max_arborescence(sub, active.index(root_child))
    return {
        active[c]: active[parent[c]]
        for c in range(len(active))
        if parent[c] != -1
    }


# ---------------------------------------------------------------------------
# Constrained decoding pipeline
# ---------------------------------------------------------------------------


def initial_best_parents(matrix: ScoreMatrix) -> np.ndarray:
    """Per-node argmax parent; ROOT gets -1 and UNUSED is pinned to ROOT."""
    ns = matrix.node_set
    n = len(ns)
    best = np.full(n, -1, dtype=np.int64)
    for child in range(n):
        if child == ns.root_index:
            continue
        if child == ns.unused_index:
            best[child] = ns.root_index
            continue
        column = matrix.scores[:, child]
        if np.all(np.isneginf(column)):
            raise InfeasibleGraph(f"node {ns.display(child)} has no finite-score parent")
        best[child] = int(np.argmax(column))
    return best


@dataclass(frozen=True)
class UnusedPreprocess:
    """Outcome of the depth-2 repair pass over the UNUSED subtree."""

    frozen_children: tuple[int, ...]
    best_parent: np.ndarray
    repairs: int
    working: ScoreMatrix


def preprocess_unused(
    matrix: ScoreMatrix, best_parent: np.ndarray | Mapping[int, int]
) -> UnusedPreprocess:
    """Repair the UNUSED subtree to depth 2 and freeze it.

    For each UNUSED child that itself has children, either the child moves
    to its next-best parent or every grandchild does, whichever score gap
    is smaller (ties favor moving the child).  Deleted edges stay deleted:
    they are -inf in the returned working copy.  Offenders are visited in
    ascending node order, and the loop repeats until the constraint holds.
    """
    ns = matrix.node_set
    n = len(ns)
    working = matrix.scores.copy()
    best = _as_parent_array(best_parent, ns)
    repairs = 0

    while True:
        offender = _first_offender(best, ns)
        if offender is None:
            break
        kids = [c for c in range(n) if best[c] == offender]
        move_self_cost, move_self_parent = _reparent_cost(
            working, offender, exclude=ns.unused_index
        )
        kid_moves = []
        move_kids_cost = 0.0
        for kid in kids:
            cost, alt = _reparent_cost(working, kid, exclude=offender)
            if alt is None:
                move_kids_cost = math.inf
                break
            move_kids_cost += cost
            kid_moves.append((kid, alt))
        self_cost = math.inf if move_self_parent is None else move_self_cost
        if self_cost is math.inf and move_kids_cost is math.inf:
            raise InfeasibleGraph(
                f"no finite alternative parent while repairing {ns.display(offender)}"
            )
        if self_cost <= move_kids_cost:
            working[ns.unused_index, offender] = NEG_INF
            best[offender] = move_self_parent
        else:
            for kid, alt in kid_moves:
                working[offender, kid] = NEG_INF
                best[kid] = alt
        repairs += 1

    frozen = tuple(
        c for c in range(n) if c != ns.unused_index and best[c] == ns.unused_index
    )
    return UnusedPreprocess(
        frozen_children=frozen,
        best_parent=best,
        repairs=repairs,
        working=ScoreMatrix(ns, working),
    )


def _as_parent_array(best_parent, ns: NodeSet) -> np.ndarray:
    if isinstance(best_parent, np.ndarray):
        return best_parent.copy()
    best = np.full(len(ns), -1, dtype=np.int64)
    for child, parent in best_parent.items():
        best[child] = parent
    return best


def _first_offender(best: np.ndarray, ns: NodeSet) -> int | None:
    """Lowest-index UNUSED child that currently has children of its own."""
    n = len(best)
    has_child = np.zeros(n, dtype=bool)
    for child in range(n):
        if child != ns.root_index and best[child] >= 0:
            has_child[best[child]] = True
    for child in range(n):
        if child == ns.unused_index:
            continue
        if best[child] == ns.unused_index and has_child[child]:
            return child
    return None


def _reparent_cost(
    working: np.ndarray, child: int, exclude: int
) -> tuple[float, int | None]:
    """Score gap to the best alternative parent, skipping -inf entries."""
    column = working[:, child].copy()
    current = column[exclude]
    column[exclude] = NEG_INF
    if np.all(np.isneginf(column)):
        return math.inf, None
    alt = int(np.argmax(column))
    return float(current - column[alt]), alt


def resolve_root(
    matrix: ScoreMatrix,
    best_parent: np.ndarray,
    unused_fixed: UnusedPreprocess,
    widen_root_candidates: bool = False,
) -> DecodeResult:
    """Pick the single ROOT child and finish decoding.

    Candidates are the non-frozen nodes whose best parent is ROOT; each is
    tried as the arborescence root and the best-scoring tree wins.  With no
    candidates, every symbol replica is tried instead (flagged as a
    fallback); a frozen replica tried this way is pulled out from under
    UNUSED for its run.  ``widen_root_candidates`` tries every non-token
    node instead of the shortlist (slower, closes one approximation gap);
    the reported candidate count stays the shortlist size either way.
    """
    ns = matrix.node_set
    n = len(ns)
    frozen = set(unused_fixed.frozen_children)
    working = unused_fixed.working.scores
    best = unused_fixed.best_parent
    active = [
        v
        for v in range(n)
        if v not in (ns.root_index, ns.unused_index) and v not in frozen
    ]
    candidates = [v for v in active if best[v] == ns.root_index]
    n_candidates = len(candidates)
    if widen_root_candidates:
        candidates = [v for v in ns.symbol_indices()] or candidates
    fallback = False

    for attempt in range(2):
        if not candidates:
            fallback = True
            candidates = [v for v in ns.symbol_indices()]
            if not candidates:
                # Degenerate vocabulary-free sets: only a lone token can root.
                candidates = list(active)
            if not candidates:
                raise NoRootCandidate("no node is eligible to be the root child")
        best_trial: tuple[float, int, np.ndarray] | None = None
        for root_child in candidates:
            trial_active = sorted(set(active) | {root_child})
            idx = np.array(trial_active, dtype=np.int64)
            sub = working[np.ix_(idx, idx)]
            try:
                sub_parent = max_arborescence(sub, trial_active.index(root_child))
                parent = np.full(n, -1, dtype=np.int64)
                parent[ns.unused_index] = ns.root_index
                for c in range(n):
                    if c != ns.root_index and c != ns.unused_index and c not in trial_active:
                        parent[c] = ns.unused_index
                for ci, v in enumerate(trial_active):
                    parent[v] = (
                        ns.root_index if sub_parent[ci] == -1 else trial_active[sub_parent[ci]]
                    )
                total = tree_score(matrix, parent)
            except InfeasibleGraph:
                continue
            if best_trial is None or total > best_trial[0]:
                best_trial = (total, root_child, parent)
        if best_trial is not None:
            diagnostics = DecodeDiagnostics(
                unused_depth_repairs=unused_fixed.repairs,
                root_candidates=n_candidates,
                root_fallback=fallback,
            )
            parse = ParseTree(ns, tuple(int(p) for p in best_trial[2]))
            return DecodeResult(parse, best_trial[0], diagnostics)
        candidates = []  # every candidate was infeasible: fall back once
    raise InfeasibleGraph("no root candidate admits a spanning tree")


def decode(matrix: ScoreMatrix, widen_root_candidates: bool = False) -> DecodeResult:
    """Full pipeline: best parents, UNUSED repair, root resolution."""
    best = initial_best_parents(matrix)
    fixed = preprocess_unused(matrix, best)
    return resolve_root(matrix, fixed.best_parent, fixed, widen_root_candidates)


# ---------------------------------------------------------------------------
# Exhaustive oracle
# ---------------------------------------------------------------------------

DEFAULT_ORACLE_BOUND = 10
DEFAULT_ORACLE_TREE_CAP = 5_000_000

_SHAPE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _enumerate_valid_assignments(
    num_tokens: int, num_symbols: int, cap: int
) -> np.ndarray:
    """All constraint-satisfying parent assignments for a node-set shape.

    Free nodes are the tokens and symbol replicas in node-set order; the
    result holds one parent index per free node per row.  Validity depends
    only on the shape, so rows are cached and reused across instances.
    """
    key = (num_tokens, num_symbols)
    if key in _SHAPE_CACHE:
        return _SHAPE_CACHE[key]
    n_free = num_tokens + num_symbols
    root = n_free
    unused = n_free + 1
    domains = list(range(num_tokens, n_free)) + [root, unused]
    parent = [-1] * n_free
    child_count = [0] * n_free
    rows: list[list[int]] = []
    root_children = [0]

    def creates_cycle(child: int, cand: int) -> bool:
        node = cand
        while node < n_free:
            if node == child:
                return True
            node = parent[node]
            if node == -1:
                return False
        return False

    def assign(child: int) -> None:
        if len(rows) > cap:
            raise TooLarge(
                f"more than {cap} candidate trees for shape {num_tokens}+{num_symbols}"
            )
        if child == n_free:
            if root_children[0] == 1:
                rows.append(parent.copy())
            return
        for cand in domains:
            if cand == child:
                continue
            if cand == root:
                if root_children[0] == 1:
                    continue
            if cand == unused and child_count[child] > 0:
                continue
            if cand < n_free and parent[cand] == unused:
                continue
            if cand < n_free and creates_cycle(child, cand):
                continue
            parent[child] = cand
            if cand == root:
                root_children[0] += 1
            elif cand < n_free:
                child_count[cand] += 1
            assign(child + 1)
            if cand == root:
                root_children[0] -= 1
            elif cand < n_free:
                child_count[cand] -= 1
            parent[child] = -1

    assign(0)
    table = np.array(rows, dtype=np.int64).reshape(len(rows), n_free)
    _SHAPE_CACHE[key] = table
    return table


def oracle_decode(
    matrix: ScoreMatrix,
    bound: int = DEFAULT_ORACLE_BOUND,
    tree_cap: int = DEFAULT_ORACLE_TREE_CAP,
) -> DecodeResult:
    """Exhaustively enumerate every valid tree and return the best.

    Only constraint checks and brute-force enumeration: independent of the
    decoding pipeline above.  Refuses instances with more than ``bound``
    non-ROOT nodes.
    """
    ns = matrix.node_set
    non_root = len(ns) - 1
    if non_root > bound:
        raise TooLarge(f"{non_root} non-root nodes exceeds the oracle bound {bound}")
    table = _enumerate_valid_assignments(ns.num_tokens, ns.num_symbols, tree_cap)
    if table.size == 0:
        raise InfeasibleGraph("no valid tree exists for this shape")
    n_free = ns.num_tokens + ns.num_symbols
    cols = np.arange(n_free)
    totals = matrix.scores[table, cols[None, :]].sum(axis=1)
    totals = totals + matrix.scores[ns.root_index, ns.unused_index]
    best_row = int(np.argmax(totals))
    best_total = float(totals[best_row])
    if not math.isfinite(best_total):
        raise InfeasibleGraph("every candidate tree uses a forbidden edge")
    parent = np.full(len(ns), -1, dtype=np.int64)
    parent[:n_free] = table[best_row]
    parent[ns.unused_index] = ns.root_index
    parse = ParseTree(ns, tuple(int(p) for p in parent))
    diagnostics = DecodeDiagnostics(unused_depth_repairs=0, root_candidates=0)
    return DecodeResult(parse, best_total, diagnostics)


# ---------------------------------------------------------------------------
# JSON wire format
# ---------------------------------------------------------------------------


def matrix_to_json(matrix: ScoreMatrix) -> str:
    ns = matrix.node_set
    flat = [
        None if math.isinf(v) else v for v in matrix.scores.ravel().tolist()
    ]
    payload = {
        "tokens": list(ns.tokens),
        "vocab_hash": vocab_hash(ns.vocab),
        "nodes": list(ns.iter_displays()),
        "scores": flat,
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def save_matrix(path: str | Path, matrix: ScoreMatrix) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(matrix_to_json(matrix) + "\n")


def matrix_from_json(
    payload: str | dict, vocab: Vocabulary, pad: int | None = None
) -> ScoreMatrix:
    """Rebuild a ScoreMatrix, checking the vocabulary hash and node layout."""
    if isinstance(payload, str):
        payload = json.loads(payload)
    if payload.get("vocab_hash") != vocab_hash(vocab):
        raise VocabMismatch("matrix was produced with a different vocabulary")
    tokens = payload["tokens"]
    names = payload["nodes"]
    if pad is None:
        per_symbol = sum(vocab.max_occurrences.values())
        extra = len(names) - len(tokens) - 2 - per_symbol
        if extra < 0 or extra % len(vocab.symbols):
            raise DataFormatError("node count does not match any replica pad")
        pad = extra // len(vocab.symbols)
    ns = build_node_set(tokens, vocab, pad)
    expected = list(ns.iter_displays())
    if names != expected:
        raise DataFormatError("node ordering does not match the canonical layout")
    flat = payload["scores"]
    if len(flat) != len(ns) ** 2:
        raise DataFormatError(
            f"expected {len(ns) ** 2} scores, got {len(flat)}"
        )
    scores = np.array(
        [NEG_INF if v is None else float(v) for v in flat], dtype=float
    ).reshape(len(ns), len(ns))
    matrix = ScoreMatrix(ns, scores)
    matrix.validate()
    return matrix


def load_matrix(path: str | Path, vocab: Vocabulary, pad: int | None = None) -> ScoreMatrix:
    with open(path, "r", encoding="utf-8") as handle:
        return matrix_from_json(handle.read(), vocab, pad)
