"""Graph-based decoding toolkit for task-oriented semantic parsing."""

from . import errors
from .checkpoint import load_checkpoint, save_checkpoint
from .decoder import (
    NEG_INF,
    DecodeDiagnostics,
    DecodeResult,
    ScoreMatrix,
    apply_structural_mask,
    cle,
    decode,
    initial_best_parents,
    matrix_from_json,
    matrix_to_json,
    max_arborescence,
    oracle_decode,
    preprocess_unused,
    resolve_root,
    tree_score,
)
from .mapping import (
    ParseTree,
    SupervisionMask,
    extract_mask,
    load_parse_tree,
    parse_to_top,
    save_parse_tree,
    top_to_parse,
)
from .scorer import (
    BiaffineParams,
    NodeEncoder,
    TrainConfig,
    biaffine_scores,
    encode,
    log_likelihood,
    masked_log_likelihood,
    parent_distributions,
    predict,
    score_edges,
    score_tokens,
    train,
)
from .symbol_table import (
    DEFAULT_REPLICA_PAD,
    Node,
    NodeKind,
    NodeSet,
    Vocabulary,
    build_node_set,
    build_vocabulary,
    load_vocabulary,
    save_vocabulary,
    vocab_hash,
)
from .top_ir import (
    Example,
    PartialExample,
    PartialTree,
    SupervisionMode,
    SymbolKind,
    SymbolLabel,
    TokenRef,
    TopNode,
    TopTree,
    exact_match,
    nonterminal_projection,
    parse_top,
    read_examples,
    read_partial_examples,
    serialize_top,
    terminal_projection,
    write_examples,
    write_partial_examples,
)

__version__ = "0.1.0"
