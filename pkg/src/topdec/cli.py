"""Command-line surface: split | train | decode | eval | oracle-audit | stats | convert.

Options may come from a flat ``key=value`` config file (``--config``);
explicit flags win.  Exit codes: 0 success, 1 usage error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import random
import sys
from collections import Counter
from pathlib import Path

from . import checkpoint as ckpt
from . import decoder, mapping, scorer, symbol_table, top_ir
from .errors import (
    BadPercentages,
    DataFormatError,
    EmptyCorpus,
    InvalidParse,
    NonFiniteLoss,
    TooLarge,
    TopdecError,
    UnanchoredSubtree,
    VocabMismatch,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

INVALID_SENTINEL = "<INVALID:{}>"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def read_config_file(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise DataFormatError(f"{path}:{lineno}: expected key=value")
            key, _, value = stripped.partition("=")
            values[key.strip()] = value.strip()
    return values


def _merged(args: argparse.Namespace, key: str, cast, default):
    """Flag value if given, else config-file value, else default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if args.config_values and key in args.config_values:
        return cast(args.config_values[key])
    return default


def _load_config_values(args: argparse.Namespace) -> None:
    args.config_values = read_config_file(args.config) if args.config else {}


# ---------------------------------------------------------------------------
# Dataset helpers
# ---------------------------------------------------------------------------

_MODES = {m.value for m in top_ir.SupervisionMode}


def _is_partial_file(path: str | Path) -> bool:
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                fields = line.rstrip("\n").split("\t")
                return len(fields) == 4 and fields[0] in _MODES
    return False


def read_any_dataset(path: str | Path) -> list[top_ir.PartialExample]:
    """Read either a full dataset or a partial one, as partial examples."""
    if _is_partial_file(path):
        return top_ir.read_partial_examples(path)
    return [
        top_ir.PartialExample(ex.raw, ex.tokens, top_ir.PartialTree.full(ex.tree))
        for ex in top_ir.read_examples(path)
    ]


def _partial_symbol_counter(partial: top_ir.PartialTree) -> Counter:
    if partial.mode is top_ir.SupervisionMode.FULL:
        return symbol_table.count_symbols(partial.tree)
    if partial.mode is top_ir.SupervisionMode.TERMINAL_ONLY:
        return Counter(frag.label for frag in partial.fragments)
    return Counter(node.label for node in top_ir.iter_symbol_nodes(partial.symbols))


def vocabulary_from_partial_examples(
    examples: list[top_ir.PartialExample],
) -> symbol_table.Vocabulary:
    return symbol_table.vocabulary_from_counters(
        _partial_symbol_counter(ex.partial) for ex in examples
    )


# ---------------------------------------------------------------------------
# split
# ---------------------------------------------------------------------------


def cmd_split(args: argparse.Namespace) -> int:
    s = _merged(args, "full", int, None)
    t = _merged(args, "term", int, None)
    n = _merged(args, "nonterm", int, None)
    seed = _merged(args, "seed", int, 0)
    if s is None or t is None or n is None:
        raise BadPercentages("--full, --term and --nonterm are all required")
    if min(s, t, n) < 0 or s + t + n != 100:
        raise BadPercentages(f"percentages must be >= 0 and sum to 100, got {s}/{t}/{n}")
    examples = top_ir.read_examples(args.data)
    order = list(range(len(examples)))
    random.Random(seed).shuffle(order)

    total = len(examples)
    sizes = [total * s // 100, total * t // 100, total * n // 100]
    remainder = total - sum(sizes)
    largest = max(range(3), key=lambda i: ((s, t, n)[i], -i))
    sizes[largest] += remainder

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    buckets = (
        ("full", top_ir.SupervisionMode.FULL, sizes[0]),
        ("term", top_ir.SupervisionMode.TERMINAL_ONLY, sizes[1]),
        ("nonterm", top_ir.SupervisionMode.NONTERMINAL_ONLY, sizes[2]),
    )
    cursor = 0
    for name, mode, size in buckets:
        chunk = [examples[i] for i in order[cursor : cursor + size]]
        cursor += size
        rows = []
        for example in chunk:
            if mode is top_ir.SupervisionMode.FULL:
                partial = top_ir.PartialTree.full(example.tree)
            elif mode is top_ir.SupervisionMode.TERMINAL_ONLY:
                partial = top_ir.terminal_projection(example.tree)
            else:
                partial = top_ir.nonterminal_projection(example.tree)
            row = top_ir.PartialExample(example.raw, example.tokens, partial)
            _check_row_round_trip(row)
            rows.append(row)
        path = out_dir / f"{name}.tsv"
        top_ir.write_partial_examples(path, rows)
        print(f"{name}\t{len(rows)}\t{path}")
    return EXIT_OK


def _check_row_round_trip(row: top_ir.PartialExample) -> None:
    """Flag any row whose serialization does not parse back identically."""
    line = top_ir.partial_to_line(row)
    back = top_ir.partial_from_line(line)
    if back != row:
        raise DataFormatError(
            f"row for query {row.raw!r} does not survive a serialization round trip"
        )


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_TRAIN_FIELDS = (
    ("learning_rate", float),
    ("steps", int),
    ("warmup_steps", int),
    ("seed", int),
    ("dim", int),
    ("biaffine_dim", int),
    ("ffn_dim", int),
    ("layers", int),
    ("heads", int),
    ("dropout", float),
    ("max_tokens", int),
)


def _train_config(args: argparse.Namespace) -> scorer.TrainConfig:
    defaults = scorer.TrainConfig()
    kwargs = {
        name: _merged(args, name, cast, getattr(defaults, name))
        for name, cast in _TRAIN_FIELDS
    }
    return scorer.TrainConfig(**kwargs)


def cmd_train(args: argparse.Namespace) -> int:
    examples: list[top_ir.PartialExample] = []
    for path in args.data:
        examples.extend(read_any_dataset(path))
    if not examples:
        raise EmptyCorpus("no training examples found")
    if args.vocab:
        vocab = symbol_table.load_vocabulary(args.vocab)
    else:
        vocab = vocabulary_from_partial_examples(examples)
    config = _train_config(args)
    pad = _merged(args, "replica_pad", int, symbol_table.DEFAULT_REPLICA_PAD)
    corpus = [(ex.tokens, ex.partial) for ex in examples]
    encoder, biaffine, trace = scorer.train(corpus, vocab, config, replica_pad=pad)
    ckpt.save_checkpoint(args.out, encoder, biaffine)
    trace_path = args.trace or f"{args.out}.trace.csv"
    scorer.write_trace(trace_path, trace)
    if args.save_vocab:
        symbol_table.save_vocabulary(args.save_vocab, vocab)
    print(f"examples\t{len(examples)}")
    print(f"steps\t{config.steps}")
    print(f"final_loss\t{trace[-1][1]:.6f}")
    print(f"checkpoint\t{args.out}")
    print(f"trace\t{trace_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# decode / eval
# ---------------------------------------------------------------------------


def _prediction_line(line_no: int, result, tree_text: str) -> str:
    d = result.diagnostics
    return "\t".join(
        (
            str(line_no),
            tree_text,
            f"{result.total_score:.6f}",
            str(d.unused_depth_repairs),
            str(d.root_candidates),
        )
    )


def _tree_text(result) -> str:
    try:
        return top_ir.serialize_top(mapping.parse_to_top(result.parse))
    except InvalidParse as exc:
        return INVALID_SENTINEL.format(exc.reason)
    except UnanchoredSubtree:
        return INVALID_SENTINEL.format("unanchored_subtree")


def cmd_decode(args: argparse.Namespace) -> int:
    lines: list[str] = []
    if args.scores:
        if not args.vocab:
            raise DataFormatError("--scores decoding requires --vocab")
        vocab = symbol_table.load_vocabulary(args.vocab)
        for line_no, path in enumerate(args.scores):
            matrix = decoder.load_matrix(path, vocab)
            result = decoder.decode(matrix)
            lines.append(_prediction_line(line_no, result, _tree_text(result)))
    else:
        if not (args.checkpoint and args.data):
            raise DataFormatError("model decoding requires --checkpoint and --data")
        encoder, biaffine = ckpt.load_checkpoint(args.checkpoint)
        for line_no, example in enumerate(read_any_dataset(args.data)):
            result = scorer.predict(encoder, biaffine, example.tokens)
            lines.append(_prediction_line(line_no, result, _tree_text(result)))
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _gold_matrix(example: top_ir.Example, vocab, pad: int) -> decoder.ScoreMatrix:
    """+1 on gold edges, 0 elsewhere (structural holes stay forbidden)."""
    import numpy as np

    node_set = symbol_table.build_node_set(example.tokens, vocab, pad)
    parse = mapping.top_to_parse(example.tree, node_set)
    raw = np.zeros((len(node_set), len(node_set)))
    for child, parent in parse.edges():
        raw[parent, child] = 1.0
    return decoder.ScoreMatrix(node_set, decoder.apply_structural_mask(raw, node_set))


def cmd_eval(args: argparse.Namespace) -> int:
    examples = top_ir.read_examples(args.data)
    if args.inject_gold:
        vocab = symbol_table.build_vocabulary(ex.tree for ex in examples)
        pad = symbol_table.DEFAULT_REPLICA_PAD
        encoder = biaffine = None
    else:
        if not args.checkpoint:
            raise DataFormatError("eval requires --checkpoint (or --inject-gold)")
        encoder, biaffine = ckpt.load_checkpoint(args.checkpoint)
        vocab, pad = encoder.vocab, encoder.replica_pad
        if args.vocab:
            file_vocab = symbol_table.load_vocabulary(args.vocab)
            if symbol_table.vocab_hash(file_vocab) != symbol_table.vocab_hash(vocab):
                raise VocabMismatch("--vocab does not match the checkpoint vocabulary")

    n_exact = 0
    repairs = 0
    multi_root = 0
    fallbacks = 0
    categories: Counter = Counter()
    pred_lines = []
    for line_no, example in enumerate(examples):
        if args.inject_gold:
            result = decoder.decode(_gold_matrix(example, vocab, pad))
        else:
            result = scorer.predict(encoder, biaffine, example.tokens)
        tree_text = _tree_text(result)
        pred_lines.append(_prediction_line(line_no, result, tree_text))
        d = result.diagnostics
        repairs += 1 if d.unused_depth_repairs else 0
        multi_root += 1 if d.root_candidates > 1 else 0
        fallbacks += 1 if d.root_fallback else 0
        if tree_text.startswith("<INVALID:"):
            categories[tree_text.strip("<>").lower()] += 1
        elif tree_text == top_ir.serialize_top(example.tree):
            n_exact += 1
            categories["exact"] += 1
        else:
            categories["mismatch"] += 1

    total = len(examples)
    print(f"examples\t{total}")
    print(f"exact_match\t{n_exact / total:.4f}" if total else "exact_match\tn/a")
    print(f"repair_rate\t{repairs / total:.4f}" if total else "repair_rate\tn/a")
    print(f"multi_root_rate\t{multi_root / total:.4f}" if total else "multi_root_rate\tn/a")
    print(f"fallback_count\t{fallbacks}")
    for name in sorted(categories):
        print(f"category\t{name}\t{categories[name]}")
    if args.out_preds:
        Path(args.out_preds).write_text(
            "\n".join(pred_lines) + ("\n" if pred_lines else ""), encoding="utf-8"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle-audit
# ---------------------------------------------------------------------------


def cmd_oracle_audit(args: argparse.Namespace) -> int:
    matrices: list[decoder.ScoreMatrix] = []
    if args.scores:
        if not args.vocab:
            raise DataFormatError("--scores auditing requires --vocab")
        vocab = symbol_table.load_vocabulary(args.vocab)
        for path in args.scores:
            matrices.append(decoder.load_matrix(path, vocab))
    elif args.checkpoint and args.data:
        encoder, biaffine = ckpt.load_checkpoint(args.checkpoint)
        for example in read_any_dataset(args.data):
            matrices.append(scorer.score_tokens(encoder, biaffine, example.tokens))
    bound = args.bound if args.bound is not None else decoder.DEFAULT_ORACLE_BOUND

    n_done = 0
    n_skipped = 0
    n_exact = 0
    n_clean = 0
    n_clean_exact = 0
    gap_sum = 0.0
    for matrix in matrices:
        try:
            oracle = decoder.oracle_decode(matrix, bound=bound)
        except TooLarge:
            n_skipped += 1
            continue
        result = decoder.decode(matrix)
        n_done += 1
        gap = oracle.total_score - result.total_score
        exact = abs(gap) <= 1e-9
        if exact:
            n_exact += 1
        else:
            gap_sum += gap
        d = result.diagnostics
        if d.unused_depth_repairs == 0 and d.root_candidates == 1 and not d.root_fallback:
            n_clean += 1
            if exact:
                n_clean_exact += 1
    print(f"instances\t{n_done}")
    print(f"skipped_too_large\t{n_skipped}")
    print(f"exact\t{n_exact}")
    print(f"exact_fraction\t{n_exact / n_done:.4f}" if n_done else "exact_fraction\tn/a")
    mean_gap = gap_sum / (n_done - n_exact) if n_done > n_exact else 0.0
    print(f"mean_gap\t{mean_gap:.6f}")
    print(f"clean\t{n_clean}")
    print(f"clean_exact\t{n_clean_exact}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# stats / convert
# ---------------------------------------------------------------------------


def cmd_stats(args: argparse.Namespace) -> int:
    examples = read_any_dataset(args.data)
    token_counts = [len(ex.tokens) for ex in examples]
    modes = Counter(ex.mode.value for ex in examples)
    counters = [_partial_symbol_counter(ex.partial) for ex in examples]
    if counters and any(counters):
        vocab = symbol_table.vocabulary_from_counters(counters)
    else:
        vocab = None
    print(f"examples\t{len(examples)}")
    for mode in ("FULL", "TERM", "NONTERM"):
        print(f"mode\t{mode}\t{modes.get(mode, 0)}")
    if token_counts:
        print(f"tokens_min\t{min(token_counts)}")
        print(f"tokens_mean\t{sum(token_counts) / len(token_counts):.2f}")
        print(f"tokens_max\t{max(token_counts)}")
    if vocab is not None:
        print(f"symbols\t{len(vocab.symbols)}")
        budget = sum(
            vocab.replica_count(s, symbol_table.DEFAULT_REPLICA_PAD) for s in vocab.symbols
        )
        print(f"replica_budget\t{budget}")
        if token_counts:
            print(f"max_node_set\t{max(token_counts) + budget + 2}")
        for label in vocab.symbols:
            print(f"symbol\t{label.name}\t{vocab.max_occurrences[label]}")
    return EXIT_OK


def cmd_convert(args: argparse.Namespace) -> int:
    vocab = symbol_table.load_vocabulary(args.vocab)
    pad = _merged(args, "replica_pad", int, symbol_table.DEFAULT_REPLICA_PAD)
    if args.mode == "top2parse":
        examples = top_ir.read_examples(args.data)
        if not 0 <= args.line < len(examples):
            raise DataFormatError(f"--line {args.line} out of range")
        example = examples[args.line]
        node_set = symbol_table.build_node_set(example.tokens, vocab, pad)
        parse = mapping.top_to_parse(example.tree, node_set)
        if args.out:
            mapping.save_parse_tree(args.out, parse)
            print(f"parse\t{args.out}")
        else:
            sys.stdout.write(mapping.parse_tree_text(parse))
    else:
        tokens = tuple(args.tokens.split())
        node_set = symbol_table.build_node_set(tokens, vocab, pad)
        parse = mapping.load_parse_tree(args.parse, node_set)
        tree = mapping.parse_to_top(parse)
        print(top_ir.serialize_top(tree))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument wiring
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="topdec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: _Parser) -> None:
        p.add_argument("--config", help="flat key=value config file")

    p = sub.add_parser("split", help="partition a dataset into supervision regimes")
    add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--full", type=int)
    p.add_argument("--term", type=int)
    p.add_argument("--nonterm", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train the edge scorer")
    add_common(p)
    p.add_argument("--data", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.add_argument("--vocab")
    p.add_argument("--save-vocab")
    p.add_argument("--replica-pad", type=int, dest="replica_pad")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--steps", type=int)
    p.add_argument("--warmup-steps", type=int, dest="warmup_steps")
    p.add_argument("--seed", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--biaffine-dim", type=int, dest="biaffine_dim")
    p.add_argument("--ffn-dim", type=int, dest="ffn_dim")
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--max-tokens", type=int, dest="max_tokens")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="decode score matrices or a dataset")
    add_common(p)
    p.add_argument("--scores", nargs="*")
    p.add_argument("--vocab")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--out")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="exact-match evaluation with diagnostics")
    add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--out-preds", dest="out_preds")
    p.add_argument("--inject-gold", action="store_true", dest="inject_gold")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle-audit", help="compare decode with the exhaustive oracle")
    add_common(p)
    p.add_argument("--scores", nargs="*")
    p.add_argument("--vocab")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--bound", type=int)
    p.set_defaults(func=cmd_oracle_audit)

    p = sub.add_parser("stats", help="dataset statistics")
    add_common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("convert", help="convert between tree and parse files")
    add_common(p)
    p.add_argument("--mode", required=True, choices=("top2parse", "parse2top"))
    p.add_argument("--vocab", required=True)
    p.add_argument("--data")
    p.add_argument("--line", type=int, default=0)
    p.add_argument("--parse")
    p.add_argument("--tokens")
    p.add_argument("--out")
    p.add_argument("--replica-pad", type=int, dest="replica_pad")
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _load_config_values(args)
        return args.func(args)
    except BadPercentages as exc:
        sys.stderr.write(f"topdec: {exc}\n")
        return EXIT_USAGE
    except NonFiniteLoss as exc:
        sys.stderr.write(f"topdec: {exc}\n")
        return EXIT_NUMERIC
    except TopdecError as exc:
        sys.stderr.write(f"topdec: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
