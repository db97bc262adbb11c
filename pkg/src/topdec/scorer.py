"""Edge-factored scoring model: joint node encoding, biaffine scores, training.

Nodes get type-specific base embeddings (tokens also get a learned
position vector), a small self-attention encoder contextualizes them
jointly, and a biaffine form scores every parent/child pair.  The parse
probability factors into an independent softmax over candidate parents
per child; training maximizes the log-likelihood of the observed edges
only, so partially annotated examples contribute exactly their known
edges.  Plain single-example gradient ascent with linear warmup keeps the
whole thing dependency-free and bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import nn
from .decoder import (
    DecodeResult,
    ScoreMatrix,
    apply_structural_mask,
    decode,
)
from .errors import (
    DataFormatError,
    EmptyCorpus,
    MaskMismatch,
    NonFiniteLoss,
)
from .mapping import ParseTree, SupervisionMask, extract_mask
from .symbol_table import (
    DEFAULT_REPLICA_PAD,
    NodeSet,
    Vocabulary,
    build_node_set,
    vocab_hash,
)
from .top_ir import PartialTree

OOV_TOKEN = "<unk>"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    steps: int = 8000
    warmup_steps: int = 400
    seed: int = 0
    dim: int = 64
    biaffine_dim: int = 64
    ffn_dim: int = 128
    layers: int = 2
    heads: int = 2
    dropout: float = 0.1
    max_tokens: int = 48

    def __post_init__(self) -> None:
        numeric = {
            "learning_rate": self.learning_rate,
            "steps": self.steps,
            "warmup_steps": self.warmup_steps,
            "dim": self.dim,
            "biaffine_dim": self.biaffine_dim,
            "ffn_dim": self.ffn_dim,
            "layers": self.layers,
            "heads": self.heads,
            "max_tokens": self.max_tokens,
        }
        for name, value in numeric.items():
            if value <= 0:
                raise DataFormatError(f"{name} must be positive, got {value}")
        if not 0.0 <= self.dropout < 1.0:
            raise DataFormatError("dropout must be in [0, 1)")
        if self.dim % self.heads:
            raise DataFormatError("dim must be divisible by heads")


@dataclass
class NodeEncoder:
    """Embeddings plus the joint contextualizer.

    ``params`` holds the embedding tables (word, token position, one row
    per symbol replica slot, ROOT, UNUSED) and the attention blocks.
    """

    config: TrainConfig
    vocab: Vocabulary
    replica_pad: int
    word_vocab: tuple[str, ...]
    params: dict[str, np.ndarray]
    word_index: dict[str, int] = field(init=False)

    def __post_init__(self) -> None:
        self.word_index = {w: i for i, w in enumerate(self.word_vocab)}

    def word_id(self, token: str) -> int:
        return self.word_index.get(token, 0)


@dataclass
class BiaffineParams:
    """Biaffine scorer: tanh projections into a hidden space, then
    phi(p, c) = h_p^T U h_c + h_p^T u."""

    params: dict[str, np.ndarray]

    @property
    def U(self) -> np.ndarray:
        return self.params["bi.u_mat"]

    @property
    def u(self) -> np.ndarray:
        return self.params["bi.u_vec"]


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    scale = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, scale, size=(fan_in, fan_out))


def init_model(
    vocab: Vocabulary,
    word_vocab: Sequence[str],
    config: TrainConfig,
    rng: np.random.Generator,
    replica_pad: int = DEFAULT_REPLICA_PAD,
) -> tuple[NodeEncoder, BiaffineParams]:
    d, h = config.dim, config.biaffine_dim
    n_slots = len(vocab.replica_slots(replica_pad))
    p: dict[str, np.ndarray] = {}
    p["emb.word"] = rng.normal(0.0, 0.1, size=(len(word_vocab), d))
    p["emb.pos"] = rng.normal(0.0, 0.1, size=(config.max_tokens, d))
    p["emb.sym"] = rng.normal(0.0, 0.1, size=(n_slots, d))
    p["emb.root"] = rng.normal(0.0, 0.1, size=(d,))
    p["emb.unused"] = rng.normal(0.0, 0.1, size=(d,))
    for i in range(config.layers):
        prefix = f"block{i}"
        for name in ("wq", "wk", "wv", "wo"):
            p[f"{prefix}.attn.{name}"] = _xavier(rng, d, d)
        for name in ("bq", "bk", "bv", "bo"):
            p[f"{prefix}.attn.{name}"] = np.zeros(d)
        p[f"{prefix}.ln1.g"] = np.ones(d)
        p[f"{prefix}.ln1.b"] = np.zeros(d)
        p[f"{prefix}.ln2.g"] = np.ones(d)
        p[f"{prefix}.ln2.b"] = np.zeros(d)
        p[f"{prefix}.ffn.w1"] = _xavier(rng, d, config.ffn_dim)
        p[f"{prefix}.ffn.b1"] = np.zeros(config.ffn_dim)
        p[f"{prefix}.ffn.w2"] = _xavier(rng, config.ffn_dim, d)
        p[f"{prefix}.ffn.b2"] = np.zeros(d)
    encoder = NodeEncoder(config, vocab, replica_pad, tuple(word_vocab), p)

    b: dict[str, np.ndarray] = {}
    b["bi.wp"] = _xavier(rng, d, h)
    b["bi.bp"] = np.zeros(h)
    b["bi.wc"] = _xavier(rng, d, h)
    b["bi.bc"] = np.zeros(h)
    b["bi.u_mat"] = rng.normal(0.0, 0.01, size=(h, h))
    b["bi.u_vec"] = np.zeros(h)
    return encoder, BiaffineParams(b)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _base_embeddings(tokens: Sequence[str], node_set: NodeSet, encoder: NodeEncoder):
    p = encoder.params
    t = len(tokens)
    if t > encoder.config.max_tokens:
        raise DataFormatError(
            f"{t} tokens exceeds the position table ({encoder.config.max_tokens})"
        )
    ids = np.array([encoder.word_id(tok) for tok in tokens], dtype=np.int64)
    base = np.empty((len(node_set), encoder.config.dim))
    base[:t] = p["emb.word"][ids] + p["emb.pos"][:t]
    base[node_set.symbol_offset : node_set.root_index] = p["emb.sym"]
    base[node_set.root_index] = p["emb.root"]
    base[node_set.unused_index] = p["emb.unused"]
    return base, ids


def encode(
    tokens: Sequence[str],
    node_set: NodeSet,
    encoder: NodeEncoder,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
):
    """Contextualized node encodings, one row per node-set entry.

    Deterministic in eval mode; dropout only runs when ``train_mode`` and
    an RNG are supplied.
    """
    if vocab_hash(node_set.vocab) != vocab_hash(encoder.vocab) or node_set.pad != encoder.replica_pad:
        raise DataFormatError("node set and encoder use different vocabularies")
    base, ids = _base_embeddings(tokens, node_set, encoder)
    drop = encoder.config.dropout if train_mode else 0.0
    drop_rng = rng if train_mode else None
    x = base
    block_caches = []
    for i in range(encoder.config.layers):
        x, cache = nn.block_forward(
            x, encoder.params, f"block{i}", encoder.config.heads, drop, drop_rng
        )
        block_caches.append(cache)
    return x, (ids, len(tokens), node_set, block_caches)


def encode_backward(dx: np.ndarray, cache, encoder: NodeEncoder) -> dict[str, np.ndarray]:
    ids, t, node_set, block_caches = cache
    grads: dict[str, np.ndarray] = {}
    for i in reversed(range(encoder.config.layers)):
        dx, block_grads = nn.block_backward(dx, block_caches[i])
        grads.update(block_grads)
    d_word = np.zeros_like(encoder.params["emb.word"])
    np.add.at(d_word, ids, dx[:t])
    grads["emb.word"] = d_word
    d_pos = np.zeros_like(encoder.params["emb.pos"])
    d_pos[:t] = dx[:t]
    grads["emb.pos"] = d_pos
    grads["emb.sym"] = dx[node_set.symbol_offset : node_set.root_index].copy()
    grads["emb.root"] = dx[node_set.root_index].copy()
    grads["emb.unused"] = dx[node_set.unused_index].copy()
    return grads


def biaffine_scores(h_parent: np.ndarray, h_child: np.ndarray, U: np.ndarray, u: np.ndarray) -> np.ndarray:
    """phi[p, c] = h_parent[p]^T U h_child[c] + h_parent[p]^T u."""
    return h_parent @ U @ h_child.T + (h_parent @ u)[:, None]


def score_edges(
    encodings: np.ndarray, params: BiaffineParams, node_set: NodeSet
):
    """Score every parent/child pair; forbidden edges come back as -inf."""
    phi, _ = _score_edges_cached(encodings, params, node_set)
    return ScoreMatrix(node_set, phi)


def _score_edges_cached(encodings: np.ndarray, params: BiaffineParams, node_set: NodeSet):
    b = params.params
    zp = encodings @ b["bi.wp"] + b["bi.bp"]
    hp = np.tanh(zp)
    zc = encodings @ b["bi.wc"] + b["bi.bc"]
    hc = np.tanh(zc)
    raw = biaffine_scores(hp, hc, b["bi.u_mat"], b["bi.u_vec"])
    phi = apply_structural_mask(raw, node_set)
    return phi, (encodings, hp, hc, b)


def score_edges_backward(dphi: np.ndarray, cache):
    """Backward through the biaffine head.

    ``dphi`` must be zero on structurally masked entries (they are not a
    function of the parameters).
    """
    encodings, hp, hc, b = cache
    grads: dict[str, np.ndarray] = {}
    a = hp @ b["bi.u_mat"]  # (n, h)
    da = dphi @ hc
    dhc = dphi.T @ a
    dhp = da @ b["bi.u_mat"].T
    grads["bi.u_mat"] = hp.T @ da
    row_sums = dphi.sum(axis=1)
    dhp = dhp + row_sums[:, None] * b["bi.u_vec"][None, :]
    grads["bi.u_vec"] = hp.T @ row_sums
    dzp = dhp * (1.0 - hp * hp)
    dzc = dhc * (1.0 - hc * hc)
    grads["bi.wp"] = encodings.T @ dzp
    grads["bi.bp"] = dzp.sum(axis=0)
    grads["bi.wc"] = encodings.T @ dzc
    grads["bi.bc"] = dzc.sum(axis=0)
    d_enc = dzp @ b["bi.wp"].T + dzc @ b["bi.wc"].T
    return grads, d_enc


def masked_log_likelihood(phi: np.ndarray, children: np.ndarray, parents: np.ndarray):
    """Sum over observed children of log softmax(phi[:, c])[parent].

    Returns the log-likelihood and its gradient in phi.  Forbidden (-inf)
    entries contribute zero probability; an observed edge must be finite.
    """
    if children.size == 0:
        return 0.0, np.zeros_like(phi)
    cols = phi[:, children]
    gold = phi[parents, children]
    if not np.all(np.isfinite(gold)):
        raise MaskMismatch("an observed edge is structurally forbidden")
    mx = cols.max(axis=0)
    ex = np.exp(cols - mx[None, :])  # exp(-inf) underflows to exactly 0
    denom = ex.sum(axis=0)
    ll = float(gold.sum() - (mx + np.log(denom)).sum())
    dphi = np.zeros_like(phi)
    dphi[:, children] = -ex / denom[None, :]
    dphi[parents, children] += 1.0
    return ll, dphi


def parent_distributions(matrix: ScoreMatrix) -> np.ndarray:
    """Per-child softmax over candidate parents; columns sum to 1."""
    phi = matrix.scores
    n = phi.shape[0]
    children = np.array(
        [c for c in range(n) if c != matrix.node_set.root_index], dtype=np.int64
    )
    cols = phi[:, children]
    mx = cols.max(axis=0)
    ex = np.exp(cols - mx[None, :])
    probs = np.zeros_like(phi)
    probs[:, children] = ex / ex.sum(axis=0)[None, :]
    return probs


def log_likelihood(scores: ScoreMatrix, parse: ParseTree, mask: SupervisionMask) -> float:
    """Masked log-likelihood of a parse; unobserved children contribute zero."""
    parent_of = parse.parent
    for child, parent in mask.observed:
        if parent_of[child] != parent:
            raise MaskMismatch(
                f"mask observes edge {parent}->{child} absent from the parse"
            )
    children = np.array([c for c, _ in mask.observed], dtype=np.int64)
    parents = np.array([p for _, p in mask.observed], dtype=np.int64)
    ll, _ = masked_log_likelihood(scores.scores, children, parents)
    return ll


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PreparedExample:
    tokens: tuple[str, ...]
    node_set: NodeSet
    children: np.ndarray
    parents: np.ndarray


def prepare_examples(
    corpus: Iterable[tuple[Sequence[str], PartialTree]],
    vocab: Vocabulary,
    replica_pad: int,
) -> list[PreparedExample]:
    prepared = []
    for tokens, partial in corpus:
        node_set = build_node_set(tokens, vocab, replica_pad)
        mask = extract_mask(partial, node_set)
        if not len(mask):
            continue
        children = np.array([c for c, _ in mask.observed], dtype=np.int64)
        parents = np.array([p for _, p in mask.observed], dtype=np.int64)
        prepared.append(PreparedExample(tuple(tokens), node_set, children, parents))
    return prepared


def example_loss_and_grads(
    prepared: PreparedExample,
    encoder: NodeEncoder,
    biaffine: BiaffineParams,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
):
    """Mean negative log-likelihood per observed child, with gradients."""
    enc, enc_cache = encode(prepared.tokens, prepared.node_set, encoder, train_mode, rng)
    phi, score_cache = _score_edges_cached(enc, biaffine, prepared.node_set)
    ll, dphi = masked_log_likelihood(phi, prepared.children, prepared.parents)
    scale = -1.0 / len(prepared.children)
    loss = scale * ll
    dphi *= scale
    bi_grads, d_enc = score_edges_backward(dphi, score_cache)
    enc_grads = encode_backward(d_enc, enc_cache, encoder)
    return loss, enc_grads, bi_grads


def train(
    corpus: Iterable[tuple[Sequence[str], PartialTree]],
    vocab: Vocabulary,
    config: TrainConfig,
    replica_pad: int = DEFAULT_REPLICA_PAD,
) -> tuple[NodeEncoder, BiaffineParams, list[tuple[int, float]]]:
    """Gradient ascent on the masked log-likelihood, one example per step.

    The learning rate warms up linearly over ``warmup_steps`` then stays
    constant.  Returns the model plus the (step, loss) trace.
    """
    corpus = list(corpus)
    if not corpus:
        raise EmptyCorpus("training corpus is empty")
    words = sorted({tok for tokens, _ in corpus for tok in tokens})
    word_vocab = (OOV_TOKEN, *words)
    rng = np.random.default_rng(config.seed)
    encoder, biaffine = init_model(vocab, word_vocab, config, rng, replica_pad)
    prepared = prepare_examples(corpus, vocab, replica_pad)
    if not prepared:
        raise EmptyCorpus("no example contributes any supervised edge")

    trace: list[tuple[int, float]] = []
    queue: list[int] = []
    for step in range(config.steps):
        if not queue:
            queue = list(rng.permutation(len(prepared)))
        example = prepared[queue.pop()]
        lr = config.learning_rate * min(1.0, (step + 1) / config.warmup_steps)
        loss, enc_grads, bi_grads = example_loss_and_grads(
            example, encoder, biaffine, train_mode=True, rng=rng
        )
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss} at step {step}")
        for key, grad in enc_grads.items():
            encoder.params[key] -= lr * grad
        for key, grad in bi_grads.items():
            biaffine.params[key] -= lr * grad
        trace.append((step, float(loss)))
    return encoder, biaffine, trace


def score_tokens(
    encoder: NodeEncoder, biaffine: BiaffineParams, tokens: Sequence[str]
) -> ScoreMatrix:
    node_set = build_node_set(tokens, encoder.vocab, encoder.replica_pad)
    enc, _ = encode(tokens, node_set, encoder)
    return score_edges(enc, biaffine, node_set)


def predict(
    encoder: NodeEncoder, biaffine: BiaffineParams, tokens: Sequence[str]
) -> DecodeResult:
    """Score a query with the model and decode the best constrained tree."""
    return decode(score_tokens(encoder, biaffine, tokens))


def write_trace(path, trace: list[tuple[int, float]]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("step,loss\n")
        for step, loss in trace:
            handle.write(f"{step},{loss:.8f}\n")
