"""Single-file model checkpoints.

Layout: an 8-byte magic, a little-endian uint32 header length, a UTF-8
JSON header (training config, vocabularies, and a shape manifest), then
every parameter flattened to little-endian float32 in manifest order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .scorer import BiaffineParams, NodeEncoder, TrainConfig
from .symbol_table import SymbolLabel, Vocabulary, vocab_hash

MAGIC = b"TOPDECK1"
FORMAT_VERSION = 1


def save_checkpoint(
    path: str | Path, encoder: NodeEncoder, biaffine: BiaffineParams
) -> None:
    arrays: list[tuple[str, np.ndarray]] = []
    for key in sorted(encoder.params):
        arrays.append((f"enc.{key}", encoder.params[key]))
    for key in sorted(biaffine.params):
        arrays.append((f"bia.{key}", biaffine.params[key]))
    header = {
        "format": FORMAT_VERSION,
        "train_config": asdict(encoder.config),
        "word_vocab": list(encoder.word_vocab),
        "symbols": [
            [label.name, encoder.vocab.max_occurrences[label]]
            for label in encoder.vocab.symbols
        ],
        "replica_pad": encoder.replica_pad,
        "vocab_hash": vocab_hash(encoder.vocab),
        "manifest": [[name, list(arr.shape)] for name, arr in arrays],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<I", len(header_bytes)))
        handle.write(header_bytes)
        for _, arr in arrays:
            handle.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[NodeEncoder, BiaffineParams]:
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:8] != MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint file")
    (header_len,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    if header.get("format") != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint format")
    offset = 12 + header_len
    params: dict[str, np.ndarray] = {}
    for name, shape in header["manifest"]:
        count = int(np.prod(shape)) if shape else 1
        raw = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        offset += count * 4
        params[name] = raw.astype(np.float64).reshape(shape)
    if offset != len(blob):
        raise DataFormatError(f"{path}: trailing bytes after parameter blob")

    config = TrainConfig(**header["train_config"])
    maxima = {
        SymbolLabel.from_name(name): int(k) for name, k in header["symbols"]
    }
    vocab = Vocabulary(tuple(sorted(maxima, key=lambda s: s.name)), maxima)
    enc_params = {
        key[len("enc.") :]: arr for key, arr in params.items() if key.startswith("enc.")
    }
    bia_params = {
        key[len("bia.") :]: arr for key, arr in params.items() if key.startswith("bia.")
    }
    encoder = NodeEncoder(
        config,
        vocab,
        int(header["replica_pad"]),
        tuple(header["word_vocab"]),
        enc_params,
    )
    return encoder, BiaffineParams(bia_params)
