"""Bindings for external scorers: dense scores in, decoded trees out."""

from .bridge import (
    BridgeScoreMatrix,
    bridge_decode,
    bridge_mask,
    format_prediction_line,
)

__version__ = "0.1.0"
