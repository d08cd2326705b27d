"""Decoder FLOPs model for token schedules.

Covers decoder blocks only (attention projections, attention scores and
values, feed-forward); the vision encoder and LM head are out of scope
because pruning does not change their cost. Text tokens count toward the
sequence length. The model reflects prefill, where visual tokens dominate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ModelDims", "LLAVA_15_7B", "layer_flops", "schedule_flops"]


@dataclass(frozen=True)
class ModelDims:
    layers: int = 32
    hidden: int = 4096
    ffn: int = 11008
    heads: int = 32

    def __post_init__(self):
        for field in ("layers", "hidden", "ffn", "heads"):
            if getattr(self, field) < 1:
                raise ValueError(f"ModelDims.{field} must be >= 1")


# LLaVA-1.5-7B decoder dimensions.
LLAVA_15_7B = ModelDims(layers=32, hidden=4096, ffn=11008, heads=32)


def layer_flops(n, dims: ModelDims):
    """FLOPs of one decoder block over a length-``n`` sequence.

    4*n*d^2 for the Q/K/V/O projections, 2*n^2*d for attention scores and
    value mixing, 2*n*d*ffn for the feed-forward. Zero when n = 0.
    Accepts an int (exact Python arithmetic) or an integer ndarray.
    """
    d = dims.hidden
    f = dims.ffn
    if isinstance(n, np.ndarray):
        if np.any(n < 0):
            raise ValueError("sequence lengths must be >= 0")
        n = n.astype(np.int64)
        return 4 * n * d * d + 2 * n * n * d + 2 * n * d * f
    n = int(n)
    if n < 0:
        raise ValueError("sequence length must be >= 0")
    return 4 * n * d * d + 2 * n * n * d + 2 * n * d * f


def schedule_flops(schedule, n_text: int, dims: ModelDims):
    """Total decoder FLOPs of a schedule and its ratio versus no pruning.

    The baseline keeps all ``schedule.n_init`` visual tokens at every layer.
    Returns ``(total, ratio)`` with ratio in (0, 1].
    """
    if n_text < 0:
        raise ValueError("n_text must be >= 0")
    total = sum(layer_flops(int(c) + n_text, dims) for c in schedule.keep_counts)
    base = schedule.layer_count * layer_flops(schedule.n_init + n_text, dims)
    return total, total / base
