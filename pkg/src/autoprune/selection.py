"""Token-selection policy: which specific tokens fill each layer's quota.

Importance is the head-and-text-mean attention mass a visual token
receives at the current layer. Pruning is hierarchical: each layer picks
from the previous layer's survivors, so kept sets are nested and nothing
is revived.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TraceValidationError
from .validation import check_head_stack, check_text_mask

__all__ = ["KeepSet", "token_importance", "select_tokens", "apply_schedule"]


@dataclass(frozen=True)
class KeepSet:
    """Sorted surviving-token indices per layer, nested across layers."""

    per_layer_indices: tuple

    def __post_init__(self):
        layers = tuple(tuple(int(i) for i in layer) for layer in self.per_layer_indices)
        object.__setattr__(self, "per_layer_indices", layers)
        previous = None
        for depth, layer in enumerate(layers):
            if list(layer) != sorted(set(layer)):
                raise ValueError(f"layer {depth} indices must be sorted and unique")
            if previous is not None and not set(layer) <= previous:
                raise ValueError(f"layer {depth} keeps tokens its predecessor dropped")
            previous = set(layer)


def token_importance(attn_layer, text_mask=None) -> np.ndarray:
    """Per-visual-token importance: mean attention over heads and text rows."""
    stack = check_head_stack(attn_layer)
    mask = check_text_mask(text_mask, stack.shape[1])
    if mask is not None:
        stack = stack[:, mask, :]
    return stack.mean(axis=(0, 1))


def select_tokens(scores, keep_count: int, eligible=None) -> np.ndarray:
    """Indices of the ``keep_count`` highest-scoring eligible tokens.

    Ties break toward the lower original index; the result is sorted
    ascending.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise ValueError("scores must be one-dimensional")
    if eligible is None:
        eligible = np.arange(scores.shape[0])
    else:
        eligible = np.asarray(eligible, dtype=np.int64)
        eligible = np.sort(eligible)
        if eligible.size and (eligible[0] < 0 or eligible[-1] >= scores.shape[0]):
            raise ValueError("eligible indices out of range")
    if keep_count < 0:
        raise ValueError("keep_count must be >= 0")
    if keep_count > eligible.size:
        raise ValueError(f"keep_count {keep_count} exceeds {eligible.size} eligible tokens")
    ranked = np.argsort(-scores[eligible], kind="stable")
    return np.sort(eligible[ranked[:keep_count]])


def apply_schedule(trace, schedule, text_mask=None) -> KeepSet:
    """Run the selection policy over a trace, honoring a keep-count schedule.

    Layer 0 selects from all tokens; every later layer selects from the
    previous layer's kept set using that layer's importance restricted to
    the surviving columns. Layers without recorded attention reuse the most
    recent scores (leading gaps borrow from the first attention-bearing
    layer).
    """
    if schedule.layer_count != trace.layer_count:
        raise ValueError(
            f"schedule has {schedule.layer_count} layers, trace has {trace.layer_count}"
        )
    if schedule.n_init > trace.n_visual:
        raise ValueError(
            f"schedule n_init {schedule.n_init} exceeds trace visual count {trace.n_visual}"
        )
    present = trace.present_layers()
    if not present:
        raise TraceValidationError("trace carries no attention at any layer")

    scores = None
    kept = np.arange(trace.n_visual)
    result = []
    for layer in range(trace.layer_count):
        attn = trace.layer_attention(layer)
        if attn is None and scores is None:
            attn = trace.layer_attention(present[0])
        if attn is not None:
            scores = token_importance(attn, text_mask)
        kept = select_tokens(scores, schedule.keep_counts[layer], eligible=kept)
        result.append(tuple(int(i) for i in kept))
    return KeepSet(per_layer_indices=tuple(result))
