"""Mutual-information complexity scoring from cross-modal attention.

Softmax-normalized text-to-visual attention rows are read as conditional
distributions p(v | t) under a uniform prior over text tokens. The mutual
information between the visual and textual token populations is computed
from the resulting joint table and normalized by the text entropy ln(N_t)
so scores are comparable across prompts of different lengths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .validation import check_attention_map, check_head_stack, check_text_mask

__all__ = ["MIEstimate", "aggregate_heads", "joint_distribution", "mutual_information"]


@dataclass(frozen=True)
class MIEstimate:
    """Raw (nats) and length-normalized mutual information between V and T."""

    raw_nats: float
    normalized: float
    n_text: int
    n_visual: int


def aggregate_heads(per_head_maps) -> np.ndarray:
    """Average attention maps across heads, renormalizing rows to sum to 1.

    The arithmetic mean of row-stochastic matrices is row-stochastic up to
    round-off; the renormalization removes the residue.
    """
    stack = check_head_stack(per_head_maps)
    mean = stack.mean(axis=0)
    return mean / mean.sum(axis=1, keepdims=True)


def joint_distribution(attn) -> np.ndarray:
    """Joint probability table p(v, t) = attn / N_t under a uniform text prior.

    Row marginals are exactly 1/N_t; column marginals are the per-visual-token
    attention mass averaged over text rows.
    """
    a = check_attention_map(attn)
    return a / a.shape[0]


def mutual_information(attn, text_mask=None) -> MIEstimate:
    """Mutual information of the attention-induced joint distribution.

    Terms with zero joint mass contribute exactly zero (the usual limit
    convention). The raw value lies in [0, ln(N_t)]; tiny negative float
    residue is clamped to 0. ``text_mask`` optionally restricts the text
    rows that participate (True = include).
    """
    a = check_attention_map(attn)
    mask = check_text_mask(text_mask, a.shape[0])
    if mask is not None:
        a = a[mask]
    n_text, n_visual = a.shape

    joint = a / n_text
    p_visual = joint.sum(axis=0)
    positive = joint > 0.0
    # joint / (p_v * p_t) with p_t = 1/N_t reduces to attn / p_v.
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.log(a / p_visual[np.newaxis, :])
    log_ratio[~positive] = 0.0
    raw = float(np.sum(joint * log_ratio))
    raw = max(raw, 0.0)

    if n_text >= 2:
        normalized = min(raw / math.log(n_text), 1.0)
    else:
        normalized = 0.0
    return MIEstimate(raw_nats=raw, normalized=normalized, n_text=n_text, n_visual=n_visual)
