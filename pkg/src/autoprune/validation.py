"""Input validation helpers, in the ``check_*`` style of sklearn."""

from __future__ import annotations

import numpy as np

# Rows of in-memory attention maps are softmax outputs; 32-bit storage gets
# the looser ingest tolerance defined in traceio.
ROW_SUM_ATOL = 1e-5


def check_attention_map(weights, *, atol: float = ROW_SUM_ATOL, name: str = "attention map") -> np.ndarray:
    """Validate one text-to-visual attention matrix and return a float64 copy.

    Entries must be finite and non-negative; each row must sum to 1 within
    ``atol``. Rows are renormalized to sum to exactly 1 (up to round-off) so
    probability identities hold exactly downstream.
    """
    arr = np.asarray(weights, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (text x visual), got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} needs at least one text row and one visual column, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.any(arr < 0.0):
        raise ValueError(f"{name} contains negative entries")
    sums = arr.sum(axis=1)
    bad = np.abs(sums - 1.0) > atol
    if np.any(bad):
        row = int(np.argmax(bad))
        raise ValueError(f"{name} row {row} sums to {sums[row]:.8f}, expected 1 within {atol}")
    return arr / sums[:, None]


def check_head_stack(per_head_maps, *, atol: float = ROW_SUM_ATOL) -> np.ndarray:
    """Validate a sequence of same-shape attention maps; return (heads, text, visual).

    Rows are validated but not renormalized; whole-tensor reductions keep
    this cheap enough for per-sample scheduling.
    """
    try:
        arr = np.asarray(per_head_maps, dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"attention heads must share one (text, visual) shape: {exc}") from exc
    if arr.ndim != 3:
        if arr.ndim >= 1 and arr.shape[0] == 0:
            raise ValueError("need at least one attention head")
        raise ValueError(f"expected a (heads, text, visual) stack, got shape {arr.shape}")
    heads, n_text, n_visual = arr.shape
    if heads < 1:
        raise ValueError("need at least one attention head")
    if n_text < 1 or n_visual < 1:
        raise ValueError(f"attention maps need at least one row and column, got {arr.shape}")
    smallest = arr.min()
    if not smallest >= 0.0:  # also catches NaN
        raise ValueError("attention stack contains negative or NaN entries")
    if not np.isfinite(arr.max()):
        raise ValueError("attention stack contains non-finite entries")
    sums = arr.sum(axis=2)
    bad = np.abs(sums - 1.0) > atol
    if np.any(bad):
        head, row = (int(v) for v in np.argwhere(bad)[0])
        raise ValueError(
            f"head {head} row {row} sums to {sums[head, row]:.8f}, expected 1 within {atol}"
        )
    return arr


def check_text_mask(mask, n_text: int):
    """Validate an optional boolean include-mask over text rows."""
    if mask is None:
        return None
    arr = np.asarray(mask, dtype=bool)
    if arr.shape != (n_text,):
        raise ValueError(f"text mask must have shape ({n_text},), got {arr.shape}")
    if not arr.any():
        raise ValueError("text mask excludes every row; at least one must remain")
    return arr
