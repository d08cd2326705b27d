"""Budget-constrained retention curves over decoder depth.

A complexity score modulates the slope and inflection depth of a logistic
retention curve; the curve is rescaled so its area over [0, L] equals the
token budget, then discretized into per-layer integer keep counts by a
binary search on a global scale factor. A FLOPs-budget variant runs the
same search with a decoder cost objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .attention import MIEstimate
from .errors import BudgetError
from .flops import ModelDims, layer_flops

__all__ = [
    "CURVE_KINDS",
    "INFLECTION_SIGNS",
    "CurveConfig",
    "CurveParams",
    "Schedule",
    "modulate_params",
    "eval_curve",
    "curve_area",
    "normalize_to_budget",
    "discretize_schedule",
    "flops_budget_schedule",
]

CURVE_KINDS = ("logistic", "linear", "tanh", "exponential")
INFLECTION_SIGNS = ("prose", "equation")
MI_INPUTS = ("normalized", "raw")

# Below this slope magnitude the logistic is numerically constant at half
# height and the closed-form area degenerates; use the limit directly.
_FLAT_SLOPE = 1e-9


@dataclass(frozen=True)
class CurveConfig:
    """Hyperparameters mapping a complexity score to curve parameters.

    ``x0_base`` and ``beta`` are in layer units and default to L/4 and L/2
    when left as None. With ``inflection_sign="prose"`` a lower score pushes
    the inflection deeper (conservative late pruning); ``"equation"`` selects
    the opposite dependence. ``mi_input`` picks the normalized score in
    [0, 1] (default) or raw nats as the modulation input.
    """

    k0: float = 1.0
    gamma: float = 0.9
    x0_base: float | None = None
    beta: float | None = None
    k_min: float = 0.05
    k_max: float = 10.0
    inflection_sign: str = "prose"
    curve_kind: str = "logistic"
    mi_input: str = "normalized"

    def __post_init__(self):
        if not (0.0 < self.k_min <= self.k_max):
            raise ValueError("need 0 < k_min <= k_max")
        if self.gamma < 0.0:
            raise ValueError("gamma must be >= 0")
        if self.beta is not None and self.beta < 0.0:
            raise ValueError("beta must be >= 0")
        if self.inflection_sign not in INFLECTION_SIGNS:
            raise ValueError(f"inflection_sign must be one of {INFLECTION_SIGNS}")
        if self.curve_kind not in CURVE_KINDS:
            raise ValueError(f"curve_kind must be one of {CURVE_KINDS}")
        if self.mi_input not in MI_INPUTS:
            raise ValueError(f"mi_input must be one of {MI_INPUTS}")


@dataclass(frozen=True)
class CurveParams:
    """One sample's retention curve: count = scale * n_init * g(k_q * (x - x0_q))."""

    n_init: int
    k_q: float
    x0_q: float
    scale: float = 1.0
    kind: str = "logistic"

    def __post_init__(self):
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")
        if self.k_q < 0.0 or not math.isfinite(self.k_q):
            raise ValueError("k_q must be finite and >= 0")
        if self.x0_q < 0.0 or not math.isfinite(self.x0_q):
            raise ValueError("x0_q must be finite and >= 0")
        if self.scale <= 0.0 or not math.isfinite(self.scale):
            raise ValueError("scale must be finite and > 0")
        if self.kind not in CURVE_KINDS:
            raise ValueError(f"kind must be one of {CURVE_KINDS}")


@dataclass(frozen=True)
class Schedule:
    """Per-layer integer visual-token keep counts, monotone non-increasing.

    ``budget`` is the token-layer total the schedule was required to respect;
    FLOPs-derived schedules store their achieved sum there since no token
    budget was specified.
    """

    keep_counts: tuple
    budget: int
    layer_count: int
    n_init: int

    def __post_init__(self):
        counts = tuple(int(c) for c in self.keep_counts)
        object.__setattr__(self, "keep_counts", counts)
        if len(counts) != self.layer_count:
            raise ValueError("keep_counts length must equal layer_count")
        if self.layer_count < 1:
            raise ValueError("layer_count must be >= 1")
        if any(c < 0 for c in counts):
            raise ValueError("keep counts must be non-negative")
        if any(c > self.n_init for c in counts):
            raise ValueError("keep counts cannot exceed n_init")
        if any(a < b for a, b in zip(counts, counts[1:])):
            raise ValueError("keep counts must be monotone non-increasing")
        achieved = sum(counts)
        if achieved > self.budget:
            raise ValueError(f"achieved {achieved} exceeds budget {self.budget}")
        if self.budget - achieved > self.layer_count:
            raise ValueError(
                f"budget slack {self.budget - achieved} exceeds layer count {self.layer_count}"
            )

    @property
    def achieved(self) -> int:
        return sum(self.keep_counts)


def modulate_params(mi: MIEstimate, cfg: CurveConfig, n_init: int, layer_count: int) -> CurveParams:
    """Derive curve parameters from a complexity score by linear modulation.

    Slope: clamp(k0 - gamma * score, k_min, k_max). Inflection: base plus
    beta times (1 - score) for the prose sign, or beta times score for the
    equation sign, clamped into [0, L].
    """
    if layer_count < 1:
        raise ValueError("layer_count must be >= 1")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    score = mi.normalized if cfg.mi_input == "normalized" else mi.raw_nats
    x0_base = cfg.x0_base if cfg.x0_base is not None else layer_count / 4.0
    beta = cfg.beta if cfg.beta is not None else layer_count / 2.0
    k_q = min(max(cfg.k0 - cfg.gamma * score, cfg.k_min), cfg.k_max)
    drive = (1.0 - score) if cfg.inflection_sign == "prose" else score
    x0_q = min(max(x0_base + beta * drive, 0.0), float(layer_count))
    return CurveParams(n_init=n_init, k_q=k_q, x0_q=x0_q, scale=1.0, kind=cfg.curve_kind)


def eval_curve(params: CurveParams, x):
    """Real-valued retained-token count at depth ``x``.

    Saturates cleanly at 0 and scale * n_init instead of overflowing.
    Accepts a scalar or an array of depths.
    """
    x_arr = np.asarray(x, dtype=np.float64)
    z = params.k_q * (x_arr - params.x0_q)
    top = params.scale * params.n_init
    if params.kind == "logistic":
        # 1 / (1 + e^z) via exp(-|z|), which never overflows and keeps
        # sub-normal tails instead of flushing them to zero
        decay = np.exp(-np.abs(z))
        val = top * np.where(z >= 0, decay / (1.0 + decay), 1.0 / (1.0 + decay))
    elif params.kind == "linear":
        val = top * np.clip(0.5 - 0.25 * z, 0.0, 1.0)
    elif params.kind == "tanh":
        val = top * 0.5 * (1.0 - np.tanh(z))
    else:  # exponential
        val = top * np.exp(np.minimum(-z, 0.0))
    if np.ndim(x) == 0:
        return float(val)
    return val


def curve_area(params: CurveParams, layer_count: int) -> float:
    """Area under the retention curve over [0, L].

    The logistic uses the closed form F(x) = top * ((x - x0) - softplus(k (x
    - x0)) / k) with softplus computed as logaddexp(0, z) so large slopes
    cannot overflow, and the flat L * top / 2 limit for near-zero slopes.
    Other curve kinds are integrated numerically.
    """
    if layer_count < 1:
        raise ValueError("layer_count must be >= 1")
    length = float(layer_count)
    top = params.scale * params.n_init
    if params.kind != "logistic":
        return _adaptive_simpson(lambda t: eval_curve(params, t), 0.0, length)
    k = params.k_q
    if abs(k) < _FLAT_SLOPE:
        return top * length / 2.0

    def antiderivative(x):
        z = k * (x - params.x0_q)
        return top * ((x - params.x0_q) - np.logaddexp(0.0, z) / k)

    return float(antiderivative(length) - antiderivative(0.0))


def normalize_to_budget(params: CurveParams, c_max: float, layer_count: int) -> CurveParams:
    """Rescale the curve so its area equals ``c_max``; shape is unchanged."""
    if c_max <= 0:
        raise ValueError("c_max must be > 0")
    area = curve_area(params, layer_count)
    if area <= 0.0 or not math.isfinite(area):
        raise RuntimeError(f"internal error: curve area {area} is not positive")
    return replace(params, scale=params.scale * (c_max / area))


def _adaptive_simpson(fn, lo: float, hi: float, rel_tol: float = 1e-10) -> float:
    """Adaptive Simpson integration for the non-logistic curve kinds."""
    coarse = np.linspace(lo, hi, 65)
    rough = float(np.trapezoid(fn(coarse), coarse))
    tol_density = rel_tol * max(abs(rough), 1e-30) / (hi - lo)

    def simpson(a, b, fa, fm, fb):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    f_lo, f_hi = float(fn(lo)), float(fn(hi))
    f_mid = float(fn(0.5 * (lo + hi)))
    total = 0.0
    stack = [(lo, hi, f_lo, f_mid, f_hi, simpson(lo, hi, f_lo, f_mid, f_hi), 0)]
    while stack:
        a, b, fa, fm, fb, whole, depth = stack.pop()
        m = 0.5 * (a + b)
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm, frm = float(fn(lm)), float(fn(rm))
        left = simpson(a, m, fa, flm, fm)
        right = simpson(m, b, fm, frm, fb)
        err = left + right - whole
        if depth >= 48 or abs(err) <= 15.0 * tol_density * (b - a):
            total += left + right + err / 15.0
        else:
            stack.append((a, m, fa, flm, fm, left, depth + 1))
            stack.append((m, b, fm, frm, fb, right, depth + 1))
    return total


def _search_scale(values: np.ndarray, n_init: int, n_min: int, consumed, budget, hi_start: float):
    """Largest-feasible-sum search over the global scale factor.

    ``values`` are the curve samples at the layer grid; counts at scale s are
    clamp(floor(s * values), n_min, n_init); ``consumed`` maps counts to the
    budgeted quantity and must be monotone in every count. The search starts
    from ``hi_start``, doubles the bracket until infeasible (or every count
    saturates), then bisects for a fixed 64 iterations and rounds down.
    """
    values = np.maximum(np.asarray(values, dtype=np.float64), 0.0)
    grows = values > 0.0

    def counts_at(s: float) -> np.ndarray:
        raw = np.where(grows, np.minimum(s * values, float(n_init)), 0.0)
        return np.clip(np.floor(raw), n_min, n_init).astype(np.int64)

    ceiling = np.where(grows, n_init, n_min).astype(np.int64)
    if consumed(ceiling) <= budget:
        return ceiling

    hi = max(hi_start, 1e-12)
    while consumed(counts_at(hi)) <= budget:
        hi = min(hi * 2.0, 1e308)
        if hi >= 1e308:
            break
    lo = 0.0
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        if consumed(counts_at(mid)) <= budget:
            lo = mid
        else:
            hi = mid
    return counts_at(lo)


def _layer_grid(layer_count: int) -> np.ndarray:
    # counts apply to tokens entering each layer: grid i = 0 .. L-1
    return np.arange(layer_count, dtype=np.float64)


def discretize_schedule(params: CurveParams, layer_count: int, c_max: int, n_min: int = 1) -> Schedule:
    """Integer per-layer keep counts whose sum meets the token budget.

    The achieved sum never exceeds ``c_max`` and falls short by at most
    ``layer_count`` (one floor residue per layer).
    """
    c_max = int(c_max)
    n_min = int(n_min)
    if n_min < 0:
        raise ValueError("n_min must be >= 0")
    lo_total = n_min * layer_count
    hi_total = params.n_init * layer_count
    if not lo_total <= c_max <= hi_total:
        raise BudgetError(
            f"token budget {c_max} outside feasible interval [{lo_total}, {hi_total}]",
            feasible_min=lo_total,
            feasible_max=hi_total,
        )
    values = eval_curve(params, _layer_grid(layer_count))
    area = curve_area(params, layer_count)
    hi_start = params.n_init * layer_count / max(area, 1.0)
    counts = _search_scale(values, params.n_init, n_min, lambda c: int(c.sum()), c_max, hi_start)
    return Schedule(
        keep_counts=tuple(int(c) for c in counts),
        budget=c_max,
        layer_count=layer_count,
        n_init=params.n_init,
    )


def flops_budget_schedule(
    params: CurveParams,
    flops_target: int,
    dims: ModelDims,
    n_text: int,
    layer_count: int,
    n_min: int = 1,
) -> Schedule:
    """Like :func:`discretize_schedule`, but budgeted in decoder FLOPs.

    The same scale-factor search runs with per-layer decoder cost as the
    objective; the achieved total FLOPs never exceeds ``flops_target``.
    """
    n_min = int(n_min)
    lo_total = layer_count * layer_flops(n_min + n_text, dims)
    hi_total = layer_count * layer_flops(params.n_init + n_text, dims)
    if not lo_total <= flops_target <= hi_total:
        raise BudgetError(
            f"FLOPs budget {flops_target} outside feasible interval [{lo_total}, {hi_total}]",
            feasible_min=lo_total,
            feasible_max=hi_total,
        )

    def consumed(counts: np.ndarray) -> int:
        return int(layer_flops(counts + n_text, dims).sum())

    values = eval_curve(params, _layer_grid(layer_count))
    area = curve_area(params, layer_count)
    hi_start = params.n_init * layer_count / max(area, 1.0)
    counts = _search_scale(values, params.n_init, n_min, consumed, flops_target, hi_start)
    achieved = int(counts.sum())
    return Schedule(
        keep_counts=tuple(int(c) for c in counts),
        budget=achieved,
        layer_count=layer_count,
        n_init=params.n_init,
    )
