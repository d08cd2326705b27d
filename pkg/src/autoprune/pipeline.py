"""End-to-end pipeline and baseline comparison harness.

Runs trace -> complexity score -> budgeted schedule -> token selection ->
FLOPs accounting, for the adaptive policy and for fixed-allocation
baselines that share the same budget and the same selection rule. Also
hosts the alternative complexity scorers used for ablations.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .attention import MIEstimate, aggregate_heads, mutual_information
from .errors import BudgetError
from .flops import LLAVA_15_7B, ModelDims, layer_flops, schedule_flops
from .schedule import (
    CurveConfig,
    CurveParams,
    Schedule,
    discretize_schedule,
    flops_budget_schedule,
    modulate_params,
    normalize_to_budget,
)
from .selection import KeepSet, apply_schedule

__all__ = [
    "POLICY_KINDS",
    "SCORERS",
    "PolicySpec",
    "BudgetSpec",
    "PipelineConfig",
    "PruneReport",
    "run_pipeline",
    "compare_policies",
    "comparison_to_csv",
    "ablation_scorer",
    "ablation_scores",
    "resolve_probe_layer",
    "trace_mi",
    "schedule_for_trace",
    "baseline_schedule",
]

POLICY_KINDS = ("autoprune", "uniform", "drop_after_k", "pyramid_stages")
SCORERS = ("mutual_information", "average_attention", "cosine_similarity")
BUDGET_KINDS = ("avg_tokens", "total", "flops_ratio")

META_RELEVANT_KEY = "relevant"


@dataclass(frozen=True)
class PolicySpec:
    """A token-allocation policy plus its kind-specific parameters.

    ``drop_after_k`` keeps everything for the first ``k`` layers (default 2)
    and a constant count after; ``pyramid_stages`` splits depth into
    ``stages`` equal stages (default 4) whose counts follow a geometric
    progression fitted to the budget.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"policy kind must be one of {POLICY_KINDS}")
        object.__setattr__(self, "params", dict(self.params))


@dataclass(frozen=True)
class BudgetSpec:
    """Global budget: average tokens per layer, total token-layers, or FLOPs ratio."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in BUDGET_KINDS:
            raise ValueError(f"budget kind must be one of {BUDGET_KINDS}")
        if self.value <= 0:
            raise ValueError("budget value must be > 0")
        if self.kind == "flops_ratio" and self.value > 1.0:
            raise ValueError("flops_ratio budget must be in (0, 1]")

    def token_total(self, layer_count: int) -> int:
        if self.kind == "avg_tokens":
            return int(round(self.value * layer_count))
        if self.kind == "total":
            return int(round(self.value))
        raise ValueError("a FLOPs-ratio budget has no direct token total")

    def flops_total(self, n_init: int, layer_count: int, n_text: int, dims: ModelDims) -> int:
        if self.kind != "flops_ratio":
            raise ValueError("not a FLOPs budget")
        unpruned = layer_count * layer_flops(n_init + n_text, dims)
        return int(math.floor(self.value * unpruned))


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the pipeline needs besides the trace, policy and budget."""

    curve: CurveConfig = field(default_factory=CurveConfig)
    probe_layer: int = 2
    n_min: int = 1
    dims: ModelDims = LLAVA_15_7B
    n_text: int | None = None  # None: use the trace's own text-token count

    def text_tokens(self, trace) -> int:
        return trace.n_text if self.n_text is None else self.n_text


@dataclass(frozen=True)
class PruneReport:
    """Per-trace outcome: score, curve, schedule, kept tokens, cost."""

    mi: MIEstimate
    params: CurveParams | None
    schedule: Schedule
    keeps: KeepSet
    flops_total: int
    flops_ratio: float
    relevant_recall: float | None
    policy: PolicySpec

    def to_json_dict(self) -> dict:
        return {
            "mi": {
                "raw_nats": self.mi.raw_nats,
                "normalized": self.mi.normalized,
                "n_text": self.mi.n_text,
                "n_visual": self.mi.n_visual,
            },
            "params": None
            if self.params is None
            else {
                "n_init": self.params.n_init,
                "k_q": self.params.k_q,
                "x0_q": self.params.x0_q,
                "scale": self.params.scale,
                "kind": self.params.kind,
            },
            "schedule": {
                "keep_counts": list(self.schedule.keep_counts),
                "budget": self.schedule.budget,
                "achieved": self.schedule.achieved,
                "layer_count": self.schedule.layer_count,
                "n_init": self.schedule.n_init,
            },
            "keeps": [list(layer) for layer in self.keeps.per_layer_indices],
            "flops_total": self.flops_total,
            "flops_ratio": self.flops_ratio,
            "relevant_recall": self.relevant_recall,
            "policy": {"kind": self.policy.kind, "params": self.policy.params},
        }


def resolve_probe_layer(trace, probe_layer: int) -> int:
    """Nearest attention-bearing layer at or before the requested probe index.

    Falls back to the first attention-bearing layer when the requested index
    precedes every recorded layer.
    """
    present = trace.present_layers()
    target = min(max(probe_layer, 0), trace.layer_count - 1)
    at_or_before = [i for i in present if i <= target]
    return at_or_before[-1] if at_or_before else present[0]


def trace_mi(trace, probe_layer: int = 2, text_mask=None) -> MIEstimate:
    """Mutual information from the head-averaged attention of the probe layer."""
    probe = resolve_probe_layer(trace, probe_layer)
    merged = aggregate_heads(trace.layer_attention(probe))
    return mutual_information(merged, text_mask=text_mask)


def schedule_for_trace(trace, budget: BudgetSpec, cfg: PipelineConfig):
    """Adaptive schedule for one trace; returns (mi, params, schedule).

    This is the single code path behind the CLI and the in-process bridge,
    so their integer outputs agree bit for bit.
    """
    mi = trace_mi(trace, cfg.probe_layer)
    params = modulate_params(mi, cfg.curve, trace.n_visual, trace.layer_count)
    if budget.kind == "flops_ratio":
        n_text = cfg.text_tokens(trace)
        target = budget.flops_total(trace.n_visual, trace.layer_count, n_text, cfg.dims)
        sched = flops_budget_schedule(
            params, target, cfg.dims, n_text, trace.layer_count, cfg.n_min
        )
    else:
        c_max = budget.token_total(trace.layer_count)
        params = normalize_to_budget(params, c_max, trace.layer_count)
        sched = discretize_schedule(params, trace.layer_count, c_max, cfg.n_min)
    return mi, params, sched


# ---------------------------------------------------------------------------
# Baseline allocation policies (schedules only; selection is shared)
# ---------------------------------------------------------------------------


def _spread(total: int, width: int) -> list:
    """Split ``total`` over ``width`` slots as evenly as possible, front-loaded."""
    base, extra = divmod(total, width)
    return [base + 1 if i < extra else base for i in range(width)]


def _uniform_counts(c_max: int, n_init: int, layer_count: int, n_min: int) -> list:
    _require_token_budget(c_max, n_init, layer_count, n_min)
    return _spread(c_max, layer_count)


def _drop_after_k_counts(c_max: int, n_init: int, layer_count: int, n_min: int, k: int) -> list:
    if not 0 <= k < layer_count:
        raise ValueError(f"drop layer index {k} outside [0, {layer_count})")
    _require_token_budget(c_max, n_init, layer_count, n_min)
    head_cost = k * n_init
    tail = layer_count - k
    lo = head_cost + tail * n_min
    if c_max < lo:
        raise BudgetError(
            f"budget {c_max} below {lo} needed to keep all tokens through layer {k - 1}",
            feasible_min=lo,
            feasible_max=n_init * layer_count,
        )
    return [n_init] * k + _spread(c_max - head_cost, tail)


def _pyramid_counts(c_max: int, n_init: int, layer_count: int, n_min: int, stages: int, ratio: float) -> list:
    _require_token_budget(c_max, n_init, layer_count, n_min)
    stages = min(stages, layer_count)
    lengths = _spread(layer_count, stages)

    def stage_layer_sum(first: float, r: float) -> float:
        return sum(length * first * r**s for s, length in enumerate(lengths))

    first = c_max / stage_layer_sum(1.0, ratio)
    r = ratio
    if first > n_init:
        # budget too large for the default decay: pin the first stage at
        # n_init and solve the ratio by bisection
        first = float(n_init)
        lo_r, hi_r = 0.0, 1.0
        for _ in range(80):
            mid = 0.5 * (lo_r + hi_r)
            if stage_layer_sum(first, mid) < c_max:
                lo_r = mid
            else:
                hi_r = mid
        r = 0.5 * (lo_r + hi_r)

    counts = []
    for s, length in enumerate(lengths):
        level = int(min(n_init, max(n_min, math.floor(first * r**s))))
        counts.extend([level] * length)
    for i in range(1, layer_count):
        counts[i] = min(counts[i], counts[i - 1])
    _shrink_to_budget(counts, n_min, lambda c: sum(c) <= c_max)
    _greedy_fill(counts, n_init, lambda c: sum(c) <= c_max)
    return counts


def _greedy_fill(counts: list, n_init: int, feasible) -> None:
    """Raise counts front to back while the predicate stays satisfied."""
    improved = True
    while improved:
        improved = False
        for i in range(len(counts)):
            cap = n_init if i == 0 else counts[i - 1]
            if counts[i] < cap:
                counts[i] += 1
                if feasible(counts):
                    improved = True
                else:
                    counts[i] -= 1
    # counts stay monotone because each slot is capped by its predecessor


def _shrink_to_budget(counts: list, n_min: int, feasible) -> None:
    """Lower counts back to front until the predicate holds.

    The minimum-count clamp can push a fitted profile past the budget;
    trimming the deepest reducible layer first keeps counts monotone.
    """
    while not feasible(counts):
        for i in range(len(counts) - 1, -1, -1):
            if counts[i] > n_min:
                counts[i] -= 1
                break
        else:
            return


def _require_token_budget(c_max: int, n_init: int, layer_count: int, n_min: int) -> None:
    lo, hi = n_min * layer_count, n_init * layer_count
    if not lo <= c_max <= hi:
        raise BudgetError(
            f"token budget {c_max} outside feasible interval [{lo}, {hi}]",
            feasible_min=lo,
            feasible_max=hi,
        )


def baseline_schedule(policy: PolicySpec, c_max: int, n_init: int, layer_count: int, n_min: int = 1) -> Schedule:
    """Budget-normalized fixed schedule for a baseline policy."""
    if policy.kind == "uniform":
        counts = _uniform_counts(c_max, n_init, layer_count, n_min)
    elif policy.kind == "drop_after_k":
        k = int(policy.params.get("k", 2))
        counts = _drop_after_k_counts(c_max, n_init, layer_count, n_min, k)
    elif policy.kind == "pyramid_stages":
        stages = int(policy.params.get("stages", 4))
        ratio = float(policy.params.get("ratio", 0.5))
        counts = _pyramid_counts(c_max, n_init, layer_count, n_min, stages, ratio)
    else:
        raise ValueError(f"{policy.kind} is not a fixed baseline policy")
    return Schedule(keep_counts=tuple(counts), budget=c_max, layer_count=layer_count, n_init=n_init)


def _baseline_schedule_flops(
    policy: PolicySpec,
    flops_target: int,
    dims: ModelDims,
    n_text: int,
    n_init: int,
    layer_count: int,
    n_min: int,
) -> Schedule:
    """Largest token budget whose baseline schedule fits the FLOPs target."""

    def total_flops(c_max: int) -> int:
        sched = baseline_schedule(policy, c_max, n_init, layer_count, n_min)
        return schedule_flops(sched, n_text, dims)[0]

    lo, hi = n_min * layer_count, n_init * layer_count
    try:
        lo_cost = total_flops(lo)
    except BudgetError as exc:
        # some policies (drop_after_k) cannot go as low as n_min * L
        if exc.feasible_min is None or exc.feasible_min > hi:
            raise
        lo = int(exc.feasible_min)
        lo_cost = total_flops(lo)
    if lo_cost > flops_target:
        raise BudgetError(
            f"FLOPs budget {flops_target} below the cheapest {policy.kind} schedule ({lo_cost})",
            feasible_min=lo_cost,
            feasible_max=total_flops(hi),
        )
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if total_flops(mid) <= flops_target:
            lo = mid
        else:
            hi = mid - 1
    sched = baseline_schedule(policy, lo, n_init, layer_count, n_min)
    return Schedule(
        keep_counts=sched.keep_counts,
        budget=sched.achieved,
        layer_count=layer_count,
        n_init=n_init,
    )


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


def _relevant_recall(trace, keeps: KeepSet):
    planted = trace.meta.get(META_RELEVANT_KEY)
    if not planted:
        return None
    relevant = {int(tok) for tok in planted.split(",")}
    if not relevant:
        return None
    final = set(keeps.per_layer_indices[-1])
    return len(relevant & final) / len(relevant)


def run_pipeline(trace, policy: PolicySpec, budget: BudgetSpec, cfg: PipelineConfig | None = None) -> PruneReport:
    """Full pruning pipeline for one trace under one policy and budget."""
    cfg = cfg or PipelineConfig()
    if policy.kind == "autoprune":
        mi, params, sched = schedule_for_trace(trace, budget, cfg)
    else:
        mi = trace_mi(trace, cfg.probe_layer)
        params = None
        if budget.kind == "flops_ratio":
            n_text = cfg.text_tokens(trace)
            target = budget.flops_total(trace.n_visual, trace.layer_count, n_text, cfg.dims)
            sched = _baseline_schedule_flops(
                policy, target, cfg.dims, n_text, trace.n_visual, trace.layer_count, cfg.n_min
            )
        else:
            c_max = budget.token_total(trace.layer_count)
            sched = baseline_schedule(policy, c_max, trace.n_visual, trace.layer_count, cfg.n_min)
    keeps = apply_schedule(trace, sched)
    total, ratio = schedule_flops(sched, cfg.text_tokens(trace), cfg.dims)
    return PruneReport(
        mi=mi,
        params=params,
        schedule=sched,
        keeps=keeps,
        flops_total=total,
        flops_ratio=ratio,
        relevant_recall=_relevant_recall(trace, keeps),
        policy=policy,
    )


_CSV_COLUMNS = (
    "policy",
    "n_traces",
    "n_failed",
    "achieved_mean",
    "achieved_min",
    "achieved_max",
    "flops_ratio_mean",
    "flops_ratio_min",
    "flops_ratio_max",
    "recall_mean",
    "recall_min",
    "recall_max",
)


def compare_policies(corpus, policies, budget: BudgetSpec, cfg: PipelineConfig | None = None) -> list:
    """Per-policy aggregates over a corpus of traces.

    ``corpus`` is a mapping or sequence of ``(trace_id, trace)`` pairs;
    traces run in trace-id order so the table is reproducible. A per-trace
    infeasible budget is counted in ``n_failed`` rather than aborting the
    comparison.
    """
    cfg = cfg or PipelineConfig()
    if hasattr(corpus, "items"):
        items = sorted(corpus.items())
    else:
        items = sorted(corpus)
    if not items:
        raise ValueError("corpus must contain at least one trace")
    policies = list(policies)
    if not policies:
        raise ValueError("need at least one policy")

    rows = []
    for policy in policies:
        ratios, recalls, achieved = [], [], []
        failed = 0
        for _, trace in items:
            try:
                report = run_pipeline(trace, policy, budget, cfg)
            except BudgetError:
                failed += 1
                continue
            ratios.append(report.flops_ratio)
            achieved.append(report.schedule.achieved)
            if report.relevant_recall is not None:
                recalls.append(report.relevant_recall)
        row = {
            "policy": policy.kind,
            "n_traces": len(items),
            "n_failed": failed,
            "achieved_mean": float(np.mean(achieved)) if achieved else None,
            "achieved_min": min(achieved) if achieved else None,
            "achieved_max": max(achieved) if achieved else None,
            "flops_ratio_mean": float(np.mean(ratios)) if ratios else None,
            "flops_ratio_min": min(ratios) if ratios else None,
            "flops_ratio_max": max(ratios) if ratios else None,
            "recall_mean": float(np.mean(recalls)) if recalls else None,
            "recall_min": min(recalls) if recalls else None,
            "recall_max": max(recalls) if recalls else None,
        }
        rows.append(row)
    return rows


def comparison_to_csv(rows) -> str:
    """Render comparison rows as UTF-8 CSV with a header row."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for row in rows:
        writer.writerow(["" if row[col] is None else row[col] for col in _CSV_COLUMNS])
    return buffer.getvalue()


# ---------------------------------------------------------------------------
# Ablation scorers
# ---------------------------------------------------------------------------

_EMBED_TEXT_KEY = "text_embeddings"
_EMBED_VISUAL_KEY = "visual_embeddings"


def ablation_scorer(trace, scorer: str, cfg: PipelineConfig | None = None) -> float:
    """Raw complexity score in [0, 1] for one trace under the chosen indicator.

    ``average_attention`` is the trace-wide mean, over recorded layers and
    text rows, of the row's maximum attention mass (1/N_v when diffuse, 1
    when one-hot); min-max normalization across a corpus happens in
    :func:`ablation_scores`. ``cosine_similarity`` requires embeddings
    stored in the trace meta.
    """
    cfg = cfg or PipelineConfig()
    if scorer not in SCORERS:
        raise ValueError(f"scorer must be one of {SCORERS}")
    if scorer == "mutual_information":
        return trace_mi(trace, cfg.probe_layer).normalized
    if scorer == "average_attention":
        per_layer = []
        for index in trace.present_layers():
            merged = aggregate_heads(trace.layer_attention(index))
            per_layer.append(merged.max(axis=1).mean())
        return float(np.mean(per_layer))
    text = _meta_embeddings(trace, _EMBED_TEXT_KEY)
    visual = _meta_embeddings(trace, _EMBED_VISUAL_KEY)
    t_mean = text.mean(axis=0)
    v_mean = visual.mean(axis=0)
    denom = np.linalg.norm(t_mean) * np.linalg.norm(v_mean)
    if denom == 0.0:
        return 0.5
    cosine = float(np.dot(t_mean, v_mean) / denom)
    return 0.5 * (1.0 + cosine)


def ablation_scores(traces, scorer: str, cfg: PipelineConfig | None = None) -> list:
    """Corpus scores, min-max normalized for the non-MI indicators."""
    raw = [ablation_scorer(trace, scorer, cfg) for trace in traces]
    if scorer == "mutual_information":
        return raw
    lo, hi = min(raw), max(raw)
    if hi - lo == 0.0:
        return [0.0 for _ in raw]
    return [(value - lo) / (hi - lo) for value in raw]


def _meta_embeddings(trace, key: str) -> np.ndarray:
    payload = trace.meta.get(key)
    if payload is None:
        raise ValueError(f"trace meta lacks {key!r}; cosine scoring needs embeddings")
    data = json.loads(payload)
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{key} must decode to a 2-D array")
    return arr
