"""Complexity-adaptive visual-token pruning for VLM decoders.

Given cross-modal attention, estimate how tightly the prompt constrains
the image via mutual information, map that score onto a budget-constrained
logistic retention curve over decoder depth, discretize it into per-layer
keep counts, select surviving tokens, and account the FLOPs saved.
"""

from .attention import MIEstimate, aggregate_heads, joint_distribution, mutual_information
from .errors import (
    BudgetError,
    TraceCorruptionError,
    TraceError,
    TraceFormatError,
    TraceValidationError,
)
from .estimator import ComplexityAdaptivePruner
from .flops import LLAVA_15_7B, ModelDims, layer_flops, schedule_flops
from .pipeline import (
    BudgetSpec,
    PipelineConfig,
    PolicySpec,
    PruneReport,
    ablation_scorer,
    ablation_scores,
    baseline_schedule,
    compare_policies,
    comparison_to_csv,
    run_pipeline,
    schedule_for_trace,
    trace_mi,
)
from .schedule import (
    CurveConfig,
    CurveParams,
    Schedule,
    curve_area,
    discretize_schedule,
    eval_curve,
    flops_budget_schedule,
    modulate_params,
    normalize_to_budget,
)
from .selection import KeepSet, apply_schedule, select_tokens, token_importance
from .traceio import AttentionTrace, SynthSpec, read_trace, synth_trace, write_trace

__version__ = "0.1.0"

__all__ = [
    "AttentionTrace",
    "BudgetError",
    "BudgetSpec",
    "ComplexityAdaptivePruner",
    "CurveConfig",
    "CurveParams",
    "KeepSet",
    "LLAVA_15_7B",
    "MIEstimate",
    "ModelDims",
    "PipelineConfig",
    "PolicySpec",
    "PruneReport",
    "Schedule",
    "SynthSpec",
    "TraceCorruptionError",
    "TraceError",
    "TraceFormatError",
    "TraceValidationError",
    "ablation_scorer",
    "ablation_scores",
    "aggregate_heads",
    "apply_schedule",
    "baseline_schedule",
    "compare_policies",
    "comparison_to_csv",
    "curve_area",
    "discretize_schedule",
    "eval_curve",
    "flops_budget_schedule",
    "joint_distribution",
    "layer_flops",
    "modulate_params",
    "mutual_information",
    "normalize_to_budget",
    "read_trace",
    "run_pipeline",
    "schedule_flops",
    "schedule_for_trace",
    "select_tokens",
    "synth_trace",
    "token_importance",
    "trace_mi",
    "write_trace",
]
