"""Sklearn-style facade over the pruning pipeline.

The pruner is a transformer whose input is an :class:`AttentionTrace`
rather than a feature matrix: ``fit`` estimates the per-input complexity
score and derives the budgeted retention schedule, ``transform`` returns
the per-layer surviving token indices. Hyperparameters follow the sklearn
``get_params``/``set_params`` convention, so the pruner composes with
model-selection utilities that only touch parameters.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .flops import LLAVA_15_7B, schedule_flops
from .pipeline import BudgetSpec, PipelineConfig, PolicySpec, run_pipeline, schedule_for_trace
from .schedule import CurveConfig
from .selection import apply_schedule
from .traceio import AttentionTrace

__all__ = ["ComplexityAdaptivePruner"]


class ComplexityAdaptivePruner(BaseEstimator, TransformerMixin):
    """Budget-constrained, complexity-adaptive visual-token pruner.

    Parameters
    ----------
    budget : float, default=64
        Budget value, interpreted per ``budget_kind``.
    budget_kind : {"avg_tokens", "total", "flops_ratio"}, default="avg_tokens"
        Average retained tokens per layer, total token-layers, or a fraction
        of the unpruned decoder FLOPs.
    k0, gamma : float
        Base slope of the retention curve and its sensitivity to the
        complexity score.
    x0_base, beta : float or None
        Base inflection depth and its sensitivity, in layer units; None
        defaults to L/4 and L/2 for an L-layer trace.
    k_min, k_max : float
        Slope clamp; ``k_min > 0`` keeps the curve strictly decreasing.
    n_min : int, default=1
        Per-layer floor on surviving tokens.
    inflection_sign : {"prose", "equation"}, default="prose"
        Direction of the inflection-depth dependence on the score.
    curve_kind : {"logistic", "linear", "tanh", "exponential"}
    mi_input : {"normalized", "raw"}, default="normalized"
    probe_layer : int, default=2
        Decoder layer whose attention supplies the complexity score.
    n_text : int or None
        Text-token count for FLOPs accounting; None uses the trace's own.

    Attributes
    ----------
    mi_ : MIEstimate
        Complexity score of the fitted trace.
    curve_params_ : CurveParams
        Budget-normalized retention-curve parameters.
    schedule_ : Schedule
        Integer per-layer keep counts.
    flops_ratio_ : float
        Decoder FLOPs of the schedule relative to no pruning.
    """

    def __init__(
        self,
        budget=64,
        budget_kind="avg_tokens",
        k0=1.0,
        gamma=0.9,
        x0_base=None,
        beta=None,
        k_min=0.05,
        k_max=10.0,
        n_min=1,
        inflection_sign="prose",
        curve_kind="logistic",
        mi_input="normalized",
        probe_layer=2,
        n_text=None,
    ):
        self.budget = budget
        self.budget_kind = budget_kind
        self.k0 = k0
        self.gamma = gamma
        self.x0_base = x0_base
        self.beta = beta
        self.k_min = k_min
        self.k_max = k_max
        self.n_min = n_min
        self.inflection_sign = inflection_sign
        self.curve_kind = curve_kind
        self.mi_input = mi_input
        self.probe_layer = probe_layer
        self.n_text = n_text

    def _pipeline_config(self) -> PipelineConfig:
        curve = CurveConfig(
            k0=self.k0,
            gamma=self.gamma,
            x0_base=self.x0_base,
            beta=self.beta,
            k_min=self.k_min,
            k_max=self.k_max,
            inflection_sign=self.inflection_sign,
            curve_kind=self.curve_kind,
            mi_input=self.mi_input,
        )
        return PipelineConfig(
            curve=curve,
            probe_layer=self.probe_layer,
            n_min=self.n_min,
            dims=LLAVA_15_7B,
            n_text=self.n_text,
        )

    def _budget_spec(self) -> BudgetSpec:
        return BudgetSpec(kind=self.budget_kind, value=float(self.budget))

    @staticmethod
    def _check_trace(trace) -> AttentionTrace:
        if not isinstance(trace, AttentionTrace):
            raise TypeError("expected an AttentionTrace; build one via traceio")
        return trace

    def fit(self, trace, y=None):
        """Estimate the complexity score and derive the budgeted schedule."""
        trace = self._check_trace(trace)
        cfg = self._pipeline_config()
        mi, params, sched = schedule_for_trace(trace, self._budget_spec(), cfg)
        self.mi_ = mi
        self.curve_params_ = params
        self.schedule_ = sched
        _, self.flops_ratio_ = schedule_flops(sched, cfg.text_tokens(trace), cfg.dims)
        self.n_layers_ = trace.layer_count
        self.n_visual_ = trace.n_visual
        return self

    def transform(self, trace):
        """Per-layer kept token indices (list of int arrays, nested by layer)."""
        if not hasattr(self, "schedule_"):
            raise NotFittedError("call fit before transform")
        trace = self._check_trace(trace)
        keeps = apply_schedule(trace, self.schedule_)
        return [np.asarray(layer, dtype=np.int64) for layer in keeps.per_layer_indices]

    def report(self, trace, policy_kind: str = "autoprune"):
        """Full :class:`PruneReport` for a trace under the configured budget."""
        trace = self._check_trace(trace)
        return run_pipeline(
            trace, PolicySpec(kind=policy_kind), self._budget_spec(), self._pipeline_config()
        )
