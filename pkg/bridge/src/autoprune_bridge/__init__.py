"""Thin bridge between a running VLM forward hook and the pruning library.

Two entry points: :func:`dump_attention` serializes captured per-layer
attention into the APTR trace format, and :func:`compute_schedule` turns a
single probe layer's attention into per-layer keep counts in-process. The
bridge never reimplements any math: arrays are marshaled into the library's
trace container and run through the exact code path behind the CLI
``schedule`` command, so integer outputs agree bit for bit with the
file-based workflow.

Hook sketch (model-specific wiring is up to the caller)::

    captured = []   # one (heads, text, visual) array per decoder layer

    def on_attention(layer_index, weights):
        captured.append(weights[:, text_rows, visual_cols])

    # after the forward pass
    dump_attention(captured, {"prompt": prompt_id}, "run_0001.aptr")
    counts, params = compute_schedule(captured[2], BridgeConfig(layer_count=32))
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from autoprune.flops import ModelDims
from autoprune.pipeline import BudgetSpec, PipelineConfig, schedule_for_trace
from autoprune.schedule import CurveConfig
from autoprune.traceio import AttentionTrace, write_trace

__all__ = ["BridgeConfig", "dump_attention", "compute_schedule"]

__version__ = "0.1.0"


@dataclass(frozen=True)
class BridgeConfig:
    """Scheduling configuration, mirroring the CLI flags, plus a dump stride."""

    layer_count: int = 32
    probe_layer: int = 2
    budget: float = 64.0
    budget_kind: str = "avg_tokens"
    k0: float = 1.0
    gamma: float = 0.9
    x0_base: float | None = None
    beta: float | None = None
    k_min: float = 0.05
    k_max: float = 10.0
    n_min: int = 1
    inflection_sign: str = "prose"
    curve_kind: str = "logistic"
    mi_input: str = "normalized"
    n_text: int | None = None
    hidden: int = 4096
    ffn: int = 11008
    heads: int = 32
    dump_stride: int = 1

    def __post_init__(self):
        if self.layer_count < 1:
            raise ValueError("layer_count must be >= 1")
        if self.dump_stride < 1:
            raise ValueError("dump_stride must be >= 1")

    def pipeline_config(self) -> PipelineConfig:
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
        dims = ModelDims(layers=self.layer_count, hidden=self.hidden, ffn=self.ffn, heads=self.heads)
        return PipelineConfig(
            curve=curve, probe_layer=self.probe_layer, n_min=self.n_min, dims=dims, n_text=self.n_text
        )

    def budget_spec(self) -> BudgetSpec:
        return BudgetSpec(kind=self.budget_kind, value=float(self.budget))


def _as_layer_array(array, index) -> np.ndarray:
    arr = np.ascontiguousarray(array)
    if arr.ndim != 3:
        raise ValueError(f"layer {index}: expected a (heads, text, visual) array, got shape {arr.shape}")
    return arr


def dump_attention(attn_arrays, meta, path, *, stride: int = 1) -> None:
    """Write per-layer attention arrays to ``path`` as an APTR trace.

    ``attn_arrays`` is a sequence with one (heads, text, visual) array per
    decoder layer; entries may be None for layers that were not captured.
    With ``stride`` > 1 only every stride-th layer is stored (the others are
    marked absent), which bounds file size for deep models. Rows must be
    softmax-normalized within the trace ingest tolerance; violations are
    rejected naming the offending layer, head and row. The bytes written are
    identical to serializing the same data through the library directly.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    arrays = list(attn_arrays)
    if not arrays:
        raise ValueError("need at least one layer of attention")
    shapes = [_as_layer_array(a, i).shape for i, a in enumerate(arrays) if a is not None]
    if not shapes:
        raise ValueError("need at least one captured layer")
    if len(set(shapes)) != 1:
        raise ValueError(f"captured layers disagree on shape: {sorted(set(shapes))}")
    heads, n_text, n_visual = shapes[0]
    layers = []
    for i, arr in enumerate(arrays):
        if arr is None or i % stride != 0:
            layers.append(None)
        else:
            layers.append(_as_layer_array(arr, i))
    trace = AttentionTrace(
        layer_count=len(arrays),
        head_count=heads,
        n_text=n_text,
        n_visual=n_visual,
        layers=tuple(layers),
        meta=dict(meta or {}),
    )
    write_trace(trace, path)


def compute_schedule(attn_probe, config: BridgeConfig):
    """Per-layer keep counts and curve parameters for one probe attention array.

    ``attn_probe`` is the (heads, text, visual) attention of the designated
    probe layer. Returns ``(keep_counts, params)`` where ``keep_counts`` is a
    list of ints (one per decoder layer) and ``params`` is a dict with the
    derived curve parameters and the complexity score. The counts are
    bit-identical to running the CLI ``schedule`` command on an APTR file
    carrying the same probe-layer data.
    """
    arr = _as_layer_array(attn_probe, config.probe_layer)
    heads, n_text, n_visual = arr.shape
    probe = min(max(config.probe_layer, 0), config.layer_count - 1)
    layers = [None] * config.layer_count
    layers[probe] = arr
    trace = AttentionTrace(
        layer_count=config.layer_count,
        head_count=heads,
        n_text=n_text,
        n_visual=n_visual,
        layers=tuple(layers),
        meta={},
    )
    mi, params, sched = schedule_for_trace(trace, config.budget_spec(), config.pipeline_config())
    record = {
        "n_init": params.n_init,
        "k_q": params.k_q,
        "x0_q": params.x0_q,
        "scale": params.scale,
        "kind": params.kind,
        "mi_raw_nats": mi.raw_nats,
        "mi_normalized": mi.normalized,
    }
    return list(sched.keep_counts), record
