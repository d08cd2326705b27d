"""Command-line entry point.

Machine-readable results go to stdout (JSON or CSV, deterministic bytes
for identical invocations); progress notes go to stderr. Exit codes: 0 on
success, 1 on usage errors, 2 on data, format, or budget errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import BudgetError, TraceError
from .flops import ModelDims, layer_flops
from .pipeline import (
    BudgetSpec,
    PipelineConfig,
    PolicySpec,
    compare_policies,
    comparison_to_csv,
    run_pipeline,
    schedule_for_trace,
    trace_mi,
)
from .schedule import CURVE_KINDS, INFLECTION_SIGNS, CurveConfig, Schedule
from .traceio import SynthSpec, read_trace, synth_trace, write_trace

_POLICY_FLAGS = {
    "autoprune": "autoprune",
    "uniform": "uniform",
    "drop-after-k": "drop_after_k",
    "pyramid": "pyramid_stages",
}


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1 (argparse defaults to 2, which is reserved for data errors)
    def error(self, message):
        self.exit(1, f"{self.format_usage()}error:usage: {message}\n")


def _add_curve_flags(parser):
    group = parser.add_argument_group("retention curve")
    group.add_argument("--k0", type=float, default=1.0)
    group.add_argument("--gamma", type=float, default=0.9)
    group.add_argument("--x0", type=float, default=None, help="base inflection depth (default L/4)")
    group.add_argument("--beta", type=float, default=None, help="inflection sensitivity (default L/2)")
    group.add_argument("--k-min", type=float, default=0.05)
    group.add_argument("--k-max", type=float, default=10.0)
    group.add_argument("--n-min", type=int, default=1)
    group.add_argument("--inflection-sign", choices=INFLECTION_SIGNS, default="prose")
    group.add_argument("--curve", choices=CURVE_KINDS, default="logistic")
    group.add_argument("--probe-layer", type=int, default=2)


def _add_budget_flags(parser):
    group = parser.add_argument_group("budget (exactly one)")
    exclusive = group.add_mutually_exclusive_group(required=True)
    exclusive.add_argument("--budget-avg-tokens", type=float, default=None)
    exclusive.add_argument("--budget-total", type=int, default=None)
    exclusive.add_argument("--budget-flops-ratio", type=float, default=None)


def _add_dims_flags(parser):
    group = parser.add_argument_group("cost model")
    group.add_argument("--n-text", type=int, default=None, help="text tokens for FLOPs accounting")
    group.add_argument("--hidden", type=int, default=4096)
    group.add_argument("--ffn", type=int, default=11008)
    group.add_argument("--heads", type=int, default=32)


def _budget_from_args(args) -> BudgetSpec:
    if args.budget_avg_tokens is not None:
        return BudgetSpec(kind="avg_tokens", value=args.budget_avg_tokens)
    if args.budget_total is not None:
        return BudgetSpec(kind="total", value=args.budget_total)
    return BudgetSpec(kind="flops_ratio", value=args.budget_flops_ratio)


def _config_from_args(args, layers=None) -> PipelineConfig:
    curve = CurveConfig(
        k0=args.k0,
        gamma=args.gamma,
        x0_base=args.x0,
        beta=args.beta,
        k_min=args.k_min,
        k_max=args.k_max,
        inflection_sign=args.inflection_sign,
        curve_kind=args.curve,
    )
    dims = ModelDims(
        layers=layers if layers is not None else 32,
        hidden=args.hidden,
        ffn=args.ffn,
        heads=args.heads,
    )
    return PipelineConfig(
        curve=curve,
        probe_layer=args.probe_layer,
        n_min=args.n_min,
        dims=dims,
        n_text=args.n_text,
    )


def _check_out_path(out_path) -> None:
    # fail before doing any work, not after
    if out_path is not None and not Path(out_path).parent.exists():
        raise OSError(f"output directory {Path(out_path).parent} does not exist")


def _emit(payload: str, out_path) -> None:
    if out_path:
        Path(out_path).write_text(payload, encoding="utf-8")
        print(f"wrote {out_path}", file=sys.stderr)
    else:
        sys.stdout.write(payload)


def _json_line(obj) -> str:
    return json.dumps(obj, sort_keys=True) + "\n"


def build_parser() -> _Parser:
    parser = _Parser(prog="autoprune", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_mi = sub.add_parser("mi", parents=[], help="print mutual information of a trace")
    p_mi.add_argument("trace")
    p_mi.add_argument("--probe-layer", type=int, default=2)

    p_sched = sub.add_parser("schedule", help="print per-layer keep counts and curve params")
    p_sched.add_argument("trace")
    _add_budget_flags(p_sched)
    _add_curve_flags(p_sched)
    _add_dims_flags(p_sched)
    p_sched.add_argument("--out", default=None)

    p_sim = sub.add_parser("simulate", help="run the full pipeline, emit a JSON report")
    p_sim.add_argument("trace")
    p_sim.add_argument("--policy", choices=sorted(_POLICY_FLAGS), default="autoprune")
    p_sim.add_argument("--drop-layer", type=int, default=2, help="K for drop-after-k")
    _add_budget_flags(p_sim)
    _add_curve_flags(p_sim)
    _add_dims_flags(p_sim)
    p_sim.add_argument("--out", default=None)

    p_cmp = sub.add_parser("compare", help="compare policies over a corpus directory, emit CSV")
    p_cmp.add_argument("corpus")
    p_cmp.add_argument(
        "--policy",
        action="append",
        choices=sorted(_POLICY_FLAGS),
        default=None,
        help="repeatable; default: all policies",
    )
    p_cmp.add_argument("--drop-layer", type=int, default=2)
    _add_budget_flags(p_cmp)
    _add_curve_flags(p_cmp)
    _add_dims_flags(p_cmp)
    p_cmp.add_argument("--out", default=None)

    p_flops = sub.add_parser("flops", help="FLOPs totals and ratio for a schedule JSON file")
    p_flops.add_argument("schedule")
    _add_dims_flags(p_flops)

    p_synth = sub.add_parser("synth", help="write synthetic APTR traces")
    p_synth.add_argument("--out", required=True, help="output file, or directory with --count > 1")
    p_synth.add_argument("--layers", type=int, default=12)
    p_synth.add_argument("--heads", type=int, default=2)
    p_synth.add_argument("--n-text", type=int, default=12)
    p_synth.add_argument("--n-visual", type=int, default=128)
    p_synth.add_argument("--tau", default="1.0", help="temperature, or comma list cycled across traces")
    p_synth.add_argument("--relevant", type=int, default=8)
    p_synth.add_argument("--noise-sigma", type=float, default=1.0)
    p_synth.add_argument("--count", type=int, default=1)
    p_synth.add_argument("--seed", type=int, default=0)

    return parser


def _cmd_mi(args) -> int:
    trace = read_trace(args.trace)
    mi = trace_mi(trace, args.probe_layer)
    sys.stdout.write(
        _json_line(
            {
                "raw_nats": mi.raw_nats,
                "normalized": mi.normalized,
                "n_text": mi.n_text,
                "n_visual": mi.n_visual,
            }
        )
    )
    return 0


def _schedule_payload(mi, params, sched: Schedule) -> dict:
    return {
        "keep_counts": list(sched.keep_counts),
        "budget": sched.budget,
        "achieved": sched.achieved,
        "layer_count": sched.layer_count,
        "n_init": sched.n_init,
        "params": {
            "n_init": params.n_init,
            "k_q": params.k_q,
            "x0_q": params.x0_q,
            "scale": params.scale,
            "kind": params.kind,
        },
        "mi": {"raw_nats": mi.raw_nats, "normalized": mi.normalized},
    }


def _cmd_schedule(args) -> int:
    _check_out_path(args.out)
    trace = read_trace(args.trace)
    cfg = _config_from_args(args, layers=trace.layer_count)
    mi, params, sched = schedule_for_trace(trace, _budget_from_args(args), cfg)
    _emit(_json_line(_schedule_payload(mi, params, sched)), args.out)
    return 0


def _policy_from_args(args) -> PolicySpec:
    kind = _POLICY_FLAGS[args.policy]
    params = {"k": args.drop_layer} if kind == "drop_after_k" else {}
    return PolicySpec(kind=kind, params=params)


def _cmd_simulate(args) -> int:
    _check_out_path(args.out)
    trace = read_trace(args.trace)
    cfg = _config_from_args(args, layers=trace.layer_count)
    report = run_pipeline(trace, _policy_from_args(args), _budget_from_args(args), cfg)
    _emit(_json_line(report.to_json_dict()), args.out)
    return 0


def _cmd_compare(args) -> int:
    _check_out_path(args.out)
    corpus_dir = Path(args.corpus)
    paths = sorted(corpus_dir.glob("*.aptr"))
    if not paths:
        raise ValueError(f"no .aptr traces found in {corpus_dir}")
    corpus = {path.stem: read_trace(path) for path in paths}
    flags = args.policy or sorted(_POLICY_FLAGS)
    policies = []
    for flag in flags:
        kind = _POLICY_FLAGS[flag]
        params = {"k": args.drop_layer} if kind == "drop_after_k" else {}
        policies.append(PolicySpec(kind=kind, params=params))
    first = next(iter(corpus.values()))
    cfg = _config_from_args(args, layers=first.layer_count)
    rows = compare_policies(corpus, policies, _budget_from_args(args), cfg)
    _emit(comparison_to_csv(rows), args.out)
    return 0


def _cmd_flops(args) -> int:
    payload = json.loads(Path(args.schedule).read_text(encoding="utf-8"))
    sched = Schedule(
        keep_counts=tuple(payload["keep_counts"]),
        budget=payload["budget"],
        layer_count=payload["layer_count"],
        n_init=payload["n_init"],
    )
    dims = ModelDims(layers=sched.layer_count, hidden=args.hidden, ffn=args.ffn, heads=args.heads)
    n_text = args.n_text if args.n_text is not None else 64
    total = sum(layer_flops(c + n_text, dims) for c in sched.keep_counts)
    base = sched.layer_count * layer_flops(sched.n_init + n_text, dims)
    sys.stdout.write(
        _json_line({"total_flops": total, "unpruned_flops": base, "ratio": total / base, "n_text": n_text})
    )
    return 0


def _cmd_synth(args) -> int:
    taus = [float(part) for part in str(args.tau).split(",") if part]
    if not taus:
        raise ValueError("--tau needs at least one value")
    if args.count < 1:
        raise ValueError("--count must be >= 1")
    out = Path(args.out)
    if args.count == 1 and not out.is_dir():
        targets = [out]
    else:
        out.mkdir(parents=True, exist_ok=True)
        width = len(str(args.count - 1))
        targets = [out / f"trace_{i:0{width}d}.aptr" for i in range(args.count)]
    for i, path in enumerate(targets):
        spec = SynthSpec(
            layer_count=args.layers,
            head_count=args.heads,
            n_text=args.n_text,
            n_visual=args.n_visual,
            tau=taus[i % len(taus)],
            relevant_count=args.relevant,
            noise_sigma=args.noise_sigma,
        )
        write_trace(synth_trace(spec, seed=args.seed + i), path)
    print(f"wrote {len(targets)} trace(s)", file=sys.stderr)
    return 0


_COMMANDS = {
    "mi": _cmd_mi,
    "schedule": _cmd_schedule,
    "simulate": _cmd_simulate,
    "compare": _cmd_compare,
    "flops": _cmd_flops,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except BudgetError as exc:
        print(f"error:budget: {exc}", file=sys.stderr)
        return 2
    except TraceError as exc:
        print(f"error:trace: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error:usage: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
