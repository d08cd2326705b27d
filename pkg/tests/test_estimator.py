import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from autoprune.errors import BudgetError
from autoprune.estimator import ComplexityAdaptivePruner
from autoprune.traceio import SynthSpec, synth_trace


@pytest.fixture()
def trace():
    return synth_trace(SynthSpec(layer_count=8, n_visual=64, relevant_count=4, tau=0.5), seed=42)


class TestSklearnProtocol:
    def test_get_params_round_trip(self):
        pruner = ComplexityAdaptivePruner(budget=32, gamma=0.5)
        params = pruner.get_params()
        assert params["budget"] == 32
        assert params["gamma"] == 0.5
        rebuilt = ComplexityAdaptivePruner(**params)
        assert rebuilt.get_params() == params

    def test_set_params(self):
        pruner = ComplexityAdaptivePruner()
        pruner.set_params(budget=16, curve_kind="tanh")
        assert pruner.budget == 16
        assert pruner.curve_kind == "tanh"

    def test_clone_keeps_params_drops_state(self, trace):
        pruner = ComplexityAdaptivePruner(budget=16).fit(trace)
        copy = clone(pruner)
        assert copy.get_params() == pruner.get_params()
        assert not hasattr(copy, "schedule_")

    def test_transform_before_fit_raises(self, trace):
        with pytest.raises(NotFittedError):
            ComplexityAdaptivePruner().transform(trace)


class TestFitTransform:
    def test_fit_sets_state(self, trace):
        pruner = ComplexityAdaptivePruner(budget=16).fit(trace)
        assert 0.0 <= pruner.mi_.normalized <= 1.0
        assert pruner.schedule_.achieved <= 16 * 8
        assert pruner.schedule_.layer_count == 8
        assert 0.0 < pruner.flops_ratio_ <= 1.0
        assert pruner.curve_params_.n_init == 64

    def test_transform_counts_match_schedule(self, trace):
        pruner = ComplexityAdaptivePruner(budget=16)
        kept = pruner.fit(trace).transform(trace)
        assert [len(layer) for layer in kept] == list(pruner.schedule_.keep_counts)
        previous = None
        for layer in kept:
            assert layer.dtype == np.int64
            if previous is not None:
                assert set(layer.tolist()) <= previous
            previous = set(layer.tolist())

    def test_fit_transform_equals_fit_then_transform(self, trace):
        a = ComplexityAdaptivePruner(budget=16).fit_transform(trace)
        b = ComplexityAdaptivePruner(budget=16).fit(trace).transform(trace)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_flops_ratio_budget_kind(self, trace):
        pruner = ComplexityAdaptivePruner(budget=0.5, budget_kind="flops_ratio", n_text=32)
        pruner.fit(trace)
        assert pruner.flops_ratio_ <= 0.5

    def test_report_matches_pipeline_fields(self, trace):
        pruner = ComplexityAdaptivePruner(budget=16)
        report = pruner.report(trace)
        pruner.fit(trace)
        assert report.schedule.keep_counts == pruner.schedule_.keep_counts
        assert report.mi == pruner.mi_

    def test_infeasible_budget_raises(self, trace):
        with pytest.raises(BudgetError):
            ComplexityAdaptivePruner(budget=65).fit(trace)

    def test_rejects_non_trace_input(self):
        with pytest.raises(TypeError):
            ComplexityAdaptivePruner().fit(np.zeros((4, 4)))

    def test_bad_hyperparameter_surfaces_on_fit(self, trace):
        with pytest.raises(ValueError):
            ComplexityAdaptivePruner(curve_kind="parabola").fit(trace)
