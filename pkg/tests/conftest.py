import numpy as np
import pytest

from autoprune.traceio import SynthSpec, synth_trace

TAU_GRID = (0.1, 0.5, 1.0, 2.0, 5.0)

CORPUS_SPEC = dict(
    layer_count=12,
    head_count=2,
    n_text=12,
    n_visual=96,
    relevant_count=8,
    noise_sigma=1.0,
)


def random_softmax(rng, n_text, n_visual):
    logits = rng.normal(size=(n_text, n_visual))
    logits -= logits.max(axis=1, keepdims=True)
    rows = np.exp(logits)
    return rows / rows.sum(axis=1, keepdims=True)


def random_head_stack(rng, heads, n_text, n_visual):
    return np.stack([random_softmax(rng, n_text, n_visual) for _ in range(heads)])


def build_corpus(seed_base=7, count=100):
    corpus = {}
    for i in range(count):
        spec = SynthSpec(tau=TAU_GRID[i % len(TAU_GRID)], **CORPUS_SPEC)
        corpus[f"trace_{i:03d}"] = synth_trace(spec, seed=seed_base + i)
    return corpus


@pytest.fixture(scope="session")
def seed7_corpus():
    """The canonical 100-trace corpus cycling the tau grid, seeds 7..106."""
    return build_corpus(seed_base=7, count=100)
