import hashlib
import io
import math
import struct

import numpy as np
import pytest
from conftest import TAU_GRID, random_head_stack
from scipy.stats import spearmanr

from autoprune.errors import TraceCorruptionError, TraceFormatError, TraceValidationError
from autoprune.pipeline import trace_mi
from autoprune.traceio import AttentionTrace, SynthSpec, read_trace, synth_trace, write_trace


def make_trace(rng, layer_count=4, head_count=2, n_text=3, n_visual=5, absent=(), meta=None):
    layers = [
        None if i in absent else random_head_stack(rng, head_count, n_text, n_visual)
        for i in range(layer_count)
    ]
    return AttentionTrace(
        layer_count=layer_count,
        head_count=head_count,
        n_text=n_text,
        n_visual=n_visual,
        layers=tuple(layers),
        meta=meta or {},
    )


def to_bytes(trace):
    buf = io.BytesIO()
    write_trace(trace, buf)
    return buf.getvalue()


class TestRoundTrip:
    def test_minimal_trace_layout(self):
        trace = AttentionTrace(
            layer_count=1, head_count=1, n_text=1, n_visual=2, layers=(np.array([[[0.5, 0.5]]]),)
        )
        blob = to_bytes(trace)
        # 28-byte fixed header, zero-length meta, presence byte, two float32s
        assert len(blob) == 28 + 0 + 1 + 8
        assert blob[:4] == b"APTR"
        assert struct.unpack("<I", blob[4:8])[0] == 1
        assert struct.unpack("<IIII", blob[8:24]) == (1, 1, 1, 2)
        assert struct.unpack("<I", blob[24:28])[0] == 0
        assert read_trace(io.BytesIO(blob)) == trace

    def test_empty_meta_block_has_zero_length(self):
        trace = AttentionTrace(
            layer_count=1, head_count=1, n_text=1, n_visual=2, layers=(np.array([[[0.5, 0.5]]]),), meta={}
        )
        blob = to_bytes(trace)
        assert struct.unpack("<I", blob[24:28])[0] == 0

    def test_round_trip_bit_identical(self):
        rng = np.random.default_rng(2024)
        for case in range(40):
            layer_count = int(rng.integers(1, 6))
            absent = set()
            if layer_count > 1:
                absent = set(
                    int(i) for i in rng.choice(layer_count, size=int(rng.integers(0, layer_count)), replace=False)
                )
                if len(absent) == layer_count:
                    absent.pop()
            meta = {}
            if case % 3 == 0:
                meta = {"id": f"case-{case}", "note": "x" * int(rng.integers(0, 30))}
            trace = make_trace(
                rng,
                layer_count=layer_count,
                head_count=int(rng.integers(1, 4)),
                n_text=int(rng.integers(1, 5)),
                n_visual=int(rng.integers(1, 9)),
                absent=absent,
                meta=meta,
            )
            blob = to_bytes(trace)
            recovered = read_trace(io.BytesIO(blob))
            assert recovered == trace
            assert to_bytes(recovered) == blob

    def test_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        trace = make_trace(rng, meta={"id": "t"})
        path = tmp_path / "t.aptr"
        write_trace(trace, path)
        assert read_trace(path) == trace

    def test_golden_hash_stable(self):
        spec = SynthSpec(layer_count=32, head_count=4, n_text=8, n_visual=64, tau=0.8, relevant_count=6)
        blob = to_bytes(synth_trace(spec, seed=2025))
        digest = hashlib.sha256(blob).hexdigest()
        assert digest == "5fc0d7a25c0334af0ceb320980fab0db76b7a7859e28354f51110e322e736d6c"


class TestReadErrors:
    def test_bad_magic(self):
        rng = np.random.default_rng(1)
        blob = bytearray(to_bytes(make_trace(rng)))
        blob[:4] = b"XXXX"
        with pytest.raises(TraceFormatError):
            read_trace(io.BytesIO(bytes(blob)))

    def test_bad_version(self):
        rng = np.random.default_rng(1)
        blob = bytearray(to_bytes(make_trace(rng)))
        blob[4] = 9
        with pytest.raises(TraceFormatError):
            read_trace(io.BytesIO(bytes(blob)))

    def test_truncated_payload(self):
        rng = np.random.default_rng(1)
        blob = to_bytes(make_trace(rng))
        with pytest.raises(TraceCorruptionError):
            read_trace(io.BytesIO(blob[:-4]))

    def test_trailing_bytes(self):
        rng = np.random.default_rng(1)
        blob = to_bytes(make_trace(rng))
        with pytest.raises(TraceCorruptionError):
            read_trace(io.BytesIO(blob + b"\x00"))

    def test_bad_presence_byte(self):
        trace = AttentionTrace(
            layer_count=1, head_count=1, n_text=1, n_visual=2, layers=(np.array([[[0.5, 0.5]]]),)
        )
        blob = bytearray(to_bytes(trace))
        blob[28] = 2
        with pytest.raises(TraceCorruptionError):
            read_trace(io.BytesIO(bytes(blob)))

    def test_row_sum_violation_names_location(self):
        trace = AttentionTrace(
            layer_count=1, head_count=1, n_text=2, n_visual=2,
            layers=(np.array([[[0.5, 0.5], [0.5, 0.5]]]),),
        )
        blob = bytearray(to_bytes(trace))
        # overwrite the last row's floats with a sum far from 1
        blob[-8:] = struct.pack("<ff", 0.9, 0.9)
        with pytest.raises(TraceValidationError, match="layer 0 head 0 row 1"):
            read_trace(io.BytesIO(bytes(blob)))

    def test_every_header_byte_corruption_detected(self):
        trace = AttentionTrace(
            layer_count=2,
            head_count=1,
            n_text=1,
            n_visual=2,
            layers=(np.array([[[0.5, 0.5]]]), None),
            meta={"id": "x"},
        )
        blob = to_bytes(trace)
        for offset in range(28):
            for delta in range(1, 256):
                corrupted = bytearray(blob)
                corrupted[offset] = (corrupted[offset] + delta) % 256
                with pytest.raises((TraceFormatError, TraceCorruptionError, TraceValidationError)):
                    read_trace(io.BytesIO(bytes(corrupted)))


class TestTraceType:
    def test_requires_some_attention(self):
        with pytest.raises(TraceValidationError):
            AttentionTrace(layer_count=2, head_count=1, n_text=1, n_visual=2, layers=(None, None))

    def test_rejects_wrong_shape(self):
        with pytest.raises(TraceValidationError):
            AttentionTrace(
                layer_count=1, head_count=2, n_text=1, n_visual=2, layers=(np.array([[[0.5, 0.5]]]),)
            )

    def test_layer_attention_renormalizes(self):
        rng = np.random.default_rng(8)
        trace = make_trace(rng)
        attn = trace.layer_attention(0)
        np.testing.assert_allclose(attn.sum(axis=2), 1.0, atol=1e-15)

    def test_meta_coerced_to_strings(self):
        trace = AttentionTrace(
            layer_count=1, head_count=1, n_text=1, n_visual=2,
            layers=(np.array([[[0.5, 0.5]]]),), meta={"a": 1},
        )
        assert trace.meta == {"a": "1"}


class TestSynthTrace:
    def test_deterministic_per_seed(self):
        spec = SynthSpec()
        assert synth_trace(spec, seed=3) == synth_trace(spec, seed=3)
        assert synth_trace(spec, seed=3) != synth_trace(spec, seed=4)

    def test_peaked_limit_reaches_full_alignment(self):
        # one planted target per text row: near-zero temperature gives one-hot rows
        spec = SynthSpec(layer_count=4, head_count=2, n_text=8, n_visual=32,
                         tau=1e-3, relevant_count=8, noise_sigma=1.0)
        mi = trace_mi(synth_trace(spec, seed=11), probe_layer=2)
        assert mi.normalized > 0.99

    def test_diffuse_limit_loses_alignment(self):
        spec = SynthSpec(layer_count=4, head_count=2, n_text=8, n_visual=32,
                         tau=1e4, relevant_count=8, noise_sigma=1.0)
        mi = trace_mi(synth_trace(spec, seed=11), probe_layer=2)
        assert mi.normalized < 0.01

    def test_seed7_tau_grid_mi_strictly_decreasing(self):
        mis = []
        for tau in TAU_GRID:
            spec = SynthSpec(tau=tau)
            mis.append(trace_mi(synth_trace(spec, seed=7)).normalized)
        assert all(a > b for a, b in zip(mis, mis[1:]))

    def test_mi_tracks_temperature_over_corpus(self):
        rng = np.random.default_rng(31)
        taus, mis = [], []
        for i in range(120):
            tau = float(10.0 ** rng.uniform(-1.0, 0.7))
            spec = SynthSpec(layer_count=6, head_count=2, n_text=8, n_visual=48,
                             tau=tau, relevant_count=6)
            taus.append(tau)
            mis.append(trace_mi(synth_trace(spec, seed=100 + i)).normalized)
        rho = spearmanr(np.negative(taus), mis).statistic
        assert rho > 0.9

    def test_planted_set_recorded(self):
        trace = synth_trace(SynthSpec(relevant_count=5), seed=9)
        planted = [int(x) for x in trace.meta["relevant"].split(",")]
        assert len(planted) == 5
        assert planted == sorted(planted)

    def test_oversized_relevant_set_rejected(self):
        with pytest.raises(ValueError):
            SynthSpec(n_visual=8, relevant_count=9)
