import math

import numpy as np
import pytest
from conftest import random_head_stack, random_softmax
from oracles import brute_force_marginals, brute_force_mi, mean_heads

from autoprune.attention import aggregate_heads, joint_distribution, mutual_information


class TestAggregateHeads:
    def test_single_head_is_identity(self):
        rng = np.random.default_rng(0)
        head = random_softmax(rng, 3, 5)
        np.testing.assert_allclose(aggregate_heads([head]), head, atol=1e-12)

    def test_two_head_mean(self):
        n_v = 4
        uniform = np.full((1, n_v), 1.0 / n_v)
        peaked = np.zeros((1, n_v))
        peaked[0, 0] = 1.0
        merged = aggregate_heads([uniform, peaked])
        expected = np.full(n_v, (1.0 / n_v) / 2.0)
        expected[0] = (1.0 + 1.0 / n_v) / 2.0
        np.testing.assert_allclose(merged[0], expected, atol=1e-12)

    def test_matches_loop_mean(self):
        rng = np.random.default_rng(42)
        heads = [random_softmax(rng, 4, 6) for _ in range(8)]
        merged = aggregate_heads(heads)
        np.testing.assert_allclose(merged, mean_heads(heads), atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        merged = aggregate_heads(random_head_stack(rng, 5, 7, 11))
        np.testing.assert_allclose(merged.sum(axis=1), 1.0, atol=1e-12)

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError):
            aggregate_heads([])

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(1)
        with pytest.raises(ValueError):
            aggregate_heads([random_softmax(rng, 2, 4), random_softmax(rng, 2, 5)])


class TestJointDistribution:
    def test_uniform_case(self):
        joint = joint_distribution(np.full((2, 4), 0.25))
        np.testing.assert_allclose(joint, np.full((2, 4), 0.125), atol=1e-12)

    def test_single_text_row(self):
        row = np.array([[0.5, 0.3, 0.2]])
        np.testing.assert_allclose(joint_distribution(row), row, atol=1e-12)

    def test_marginals_match_brute_force(self):
        rng = np.random.default_rng(7)
        attn = random_softmax(rng, 3, 5)
        joint = joint_distribution(attn)
        rows_expected, cols_expected = brute_force_marginals(attn)
        np.testing.assert_allclose(joint.sum(axis=1), rows_expected, atol=1e-12)
        np.testing.assert_allclose(joint.sum(axis=0), cols_expected, atol=1e-12)
        assert abs(joint.sum() - 1.0) < 1e-6
        np.testing.assert_allclose(joint.sum(axis=1), 1.0 / 3.0, atol=1e-12)

    def test_invalid_rows_rejected(self):
        with pytest.raises(ValueError):
            joint_distribution(np.array([[0.5, 0.6], [0.5, 0.5]]))


class TestMutualInformation:
    def test_independence_gives_zero(self):
        mi = mutual_information(np.full((3, 4), 0.25))
        assert mi.raw_nats == 0.0
        assert mi.normalized == 0.0

    def test_deterministic_alignment(self):
        mi = mutual_information(np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert abs(mi.raw_nats - math.log(2)) < 1e-12
        assert mi.normalized == 1.0

    def test_matches_brute_force_8x16(self):
        rng = np.random.default_rng(123)
        attn = random_softmax(rng, 8, 16)
        mi = mutual_information(attn)
        assert abs(mi.raw_nats - brute_force_mi(attn)) < 1e-12

    def test_single_text_row_normalizes_to_zero(self):
        rng = np.random.default_rng(5)
        mi = mutual_information(random_softmax(rng, 1, 9))
        assert mi.normalized == 0.0
        assert mi.raw_nats <= 1e-9

    def test_upper_bound(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n_t = int(rng.integers(1, 12))
            n_v = int(rng.integers(1, 40))
            mi = mutual_information(random_softmax(rng, n_t, n_v))
            assert 0.0 <= mi.raw_nats <= math.log(max(n_t, 2)) + 1e-9

    def test_permutation_invariance(self):
        rng = np.random.default_rng(17)
        attn = random_softmax(rng, 5, 13)
        perm = rng.permutation(13)
        a = mutual_information(attn).raw_nats
        b = mutual_information(attn[:, perm]).raw_nats
        assert abs(a - b) < 1e-12

    def test_identical_rows_give_zero(self):
        rng = np.random.default_rng(19)
        row = random_softmax(rng, 1, 20)
        attn = np.repeat(row, 6, axis=0)
        assert mutual_information(attn).raw_nats < 1e-9

    def test_determinism_bit_identical(self):
        rng = np.random.default_rng(23)
        attn = random_softmax(rng, 6, 10)
        first = mutual_information(attn)
        second = mutual_information(attn.copy())
        assert first == second

    def test_text_mask_restricts_rows(self):
        rng = np.random.default_rng(29)
        attn = random_softmax(rng, 4, 8)
        mask = np.array([True, False, True, False])
        masked = mutual_information(attn, text_mask=mask)
        direct = mutual_information(attn[mask])
        assert masked == direct
        assert masked.n_text == 2

    def test_all_masked_rejected(self):
        with pytest.raises(ValueError):
            mutual_information(np.full((2, 2), 0.5), text_mask=[False, False])

    def test_negative_entries_rejected(self):
        with pytest.raises(ValueError):
            mutual_information(np.array([[1.2, -0.2]]))
