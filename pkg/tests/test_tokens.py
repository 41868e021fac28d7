"""Uniformization and class-token handling."""

import numpy as np
import pytest

from ccmt.gradcheck import grad_check
from ccmt.rng import Rng
from ccmt.tensor import Tensor, backward, tensor_sum
from ccmt.tokens import (
    Modality,
    SampleRecord,
    TokenSet,
    parse_modality,
    prepend_class_token,
    uniformize,
    uniformize_indices,
)

import oracles


def make_set(count, dim=4, has_class=True, seed=1, modality=Modality.TEXT_FR):
    data = Rng(seed).gaussian_array((count, dim)).astype(np.float32)
    return TokenSet(modality, Tensor(data), has_class)


class TestUniformize:
    def test_identity_when_count_matches(self):
        ts = make_set(5)
        out = uniformize(ts, 5, Rng(0))
        assert out is ts

    def test_class_row_always_first(self):
        for seed in range(20):
            for k in (2, 3, 7, 30):
                ts = make_set(9, seed=seed)
                out = uniformize(ts, k, Rng(seed))
                assert out.count == k
                np.testing.assert_array_equal(out.tokens.data[0], ts.tokens.data[0])

    def test_downsample_rows_are_submultiset(self):
        ts = make_set(12, has_class=False)
        out = uniformize(ts, 5, Rng(3))
        rows = {tuple(r) for r in ts.tokens.data}
        out_rows = [tuple(r) for r in out.tokens.data]
        assert all(r in rows for r in out_rows)
        assert len(set(out_rows)) == len(out_rows)  # without replacement

    def test_upsample_duplicates_only(self):
        ts = make_set(3, has_class=True)
        out = uniformize(ts, 9, Rng(4))
        rows = {tuple(r) for r in ts.tokens.data}
        assert all(tuple(r) in rows for r in out.tokens.data)
        # class token never duplicated when other rows exist
        class_row = tuple(ts.tokens.data[0])
        assert [tuple(r) for r in out.tokens.data].count(class_row) == 1

    def test_duplicate_indices_follow_pinned_stream(self):
        # class + 2 rows, k = 5: the two appended indices must be the first
        # two raw draws mod 2, offset past the class row.
        draws = oracles.splitmix64_sequence(7, 2)
        expected = [1 + draws[0] % 2, 1 + draws[1] % 2]
        idx = uniformize_indices(3, 5, True, Rng(7))
        assert idx[:3] == [0, 1, 2]
        assert idx[3:] == expected

    def test_downsample_matches_partial_fisher_yates(self):
        # Independent replay of the documented selection procedure.
        seed, count, k = 21, 10, 4
        draws = oracles.splitmix64_sequence(seed, k - 1)
        n = count - 1
        pool = list(range(n))
        for i in range(k - 1):
            j = i + draws[i] % (n - i)
            pool[i], pool[j] = pool[j], pool[i]
        expected = [0] + [1 + p for p in pool[: k - 1]]
        assert uniformize_indices(count, k, True, Rng(seed)) == expected

    def test_idempotent_once_uniform(self):
        ts = make_set(12)
        once = uniformize(ts, 6, Rng(1))
        twice = uniformize(once, 6, Rng(2))
        assert twice is once

    def test_bit_deterministic(self):
        ts = make_set(30, has_class=True)
        a = uniformize(ts, 11, Rng(42)).tokens.data
        b = uniformize(ts, 11, Rng(42)).tokens.data
        np.testing.assert_array_equal(a, b)

    def test_k_zero_rejected(self):
        with pytest.raises(ValueError, match="k"):
            uniformize(make_set(3), 0, Rng(0))

    def test_class_only_set_duplicates_class_body(self):
        ts = make_set(1, has_class=True)
        out = uniformize(ts, 4, Rng(5))
        for row in out.tokens.data:
            np.testing.assert_array_equal(row, ts.tokens.data[0])

    def test_gradient_flows_through_selection(self):
        ts = make_set(3, has_class=False)
        ts.tokens.requires_grad = True
        out = uniformize(ts, 7, Rng(9))
        backward(tensor_sum(out.tokens))
        # each source row's grad counts how often it was selected
        counts = ts.tokens.grad[:, 0]
        assert counts.sum() == 7 * 1.0


class TestPrependClassToken:
    def test_prepends_at_row_zero(self):
        ts = make_set(1, has_class=False, modality=Modality.AUDIO)
        vec = Tensor(np.arange(4, dtype=np.float32))
        out = prepend_class_token(ts, vec)
        assert out.count == 2 and out.has_class_token
        np.testing.assert_array_equal(out.tokens.data[0], vec.data)

    def test_preserves_existing_rows_exactly(self):
        ts = make_set(6, has_class=False, modality=Modality.AUDIO)
        out = prepend_class_token(ts, Tensor(np.zeros(4, dtype=np.float32)))
        np.testing.assert_array_equal(out.tokens.data[1:], ts.tokens.data)

    def test_rejects_double_attach(self):
        ts = make_set(3, has_class=True)
        with pytest.raises(ValueError, match="already"):
            prepend_class_token(ts, Tensor(np.zeros(4, dtype=np.float32)))

    def test_gradient_reaches_trainable_class_vector(self):
        vec = Tensor(Rng(2).gaussian_array((4,)), requires_grad=True, dtype=np.float64)
        base = Rng(3).gaussian_array((3, 4))

        def model():
            ts = TokenSet(Modality.AUDIO, Tensor(base), False)
            out = prepend_class_token(ts, vec)
            resampled = uniformize(out, 6, Rng(11))
            return tensor_sum(resampled.tokens)

        assert grad_check(model, [("class_vec", vec)], eps=1e-5) < 1e-4


class TestTypes:
    def test_token_set_validation(self):
        with pytest.raises(ValueError):
            TokenSet(Modality.AUDIO, Tensor(np.zeros((0, 3), dtype=np.float32)))
        with pytest.raises(ValueError, match="finite"):
            TokenSet(Modality.AUDIO, Tensor(np.array([[np.nan, 1.0]], dtype=np.float32)))

    def test_sample_record_validation(self):
        ts4 = make_set(2, dim=4)
        ts5 = make_set(2, dim=5, modality=Modality.AUDIO, has_class=False)
        with pytest.raises(ValueError, match="dim"):
            SampleRecord("x", {Modality.TEXT_FR: ts4, Modality.AUDIO: ts5})
        with pytest.raises(ValueError, match="binary"):
            SampleRecord("x", {Modality.TEXT_FR: ts4}, label_request=2)

    def test_parse_modality_aliases(self):
        assert parse_modality("fr") is Modality.TEXT_FR
        assert parse_modality("text_en") is Modality.TEXT_EN
        with pytest.raises(ValueError, match="unknown modality"):
            parse_modality("video")
