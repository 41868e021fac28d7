"""Cascade forward semantics: dense-oracle agreement, invariances, init."""

import numpy as np
import pytest

from ccmt.gradcheck import grad_check
from ccmt.model import (
    CcmtConfig,
    add_positional,
    ccmt_forward,
    cross_attention_block,
    init_block,
    init_params,
    params_to_double,
    prepare_token_set,
)
from ccmt.rng import Rng
from ccmt.tensor import Tensor, add, bce_with_logits, scale
from ccmt.tokens import Modality, TokenSet

import oracles


def double_block(seed, d=2, d_h=2, heads=1):
    cfg = CcmtConfig(d=d, k=2, heads=heads, d_h=d_h)
    block = init_block(cfg, Rng(seed))
    for _, t in block.named("b"):
        t.data = t.data.astype(np.float64)
    return block


class TestCrossAttentionBlock:
    def test_single_key_attention_is_identity_on_values(self):
        # k=1: softmax over one key is 1, so the attention output equals V.
        block = double_block(1, d=3, d_h=3)
        rng = Rng(10)
        q = Tensor(rng.gaussian_array((1, 3)))
        kv = Tensor(rng.gaussian_array((1, 3)))
        out = cross_attention_block(q, kv, kv, block)
        v = kv.data @ block.w_v[0].data
        y = v @ block.proj.data
        ref = oracles.attention_block(q.data, kv.data, kv.data, oracles.block_param_dict(block))
        np.testing.assert_allclose(out.data, ref, atol=1e-12)
        # attention weights are exactly 1: U == V before projection
        np.testing.assert_allclose(
            (ref - (y + oracles.norm_rows(y, block.norm1_gain.data, block.norm1_bias.data, 1e-5))),
            oracles.feed_forward(
                oracles.norm_rows(
                    y + oracles.norm_rows(y, block.norm1_gain.data, block.norm1_bias.data, 1e-5),
                    block.norm2_gain.data, block.norm2_bias.data, 1e-5,
                ),
                block.ff_w1.data, block.ff_b1.data, block.ff_w2.data, block.ff_b2.data,
            ),
            atol=1e-12,
        )

    def test_joint_kv_permutation_invariance(self):
        block = double_block(2, d=4, d_h=4)
        rng = Rng(20)
        q = Tensor(rng.gaussian_array((3, 4)))
        k = rng.gaussian_array((5, 4))
        v = rng.gaussian_array((5, 4))
        out = cross_attention_block(q, Tensor(k), Tensor(v), block).data
        perm = [3, 0, 4, 2, 1]
        out_p = cross_attention_block(q, Tensor(k[perm]), Tensor(v[perm]), block).data
        np.testing.assert_allclose(out, out_p, atol=1e-9)

    def test_matches_dense_oracle_tiny(self):
        for seed in range(5):
            block = double_block(seed, d=2, d_h=2)
            rng = Rng(100 + seed)
            q = Tensor(rng.gaussian_array((2, 2)))
            k = Tensor(rng.gaussian_array((2, 2)))
            v = Tensor(rng.gaussian_array((2, 2)))
            got = cross_attention_block(q, k, v, block).data
            ref = oracles.attention_block(q.data, k.data, v.data, oracles.block_param_dict(block))
            np.testing.assert_allclose(got, ref, atol=1e-10, rtol=0)

    def test_multi_head_matches_oracle(self):
        block = double_block(7, d=4, d_h=2, heads=2)
        rng = Rng(70)
        q = Tensor(rng.gaussian_array((3, 4)))
        k = Tensor(rng.gaussian_array((3, 4)))
        v = Tensor(rng.gaussian_array((3, 4)))
        got = cross_attention_block(q, k, v, block).data
        ref = oracles.attention_block(q.data, k.data, v.data, oracles.block_param_dict(block))
        np.testing.assert_allclose(got, ref, atol=1e-10, rtol=0)

    def test_standard_residual_variant_matches_oracle(self):
        block = double_block(8, d=3, d_h=3)
        rng = Rng(80)
        q = Tensor(rng.gaussian_array((2, 3)))
        k = Tensor(rng.gaussian_array((2, 3)))
        v = Tensor(rng.gaussian_array((2, 3)))
        got = cross_attention_block(q, k, v, block, standard_residual=True).data
        ref = oracles.attention_block(
            q.data, k.data, v.data, oracles.block_param_dict(block), standard_residual=True
        )
        np.testing.assert_allclose(got, ref, atol=1e-10, rtol=0)

    def test_shape_mismatch_raises(self):
        block = double_block(3, d=4, d_h=4)
        rng = Rng(30)
        q = Tensor(rng.gaussian_array((3, 4)))
        bad_kv = Tensor(rng.gaussian_array((3, 2)))
        with pytest.raises(ValueError, match="widths"):
            cross_attention_block(q, bad_kv, bad_kv, block)


def tiny_params(seed=0, k=2, d=2, double=True, depth=1):
    cfg = CcmtConfig(d=d, k=k, heads=1, d_h=d, d_mlp=2 * d, depth=depth, seed=seed)
    params = init_params(cfg, Rng(seed))
    if double:
        params_to_double(params)
    return params


def prepared_inputs(params, seed=50):
    cfg = params.config
    rng = Rng(seed)
    sets = {}
    for m in (Modality.TEXT_FR, Modality.TEXT_EN, Modality.AUDIO):
        data = rng.gaussian_array((cfg.k, cfg.d))
        if params.pos_embed[m].data.dtype == np.float32:
            data = data.astype(np.float32)
        sets[m] = TokenSet(m, Tensor(data), m is not Modality.AUDIO)
    # audio still lacks its class token: run the real preparation pipeline
    prep_rng = Rng(seed ^ 0xABC)
    return {m: prepare_token_set(ts, params, prep_rng) for m, ts in sets.items()}


class TestCcmtForward:
    def test_outputs_two_scalars(self):
        params = tiny_params(1, k=3, d=4)
        prep = prepared_inputs(params)
        lr, lc = ccmt_forward(prep[Modality.TEXT_FR], prep[Modality.TEXT_EN], prep[Modality.AUDIO], params)
        assert lr.data.shape == () and lc.data.shape == ()

    def test_zero_weights_give_head_bias_logits(self):
        params = tiny_params(2, k=3, d=4)
        for name, t in params.named_tensors():
            if name.endswith("gain"):
                t.data = np.ones_like(t.data)
            elif "b2" in name and name.startswith("head"):
                pass  # set below
            else:
                t.data = np.zeros_like(t.data)
        params.head_request.b2.data = np.array([1.25])
        params.head_complaint.b2.data = np.array([-0.5])
        prep = prepared_inputs(params)
        lr, lc = ccmt_forward(prep[Modality.TEXT_FR], prep[Modality.TEXT_EN], prep[Modality.AUDIO], params)
        assert float(lr.data) == 1.25
        assert float(lc.data) == -0.5

    def test_matches_whole_pipeline_dense_oracle(self):
        for seed in range(5):
            params = tiny_params(seed, k=2, d=2)
            prep = prepared_inputs(params, seed=60 + seed)
            lr, lc = ccmt_forward(
                prep[Modality.TEXT_FR], prep[Modality.TEXT_EN], prep[Modality.AUDIO], params
            )
            ref_r, ref_c = oracles.cascade_logits(
                prep[Modality.TEXT_FR].tokens.data,
                prep[Modality.TEXT_EN].tokens.data,
                prep[Modality.AUDIO].tokens.data,
                params,
            )
            np.testing.assert_allclose(float(lr.data), ref_r, atol=1e-10, rtol=0)
            np.testing.assert_allclose(float(lc.data), ref_c, atol=1e-10, rtol=0)

    def test_depth_two_runs_and_differs_from_depth_one(self):
        p1 = tiny_params(3, k=3, d=4, depth=1)
        p2 = tiny_params(3, k=3, d=4, depth=2)
        prep1 = prepared_inputs(p1)
        prep2 = prepared_inputs(p2)
        a = ccmt_forward(prep1[Modality.TEXT_FR], prep1[Modality.TEXT_EN], prep1[Modality.AUDIO], p1)
        b = ccmt_forward(prep2[Modality.TEXT_FR], prep2[Modality.TEXT_EN], prep2[Modality.AUDIO], p2)
        assert float(a[0].data) != float(b[0].data)

    def test_missing_modality_rejected(self):
        params = tiny_params(4, k=3, d=4)
        prep = prepared_inputs(params)
        with pytest.raises(ValueError, match="missing modality"):
            ccmt_forward(prep[Modality.TEXT_FR], None, prep[Modality.AUDIO], params)

    def test_stage_outputs_keep_k_by_d(self):
        for seed in (0, 1, 2):
            rng = Rng(seed)
            k = 2 + rng.next_below(5)
            d = 2 + rng.next_below(6)
            params = tiny_params(seed, k=k, d=d)
            prep = prepared_inputs(params, seed=90 + seed)
            stream = prep[Modality.TEXT_EN].tokens
            for block in params.blocks1:
                stream = cross_attention_block(stream, prep[Modality.TEXT_FR].tokens,
                                               prep[Modality.TEXT_FR].tokens, block)
            assert stream.data.shape == (k, d)
            audio = prep[Modality.AUDIO].tokens
            for block in params.blocks2:
                audio = cross_attention_block(audio, stream, audio, block)
            assert audio.data.shape == (k, d)

    def test_sensitivity_to_every_modality(self):
        # doubling one modality's tokens must change the logits: guards
        # against silently disconnected branches
        params = tiny_params(5, k=3, d=4)
        prep = prepared_inputs(params)
        base = ccmt_forward(prep[Modality.TEXT_FR], prep[Modality.TEXT_EN], prep[Modality.AUDIO], params)
        base_vals = (float(base[0].data), float(base[1].data))
        for m in (Modality.TEXT_FR, Modality.TEXT_EN, Modality.AUDIO):
            mod = dict(prep)
            mod[m] = TokenSet(m, Tensor(prep[m].tokens.data * 2.0), prep[m].has_class_token)
            out = ccmt_forward(mod[Modality.TEXT_FR], mod[Modality.TEXT_EN], mod[Modality.AUDIO], params)
            delta = abs(float(out[0].data) - base_vals[0]) + abs(float(out[1].data) - base_vals[1])
            assert delta > 1e-6, f"logits insensitive to {m.value}"

    def test_kv_permutation_invariance_with_zero_positional(self):
        # with positional encodings zeroed, jointly permuting the non-class
        # rows of the stage-1 key/value source leaves the logits unchanged
        params = tiny_params(6, k=4, d=4)
        for m in params.pos_embed:
            params.pos_embed[m].data = np.zeros_like(params.pos_embed[m].data)
        prep = prepared_inputs(params)
        fr = prep[Modality.TEXT_FR]
        base = ccmt_forward(fr, prep[Modality.TEXT_EN], prep[Modality.AUDIO], params)
        perm = [0, 3, 1, 2]  # keeps class row 0
        fr_p = TokenSet(fr.modality, Tensor(fr.tokens.data[perm]), True)
        out = ccmt_forward(fr_p, prep[Modality.TEXT_EN], prep[Modality.AUDIO], params)
        np.testing.assert_allclose(float(out[0].data), float(base[0].data), atol=1e-9)
        np.testing.assert_allclose(float(out[1].data), float(base[1].data), atol=1e-9)


class TestAddPositional:
    def test_zero_positional_is_identity(self):
        params = tiny_params(7, k=3, d=4)
        for m in params.pos_embed:
            params.pos_embed[m].data = np.zeros_like(params.pos_embed[m].data)
        ts = TokenSet(Modality.TEXT_FR, Tensor(Rng(1).gaussian_array((3, 4))), True)
        out = add_positional(ts, params)
        np.testing.assert_array_equal(out.tokens.data, ts.tokens.data)

    def test_distinct_positional_per_modality(self):
        params = tiny_params(8, k=3, d=4)
        data = Rng(2).gaussian_array((3, 4))
        fr = add_positional(TokenSet(Modality.TEXT_FR, Tensor(data), True), params)
        en = add_positional(TokenSet(Modality.TEXT_EN, Tensor(data.copy()), True), params)
        assert not np.allclose(fr.tokens.data, en.tokens.data)

    def test_requires_uniformized_input(self):
        params = tiny_params(9, k=3, d=4)
        ts = TokenSet(Modality.TEXT_FR, Tensor(Rng(3).gaussian_array((5, 4))), True)
        with pytest.raises(ValueError, match="uniformized"):
            add_positional(ts, params)

    def test_unknown_modality_rejected(self):
        params = tiny_params(10, k=3, d=4)
        ts = TokenSet(Modality.TEXT_OTHER, Tensor(Rng(4).gaussian_array((3, 4))), True)
        with pytest.raises(ValueError, match="positional"):
            add_positional(ts, params)


class TestInitParams:
    def test_same_seed_bit_identical(self):
        a = init_params(CcmtConfig(d=8, k=4, seed=5))
        b = init_params(CcmtConfig(d=8, k=4, seed=5))
        for (na, ta), (nb, tb) in zip(a.named_tensors(), b.named_tensors()):
            assert na == nb
            np.testing.assert_array_equal(ta.data, tb.data)

    def test_gains_one_biases_zero(self):
        p = init_params(CcmtConfig(d=8, k=4, seed=1))
        for name, t in p.named_tensors():
            if name.endswith("gain"):
                np.testing.assert_array_equal(t.data, np.ones_like(t.data))
            elif name.endswith("bias") or name.endswith(".b1") or name.endswith(".b2"):
                np.testing.assert_array_equal(t.data, np.zeros_like(t.data))

    def test_weight_variance_near_xavier(self):
        cfg = CcmtConfig(d=40, k=4, d_mlp=160, seed=3)
        p = init_params(cfg)
        w = p.head_request.w1.data  # 40 x 160 = 6400 elements
        target = 2.0 / (40 + 160)
        assert abs(w.var() / target - 1.0) < 0.2

    def test_pos_embed_scale(self):
        p = init_params(CcmtConfig(d=64, k=50, seed=4))
        for t in p.pos_embed.values():
            assert abs(t.data.std() / 0.02 - 1.0) < 0.15


class TestFullModelGradcheck:
    def test_tiny_cascade_under_1e4(self):
        params = tiny_params(11, k=3, d=4)
        data_rng = Rng(123)
        raw = {
            Modality.TEXT_FR: TokenSet(Modality.TEXT_FR, Tensor(data_rng.gaussian_array((4, 4))), True),
            Modality.TEXT_EN: TokenSet(Modality.TEXT_EN, Tensor(data_rng.gaussian_array((2, 4))), True),
            Modality.AUDIO: TokenSet(Modality.AUDIO, Tensor(data_rng.gaussian_array((5, 4))), False),
        }

        def model():
            rng = Rng(77)
            prep = {m: prepare_token_set(ts, params, rng) for m, ts in raw.items()}
            lr, lc = ccmt_forward(prep[Modality.TEXT_FR], prep[Modality.TEXT_EN], prep[Modality.AUDIO], params)
            # scaled loss: keeps FD roundoff on the architecture's exactly
            # loss-invariant directions below the relative-error floor
            total = add(bce_with_logits(lr, np.float64(1.0)), bce_with_logits(lc, np.float64(0.0)))
            return scale(total, 0.01)

        err = grad_check(model, params.named_tensors(), eps=1e-5)
        assert err < 1e-4, f"max relative error {err}"

    def test_stage_one_final_ff_bias_is_provably_loss_invariant(self):
        # Uniformly shifting every stage-2 key cancels in softmax, so the
        # stage-1 block's last feed-forward bias cannot move the logits.
        params = tiny_params(12, k=3, d=4)
        prep = prepared_inputs(params, seed=200)
        args = (prep[Modality.TEXT_FR], prep[Modality.TEXT_EN], prep[Modality.AUDIO], params)
        base = [float(t.data) for t in ccmt_forward(*args)]
        params.blocks1[0].ff_b2.data = params.blocks1[0].ff_b2.data + 3.7
        moved = [float(t.data) for t in ccmt_forward(*args)]
        np.testing.assert_allclose(moved, base, atol=1e-9)
