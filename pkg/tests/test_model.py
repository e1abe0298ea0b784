"""Model tests: encoder collapse, decoder values, copy mixing, losses."""

import math

import numpy as np
import pytest

import oracles
from tgnet.autodiff import Tape, Tensor, backward, finite_difference_check, grad_for
from tgnet.data import BOS_ID, EOS_ID, UNK_ID, Triplet, collate
from tgnet.layers import bigru_encode
from tgnet.model import (
    Hyperparams,
    MemoryBank,
    batch_loss,
    build_model,
    decode_step,
    encode_context,
    final_distribution,
    initial_decoder_state,
    nll_loss,
)


def tiny_hp(**over):
    base = dict(
        embed_dim=3,
        hidden_dim=4,
        vocab_size=8,
        dropout=0.0,
        batch_size=2,
        beam_size=4,
        max_depth=3,
        max_context_len=50,
    )
    base.update(over)
    return Hyperparams(**base).validate()


def make_triplet(ctx, title_len, target, n_vocab):
    ctx = np.asarray(ctx, dtype=np.int32)
    ext = ctx.copy()
    oov = []
    for i, t in enumerate(ctx):
        if t == UNK_ID:
            ext[i] = n_vocab + len(oov)
            oov.append(f"oov{len(oov)}")
    return Triplet(ctx, ctx[:title_len].copy(), np.asarray(target, dtype=np.int32), ext, oov)


class TestHyperparams:
    def test_defaults_are_valid(self):
        hp = Hyperparams().validate()
        assert hp.embed_dim == 100 and hp.hidden_dim == 256
        assert hp.residual_weight == 0.5 and hp.vocab_size == 50_000
        assert hp.beam_size == 200 and hp.max_depth == 6

    def test_odd_hidden_rejected(self):
        with pytest.raises(ValueError):
            Hyperparams(hidden_dim=3).validate()

    def test_residual_weight_range(self):
        with pytest.raises(ValueError):
            Hyperparams(residual_weight=0.0).validate()
        Hyperparams(residual_weight=1.0).validate()


class TestBuildModel:
    def test_same_seed_bitwise_identical(self):
        hp = tiny_hp()
        a = build_model(hp, "full", np.random.default_rng(99))
        b = build_model(hp, "full", np.random.default_rng(99))
        for name, t in a.tensors().items():
            assert t.values.tobytes() == b.tensors()[name].values.tobytes(), name

    def test_no_title_drops_matching_parameters(self):
        m = build_model(tiny_hp(), "no_title", np.random.default_rng(0))
        names = set(m.tensors())
        assert not any(n.startswith(("merge_fwd", "merge_bwd", "match_attn")) for n in names)
        full = set(build_model(tiny_hp(), "full", np.random.default_rng(0)).tensors())
        assert names < full

    def test_parameter_count_closed_form(self):
        d_e, d, v = 100, 256, 50_000
        m = build_model(
            Hyperparams(embed_dim=d_e, hidden_dim=d, vocab_size=v), "full", np.random.default_rng(1)
        )

        def gru(inp, hid):
            return 3 * (inp * hid + hid * hid + hid)

        expected = (
            v * d_e                       # shared embedding
            + 4 * gru(d_e, d // 2)        # context + title encoders, both directions
            + 2 * gru(2 * d, d // 2)      # merge layer
            + gru(d_e + d, d)             # decoder cell
            + 2 * d * d                   # two bilinear attention matrices
            + 2 * d * d                   # attentional projection (2d x d)
            + v * d + v                   # output layer
            + d + 1                       # copy switch
        )
        assert m.n_parameters() == expected

    def test_bad_ablation_rejected(self):
        with pytest.raises(ValueError):
            build_model(tiny_hp(), "no_decoder")

    def test_init_values_within_range(self):
        m = build_model(tiny_hp(init_range=0.05), "full", np.random.default_rng(3))
        for t in m.tensors().values():
            assert np.all(np.abs(t.values) <= 0.05)


class TestEncodeContext:
    def test_lambda_one_collapses_to_plain_bigru(self):
        hp = tiny_hp(residual_weight=1.0)
        params = build_model(hp, "full", np.random.default_rng(7))
        ctx = np.array([5, 6, 7, 5], dtype=np.int32)
        title = ctx[:2]
        bank = encode_context(params, ctx, title, hp=hp)
        emb = [params.embedding.lookup(np.asarray(i)) for i in ctx]
        plain = bigru_encode(params.ctx_fwd, params.ctx_bwd, emb)
        for got, want in zip(bank.vectors, plain):
            assert np.array_equal(got.values, want.values)

    def test_lambda_half_is_midpoint(self):
        hp = tiny_hp(residual_weight=0.5)
        params = build_model(hp, "full", np.random.default_rng(8))
        ctx = np.array([5, 6, 7], dtype=np.int32)
        bank_half = encode_context(params, ctx, ctx[:1], hp=hp)
        bank_full = encode_context(params, ctx, ctx[:1], hp=tiny_hp(residual_weight=1.0))
        # Recover the merge output from the lambda = 1 run and check midpoint.
        u = bank_full.vectors
        for i in range(3):
            merged = (bank_half.vectors[i].values - 0.5 * u[i].values) / 0.5
            np.testing.assert_allclose(
                bank_half.vectors[i].values, 0.5 * u[i].values + 0.5 * merged, atol=1e-7
            )

    def test_matches_hand_unrolled_composition(self):
        hp = tiny_hp(embed_dim=2, hidden_dim=2, vocab_size=9, residual_weight=0.4)
        params = build_model(hp, "full", np.random.default_rng(21), dtype=np.float64)
        ctx = np.array([6, 7, 8], dtype=np.int32)
        title = ctx[:1]
        bank = encode_context(params, ctx, title, hp=hp)
        want_bank, want_h0 = oracles.hand_encode(params, ctx, title, 0.4)
        for got, want in zip(bank.vectors, want_bank):
            np.testing.assert_allclose(got.values, want, atol=1e-12)
        np.testing.assert_allclose(bank.dec_init.values, want_h0, atol=1e-12)

    def test_empty_inputs_rejected(self):
        params = build_model(tiny_hp(), "full", np.random.default_rng(0))
        with pytest.raises(ValueError):
            encode_context(params, np.array([], dtype=np.int32), np.array([5]))
        with pytest.raises(ValueError):
            encode_context(params, np.array([5]), np.array([], dtype=np.int32))

    def test_batched_matches_single(self):
        hp = tiny_hp()
        params = build_model(hp, "full", np.random.default_rng(11), dtype=np.float64)
        t1 = make_triplet([5, 6, 7, 1], 2, [5, EOS_ID], hp.vocab_size)
        t2 = make_triplet([6, 5], 1, [6, EOS_ID], hp.vocab_size)
        batch = collate([t1, t2])
        bank = encode_context(
            params, batch.context_ids, batch.title_ids, batch.context_mask, batch.title_mask, hp
        )
        single = encode_context(params, t2.context_ids, t2.title_ids, hp=hp)
        for pos in range(len(t2.context_ids)):
            np.testing.assert_allclose(
                bank.vectors[pos].values[1], single.vectors[pos].values, atol=1e-10
            )
        np.testing.assert_allclose(bank.dec_init.values[1], single.dec_init.values, atol=1e-10)


class TestDecodeStep:
    def test_single_entry_bank_gets_full_attention(self):
        hp = tiny_hp()
        params = build_model(hp, "full", np.random.default_rng(13))
        vec = Tensor(np.random.default_rng(0).normal(size=4).astype(np.float32))
        bank = MemoryBank([vec], Tensor(np.zeros(4, dtype=np.float32)), None)
        state = initial_decoder_state(params, bank)
        emb = params.embedding.lookup(np.asarray(BOS_ID))
        _, weights, _ = decode_step(params, state, emb, bank)
        np.testing.assert_allclose(weights.values, [1.0])

    def test_zero_output_layer_gives_uniform_distribution(self):
        hp = tiny_hp()
        params = build_model(hp, "full", np.random.default_rng(14))
        params.out_W.values[:] = 0.0
        params.out_b.values[:] = 0.0
        ctx = np.array([5, 6, 7], dtype=np.int32)
        bank = encode_context(params, ctx, ctx[:1], hp=hp)
        state = initial_decoder_state(params, bank)
        emb = params.embedding.lookup(np.asarray(BOS_ID))
        _, _, logits = decode_step(params, state, emb, bank)
        p = np.exp(logits.values) / np.exp(logits.values).sum()
        np.testing.assert_allclose(p, np.full(hp.vocab_size, 1 / hp.vocab_size), atol=1e-7)

    def test_matches_hand_unrolled_evaluation(self):
        hp = tiny_hp(embed_dim=2, hidden_dim=2, vocab_size=9)
        params = build_model(hp, "full", np.random.default_rng(15), dtype=np.float64)
        ctx = np.array([6, 7, 8], dtype=np.int32)
        bank = encode_context(params, ctx, ctx[:1], hp=hp)
        state = initial_decoder_state(params, bank)
        emb = params.embedding.lookup(np.asarray(6))
        new_state, weights, logits = decode_step(params, state, emb, bank)

        hand_bank, h0 = oracles.hand_encode(params, ctx, ctx[:1], hp.residual_weight)
        h, h_tilde, w, lo = oracles.hand_decode_step(
            params, h0, np.zeros_like(h0), params.embedding.weight.values[6], hand_bank
        )
        np.testing.assert_allclose(new_state.h.values, h, atol=1e-12)
        np.testing.assert_allclose(new_state.h_tilde.values, h_tilde, atol=1e-12)
        np.testing.assert_allclose(weights.values, w, atol=1e-12)
        np.testing.assert_allclose(logits.values, lo, atol=1e-12)

    def test_state_width_mismatch_rejected(self):
        hp = tiny_hp()
        params = build_model(hp, "full", np.random.default_rng(16))
        bad = MemoryBank([Tensor(np.zeros(4))], Tensor(np.zeros(2)), None)
        state = initial_decoder_state(params, bad)
        with pytest.raises(ValueError):
            decode_step(params, state, params.embedding.lookup(np.asarray(2)), bad)


class TestFinalDistribution:
    def _mix(self, p_vocab, alpha, g, ext_ids, oov_count):
        logits = Tensor(np.log(np.asarray(p_vocab, dtype=np.float64)))
        attn = Tensor(np.asarray(alpha, dtype=np.float64))
        h_tilde = Tensor(np.zeros(2, dtype=np.float64))
        copy_w = Tensor(np.zeros((2, 1), dtype=np.float64))
        copy_b = Tensor(np.asarray(math.log(g / (1 - g)), dtype=np.float64))
        return final_distribution(logits, attn, h_tilde, copy_w, copy_b, ext_ids, oov_count)

    def test_hand_mixing_example(self):
        # |V| = 3, context [w2, w2, oov0], alpha (0.5, 0.3, 0.2), g = 0.4:
        # P = 0.6 * (0.2, 0.3, 0.5, 0) + 0.4 * (0, 0, 0.8, 0.2)
        out = self._mix([0.2, 0.3, 0.5], [0.5, 0.3, 0.2], 0.4, [2, 2, 3], 1)
        np.testing.assert_allclose(out.values, [0.12, 0.18, 0.62, 0.08], atol=1e-9)
        np.testing.assert_allclose(out.values.sum(), 1.0, atol=1e-12)

    def test_switch_forced_to_generate(self):
        logits = Tensor(np.array([0.3, -0.7, 1.1], dtype=np.float64))
        h_tilde = Tensor(np.zeros(2, dtype=np.float64))
        out = final_distribution(
            logits, Tensor(np.array([0.6, 0.4])), h_tilde,
            Tensor(np.zeros((2, 1), dtype=np.float64)), Tensor(np.asarray(-50.0)),
            [0, 3], 1,
        )
        e = np.exp(logits.values - logits.values.max())
        np.testing.assert_allclose(out.values[:3], e / e.sum(), atol=1e-12)
        np.testing.assert_allclose(out.values[3], 0.0, atol=1e-12)

    def test_switch_forced_to_copy_accumulates_repeats(self):
        logits = Tensor(np.log(np.array([0.2, 0.3, 0.5])))
        out = final_distribution(
            logits, Tensor(np.array([0.5, 0.3, 0.2])), Tensor(np.zeros(2)),
            Tensor(np.zeros((2, 1))), Tensor(np.asarray(50.0)),
            [2, 2, 3], 1,
        )
        np.testing.assert_allclose(out.values, [0.0, 0.0, 0.8, 0.2], atol=1e-9)

    def test_extended_id_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            self._mix([0.5, 0.5], [1.0], 0.5, [3], 1)

    def test_distribution_invariants_random(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n_vocab = int(rng.integers(2, 8))
            n_ctx = int(rng.integers(1, 6))
            oov = int(rng.integers(0, 3))
            logits = Tensor(rng.normal(size=n_vocab))
            alpha = rng.dirichlet(np.ones(n_ctx))
            ext = rng.integers(0, n_vocab + oov, size=n_ctx)
            h_tilde = Tensor(rng.normal(size=3))
            copy_w = Tensor(rng.normal(size=(3, 1)))
            copy_b = Tensor(np.asarray(rng.normal()))
            out = final_distribution(logits, Tensor(alpha), h_tilde, copy_w, copy_b, ext, oov)
            assert out.shape == (n_vocab + oov,)
            assert np.all(out.values >= 0.0)
            np.testing.assert_allclose(out.values.sum(), 1.0, atol=1e-5)

    def test_generation_share_on_noncontext_words_is_exact(self):
        # In-vocabulary words absent from the context receive exactly
        # (1 - g) times their generation probability, slot by slot.
        rng = np.random.default_rng(5)
        logits = Tensor(rng.normal(size=6).astype(np.float64))
        alpha = rng.dirichlet(np.ones(4))
        ext = np.array([1, 2, 2, 7])
        h_tilde = Tensor(rng.normal(size=3).astype(np.float64))
        copy_w = Tensor(rng.normal(size=(3, 1)).astype(np.float64))
        copy_b = Tensor(np.asarray(rng.normal()).astype(np.float64))
        out = final_distribution(logits, Tensor(alpha), h_tilde, copy_w, copy_b, ext, 2)
        g = oracles.sigmoid(h_tilde.values @ copy_w.values.reshape(-1) + float(copy_b.values))
        e = np.exp(logits.values - logits.values.max())
        p_vocab = e / e.sum()
        for slot in (0, 3, 4, 5):  # in vocabulary, not in context
            assert out.values[slot] == (1.0 - g) * p_vocab[slot]

    def test_no_copy_has_zero_extended_mass(self):
        logits = Tensor(np.random.default_rng(1).normal(size=4))
        out = final_distribution(logits, Tensor(np.array([1.0])), Tensor(np.zeros(2)), None, None, [5], 2)
        np.testing.assert_array_equal(out.values[4:], [0.0, 0.0])
        np.testing.assert_allclose(out.values.sum(), 1.0, atol=1e-6)


class TestNllLoss:
    def test_certain_predictions_have_zero_loss(self):
        dists = [Tensor(np.array([1.0, 0.0, 0.0])), Tensor(np.array([0.0, 1.0, 0.0]))]
        loss = nll_loss(dists, np.array([0, 1]))
        assert abs(loss.item()) < 1e-9

    def test_uniform_over_four_two_steps(self):
        dists = [Tensor(np.full(4, 0.25)), Tensor(np.full(4, 0.25))]
        loss = nll_loss(dists, np.array([0, 3]))
        assert abs(loss.item() - 2 * math.log(4)) < 1e-4
        assert abs(loss.item() - 2.7726) < 1e-3

    def test_half_probability_single_step(self):
        loss = nll_loss([Tensor(np.array([0.5, 0.5]))], np.array([0]))
        assert abs(loss.item() - math.log(2)) < 1e-6

    def test_batch_averaging_and_padding(self):
        # Row 0 contributes two steps, row 1 one step; mean over rows.
        d1 = Tensor(np.array([[0.5, 0.5], [0.25, 0.75]]))
        d2 = Tensor(np.array([[0.5, 0.5], [0.5, 0.5]]))
        targets = np.array([[0, 1], [1, 0]])
        mask = np.array([[1.0, 1.0], [1.0, 0.0]])
        loss = nll_loss([d1, d2], targets, mask)
        want = ((math.log(2) + math.log(2)) + (-math.log(0.75))) / 2
        assert abs(loss.item() - want) < 1e-6

    def test_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            nll_loss([Tensor(np.array([1.0]))], np.array([0, 0]))


class TestBatchLoss:
    def test_agrees_with_distribution_route(self):
        # The gathered training loss must equal scoring the targets under the
        # explicit dynamic-vocabulary distributions.
        hp = tiny_hp()
        rng = np.random.default_rng(33)
        params = build_model(hp, "full", rng, dtype=np.float64)
        trip = make_triplet([5, 1, 6, 1], 2, [hp.vocab_size, 6, EOS_ID], hp.vocab_size)
        batch = collate([trip])
        loss, stats = batch_loss(params, batch, hp)

        want = oracles.hand_sequence_nll(params, trip, hp.residual_weight)
        assert abs(loss.item() - want) < 1e-10
        assert stats.tokens == 3

    def test_agrees_for_no_copy(self):
        hp = tiny_hp()
        params = build_model(hp, "no_copy", np.random.default_rng(34), dtype=np.float64)
        trip = make_triplet([5, 1, 6], 1, [hp.vocab_size, EOS_ID], hp.vocab_size)
        loss, _ = batch_loss(params, collate([trip]), hp)
        want = oracles.hand_sequence_nll(params, trip, hp.residual_weight)
        assert abs(loss.item() - want) < 1e-10

    def test_batch_mean_of_two_singles(self):
        hp = tiny_hp()
        params = build_model(hp, "full", np.random.default_rng(35), dtype=np.float64)
        t1 = make_triplet([5, 6, 7], 1, [5, EOS_ID], hp.vocab_size)
        t2 = make_triplet([6, 5, 5], 2, [7, 6, EOS_ID], hp.vocab_size)
        l1, _ = batch_loss(params, collate([t1]), hp)
        l2, _ = batch_loss(params, collate([t2]), hp)
        both, _ = batch_loss(params, collate([t1, t2]), hp)
        assert abs(both.item() - (l1.item() + l2.item()) / 2) < 1e-9


class TestEndToEndGradient:
    def test_tiny_model_passes_finite_differences(self):
        hp = Hyperparams(
            embed_dim=2, hidden_dim=4, vocab_size=7, dropout=0.0,
            batch_size=1, beam_size=2, max_depth=2,
        ).validate()
        params = build_model(hp, "full", np.random.default_rng(55), dtype=np.float64)
        trip = make_triplet([5, 1, 6], 1, [hp.vocab_size, 6, EOS_ID], hp.vocab_size)
        batch = collate([trip])
        leaves = params.tensors()

        def f():
            tape = Tape()
            params.watch_all(tape)
            loss, _ = batch_loss(params, batch, hp)
            return loss

        # Epsilon keeps subtractive roundoff below the 1e-8 relative-error
        # floor; smaller steps drown near-zero gradients in noise.
        assert finite_difference_check(f, leaves, epsilon=1e-3) < 1e-4
