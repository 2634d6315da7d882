import numpy as np
import pytest
from scipy.special import erf

from mlmkit.masking import IGNORE_INDEX, MaskedBatch
from mlmkit.model import (
    BASE_CONFIG,
    LARGE_CONFIG,
    LAYER_NORM_EPS,
    ModelConfig,
    ModelError,
    SequenceTooLongError,
    _mlm_loss,
    count_params,
    forward,
    init_params,
    mlm_loss_and_grads,
    param_shapes,
)
from mlmkit import autodiff as ad

from fdcheck import finite_difference_check


def _batch(ids, labels=None, attention=None):
    ids = np.asarray(ids, dtype=np.int64)
    if labels is None:
        labels = np.full_like(ids, IGNORE_INDEX)
    if attention is None:
        attention = np.ones_like(ids, dtype=bool)
    return MaskedBatch(
        input_ids=ids, labels=np.asarray(labels), attention_mask=np.asarray(attention)
    )


TOY = ModelConfig(
    n_layers=2, d_model=6, n_heads=2, d_ff=10, vocab_size=12, max_positions=10, dropout=0.0
)


class TestInitParams:
    def test_deterministic(self):
        a = init_params(TOY, seed=4)
        b = init_params(TOY, seed=4)
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_clt_mean_bound(self):
        config = ModelConfig(
            n_layers=1, d_model=128, n_heads=2, d_ff=128, vocab_size=128,
            max_positions=16, dropout=0.0,
        )
        params = init_params(config, seed=9)
        for name, arr in params.items():
            if arr.size >= 10_000:
                bound = 3 * 0.02 / np.sqrt(arr.size)
                assert abs(arr.mean()) < bound, name

    def test_truncation_at_two_sigma(self):
        params = init_params(TOY, seed=1)
        for name, arr in params.items():
            if arr.ndim >= 2:
                assert np.all(np.abs(arr) <= 2 * 0.02 + 1e-12), name

    def test_layer_norm_scales_exactly_one(self):
        params = init_params(TOY, seed=2)
        for name, arr in params.items():
            if name.endswith("_g"):
                assert np.all(arr == 1.0), name
            elif name.endswith("_b") and "ln" in name:
                assert np.all(arr == 0.0), name


class TestCountParams:
    def test_base_reference(self):
        # published reference: ~110M parameters for the BASE encoder
        assert abs(count_params(BASE_CONFIG) - 110e6) / 110e6 < 0.05

    def test_large_reference(self):
        # published reference: ~335M parameters for the LARGE encoder
        assert abs(count_params(LARGE_CONFIG) - 335e6) / 335e6 < 0.05

    def test_toy_hand_computed(self):
        config = ModelConfig(
            n_layers=2, d_model=8, n_heads=2, d_ff=16, vocab_size=11,
            max_positions=16, dropout=0.0,
        )
        # shape sum done by hand, term by term
        embeddings = 11 * 8 + 16 * 8 + 8 + 8
        attention = 4 * (8 * 8) + 4 * 8 + 8 + 8
        ffn = 8 * 16 + 16 + 16 * 8 + 8 + 8 + 8
        head = 8 * 8 + 8 + 8 + 8 + 11
        assert count_params(config) == embeddings + 2 * (attention + ffn) + head

    def test_matches_allocated_sizes(self):
        params = init_params(TOY, seed=0)
        assert count_params(TOY) == sum(v.size for v in params.values())

    def test_config_validation(self):
        with pytest.raises(ModelError):
            ModelConfig(n_layers=1, d_model=7, n_heads=2, d_ff=8, vocab_size=10,
                        max_positions=8, dropout=0.0)
        with pytest.raises(ModelError):
            ModelConfig(n_layers=1, d_model=8, n_heads=2, d_ff=8, vocab_size=10,
                        max_positions=8, dropout=1.0)


def _reference_forward(params, config, ids, attention):
    """Independent step-by-step oracle of the same equations, loop style."""

    def ln(vec, g, b):
        mu = vec.mean()
        var = ((vec - mu) ** 2).mean()
        return (vec - mu) / np.sqrt(var + LAYER_NORM_EPS) * g + b

    def gelu(x):
        return x * 0.5 * (1.0 + erf(x / np.sqrt(2.0)))

    length = len(ids)
    d, h = config.d_model, config.n_heads
    hd = d // h
    x = np.zeros((length, d))
    for t in range(length):
        x[t] = params["tok_emb"][ids[t]] + params["pos_emb"][t]
        x[t] = ln(x[t], params["emb_ln_g"], params["emb_ln_b"])
    for layer in range(config.n_layers):
        p = f"layer{layer}."
        q = x @ params[p + "attn_wq"] + params[p + "attn_bq"]
        k = x @ params[p + "attn_wk"] + params[p + "attn_bk"]
        v = x @ params[p + "attn_wv"] + params[p + "attn_bv"]
        ctx = np.zeros_like(x)
        for head in range(h):
            sl = slice(head * hd, (head + 1) * hd)
            for t in range(length):
                scores = np.full(length, -np.inf)
                for s in range(length):
                    if attention[s]:
                        scores[s] = q[t, sl] @ k[s, sl] / np.sqrt(hd)
                e = np.exp(scores - scores[attention].max())
                e[~np.asarray(attention)] = 0.0
                probs = e / e.sum()
                for s in range(length):
                    ctx[t, sl] += probs[s] * v[s, sl]
        attn_out = ctx @ params[p + "attn_wo"] + params[p + "attn_bo"]
        for t in range(length):
            x[t] = ln(x[t] + attn_out[t], params[p + "attn_ln_g"], params[p + "attn_ln_b"])
        ff = gelu(x @ params[p + "ffn_w1"] + params[p + "ffn_b1"]) @ params[p + "ffn_w2"] + params[p + "ffn_b2"]
        for t in range(length):
            x[t] = ln(x[t] + ff[t], params[p + "ffn_ln_g"], params[p + "ffn_ln_b"])
    head_in = gelu(x @ params["mlm_dense_w"] + params["mlm_dense_b"])
    out = np.zeros((length, config.vocab_size))
    for t in range(length):
        hvec = ln(head_in[t], params["mlm_ln_g"], params["mlm_ln_b"])
        out[t] = hvec @ params["tok_emb"].T + params["mlm_out_bias"]
    return out


class TestForward:
    def test_attention_rows_sum_to_one_over_non_pad(self):
        params = init_params(TOY, seed=3)
        ids = np.array([[0, 5, 6, 7, 2, 1, 1], [0, 8, 9, 2, 1, 1, 1]])
        att = ids != 1
        result = forward(params, TOY, _batch(ids, attention=att), return_attention=True)
        for probs in result.attention:
            masses = probs.sum(axis=-1)
            assert np.allclose(masses, 1.0, atol=1e-6)
            for row in range(ids.shape[0]):
                pad_mass = probs[row, :, :, ~att[row]].sum()
                assert pad_mass == 0.0

    def test_pad_content_does_not_affect_outputs(self):
        params = init_params(TOY, seed=5)
        ids = np.array([[0, 5, 6, 2, 1, 1]])
        att = ids != 1
        base = forward(params, TOY, _batch(ids, attention=att))
        scrambled = ids.copy()
        scrambled[0, 4:] = [7, 9]  # garbage where attention is off
        other = forward(params, TOY, _batch(scrambled, attention=att))
        real = att[0]
        for a, b in zip(base.hidden_states, other.hidden_states):
            assert np.array_equal(a[0][real], b[0][real])
        assert np.array_equal(base.logits[0][real], other.logits[0][real])

    def test_toy_forward_matches_independent_oracle(self):
        config = ModelConfig(
            n_layers=1, d_model=4, n_heads=1, d_ff=8, vocab_size=9,
            max_positions=8, dropout=0.0,
        )
        params = init_params(config, seed=21)
        # make weights less tiny so differences would be visible
        rng = np.random.default_rng(0)
        for k, v in params.items():
            if v.ndim >= 2:
                params[k] = rng.normal(0, 0.5, size=v.shape)
        ids = np.array([[0, 6, 2]])
        result = forward(params, config, _batch(ids))
        expected = _reference_forward(params, config, ids[0], np.ones(3, dtype=bool))
        assert np.allclose(result.logits[0], expected, rtol=1e-10, atol=1e-10)

    def test_toy_forward_oracle_with_padding(self):
        config = ModelConfig(
            n_layers=2, d_model=4, n_heads=2, d_ff=6, vocab_size=10,
            max_positions=8, dropout=0.0,
        )
        params = init_params(config, seed=22)
        ids = np.array([[0, 5, 7, 2, 1]])
        att = ids != 1
        result = forward(params, config, _batch(ids, attention=att))
        expected = _reference_forward(params, config, ids[0], att[0])
        assert np.allclose(result.logits[0][att[0]], expected[att[0]], rtol=1e-10, atol=1e-10)

    def test_deterministic_without_dropout(self):
        params = init_params(TOY, seed=6)
        ids = np.array([[0, 5, 6, 2]])
        a = forward(params, TOY, _batch(ids))
        b = forward(params, TOY, _batch(ids))
        assert np.array_equal(a.logits, b.logits)

    def test_dropout_only_in_train_mode(self):
        config = ModelConfig(
            n_layers=1, d_model=8, n_heads=2, d_ff=8, vocab_size=10,
            max_positions=8, dropout=0.5,
        )
        params = init_params(config, seed=7)
        ids = np.array([[0, 5, 6, 2]])
        eval_a = forward(params, config, _batch(ids), train_mode=False)
        eval_b = forward(params, config, _batch(ids), train_mode=False)
        train = forward(
            params, config, _batch(ids), train_mode=True,
            rng=np.random.default_rng(0),
        )
        assert np.array_equal(eval_a.logits, eval_b.logits)
        assert not np.array_equal(train.logits, eval_a.logits)

    def test_hidden_state_count(self):
        for n_layers in (1, 2, 3):
            config = ModelConfig(
                n_layers=n_layers, d_model=4, n_heads=2, d_ff=4, vocab_size=8,
                max_positions=8, dropout=0.0,
            )
            params = init_params(config, seed=8)
            result = forward(params, config, _batch(np.array([[0, 5, 2]])))
            assert len(result.hidden_states) == n_layers + 1

    def test_sequence_too_long(self):
        params = init_params(TOY, seed=9)
        ids = np.zeros((1, TOY.max_positions + 1), dtype=np.int64)
        with pytest.raises(SequenceTooLongError, match=str(TOY.max_positions + 1)):
            forward(params, TOY, _batch(ids))


class TestMlmLoss:
    def test_uniform_logits_loss_is_log_vocab(self):
        vocab = 12
        logits = ad.Tensor(np.zeros((1, 3, vocab)), requires_grad=True)
        labels = np.full((1, 3), IGNORE_INDEX)
        labels[0, 1] = 4
        loss = _mlm_loss(logits, labels)
        assert np.isclose(float(loss.data), np.log(vocab), rtol=1e-12)

    def test_ignore_positions_do_not_move_loss(self):
        rng = np.random.default_rng(10)
        raw = rng.normal(size=(1, 4, 8))
        labels = np.full((1, 4), IGNORE_INDEX)
        labels[0, 2] = 3
        base = float(_mlm_loss(ad.Tensor(raw, requires_grad=True), labels).data)
        perturbed = raw.copy()
        perturbed[0, 0] += 100.0
        perturbed[0, 3] -= 50.0
        after = float(_mlm_loss(ad.Tensor(perturbed, requires_grad=True), labels).data)
        assert after == base

    def test_doubling_labeled_positions_keeps_mean(self):
        params = init_params(TOY, seed=11)
        ids = np.array([[0, 5, 6, 7, 2]])
        labels = np.full_like(ids, IGNORE_INDEX)
        labels[0, 2] = 6
        single = mlm_loss_and_grads(params, TOY, _batch(ids, labels))[0]
        doubled = mlm_loss_and_grads(
            params, TOY, _batch(np.vstack([ids, ids]), np.vstack([labels, labels]))
        )[0]
        assert np.isclose(single, doubled, rtol=1e-12)

    def test_no_labeled_positions_error(self):
        params = init_params(TOY, seed=12)
        ids = np.array([[0, 5, 2]])
        with pytest.raises(ModelError):
            mlm_loss_and_grads(params, TOY, _batch(ids))

    def test_gradients_against_finite_differences_all_groups(self):
        params = init_params(TOY, seed=13)
        rng = np.random.default_rng(1)
        for k, v in params.items():
            if v.ndim >= 2:
                params[k] = rng.normal(0, 0.3, size=v.shape)
        ids = np.array([[0, 5, 6, 7, 8, 2], [0, 9, 10, 2, 1, 1]])
        att = ids != 1
        labels = np.full_like(ids, IGNORE_INDEX)
        labels[0, 1], labels[0, 3], labels[1, 2] = 6, 8, 9
        batch = _batch(ids, labels, att)

        loss, grads = mlm_loss_and_grads(params, TOY, batch)
        assert set(grads) == {name for name, _ in param_shapes(TOY)}
        worst = finite_difference_check(
            lambda: mlm_loss_and_grads(params, TOY, batch)[0], params, grads
        )
        assert worst < 1e-4

    def test_tied_embeddings_single_storage(self):
        params = init_params(TOY, seed=14)
        ids = np.array([[0, 5, 6, 2]])
        labels = np.full_like(ids, IGNORE_INDEX)
        labels[0, 1] = 5
        _, grads = mlm_loss_and_grads(params, TOY, _batch(ids, labels))
        # vocab row 11 never appears in the input: its embedding gradient can
        # only come through the tied output projection
        assert 11 not in ids
        assert np.any(grads["tok_emb"][11] != 0.0)
        # and perturbing that row moves the logit for vocab entry 11
        before = forward(params, TOY, _batch(ids)).logits[0, 1, 11]
        params["tok_emb"][11] += 0.5
        after = forward(params, TOY, _batch(ids)).logits[0, 1, 11]
        assert before != after
