from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebert import layers as nn
from ebert.model import (
    ForwardTrace,
    ModelConfig,
    NonFiniteError,
    backward,
    embed,
    encode,
    init_params,
    mlm_forward,
    param_shapes,
    parameter_count,
    tf_head_forward,
)
from ebert.masking import example_rng

TINY64 = ModelConfig.tiny(dtype="float64", l_input=24)


def _params(cfg=TINY64, seed=0, std=0.1):
    P = init_params(cfg, example_rng(seed, 9), std=std)
    rng = np.random.default_rng(seed)
    for name, p in P.items():
        if name.endswith(".bias"):
            p += rng.normal(0, std, p.shape)
        elif name.endswith(".gain"):
            p += rng.normal(0, 0.1, p.shape)
    return P


def _inputs(cfg, B=3, seed=0, n_real=(5, 20)):
    rng = np.random.default_rng(seed)
    L = cfg.l_input
    dna = np.zeros((B, L), np.int64)
    ideas = np.zeros((B, L), np.int64)
    mask = np.zeros((B, L), np.uint8)
    for b in range(B):
        r = int(rng.integers(*n_real))
        dna[b, :r] = rng.integers(3, cfg.dna_vocab, r)
        ideas[b, :r] = rng.integers(0, 36, r)
        mask[b, :r] = 1
    aux = rng.random((B, L, 2)) * mask[..., None]
    return dna, ideas, mask, aux


# ---------------------------------------------------------------- reference


def _torch_reference(P, cfg, dna, ideas, mask, aux):
    """Second implementation of the eval-mode forward written against torch."""
    torch = pytest.importorskip("torch")
    F = torch.nn.functional
    T = {k: torch.from_numpy(v.copy()) for k, v in P.items()}
    dna_t, ideas_t = torch.from_numpy(dna), torch.from_numpy(ideas)
    keep = torch.from_numpy(mask.astype(bool))
    B, L = dna.shape
    H, A = cfg.hidden, cfg.heads
    x = F.embedding(dna_t, T["emb.dna"]) + F.embedding(ideas_t, T["emb.ideas"]) + T["emb.pos"][:L]
    for i in range(cfg.layers):
        pre = f"layer{i}."
        h = F.layer_norm(x, (H,), T[pre + "ln1.gain"], T[pre + "ln1.bias"], eps=1e-6)
        q, k, v = (F.linear(h, T[pre + f"attn.{m}.weight"].T, T[pre + f"attn.{m}.bias"]) for m in "qkv")
        q, k, v = (t.view(B, L, A, H // A).transpose(1, 2) for t in (q, k, v))
        scores = q @ k.transpose(-1, -2) / (H // A) ** 0.5
        scores = scores.masked_fill(~keep[:, None, None, :], float("-inf"))
        ctx = (scores.softmax(-1) @ v).transpose(1, 2).reshape(B, L, H)
        x = x + F.linear(ctx, T[pre + "attn.o.weight"].T, T[pre + "attn.o.bias"])
        h = F.layer_norm(x, (H,), T[pre + "ln2.gain"], T[pre + "ln2.bias"], eps=1e-6)
        h = F.gelu(F.linear(h, T[pre + "ffn.in.weight"].T, T[pre + "ffn.in.bias"]), approximate="tanh")
        x = x + F.linear(h, T[pre + "ffn.out.weight"].T, T[pre + "ffn.out.bias"])
    x = F.layer_norm(x, (H,), T["ln_f.gain"], T["ln_f.bias"], eps=1e-6)
    dna_logits = x @ T["mlm.dna.weight"] + T["mlm.dna.bias"]
    ideas_logits = x @ T["mlm.ideas.weight"] + T["mlm.ideas.bias"]
    z = torch.cat([x, torch.from_numpy(aux)], -1) if aux is not None else x
    z = z.transpose(1, 2)  # conv1d wants [B, C, L]
    for name in ("tf.conv1", "tf.conv2"):
        w = T[name + ".weight"].permute(2, 1, 0)  # [width, in, out] -> [out, in, width]
        z = F.relu(F.conv1d(z, w, T[name + ".bias"], padding=1))
    z = z.masked_fill(~keep[:, None, :], float("-inf")).amax(-1)
    z = F.relu(F.linear(z, T["tf.dense1.weight"].T, T["tf.dense1.bias"]))
    prob = torch.sigmoid(F.linear(z, T["tf.dense2.weight"].T, T["tf.dense2.bias"]))[:, 0]
    return x.numpy(), dna_logits.numpy(), ideas_logits.numpy(), prob.numpy()


@pytest.mark.parametrize("with_aux", [False, True])
def test_forward_matches_torch_reference(with_aux):
    cfg = TINY64.with_(with_aux=with_aux)
    P = _params(cfg)
    dna, ideas, mask, aux = _inputs(cfg)
    aux = aux if with_aux else None
    h = encode(embed(dna, ideas, P, cfg), mask, P, cfg)
    d_log, i_log = mlm_forward(h, P)
    prob = tf_head_forward(h, aux, P, cfg, mask)
    ref_h, ref_d, ref_i, ref_p = _torch_reference(P, cfg, dna, ideas, mask, aux)
    real = mask.astype(bool)
    for ours, ref in ((h[real], ref_h[real]), (d_log[real], ref_d[real]), (i_log[real], ref_i[real]), (prob, ref_p)):
        rel = np.abs(ours - ref).max() / np.abs(ref).max()
        assert rel < 1e-6


# ---------------------------------------------------------------- embed


def test_zero_embeddings_give_zero_hidden():
    cfg = TINY64
    P = {k: np.zeros_like(v) for k, v in _params(cfg).items()}
    dna, ideas, _, _ = _inputs(cfg)
    assert not embed(dna, ideas, P, cfg).any()


def test_dna_only_ignores_ideas():
    cfg = TINY64.with_(ideas_vocab=0)
    P = init_params(cfg, np.random.default_rng(0))
    assert "emb.ideas" not in P and "mlm.ideas.weight" not in P
    dna, ideas, _, _ = _inputs(cfg)
    a = embed(dna, ideas, P, cfg)
    b = embed(dna, np.zeros_like(ideas) + 35, P, cfg)
    assert np.array_equal(a, b)


def test_embedding_perturbation_is_local():
    cfg = TINY64
    P = _params(cfg)
    dna, ideas, _, _ = _inputs(cfg)
    t = int(dna[0, 0])
    before = embed(dna, ideas, P, cfg)
    P["emb.dna"][t] += 1.0
    changed = np.abs(embed(dna, ideas, P, cfg) - before).max(axis=-1) > 0
    assert np.array_equal(changed, dna == t)


def test_embed_rejects_out_of_range_ids():
    cfg = TINY64
    P = _params(cfg)
    dna, ideas, _, _ = _inputs(cfg)
    dna[0, 0] = cfg.dna_vocab
    with pytest.raises(IndexError):
        embed(dna, ideas, P, cfg)
    dna[0, 0] = 3
    ideas[0, 0] = 37
    with pytest.raises(IndexError):
        embed(dna, ideas, P, cfg)


# ---------------------------------------------------------------- encode


def test_eval_mode_is_bitwise_deterministic():
    cfg = TINY64
    P = _params(cfg)
    dna, ideas, mask, _ = _inputs(cfg)
    h = embed(dna, ideas, P, cfg)
    assert np.array_equal(encode(h, mask, P, cfg), encode(h, mask, P, cfg))


def test_train_mode_needs_rng_and_uses_dropout():
    cfg = TINY64
    P = _params(cfg)
    dna, ideas, mask, _ = _inputs(cfg)
    h = embed(dna, ideas, P, cfg)
    with pytest.raises(ValueError):
        encode(h, mask, P, cfg, "train")
    a = encode(h, mask, P, cfg, "train", example_rng(0, 1))
    b = encode(h, mask, P, cfg, "train", example_rng(0, 1))
    assert np.array_equal(a, b)
    assert not np.allclose(a, encode(h, mask, P, cfg))


@settings(max_examples=30)
@given(seed=st.integers(0, 10**6), new_id=st.integers(0, 4**7 + 2), new_state=st.integers(0, 36))
def test_pad_positions_do_not_leak(seed, new_id, new_state):
    cfg = TINY64
    P = _params(cfg, seed=1)
    dna, ideas, mask, _ = _inputs(cfg, B=2, seed=seed)
    out = encode(embed(dna, ideas, P, cfg), mask, P, cfg)
    pad = np.argwhere(mask == 0)
    b, i = pad[np.random.default_rng(seed).integers(len(pad))]
    dna[b, i], ideas[b, i] = new_id, new_state
    out2 = encode(embed(dna, ideas, P, cfg), mask, P, cfg)
    real = mask.astype(bool)
    assert np.array_equal(out[real], out2[real])


def test_attention_rows_sum_to_one_over_real_keys():
    cfg = TINY64
    P = _params(cfg)
    dna, ideas, mask, _ = _inputs(cfg)
    trace = ForwardTrace(P, cfg)
    encode(embed(dna, ideas, P, cfg, trace), mask, P, cfg, "train", example_rng(0, 1), trace)
    for probs in trace.attention_probs():
        keys = mask[:, None, None, :].astype(bool)
        assert np.abs(np.where(keys, probs, 0).sum(-1) - 1).max() < 1e-6
        assert not np.where(keys, 0, probs).any()


def test_eval_outputs_independent_of_batch_composition():
    cfg = TINY64.with_(with_aux=True)
    P = _params(cfg)
    dna, ideas, mask, aux = _inputs(cfg, B=4)
    full = tf_head_forward(encode(embed(dna, ideas, P, cfg), mask, P, cfg), aux, P, cfg, mask)
    for b in range(4):
        s = slice(b, b + 1)
        one = tf_head_forward(encode(embed(dna[s], ideas[s], P, cfg), mask[s], P, cfg), aux[s], P, cfg, mask[s])
        assert abs(one[0] - full[b]) < 1e-12


def test_non_finite_activation_names_layer():
    cfg = TINY64
    P = _params(cfg)
    P["layer1.ffn.out.bias"][0] = np.inf
    dna, ideas, mask, _ = _inputs(cfg)
    with pytest.raises(NonFiniteError, match="layer 1"):
        encode(embed(dna, ideas, P, cfg), mask, P, cfg)


# ---------------------------------------------------------------- heads


def test_mlm_logits_equal_bias_for_zero_inputs():
    cfg = TINY64
    P = {k: np.zeros_like(v) for k, v in _params(cfg).items()}
    P["mlm.dna.bias"][:] = np.arange(cfg.dna_vocab)
    P["mlm.ideas.bias"][:] = 2.5
    d, i = mlm_forward(np.zeros((1, cfg.l_input, cfg.hidden)), P)
    assert np.array_equal(d[0], np.broadcast_to(np.arange(cfg.dna_vocab, dtype=float), d[0].shape))
    assert (i == 2.5).all()


def test_mlm_logits_are_affine_in_hidden():
    cfg = TINY64
    P = _params(cfg)
    h = np.random.default_rng(0).normal(size=(2, cfg.l_input, cfg.hidden))
    d1, i1 = mlm_forward(h, P)
    d2, i2 = mlm_forward(2 * h, P)
    np.testing.assert_allclose(d2, 2 * d1 - P["mlm.dna.bias"], atol=1e-12)
    np.testing.assert_allclose(i2, 2 * i1 - P["mlm.ideas.bias"], atol=1e-12)


def test_bert_base_logit_shapes():
    cfg = ModelConfig.bert_base()
    shapes = param_shapes(cfg)
    P = {k: np.zeros(shapes[k], np.float32) for k in ("mlm.dna.weight", "mlm.dna.bias", "mlm.ideas.weight", "mlm.ideas.bias")}
    d, i = mlm_forward(np.zeros((150, 768), np.float32), P)
    assert d.shape == (150, 16387) and i.shape == (150, 37)


def test_tf_head_channels_follow_aux_flag():
    H = 32
    assert param_shapes(ModelConfig.tiny(with_aux=True))["tf.conv1.weight"] == (3, H + 2, 256)
    assert param_shapes(ModelConfig.tiny())["tf.conv1.weight"] == (3, H, 256)


def test_tf_head_zero_weights_give_half():
    cfg = TINY64.with_(with_aux=True)
    P = {k: np.zeros_like(v) for k, v in _params(cfg).items()}
    _, _, mask, aux = _inputs(cfg)
    h = np.random.default_rng(0).normal(size=(3, cfg.l_input, cfg.hidden))
    assert np.array_equal(tf_head_forward(h, aux, P, cfg, mask), np.full(3, 0.5))


def test_tf_head_aux_mismatch_raises():
    cfg = TINY64
    P = _params(cfg)
    h = np.zeros((1, cfg.l_input, cfg.hidden))
    with pytest.raises(ValueError):
        tf_head_forward(h, np.zeros((1, cfg.l_input, 2)), P, cfg)
    with pytest.raises(ValueError):
        tf_head_forward(h, None, _params(cfg.with_(with_aux=True)), cfg.with_(with_aux=True))


def test_max_pool_ignores_pad_positions():
    x = np.zeros((1, 4, 1))
    x[0, 3, 0] = 9.0  # PAD position holds the largest value
    x[0, 1, 0] = -1.0
    out, _ = nn.masked_max_pool_forward(x, np.array([[1, 1, 1, 0]]))
    assert out[0, 0] == 0.0


# ---------------------------------------------------------------- backward


def _mlm_grads(P, cfg, scale=1.0):
    dna, ideas, mask, _ = _inputs(cfg)
    trace = ForwardTrace(P, cfg)
    h = encode(embed(dna, ideas if cfg.uses_ideas else None, P, cfg, trace), mask, P, cfg, "train", example_rng(0, 1), trace)
    pos = np.nonzero(mask)
    d, i = mlm_forward(h, P, pos, pos if cfg.uses_ideas else None, trace)
    g = {"dna_logits": scale * np.ones_like(d)}
    if i is not None:
        g["ideas_logits"] = scale * np.ones_like(i)
    return backward(trace, g)


def test_backward_is_linear_in_loss_gradient():
    cfg = TINY64
    P = _params(cfg)
    g1, g2 = _mlm_grads(P, cfg), _mlm_grads(P, cfg, 2.0)
    for k in g1:
        np.testing.assert_allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=1e-15)


def test_dna_only_model_has_no_ideas_gradient():
    cfg = TINY64.with_(ideas_vocab=0)
    g = _mlm_grads(_params(cfg), cfg)
    assert not any("ideas" in k for k in g)
    assert set(g) == set(param_shapes(cfg))


def test_unused_parameters_get_zero_gradient():
    cfg = TINY64
    g = _mlm_grads(_params(cfg), cfg)
    assert all(not g[k].any() for k in g if k.startswith("tf."))
    assert g["emb.dna"].any()


def test_backward_without_trace_raises():
    with pytest.raises(ValueError):
        backward(None, {})
    with pytest.raises(ValueError):
        backward(ForwardTrace({}, TINY64), {})


# ---------------------------------------------------------------- size


def _count_by_hand(L, H, F, V_dna, V_ideas, l_input, aux=False):
    per_layer = 4 * (H * H + H) + 2 * 2 * H + (H * F + F) + (F * H + H)
    emb = V_dna * H + V_ideas * H + l_input * H
    heads = (H * V_dna + V_dna) + (H * V_ideas + V_ideas)
    cin = H + 2 if aux else H
    tf = (3 * cin * 256 + 256) + (3 * 256 * 128 + 128) + (128 * 64 + 64) + (64 + 1)
    return L * per_layer + emb + 2 * H + heads + tf


def test_parameter_count_matches_hand_count():
    assert parameter_count(ModelConfig.bert_base()) == _count_by_hand(12, 768, 3072, 16387, 37, 150)
    assert parameter_count(ModelConfig.tiny(with_aux=True)) == _count_by_hand(2, 32, 64, 16387, 37, 150, aux=True)


def test_bert_base_size_near_hundred_million():
    n = parameter_count(ModelConfig.bert_base())
    assert abs(n - 1e8) / 1e8 <= 0.15
