from __future__ import annotations

import itertools
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ebert.genome_io import Label, LabeledBin, SampleWindow
from ebert.tokenizer import (
    MASK,
    PAD,
    UNK,
    TokenizerConfig,
    build_vocab,
    pool_auxiliary,
    pool_ideas,
    tokenize_dna,
    tokenize_window,
)

CFG = TokenizerConfig()
V7 = build_vocab(7)


def kmer_id_oracle(kmer: str) -> int:
    # independent positional-notation arithmetic
    total = 0
    for i, b in enumerate(kmer):
        total += "ACGT".index(b) * 4 ** (len(kmer) - 1 - i)
    return total + 3


def test_vocab_sizes():
    assert V7.n_kmers == 16384
    assert V7.size == 16387
    assert (PAD, MASK, UNK) == (0, 1, 2)
    with pytest.raises(ValueError):
        build_vocab(0)
    with pytest.raises(ValueError):
        build_vocab(11)


def test_kmer_ids():
    assert V7.encode("AAAAAAA") == 3
    assert V7.encode("ACGTACG") == 1737 == kmer_id_oracle("ACGTACG")
    assert V7.encode("ACGNACG") == UNK


@pytest.mark.parametrize("k", range(1, 8))
def test_vocab_bijective(k):
    v = build_vocab(k)
    kmers = ["".join(t) for t in itertools.product("ACGT", repeat=k)]
    ids = [v.encode(m) for m in kmers]
    assert sorted(ids) == list(range(3, 3 + 4**k))
    if k <= 5:
        assert all(i == kmer_id_oracle(m) for m, i in zip(kmers, ids))
    assert all(v.decode(i) == m for m, i in zip(kmers, ids))


def test_vocab_bijective_vectorized_k7():
    # all 16384 7-mers through tokenize_dna against the oracle
    kmers = ["".join(t) for t in itertools.product("ACGT", repeat=7)]
    cfg = TokenizerConfig(7, 7, len(kmers), window_len=7 * len(kmers))
    ids, mask = tokenize_dna("".join(kmers), cfg, V7)
    assert mask.all()
    assert ids.tolist() == list(range(3, 3 + 16384))


def test_tokenize_1000bp_pads_to_150():
    seq = "ACGT" * 250
    ids, mask = tokenize_dna(seq, CFG, V7)
    assert ids.shape == (150,) and mask.sum() == 142
    assert (ids[142:] == PAD).all() and (mask[142:] == 0).all() and mask[:142].all()


def test_tokenize_small_cases():
    cfg = TokenizerConfig(7, 7, 1, window_len=7)
    ids, mask = tokenize_dna("ACGTACG", cfg, V7)
    assert ids.tolist() == [1737] and mask.tolist() == [1]
    ids, _ = tokenize_dna("ACGNACG", cfg, V7)
    assert ids.tolist() == [UNK]
    with pytest.raises(ValueError):
        tokenize_dna("ACG", cfg, V7)


def test_tokenize_truncates():
    cfg = TokenizerConfig(3, 1, 5, window_len=5)
    ids, mask = tokenize_dna("ACGTACGTAC", cfg, build_vocab(3))
    assert ids.shape == (5,) and mask.all()


@given(st.integers(1, 10).flatmap(lambda k: st.tuples(st.just(k), st.integers(1, k), st.integers(k, 2000))))
def test_token_count(args):
    k, stride, n = args
    expected = (n - k) // stride + 1
    cfg = TokenizerConfig(k, stride, l_input=expected, window_len=n)
    ids, mask = tokenize_dna("A" * n, cfg, build_vocab(k))
    assert mask.sum() == expected == cfg.n_tokens(n)


@given(st.text("ACGTN", min_size=7, max_size=300), st.integers(1, 7))
def test_tokens_match_oracle(seq, stride):
    cfg = TokenizerConfig(7, stride, l_input=(len(seq) - 7) // stride + 1, window_len=len(seq))
    ids, _ = tokenize_dna(seq, cfg, V7)
    for i, t in enumerate(ids):
        kmer = seq[i * stride : i * stride + 7]
        assert t == (UNK if "N" in kmer else kmer_id_oracle(kmer))


def test_config_validation():
    with pytest.raises(ValueError):
        TokenizerConfig(k=7, stride=8)
    with pytest.raises(ValueError):
        TokenizerConfig(k=7, stride=7, l_input=141)
    with pytest.raises(ValueError):
        TokenizerConfig(k=11)


# ---- pooling


def _span_cfg(k=7):
    return TokenizerConfig(k, k, 1, window_len=k)


def test_pool_ideas_examples():
    c = _span_cfg()
    assert pool_ideas(np.array([3, 3, 3, 3, 5, 5, 5]), c)[0] == 3
    assert pool_ideas(np.full(7, 7), c)[0] == 7
    assert pool_ideas(np.array([1, 1, 1, 2, 2, 2, 0]), c)[0] == 1
    with pytest.raises(ValueError):
        pool_ideas(np.full(7, 36), c)


def mode_oracle(span) -> int:
    counts = {}
    for s in span:
        counts[int(s)] = counts.get(int(s), 0) + 1
    best = max(counts.values())
    return min(s for s, c in counts.items() if c == best)


def test_pool_ideas_brute_force_10k_spans():
    rng = np.random.default_rng(0)
    n_spans = 10_000
    # few distinct states per span so ties are frequent
    states = rng.integers(0, 5, size=n_spans * 7) + rng.integers(0, 7, size=n_spans * 7).clip(0, 1) * 30
    cfg = TokenizerConfig(7, 7, n_spans, window_len=7 * n_spans)
    got = pool_ideas(states, cfg)
    want = [mode_oracle(states[i * 7 : i * 7 + 7]) for i in range(n_spans)]
    assert got.tolist() == want


def test_pool_ideas_pad_is_zero():
    out = pool_ideas(np.full(1000, 9), CFG)
    assert (out[:142] == 9).all() and (out[142:] == 0).all()


def test_pool_auxiliary():
    c = _span_cfg()
    assert pool_auxiliary(np.array([0, 2, 5, 1, 0, 0, 3.0]), c, "max")[0] == 5.0
    assert pool_auxiliary(np.array([1, 1, 0.2, 1, 1, 1, 1]), c, "min")[0] == np.float32(0.2)
    for mode in ("max", "min"):
        assert pool_auxiliary(np.full(7, 2.5), c, mode)[0] == 2.5
    full = pool_auxiliary(np.ones(1000), CFG, "min")
    assert (full[142:] == 0).all()
    with pytest.raises(ValueError):
        pool_auxiliary(np.ones(7), c, "mean")


# ---- windows


def _window(seed=0, dna=None):
    rng = np.random.default_rng(seed)
    dna = dna or "".join(rng.choice(list("ACGT"), 1000))
    return SampleWindow(
        "chrT", 0, 1000, LabeledBin("chrT", 400, 600, Label.BOUND), dna,
        rng.integers(0, 36, 1000).astype(np.uint8),
        rng.random(1000).astype(np.float32), rng.random(1000).astype(np.float32),
    )


def test_tokenize_window_modes():
    w = _window()
    full = tokenize_window(w, CFG, V7, with_aux=True)
    assert full.dna_ids.shape == full.ideas_ids.shape == (150,) and full.aux.shape == (150, 2)
    dbert = tokenize_window(w, CFG, V7, with_ideas=False)
    assert dbert.ideas_ids is None and dbert.aux is None
    allN = tokenize_window(_window(dna="N" * 1000), CFG, V7)
    assert (allN.dna_ids[:142] == UNK).all()


@given(st.integers(0, 2**31 - 1), st.sampled_from([(7, 7), (6, 3), (5, 1), (3, 2)]))
def test_channel_alignment(seed, ks):
    k, stride = ks
    cfg = TokenizerConfig(k, stride, l_input=(1000 - k) // stride + 1)
    w = _window(seed)
    p = tokenize_window(w, cfg, build_vocab(k), with_aux=True)
    for i in range(p.n_real):
        a, b = i * stride, i * stride + k
        assert p.dna_ids[i] == kmer_id_oracle(w.dna[a:b])
        assert p.ideas_ids[i] == mode_oracle(w.ideas_states[a:b])
        assert p.aux[i, 0] == w.dnase[a:b].max()
        assert p.aux[i, 1] == w.mappability[a:b].min()
    assert p.attention_mask[: p.n_real].all() and not p.attention_mask[p.n_real :].any()


def test_throughput_10mbp():
    # soft bound: 10 Mbp in under 10 s
    rng = np.random.default_rng(0)
    seq = np.frombuffer(b"ACGT", np.uint8)[rng.integers(0, 4, 10_000_000)].tobytes().decode()
    cfg = TokenizerConfig(7, 7, l_input=(len(seq) - 7) // 7 + 1, window_len=len(seq))
    t = time.perf_counter()
    ids, _ = tokenize_dna(seq, cfg, V7)
    assert time.perf_counter() - t < 10.0
    assert ids.shape[0] == (len(seq) - 7) // 7 + 1
