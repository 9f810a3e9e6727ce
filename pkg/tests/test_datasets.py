from __future__ import annotations

import numpy as np
import pytest

from ebert.datasets import labels_of, pretrain_corpus, split_finetune, tokenize_bins
from ebert.genome_io import Label, read_fasta, read_ideas_segmentation, read_labels, read_signal_track
from ebert.masking import IDEAS_MASK
from ebert.synthetic import BINDING_STATE, MOTIF, MOTIF_OFFSET, binding_fixture, periodic_corpus
from ebert.tokenizer import TokenizerConfig, build_vocab

TOK = TokenizerConfig()
VOCAB = build_vocab(7)


@pytest.fixture(scope="module")
def fx():
    return binding_fixture(0, chrom_len=12_000)


def test_sites_carry_motif_state_and_signal(fx):
    for c, sites in fx.sites.items():
        assert sites
        for s in sites:
            assert fx.genome[c][s + MOTIF_OFFSET : s + MOTIF_OFFSET + len(MOTIF)] == MOTIF
            assert fx.ideas.segments[c][s // 200] == BINDING_STATE
    # the binding state appears nowhere else
    n_sites = sum(len(v) for v in fx.sites.values())
    assert sum(int((seg == BINDING_STATE).sum()) for seg in fx.ideas.segments.values()) == n_sites


def test_labels_follow_site_geometry(fx):
    bound = [b for b in fx.bins if b.label is Label.BOUND]
    assert {(b.chromosome, b.start) for b in bound} == {(c, s) for c, v in fx.sites.items() for s in v}
    amb = [b for b in fx.bins if b.label is Label.AMBIGUOUS]
    assert amb and all(b.end - b.start == 200 for b in fx.bins)


def test_fixture_roundtrips_through_parsers(fx, tmp_path):
    paths = fx.write(tmp_path)
    genome = read_fasta(paths["genome"])
    assert genome.names == fx.genome.names and genome["chr2"] == fx.genome["chr2"]
    ideas = read_ideas_segmentation(paths["ideas"], "synthetic")
    assert all(np.array_equal(ideas.segments[c], fx.ideas.segments[c]) for c in genome.names)
    read_signal_track(paths["dnase"], "dnase")
    read_signal_track(paths["mappability"], "mappability")
    assert [b.label for b in read_labels(paths["labels"])] == [b.label for b in fx.bins]


def test_fixture_is_seeded(fx):
    again = binding_fixture(0, chrom_len=12_000)
    assert again.genome["chr3"] == fx.genome["chr3"] and again.sites == fx.sites
    assert binding_fixture(1, chrom_len=12_000).genome["chr3"] != fx.genome["chr3"]


def test_tokenize_bins_skips_ambiguous(fx):
    ex, counts = tokenize_bins(fx.bins, fx.genome, fx.ideas, fx.dnase, fx.mappability, TOK, VOCAB, with_aux=True)
    n_amb = sum(b.label is Label.AMBIGUOUS for b in fx.bins)
    assert counts.ambiguous_skipped == n_amb and counts.total == len(fx.bins)
    assert len(ex) == counts.bound + counts.unbound == len(fx.bins) - n_amb
    assert labels_of(ex).sum() == counts.bound
    assert all(e.pair.aux is not None and e.pair.aux.shape == (150, 2) for e in ex)
    assert "Ambiguous skipped" in counts.summary()


def test_bound_windows_see_binding_state_and_signal(fx):
    ex, _ = tokenize_bins(fx.bins, fx.genome, fx.ideas, fx.dnase, fx.mappability, TOK, VOCAB, with_aux=True)
    for e in ex:
        has_state = (e.pair.ideas_ids[: e.pair.n_real] == BINDING_STATE).any()
        if e.label == 1:
            assert has_state and e.pair.aux[:, 0].max() >= 4.0


def test_split_uses_chromosome_rule(fx):
    ex, _ = tokenize_bins(fx.bins, fx.genome, fx.ideas, None, None, TOK, VOCAB)
    ds = split_finetune(ex)
    assert {e.chrom for e in ds.eval} == {"chr1"}
    assert {e.chrom for e in ds.train} == {"chr2", "chr3", "chr4"}


def test_pretrain_corpus_tiles_and_holds_out():
    fx = binding_fixture(0, chroms=("chr2", "chr8"), chrom_len=6_000)
    corpus = pretrain_corpus(fx.genome, [fx.ideas, fx.ideas], TOK, VOCAB, stride=1000)
    # chr8 is held out; windows start at 400 and need 400bp of right flank
    n_windows = len(range(400, 6000 - 200 - 400 + 1, 1000))
    assert len(corpus) == 2 * n_windows
    assert all(p.n_real == 142 and not (p.ideas_ids == IDEAS_MASK).any() for p in corpus)
    with pytest.raises(ValueError):
        pretrain_corpus(fx.genome, [fx.ideas], TOK, VOCAB, stride=75)


def test_periodic_corpus_shape():
    corpus = periodic_corpus(4, TOK, VOCAB, np.random.default_rng(0))
    for p in corpus:
        real = p.dna_ids[: p.n_real]
        assert p.n_real == 142 and len(set(real.tolist())) == 1
        assert (p.dna_ids[142:] == 0).all()
