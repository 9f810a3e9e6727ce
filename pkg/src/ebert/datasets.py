"""Turn parsed tracks into tokenized pre-training and fine-tuning examples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .genome_io import (
    BIN_WIDTH,
    FLANK,
    GenomeAssembly,
    IdeasTrack,
    Label,
    LabeledBin,
    SignalTrack,
    chromosome_split,
    make_window,
)
from .tokenizer import TokenizedPair, TokenizerConfig, Vocab, tokenize_window
from .training import FinetuneDataset, FinetuneExample


@dataclass(frozen=True)
class TokenizeCounts:
    total: int
    bound: int
    unbound: int
    ambiguous_skipped: int

    def summary(self) -> str:
        return (f"bins {self.total}: Bound {self.bound}, Unbound {self.unbound}, "
                f"Ambiguous skipped {self.ambiguous_skipped}; records written {self.bound + self.unbound}")


def tokenize_bins(
    bins: Sequence[LabeledBin],
    genome: GenomeAssembly,
    ideas: IdeasTrack,
    dnase: SignalTrack | None,
    mapp: SignalTrack | None,
    cfg: TokenizerConfig,
    vocab: Vocab,
    with_ideas: bool = True,
    with_aux: bool = False,
) -> tuple[list[FinetuneExample], TokenizeCounts]:
    """Tokenize every non-Ambiguous bin, preserving input order."""
    out = []
    n_amb = 0
    for b in bins:
        if b.label is Label.AMBIGUOUS:
            n_amb += 1
            continue
        w = make_window(b, genome, ideas, dnase, mapp)
        pair = tokenize_window(w, cfg, vocab, with_aux=with_aux, with_ideas=with_ideas)
        out.append(FinetuneExample(pair, int(b.label is Label.BOUND), b.chromosome, b.start, b.end))
    n_bound = sum(ex.label for ex in out)
    return out, TokenizeCounts(len(bins), n_bound, len(out) - n_bound, n_amb)


def split_finetune(examples: Sequence[FinetuneExample]) -> FinetuneDataset:
    """Train/eval split by chromosome; chromosomes in neither set are dropped."""
    train_c, eval_c = chromosome_split("finetune", sorted({ex.chrom for ex in examples}))
    train_c, eval_c = set(train_c), set(eval_c)
    return FinetuneDataset(
        train=[ex for ex in examples if ex.chrom in train_c],
        eval=[ex for ex in examples if ex.chrom in eval_c],
    )


def pretrain_corpus(
    genome: GenomeAssembly,
    ideas_tracks: Sequence[IdeasTrack],
    cfg: TokenizerConfig,
    vocab: Vocab,
    stage_split: bool = True,
    stride: int = 1000,
    with_ideas: bool = True,
) -> list[TokenizedPair]:
    """Tile training chromosomes with windows and pair each with every cell type.

    The corpus is ordered (window, cell type); the training loop samples
    uniformly from it.
    """
    names = genome.names
    if stage_split:
        names, _ = chromosome_split("pretrain", names)
    if stride % 50:
        raise ValueError("window stride must be a multiple of 50")
    corpus = []
    for chrom in names:
        last = genome.length(chrom) - BIN_WIDTH - FLANK
        for start in range(FLANK, max(last, FLANK) + 1, stride):
            if start + BIN_WIDTH > genome.length(chrom):
                break
            b = LabeledBin(chrom, start, start + BIN_WIDTH, Label.UNBOUND)
            for track in ideas_tracks:
                w = make_window(b, genome, track)
                corpus.append(tokenize_window(w, cfg, vocab, with_ideas=with_ideas))
    if not corpus:
        raise ValueError("no pre-training windows (are all chromosomes held out?)")
    return corpus


def labels_of(examples: Sequence[FinetuneExample]) -> np.ndarray:
    return np.array([ex.label for ex in examples], dtype=np.int64)
