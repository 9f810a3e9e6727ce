"""Desk-scale training experiments shared by the acceptance suite and scripts/.

Two runs:

* ``overfit_experiment``: the tiny config memorises a small periodic corpus.
* ``binding_comparison``: a tiny encoder is pre-trained on one synthetic
  genome, then fine-tuned on the binding task of a different synthetic genome
  from both the pre-trained and a random initialisation, seed by seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .datasets import pretrain_corpus, split_finetune, tokenize_bins
from .model import ModelConfig
from .synthetic import binding_fixture, periodic_corpus
from .tokenizer import TokenizerConfig, build_vocab
from .training import (
    FinetuneConfig,
    FinetuneResult,
    OptimConfig,
    PretrainConfig,
    finetune_loop,
    masked_token_accuracy,
    pretrain_loop,
)


@dataclass(frozen=True)
class OverfitConfig:
    n_sequences: int = 64
    corpus_seed: int = 0
    steps: int = 500
    batch_size: int = 16
    peak_lr: float = 3e-3
    warmup_steps: int = 50
    seed: int = 42


@dataclass
class OverfitResult:
    accuracy: float
    final_loss: float
    steps: int
    seconds: float


def overfit_experiment(cfg: OverfitConfig = OverfitConfig(), model_cfg: ModelConfig | None = None) -> OverfitResult:
    tok = TokenizerConfig()
    vocab = build_vocab(tok.k)
    mc = model_cfg or ModelConfig.tiny()
    corpus = periodic_corpus(cfg.n_sequences, tok, vocab, np.random.default_rng(cfg.corpus_seed))
    pc = PretrainConfig(steps=cfg.steps, batch_size=cfg.batch_size, seed=cfg.seed,
                        optim=OptimConfig(peak_lr=cfg.peak_lr, warmup_steps=cfg.warmup_steps))
    t0 = time.perf_counter()
    res = pretrain_loop(corpus, mc, vocab, pc)
    acc = masked_token_accuracy(res.params, mc, corpus, vocab)
    return OverfitResult(acc, res.log[-1][2], res.step, time.perf_counter() - t0)


@dataclass(frozen=True)
class ComparisonConfig:
    # pre-training genome: dense binding sites so the encoder sees the motif often
    pretrain_fixture_seed: int = 7
    pretrain_spacing: int = 1000
    pretrain_window_stride: int = 200
    pretrain_steps: int = 1500
    pretrain_batch: int = 16
    pretrain_lr: float = 3e-3
    # fine-tuning genome: a different seed, default site density
    finetune_fixture_seed: int = 0
    chrom_len: int = 40_000
    seeds: tuple[int, ...] = (1, 2, 3)
    threshold: float = 0.95
    max_epochs: int = 20


@dataclass
class SeedOutcome:
    seed: int
    pretrained: FinetuneResult
    random: FinetuneResult
    threshold: float

    @property
    def pretrained_epochs(self) -> int | None:
        return self.pretrained.epochs_to(self.threshold)

    @property
    def random_epochs(self) -> int | None:
        return self.random.epochs_to(self.threshold)

    @property
    def pretrained_not_slower(self) -> bool:
        p, r = self.pretrained_epochs, self.random_epochs
        return p is not None and (r is None or p <= r)


@dataclass
class ComparisonResult:
    outcomes: list[SeedOutcome]
    pretrain_loss: tuple[float, float]  # first and last logged total loss
    n_pretrain_windows: int
    seconds: float
    notes: list[str] = field(default_factory=list)

    @property
    def reached(self) -> bool:
        """Every fine-tuning run reached the threshold."""
        return all(o.pretrained_epochs is not None and o.random_epochs is not None for o in self.outcomes)

    @property
    def pretrained_not_slower(self) -> bool:
        return all(o.pretrained_not_slower for o in self.outcomes)

    def table(self) -> str:
        lines = ["seed  pretrained  random"]
        for o in self.outcomes:
            lines.append(f"{o.seed:>4}  {str(o.pretrained_epochs):>10}  {str(o.random_epochs):>6}")
        return "\n".join(lines)


def binding_comparison(cfg: ComparisonConfig = ComparisonConfig(), model_cfg: ModelConfig | None = None) -> ComparisonResult:
    tok = TokenizerConfig()
    vocab = build_vocab(tok.k)
    mc = model_cfg or ModelConfig.tiny()
    t0 = time.perf_counter()

    pfx = binding_fixture(cfg.pretrain_fixture_seed, chrom_len=cfg.chrom_len, spacing=cfg.pretrain_spacing)
    corpus = pretrain_corpus(pfx.genome, [pfx.ideas], tok, vocab, stride=cfg.pretrain_window_stride)
    pc = PretrainConfig(steps=cfg.pretrain_steps, batch_size=cfg.pretrain_batch, optim=OptimConfig(peak_lr=cfg.pretrain_lr))
    pre = pretrain_loop(corpus, mc, vocab, pc)

    fx = binding_fixture(cfg.finetune_fixture_seed, chrom_len=cfg.chrom_len)
    examples, _ = tokenize_bins(fx.bins, fx.genome, fx.ideas, fx.dnase, fx.mappability, tok, vocab)
    ds = split_finetune(examples)
    outcomes = []
    for seed in cfg.seeds:
        fc = FinetuneConfig(seed=seed, max_epochs=cfg.max_epochs, target_auprc=cfg.threshold)
        outcomes.append(SeedOutcome(
            seed, finetune_loop(pre.params, ds, mc, fc), finetune_loop(None, ds, mc, fc), cfg.threshold,
        ))
    return ComparisonResult(outcomes, (pre.log[0][2], pre.log[-1][2]), len(corpus), time.perf_counter() - t0)
