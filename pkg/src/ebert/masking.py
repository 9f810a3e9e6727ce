"""Paired DNA/IDEAS masking for pre-training.

DNA: a fixed fraction of maskable tokens is selected and each selected token
is replaced by MASK (80%), a random k-mer (10%) or left unchanged (10%).
IDEAS: one selected position is the anchor.  The anchor and ``floor(100/k)``
tokens on either side receive the IDEAS mask sentinel, but only the anchor is
a prediction target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .genome_io import N_IDEAS_STATES
from .tokenizer import DNA_OFFSET, MASK, TokenizedPair, Vocab

IGNORE = -1
IDEAS_MASK = N_IDEAS_STATES  # sentinel state id
IDEAS_VOCAB = N_IDEAS_STATES + 1

ACT_MASK, ACT_RANDOM, ACT_KEEP = 0, 1, 2
ACTION_PROBS = (0.8, 0.1, 0.1)


@dataclass(frozen=True)
class MaskPlan:
    dna_positions: np.ndarray  # sorted token indices
    actions: np.ndarray  # ACT_* per position
    ideas_anchor: int
    ideas_flank: int


@dataclass(frozen=True)
class MaskedExample:
    input_dna: np.ndarray
    dna_labels: np.ndarray
    attention_mask: np.ndarray
    input_ideas: np.ndarray | None = None
    ideas_labels: np.ndarray | None = None


def mask_count(n_maskable: int, rate: float) -> int:
    """max(1, round_half_up(rate * n))."""
    return max(1, int(np.floor(rate * n_maskable + 0.5)))


def maskable_positions(pair: TokenizedPair) -> np.ndarray:
    ids = pair.dna_ids
    return np.flatnonzero((pair.attention_mask == 1) & (ids >= DNA_OFFSET))


def sample_mask_plan(pair: TokenizedPair, rate: float, rng: np.random.Generator, k: int) -> MaskPlan:
    if not 0.0 < rate < 1.0:
        raise ValueError(f"mask rate must be in (0, 1), got {rate}")
    candidates = maskable_positions(pair)
    if candidates.size == 0:
        raise ValueError("no maskable positions (every real token is UNK)")
    n = mask_count(candidates.size, rate)
    chosen = np.sort(rng.choice(candidates, size=n, replace=False))
    u = rng.random(n)
    actions = np.where(u < ACTION_PROBS[0], ACT_MASK, np.where(u < ACTION_PROBS[0] + ACTION_PROBS[1], ACT_RANDOM, ACT_KEEP))
    anchor = int(chosen[rng.integers(n)])
    return MaskPlan(chosen, actions.astype(np.int8), anchor, 100 // k)


def apply_paired_masking(
    pair: TokenizedPair, plan: MaskPlan, vocab: Vocab, rng: np.random.Generator
) -> MaskedExample:
    pos, act = plan.dna_positions, plan.actions
    input_dna = pair.dna_ids.copy()
    dna_labels = np.full_like(pair.dna_ids, IGNORE)
    dna_labels[pos] = pair.dna_ids[pos]
    input_dna[pos[act == ACT_MASK]] = MASK
    rand_pos = pos[act == ACT_RANDOM]
    input_dna[rand_pos] = rng.integers(DNA_OFFSET, vocab.size, size=rand_pos.size)

    input_ideas = ideas_labels = None
    if pair.ideas_ids is not None:
        n_real = pair.n_real
        lo = max(plan.ideas_anchor - plan.ideas_flank, 0)
        hi = min(plan.ideas_anchor + plan.ideas_flank, n_real - 1)
        input_ideas = pair.ideas_ids.astype(np.int64)
        ideas_labels = np.full(input_ideas.shape, IGNORE, dtype=np.int64)
        ideas_labels[plan.ideas_anchor] = input_ideas[plan.ideas_anchor]
        input_ideas[lo : hi + 1] = IDEAS_MASK
    return MaskedExample(
        input_dna=input_dna,
        dna_labels=dna_labels,
        attention_mask=pair.attention_mask.copy(),
        input_ideas=input_ideas,
        ideas_labels=ideas_labels,
    )


def example_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for one example, derived from (seed, *keys)."""
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def mask_example(pair: TokenizedPair, vocab: Vocab, rate: float, rng: np.random.Generator) -> MaskedExample:
    plan = sample_mask_plan(pair, rate, rng, vocab.k)
    return apply_paired_masking(pair, plan, vocab, rng)


@dataclass(frozen=True)
class MaskedBatch:
    input_dna: np.ndarray  # [B, L]
    dna_labels: np.ndarray
    attention_mask: np.ndarray
    input_ideas: np.ndarray | None
    ideas_labels: np.ndarray | None

    def __len__(self) -> int:
        return self.input_dna.shape[0]


def collate(examples: list[MaskedExample]) -> MaskedBatch:
    has_ideas = examples[0].input_ideas is not None

    def stack(name):
        return np.stack([getattr(e, name) for e in examples]) if has_ideas or "ideas" not in name else None

    return MaskedBatch(
        input_dna=stack("input_dna"),
        dna_labels=stack("dna_labels"),
        attention_mask=stack("attention_mask"),
        input_ideas=stack("input_ideas"),
        ideas_labels=stack("ideas_labels"),
    )
