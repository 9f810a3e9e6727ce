"""Pre-training and fine-tuning loops.

Randomness is keyed, not streamed: every draw comes from a generator derived
from ``(seed, purpose, step, ...)``, so a run resumed from a checkpoint
replays the uninterrupted trajectory exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import metrics
from .losses import LossConfig, binding_loss_from_logit, paired_loss
from .masking import IGNORE, MaskedBatch, collate, example_rng, mask_example
from .model import (
    ForwardTrace,
    ModelConfig,
    Params,
    backward,
    embed,
    encode,
    init_params,
    last_logit,
    mlm_forward,
    param_shapes,
    tf_head_forward,
)
from .optim import OptimizerState, adamw_step
from .tokenizer import TokenizedPair, Vocab

log = logging.getLogger(__name__)

# purpose keys for example_rng
_BATCH, _DROPOUT, _MASK, _HEAD_INIT, _BODY_INIT, _FT_DROPOUT = range(6)


@dataclass(frozen=True)
class OptimConfig:
    peak_lr: float = 1e-3
    warmup_steps: int = 50
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-4
    weight_decay: float = 0.01

    def new_state(self) -> OptimizerState:
        return OptimizerState(self.peak_lr, self.warmup_steps, self.beta1, self.beta2, self.eps, self.weight_decay)


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 500
    batch_size: int = 32
    mask_rate: float = 0.15
    alpha: float = 0.5
    seed: int = 42
    checkpoint_every: int = 0
    optim: OptimConfig = OptimConfig()


@dataclass(frozen=True)
class FinetuneConfig:
    max_epochs: int = 20
    batch_size: int = 32
    neg_ratio: int = 10
    patience: int = 3
    min_delta: float = 1e-4
    head_only: bool = False
    seed: int = 42
    eval_batch_size: int = 128
    target_auprc: float | None = None  # stop as soon as eval AUPRC reaches this
    optim: OptimConfig = OptimConfig(peak_lr=1e-3, warmup_steps=20, beta1=0.9, beta2=0.99, eps=1e-5)


# --------------------------------------------------------------------------
# objectives (loss + gradient for one batch)


def _positions(labels: np.ndarray):
    return np.nonzero(labels != IGNORE)


def pretrain_objective(
    params: Params,
    cfg: ModelConfig,
    batch: MaskedBatch,
    loss_cfg: LossConfig,
    rng: np.random.Generator | None = None,
    want_grad: bool = True,
):
    """Paired-MLM loss on a masked batch.

    Returns ``(total, dna, ideas, grads, accuracy)`` where accuracy is the
    DNA masked-token accuracy.  ``rng`` enables dropout (train mode).
    """
    trace = ForwardTrace(params, cfg) if want_grad else None
    ideas_in = batch.input_ideas if cfg.uses_ideas else None
    h = embed(batch.input_dna, ideas_in, params, cfg, trace)
    h = encode(h, batch.attention_mask, params, cfg, "train" if rng is not None else "eval", rng, trace)
    dpos = _positions(batch.dna_labels)
    ipos = _positions(batch.ideas_labels) if cfg.uses_ideas and batch.ideas_labels is not None else None
    dna_logits, ideas_logits = mlm_forward(h, params, dpos, ipos, trace)
    ideas_targets = batch.ideas_labels[ipos] if ipos is not None else None
    acc = float((dna_logits.argmax(axis=-1) == batch.dna_labels[dpos]).mean())
    if not want_grad:
        total, dna, ideas = paired_loss(dna_logits, batch.dna_labels[dpos], ideas_logits, ideas_targets, loss_cfg)
        return total, dna, ideas, None, acc
    (total, dna, ideas), g = paired_loss(
        dna_logits, batch.dna_labels[dpos], ideas_logits, ideas_targets, loss_cfg, want_grad=True
    )
    return total, dna, ideas, backward(trace, g), acc


def _stack_pairs(pairs: Sequence[TokenizedPair], cfg: ModelConfig):
    dna = np.stack([p.dna_ids for p in pairs])
    mask = np.stack([p.attention_mask for p in pairs])
    ideas = np.stack([p.ideas_ids for p in pairs]).astype(np.int64) if cfg.uses_ideas else None
    aux = np.stack([p.aux for p in pairs]).astype(cfg.np_dtype) if cfg.with_aux else None
    return dna, ideas, mask, aux


def binding_forward(params: Params, cfg: ModelConfig, pairs, rng=None, trace=None):
    dna, ideas, mask, aux = _stack_pairs(pairs, cfg)
    h = embed(dna, ideas, params, cfg, trace)
    h = encode(h, mask, params, cfg, "train" if rng is not None else "eval", rng, trace)
    return tf_head_forward(h, aux, params, cfg, mask, trace)


def finetune_objective(params: Params, cfg: ModelConfig, pairs, labels, rng=None, want_grad: bool = True):
    """Mean binary cross-entropy of the binding head; returns ``(loss, grads)``."""
    trace = ForwardTrace(params, cfg)
    binding_forward(params, cfg, pairs, rng, trace)
    z = last_logit(trace)
    if not want_grad:
        return binding_loss_from_logit(z, labels), None
    loss, dz = binding_loss_from_logit(z, labels, want_grad=True)
    return loss, backward(trace, {"tf_logit": dz})


def predict(params: Params, cfg: ModelConfig, pairs: Sequence[TokenizedPair], batch_size: int = 128) -> np.ndarray:
    out = [binding_forward(params, cfg, pairs[i : i + batch_size]) for i in range(0, len(pairs), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


# --------------------------------------------------------------------------
# pre-training


def mask_batch(pairs: Sequence[TokenizedPair], vocab: Vocab, rate: float, seed: int, step: int, ids: Sequence[int]) -> MaskedBatch:
    return collate([mask_example(p, vocab, rate, example_rng(seed, _MASK, step, int(i))) for p, i in zip(pairs, ids)])


@dataclass
class PretrainResult:
    params: Params
    opt_state: OptimizerState
    step: int
    log: list[tuple[int, float, float, float, float]] = field(default_factory=list)  # step, lr, total, dna, ideas


def pretrain_loop(
    corpus: Sequence[TokenizedPair],
    model_cfg: ModelConfig,
    vocab: Vocab,
    cfg: PretrainConfig,
    params: Params | None = None,
    opt_state: OptimizerState | None = None,
    start_step: int = 0,
    sink: Callable[[int, Params, OptimizerState, list], None] | None = None,
) -> PretrainResult:
    """Run ``cfg.steps`` total steps (counting from ``start_step`` when resuming)."""
    if not corpus:
        raise ValueError("empty pre-training corpus")
    if model_cfg.uses_ideas and corpus[0].ideas_ids is None:
        raise ValueError("model expects IDEAS inputs but the corpus has none")
    if params is None:
        params = init_params(model_cfg, example_rng(cfg.seed, _BODY_INIT))
    if opt_state is None:
        opt_state = cfg.optim.new_state()
    loss_cfg = LossConfig(cfg.alpha)
    bs = min(cfg.batch_size, len(corpus))
    # the binding head is not part of the pre-training graph
    frozen = {n for n in params if n.startswith("tf.")}
    result = PretrainResult(params, opt_state, start_step)
    for step in range(start_step + 1, cfg.steps + 1):
        ids = np.sort(example_rng(cfg.seed, _BATCH, step).choice(len(corpus), size=bs, replace=False))
        batch = mask_batch([corpus[i] for i in ids], vocab, cfg.mask_rate, cfg.seed, step, ids)
        total, dna, ideas, grads, _ = pretrain_objective(
            params, model_cfg, batch, loss_cfg, example_rng(cfg.seed, _DROPOUT, step)
        )
        if not np.isfinite(total):
            raise FloatingPointError(f"non-finite loss at step {step}")
        lr = adamw_step(params, grads, opt_state, frozen=frozen)
        result.log.append((step, lr, total, dna, ideas))
        result.step = step
        if step % 50 == 0:
            log.info("step %d lr %.3g loss %.4f (dna %.4f ideas %.4f)", step, lr, total, dna, ideas)
        if sink is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            sink(step, params, opt_state, result.log)
    return result


def masked_token_accuracy(
    params: Params, model_cfg: ModelConfig, corpus: Sequence[TokenizedPair], vocab: Vocab,
    rate: float = 0.15, seed: int = 0, batch_size: int = 64,
) -> float:
    """Eval-mode DNA accuracy over one fresh masking of every corpus sequence."""
    hits = total = 0
    for lo in range(0, len(corpus), batch_size):
        ids = range(lo, min(lo + batch_size, len(corpus)))
        batch = mask_batch([corpus[i] for i in ids], vocab, rate, seed, 0, ids)
        *_, acc = pretrain_objective(params, model_cfg, batch, LossConfig(), want_grad=False)
        n = int((batch.dna_labels != IGNORE).sum())
        hits += acc * n
        total += n
    return hits / total


# --------------------------------------------------------------------------
# fine-tuning


@dataclass
class FinetuneSampler:
    positives: list[int]
    negatives: list[int]
    ratio: int = 10
    seed: int = 42


def resample_negatives(sampler: FinetuneSampler, epoch: int) -> list[int]:
    """All positives plus a fresh draw of up to ratio*|positives| negatives, shuffled."""
    if not sampler.positives:
        raise ValueError("no positive examples")
    rng = example_rng(sampler.seed, 100, epoch)
    n_neg = min(sampler.ratio * len(sampler.positives), len(sampler.negatives))
    neg = rng.choice(np.asarray(sampler.negatives, dtype=np.int64), size=n_neg, replace=False) if n_neg else []
    order = np.concatenate([np.asarray(sampler.positives, dtype=np.int64), np.asarray(neg, dtype=np.int64)])
    return [int(i) for i in rng.permutation(order)]


@dataclass(frozen=True)
class FinetuneExample:
    pair: TokenizedPair
    label: int  # 1 bound, 0 unbound
    chrom: str = ""
    start: int = 0
    end: int = 0


@dataclass
class FinetuneDataset:
    train: list[FinetuneExample]
    eval: list[FinetuneExample]


@dataclass
class FinetuneResult:
    params: Params
    log: list[tuple[int, float, float, float]]  # epoch, auprc, auroc, loss
    eval_scores: np.ndarray
    stopped_early: bool

    def epochs_to(self, auprc: float) -> int | None:
        """First epoch whose eval AUPRC reached ``auprc``."""
        for epoch, a, *_ in self.log:
            if a >= auprc:
                return epoch
        return None


def init_finetune_params(model_cfg: ModelConfig, seed: int, base: Params | None = None) -> Params:
    """Encoder weights from ``base`` (or fresh), binding head always fresh."""
    head = init_params(model_cfg, example_rng(seed, _HEAD_INIT), prefix="tf.")
    if base is None:
        body = init_params(model_cfg, example_rng(seed, _BODY_INIT))
    else:
        body = {n: v.astype(model_cfg.np_dtype, copy=True) for n, v in base.items()}
    params = {n: v for n, v in body.items() if not n.startswith("tf.")}
    params.update(head)
    missing = set(param_shapes(model_cfg)) - set(params)
    if missing:
        raise ValueError(f"base checkpoint lacks parameters: {sorted(missing)[:5]}")
    return params


def finetune_loop(
    base: Params | None,
    dataset: FinetuneDataset,
    model_cfg: ModelConfig,
    cfg: FinetuneConfig,
    on_epoch: Callable[[int, Params], None] | None = None,
) -> FinetuneResult:
    """Full (or head-only) fine-tuning with per-epoch eval and plateau stopping.

    An epoch is one pass over the positives plus freshly resampled negatives.
    Training stops after ``cfg.patience`` evaluations without an AUPRC gain
    above ``cfg.min_delta``, once ``cfg.target_auprc`` is reached, or after
    ``cfg.max_epochs``.  Randomness is keyed by epoch, so stopping early does
    not change the epochs that did run.
    """
    train = dataset.train
    pos = [i for i, ex in enumerate(train) if ex.label == 1]
    neg = [i for i, ex in enumerate(train) if ex.label == 0]
    sampler = FinetuneSampler(pos, neg, cfg.neg_ratio, cfg.seed)
    params = init_finetune_params(model_cfg, cfg.seed, base)
    frozen = {n for n in params if not n.startswith("tf.")} if cfg.head_only else set()
    opt = cfg.optim.new_state()
    eval_pairs = [ex.pair for ex in dataset.eval]
    eval_labels = np.array([ex.label for ex in dataset.eval])

    history: list[tuple[int, float, float, float]] = []
    best, stale, scores, stopped = -np.inf, 0, np.zeros(0), False
    for epoch in range(1, cfg.max_epochs + 1):
        order = resample_negatives(sampler, epoch)
        losses = []
        for b, lo in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[lo : lo + cfg.batch_size]
            loss, grads = finetune_objective(
                params, model_cfg, [train[i].pair for i in idx], np.array([train[i].label for i in idx]),
                example_rng(cfg.seed, _FT_DROPOUT, epoch, b),
            )
            adamw_step(params, grads, opt, frozen=frozen)
            losses.append(loss)
        scores = predict(params, model_cfg, eval_pairs, cfg.eval_batch_size)
        auprc = metrics.auprc(scores, eval_labels)
        auroc = metrics.auroc(scores, eval_labels)
        history.append((epoch, auprc, auroc, float(np.mean(losses))))
        log.info("epoch %d auprc %.4f auroc %.4f loss %.4f", epoch, auprc, auroc, np.mean(losses))
        if on_epoch is not None:
            on_epoch(epoch, params)
        if cfg.target_auprc is not None and auprc >= cfg.target_auprc:
            break
        if auprc > best + cfg.min_delta:
            best, stale = auprc, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                stopped = True
                break
    return FinetuneResult(params, history, scores, stopped)
