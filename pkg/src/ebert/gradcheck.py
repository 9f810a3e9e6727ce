"""Central finite-difference check of :func:`ebert.model.backward`.

The loss closure must be deterministic (pass dropout generators rebuilt from a
fixed seed on every call) so that the perturbed evaluations replay the same
stochastic graph as the analytic pass.

The binding head is piecewise linear (ReLU, max-pool), and a central
difference that straddles a kink measures neither one-sided slope.  When a
``branches`` callable is supplied, each perturbed evaluation's branch pattern
(ReLU signs and pool argmax) is compared with the unperturbed one.  If only
one side changes, the second-order one-sided difference
``(3 f(x) - 4 f(x - h) + f(x - 2h)) / 2h`` on the unchanged side is used
(same step, same O(h^2) error).  Coordinates with no smooth stencil are
counted in ``n_kinked`` and listed in ``kinked`` rather than folded into
``max_rel_error``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .model import ForwardTrace, Params

LossFn = Callable[[Params, bool], tuple[float, Params | None]]
BranchFn = Callable[[Params], bytes]


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    per_tensor: dict[str, float] = field(default_factory=dict)
    worst: tuple[str, int, float, float] = ("", -1, 0.0, 0.0)  # name, flat index, analytic, numeric
    n_kinked: int = 0
    n_one_sided: int = 0
    kinked: list[tuple[str, int, float]] = field(default_factory=list)  # name, flat index, rel error
    uncovered: list[str] = field(default_factory=list)  # tensors with no smooth coordinate

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def rel_error(a: float, n: float, floor: float = 1e-7) -> float:
    """|a - n| / max(|a|, |n|, floor); the floor keeps exact zeros from dividing by 0."""
    return abs(a - n) / max(abs(a), abs(n), floor)


def branch_signature(trace: ForwardTrace) -> bytes:
    """Bytes identifying the non-smooth choices the traced loss depends on.

    Only branches on the path to the output are included: the pool argmax,
    the second ReLU at the pooled positions, the first ReLU in the receptive
    field of each active pooled position, and the dense ReLU.  Flips elsewhere
    do not change the loss while the argmax is fixed.
    """
    parts = []
    for stage, cache in trace.stages:
        if stage != "tf":
            continue
        idx = cache["pool"][0]  # [B, C2]
        relu1, relu2 = cache["relu1"], cache["relu2"]
        active = np.take_along_axis(relu2, idx[:, None, :], axis=1)[:, 0, :]
        parts += [np.ascontiguousarray(idx).tobytes(), np.packbits(active).tobytes()]
        L = relu1.shape[1]
        for b in range(idx.shape[0]):
            centres = np.unique(idx[b][active[b]])
            near = np.unique(np.clip(centres[:, None] + np.arange(-1, 2), 0, L - 1))
            parts.append(np.packbits(relu1[b, near]).tobytes())
        parts.append(np.packbits(cache["relu3"]).tobytes())
    return b"".join(parts)


def sample_coordinates(
    params: Params,
    n: int,
    rng: np.random.Generator,
    rows: Mapping[str, np.ndarray] | None = None,
    skip: tuple[str, ...] = (),
) -> list[tuple[str, int]]:
    """At least ``n`` (tensor, flat index) pairs covering every tensor.

    ``rows`` restricts a 2-D tensor (an embedding table) to the given row ids
    so that sampled entries actually take part in the graph.
    """
    names = [k for k in params if not k.startswith(skip)] if skip else list(params)
    per = max(1, -(-n // len(names)))
    coords = []
    for name in names:
        p = params[name]
        if rows and name in rows:
            r = rng.choice(np.unique(rows[name]), size=per)
            c = rng.integers(0, p.shape[1], size=per)
            flat = np.ravel_multi_index((r, c), p.shape)
        else:
            flat = rng.choice(p.size, size=min(per, p.size), replace=False)
        coords += [(name, int(i)) for i in flat]
    return coords


def check_gradients(
    loss_fn: LossFn,
    params: Params,
    coords: list[tuple[str, int]],
    eps: float = 1e-3,
    branches: BranchFn | None = None,
) -> GradCheckReport:
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"{name}: gradient checks need float64 parameters")
    _, grads = loss_fn(params, True)
    base = branches(params) if branches else None
    f0 = loss_fn(params, False)[0] if branches else None
    report = GradCheckReport(0.0, 0)
    for name, i in coords:
        p = params[name].reshape(-1)
        orig = p[i]

        def at(step):
            p[i] = orig + step * eps
            val = loss_fn(params, False)[0]
            same = branches is None or branches(params) == base
            p[i] = orig
            return val, same

        (up, up_ok), (down, down_ok) = at(1), at(-1)
        num = None
        if up_ok and down_ok:
            num = (up - down) / (2 * eps)
        elif up_ok or down_ok:
            # second-order one-sided difference on the side that stays smooth
            side = 1 if up_ok else -1
            near = up if up_ok else down
            far, far_ok = at(2 * side)
            if far_ok:
                num = side * (4 * near - 3 * f0 - far) / (2 * eps)
                report.n_one_sided += 1
        ana = float(grads[name].reshape(-1)[i])
        if num is None:
            report.n_kinked += 1
            report.kinked.append((name, i, rel_error(ana, (up - down) / (2 * eps))))
            continue
        err = rel_error(ana, num)
        report.n_checked += 1
        report.per_tensor[name] = max(report.per_tensor.get(name, 0.0), err)
        if err > report.max_rel_error:
            report.max_rel_error = err
            report.worst = (name, i, ana, num)
    return report


# --------------------------------------------------------------------------
# end-to-end check of the two training objectives on the tiny config

PATHS = ("mlm", "tf", "tf_aux")


def _random_pairs(n: int, vocab_size: int, l_input: int, real: tuple[int, int], with_aux: bool, rng):
    from .tokenizer import TokenizedPair

    out = []
    for _ in range(n):
        r = int(rng.integers(*real))
        dna = np.zeros(l_input, np.int64)
        dna[:r] = rng.integers(3, vocab_size, r)
        mask = np.zeros(l_input, np.uint8)
        mask[:r] = 1
        ideas = np.zeros(l_input, np.uint8)
        ideas[:r] = rng.integers(0, 36, r)
        aux = None
        if with_aux:
            aux = np.zeros((l_input, 2), np.float32)
            aux[:r] = rng.random((r, 2))
        out.append(TokenizedPair(dna, mask, ideas, aux))
    return out


@dataclass
class ObjectiveFixture:
    """A deterministic loss closure over float64 tiny-model parameters."""

    loss_fn: LossFn
    params: Params
    rows: dict[str, np.ndarray]  # embedding rows that take part in the graph
    skip: tuple[str, ...]  # parameter prefixes outside the objective
    branches: BranchFn | None = None


def objective_fixture(
    path: str,
    seed: int = 0,
    std: float = 0.1,
    batch: int = 2,
    real: tuple[int, int] = (4, 7),
) -> ObjectiveFixture:
    """Random tiny model and batch for one objective.

    ``path`` is "mlm" (paired masked-LM loss), "tf" or "tf_aux" (binding loss
    without/with the two auxiliary channels).  Biases and layer-norm gains
    are moved off their initial values so their gradients are non-trivial.
    """
    from .losses import LossConfig
    from .masking import collate, example_rng, mask_example
    from .model import ModelConfig, init_params
    from .tokenizer import build_vocab
    from .training import binding_forward, finetune_objective, pretrain_objective

    if path not in PATHS:
        raise ValueError(f"path must be one of {PATHS}")
    vocab = build_vocab(7)
    cfg = ModelConfig.tiny(dtype="float64", with_aux=path == "tf_aux")
    rng = np.random.default_rng(seed)
    params = init_params(cfg, example_rng(seed, 9), std=std)
    for name, p in params.items():
        if name.endswith(".bias"):
            p += rng.normal(0, std, p.shape)
        elif name.endswith(".gain"):
            p += rng.normal(0, 0.1, p.shape)
    pairs = _random_pairs(batch, vocab.size, cfg.l_input, real, path == "tf_aux", rng)

    if path == "mlm":
        mb = collate([mask_example(p, vocab, 0.15, example_rng(seed, 1, i)) for i, p in enumerate(pairs)])
        real_mask = mb.attention_mask == 1

        def loss_fn(P, want_grad):
            total, _, _, grads, _ = pretrain_objective(P, cfg, mb, LossConfig(0.5), example_rng(seed, 2), want_grad)
            return total, grads

        rows = {"emb.dna": mb.input_dna[real_mask], "emb.ideas": mb.input_ideas[real_mask]}
        return ObjectiveFixture(loss_fn, params, rows, ("tf.",))

    labels = np.arange(batch) % 2

    def loss_fn(P, want_grad):
        return finetune_objective(P, cfg, pairs, labels, example_rng(seed, 3), want_grad)

    def branches(P):
        trace = ForwardTrace(P, cfg)
        binding_forward(P, cfg, pairs, example_rng(seed, 3), trace)
        return branch_signature(trace)

    rows = {"emb.dna": np.concatenate([p.dna_ids[: p.n_real] for p in pairs]),
            "emb.ideas": np.concatenate([p.ideas_ids[: p.n_real] for p in pairs])}
    return ObjectiveFixture(loss_fn, params, rows, ("mlm.",), branches)


def model_gradcheck(
    path: str,
    seed: int = 0,
    n: int = 200,
    eps: float = 1e-3,
    max_rounds: int = 30,
    **fixture_kw,
) -> GradCheckReport:
    """Finite-difference check of one objective (see :func:`objective_fixture`).

    Coordinates are drawn in rounds over every tensor the objective touches
    until at least ``n`` smooth coordinates have been compared and every
    tensor has at least one; kink-crossing coordinates are reported
    separately.
    """
    fx = objective_fixture(path, seed, **fixture_kw)
    loss_fn, params, rows, skip, branches = fx.loss_fn, fx.params, fx.rows, fx.skip, fx.branches
    coord_rng = np.random.default_rng(seed + 1)
    names = [k for k in params if not k.startswith(skip)]
    total = GradCheckReport(0.0, 0)
    for _ in range(max_rounds):
        uncovered = [k for k in names if k not in total.per_tensor]
        if total.n_checked >= n and not uncovered:
            break
        if total.n_checked >= n:
            # top up tensors whose samples all straddled a kink
            coords = sample_coordinates({k: params[k] for k in uncovered}, 4 * len(uncovered), coord_rng, rows=rows)
        else:
            coords = sample_coordinates(params, n - total.n_checked, coord_rng, rows=rows, skip=skip)
        part = check_gradients(loss_fn, params, coords, eps, branches)
        total.n_checked += part.n_checked
        total.n_kinked += part.n_kinked
        total.n_one_sided += part.n_one_sided
        total.kinked += part.kinked
        for name, err in part.per_tensor.items():
            total.per_tensor[name] = max(total.per_tensor.get(name, 0.0), err)
        if part.max_rel_error > total.max_rel_error:
            total.max_rel_error, total.worst = part.max_rel_error, part.worst
    total.uncovered = [k for k in names if k not in total.per_tensor]
    return total
