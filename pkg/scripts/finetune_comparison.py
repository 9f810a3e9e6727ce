"""Pre-trained vs random initialisation on the synthetic binding task.

Prints, per seed, the first epoch whose eval AUPRC reaches the threshold.

    python3 scripts/finetune_comparison.py [--seeds 1 2 3] [--pretrain-steps 1500]
"""

from __future__ import annotations

import argparse

from ebert.experiments import ComparisonConfig, binding_comparison


def main() -> None:
    p = argparse.ArgumentParser()
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--pretrain-steps", type=int, default=1500)
    p.add_argument("--threshold", type=float, default=0.95)
    args = p.parse_args()
    cfg = ComparisonConfig(seeds=tuple(args.seeds), pretrain_steps=args.pretrain_steps, threshold=args.threshold)
    r = binding_comparison(cfg)
    print(f"pre-training: {r.n_pretrain_windows} windows, loss {r.pretrain_loss[0]:.3f} -> {r.pretrain_loss[1]:.3f}")
    print(f"epochs to eval AUPRC >= {cfg.threshold}")
    print(r.table())
    for o in r.outcomes:
        for name, res in (("pretrained", o.pretrained), ("random", o.random)):
            curve = " ".join(f"{a:.3f}" for _, a, _, _ in res.log)
            print(f"seed {o.seed} {name:<10} auprc by epoch: {curve}")
    print(f"pretrained never slower: {r.pretrained_not_slower}  ({r.seconds:.0f} s)")


if __name__ == "__main__":
    main()
