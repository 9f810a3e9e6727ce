"""Tiny-config pre-training on a 64-sequence periodic corpus.

    python3 scripts/overfit_pretrain.py [--steps 500]
"""

from __future__ import annotations

import argparse

from ebert.experiments import OverfitConfig, overfit_experiment


def main() -> None:
    p = argparse.ArgumentParser()
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--corpus-seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=3e-3)
    args = p.parse_args()
    r = overfit_experiment(OverfitConfig(steps=args.steps, corpus_seed=args.corpus_seed, peak_lr=args.lr))
    print(f"steps {r.steps}  final loss {r.final_loss:.4f}  masked-token accuracy {r.accuracy:.4f}  ({r.seconds:.0f} s)")


if __name__ == "__main__":
    main()
