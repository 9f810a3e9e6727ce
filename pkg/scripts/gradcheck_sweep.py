"""Finite-difference gradient check over several fixture seeds.

The acceptance run uses seed 0.  Other seeds show how often a smooth
coordinate with a small gradient lands above 1e-4 from O(eps^2) truncation.

    python3 scripts/gradcheck_sweep.py [--seeds 0 1 2 ...]
"""

from __future__ import annotations

import argparse

from ebert.gradcheck import PATHS, model_gradcheck


def main() -> None:
    p = argparse.ArgumentParser()
    p.add_argument("--seeds", type=int, nargs="+", default=list(range(10)))
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--eps", type=float, default=1e-3)
    args = p.parse_args()
    print("seed  path    checked  one-sided  kinked  max_rel   worst")
    for seed in args.seeds:
        for path in PATHS:
            r = model_gradcheck(path, seed=seed, n=args.n, eps=args.eps)
            name, idx, a, num = r.worst
            print(f"{seed:>4}  {path:<6}  {r.n_checked:>7}  {r.n_one_sided:>9}  {r.n_kinked:>6}  "
                  f"{r.max_rel_error:.1e}  {name}[{idx}] analytic {a:.3e} numeric {num:.3e}")


if __name__ == "__main__":
    main()
