"""Windows per second for the tokenizer on a synthetic genome."""

from __future__ import annotations

import argparse
import time

from ebert.datasets import tokenize_bins
from ebert.synthetic import binding_fixture
from ebert.tokenizer import TokenizerConfig, build_vocab


def main() -> None:
    p = argparse.ArgumentParser()
    p.add_argument("--chrom-len", type=int, default=60_000)
    p.add_argument("--aux", action="store_true")
    args = p.parse_args()
    fx = binding_fixture(0, chrom_len=args.chrom_len)
    cfg = TokenizerConfig()
    t0 = time.perf_counter()
    ex, counts = tokenize_bins(fx.bins, fx.genome, fx.ideas, fx.dnase, fx.mappability, cfg, build_vocab(cfg.k),
                               with_aux=args.aux)
    secs = time.perf_counter() - t0
    print(counts.summary())
    print(f"{len(ex)} windows in {secs:.2f} s ({len(ex) / secs:,.0f} windows/s)")


if __name__ == "__main__":
    main()
