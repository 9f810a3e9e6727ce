"""Parameter counts of the shipped model presets, per parameter group."""

from __future__ import annotations

import math
from collections import Counter

from ebert.config import preset, preset_names
from ebert.model import param_shapes, parameter_count


def main() -> None:
    for name in preset_names():
        cfg = preset(name).model()
        groups = Counter()
        for key, shape in param_shapes(cfg).items():
            groups[key.split(".")[0].rstrip("0123456789")] += math.prod(shape)
        detail = "  ".join(f"{g} {n:,}" for g, n in groups.items())
        print(f"{name:<14} L={cfg.layers} A={cfg.heads} H={cfg.hidden} F={cfg.filter_size}  "
              f"total {parameter_count(cfg):,}\n{'':14} {detail}")


if __name__ == "__main__":
    main()
