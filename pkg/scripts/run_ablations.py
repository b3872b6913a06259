#!/usr/bin/env python3
"""Ablation sweeps on the default setup: aggregation frequency and data fraction.

Writes runs/ablation_t/ (clustered strategy at T in {2, 5, 10, 40}) and
runs/fractions/ (clustered and fedavg_only at 100/50/10% of the training data).
"""

import sys
from dataclasses import replace
from pathlib import Path

from fedswap.harness import ablation_T, default_experiment_config, run_experiment


def main() -> int:
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("runs")
    seeds = tuple(range(10))

    cfg = default_experiment_config(seeds=seeds, out_dir=str(root / "ablation_t"))
    ablation_T(cfg, [2, 5, 10, 40])
    print((root / "ablation_t" / "ablation_t.txt").read_text(), end="")

    for fraction in (1.0, 0.5, 0.1):
        sub = replace(
            default_experiment_config(
                seeds=seeds,
                strategies=("clustered", "fedavg_only"),
                data_fraction=fraction,
            ),
            out_dir=str(root / "fractions" / f"f{fraction:g}"),
        )
        run_experiment(sub)
        print(f"\nfraction {fraction:g}:")
        print((Path(sub.out_dir) / "comparison.txt").read_text(), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
