#!/usr/bin/env python3
"""End-to-end smoke experiment: writes a small config and runs the pipeline.

Produces metrics tables, ridge-line plots and curve figures under
out/<config-hash>/ in a few minutes on one core.

    python scripts/run_smoke_experiment.py [--out DIR] [--seed N]
"""

import argparse
import sys
from pathlib import Path

from dropbench.cli import main as cli_main

CONFIG = """\
seed = {seed}

[dataset]
kind = "synthetic"
n_samples = 1000
series_length = 128
features = 4
block_length = 32

[model]
epochs = 25
learning_rate = 0.05

[corruption]
eval_samples = 120

[evaluation]
repetitions = 5

[[methods]]
name = "oracle"

[[methods]]
name = "saliency"

[[methods]]
name = "grad_x_input"

[[methods]]
name = "integrated_gradients"
ig_steps = 64

[[methods]]
name = "gradient_shap"
gs_baseline_count = 8

[[methods]]
name = "shapley_value_sampling"
ks_player_grouping = "per_segment"
segment_length = 16
svs_permutations = 8

[[methods]]
name = "kernel_shap"
ks_player_grouping = "per_segment"
segment_length = 16
ks_coalitions = 150

[[methods]]
name = "occlusion"
occlusion_window = 13

[[methods]]
name = "random_control"
"""


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg_path = Path(args.out) / "smoke_config.toml"
    cfg_path.parent.mkdir(parents=True, exist_ok=True)
    cfg_path.write_text(CONFIG.format(seed=args.seed), encoding="utf-8")
    print(f"config written to {cfg_path}")
    return cli_main(["pipeline", "--config", str(cfg_path), "--out", args.out])


if __name__ == "__main__":
    sys.exit(main())
