#!/usr/bin/env python3
"""Export wire-protocol fixtures for the external scorer adapter tests.

Writes a small trained checkpoint, an input batch, and the in-process scores
(the golden values the adapter's forward pass must reproduce within 1e-6).

    python scripts/export_adapter_fixture.py adapter/test/fixtures
"""

import argparse
import json
from pathlib import Path

import numpy as np

from dropbench import synthetic
from dropbench.autodiff import save_checkpoint
from dropbench.classifier import (ArchConfig, DatasetSplits, TrainConfig,
                                  predict_probabilities, train)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("dest", type=Path)
    ap.add_argument("--samples", type=int, default=32)
    args = ap.parse_args()
    args.dest.mkdir(parents=True, exist_ok=True)

    cfg = synthetic.SyntheticConfig(n_samples=200, T=64, block_length=16, seed=42)
    samples = synthetic.generate(cfg)
    tr, va, te = synthetic.split_indices(len(samples), seed=42)
    splits = DatasetSplits(train=[samples[i] for i in tr],
                           val=[samples[i] for i in va],
                           test=[samples[i] for i in te])
    arch = ArchConfig(conv_units=12, kernel_size=5, conv_strides=(2, 2),
                      dropout_rate=0.1, dense_units=12)
    model = train(splits, TrainConfig(epochs=12, learning_rate=0.05, seed=42,
                                      arch=arch))
    save_checkpoint(model.graph, args.dest / "checkpoint.json")

    batch = np.stack([s.values for s in splits.test[:args.samples]])
    scores = predict_probabilities(model.graph, batch)
    b, m, t = batch.shape
    (args.dest / "batch.json").write_text(json.dumps({
        "m": m, "t": t,
        "batch": batch.reshape(b, m * t).tolist(),
    }), encoding="utf-8")
    (args.dest / "expected_scores.json").write_text(
        json.dumps(scores.tolist()), encoding="utf-8")
    print(f"wrote fixtures for a {m}x{t} model, {b} samples, "
          f"test accuracy {model.test_accuracy:.3f}")


if __name__ == "__main__":
    main()
