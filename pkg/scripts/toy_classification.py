#!/usr/bin/env python3
"""Scaled-down classification experiment: spheres vs cubes at r=24.

Trains the reduced spec on a generated corpus and reports when training
accuracy first reaches 100%.
"""

import argparse
import tempfile
import time
from pathlib import Path

from sparsevox.dataset import scan_corpus
from sparsevox.network import default_spec
from sparsevox.synthetic import write_toy_corpus
from sparsevox.trainer import TrainConfig, train_classification


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--resolution", type=int, default=24)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--out", default=None, help="checkpoint path")
    args = ap.parse_args()

    root = Path(tempfile.mkdtemp(prefix="toy_classify_"))
    write_toy_corpus(root, classes=("sphere", "cube"), n_train=10, n_test=3,
                     seed=7)
    corpus = scan_corpus(root)
    train = corpus.subset(corpus.split_indices("train"))
    spec = default_spec(n_classes=2, input_spatial=30,
                        linear_channels=(16, 24, 32, 48))
    cfg = TrainConfig(task="classify", epochs=args.epochs, batch_size=45,
                      resolution=args.resolution, pad_to=30, augment=False,
                      seed=args.seed, val_fraction=0.1, val_interval=10)
    t0 = time.time()
    result = train_classification(train, spec, cfg, ckpt_path=args.out)
    accs = [(r["epoch"], r["acc"]) for r in result.history
            if r.get("split") == "train"]
    first = next((e for e, a in accs if a == 1.0), None)
    print(f"trained {args.epochs} epochs in {time.time() - t0:.0f}s")
    print(f"first 100% train-accuracy epoch: {first}")
    print(f"final train accuracy: {accs[-1][1]:.3f}")


if __name__ == "__main__":
    main()
