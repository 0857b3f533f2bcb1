#!/usr/bin/env python3
"""Generate a ModelNet-style toy corpus of parametric shapes."""

import argparse

from sparsevox.synthetic import write_toy_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("root", help="output directory")
    ap.add_argument("--classes", default="sphere,cube,pyramid",
                    help="comma list from {sphere,cube,pyramid}")
    ap.add_argument("--n-train", type=int, default=30)
    ap.add_argument("--n-test", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    classes = tuple(c for c in args.classes.split(",") if c)
    write_toy_corpus(args.root, classes=classes, n_train=args.n_train,
                     n_test=args.n_test, seed=args.seed)
    print(f"wrote {len(classes)} classes x ({args.n_train} train + "
          f"{args.n_test} test) to {args.root}")


if __name__ == "__main__":
    main()
