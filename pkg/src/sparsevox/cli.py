"""Command-line entry point.

Subcommands: voxelize, train, embed, evaluate, sweep, bench.  Flag values win
over config-file entries (key=value lines), which win over built-in defaults.
Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (BatchPlan, VoxelCache, load_manifest, make_batches,
                      scan_corpus)
from .errors import DataError, DivergenceError, UsageError
from .grid import load_svox, save_svox, sparsity
from .network import build, default_spec, load_checkpoint
from .retrieval import (evaluate, read_embeddings_csv, select_queries_per_class,
                        write_embeddings_csv, write_metrics_json, write_pr_csv)
from .trainer import TrainConfig, train
from .voxelizer import RenderConfig, load_off, normalize, voxelize

DEFAULTS = {
    "resolution": 40,
    "pad": 126,
    "epochs": 200,
    "lr": 0.002,
    "momentum": 0.99,
    "lr_decay": 0.985,
    "margin": 0.2,
    "batch": 45,
    "seed": 0,
    "threads": 1,
    "queries_per_class": 20,
    "rank_by": "cosine",
    "split": "test",
    "task": "classify",
    "augment": True,
    "jitter": 2,
    "val_fraction": 0.1,
    "val_interval": 5,
    "repeat": 3,
    "limit": 8,
}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; the contract here is exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _read_config(path) -> dict:
    values = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, val = line.partition("=")
                if not sep:
                    raise UsageError(f"{path}:{lineno}: expected key=value")
                values[key.strip().replace("-", "_")] = val.strip()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    return values


def _resolve(args, key, cast=None):
    """Flag value if given, else config-file value, else built-in default."""
    value = getattr(args, key, None)
    if value is None:
        config = getattr(args, "_config", {})
        if key in config:
            raw = config[key]
            if cast is bool:
                value = raw.lower() in ("1", "true", "yes", "on")
            else:
                value = cast(raw) if cast else raw
        else:
            value = DEFAULTS.get(key)
    return value


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=None,
                   help="root random seed (default 0)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for voxelization/evaluation (default 1)")
    p.add_argument("--config", default=None,
                   help="key=value config file; flags take precedence")


def _load_corpus(args):
    manifest = getattr(args, "manifest", None)
    if manifest:
        return load_manifest(manifest)
    if not args.data:
        raise UsageError("--data is required")
    return scan_corpus(args.data)


# -- voxelize ----------------------------------------------------------------

def _iter_off_files(root: Path):
    return sorted(p for p in root.rglob("*.off"))


def cmd_voxelize(args) -> int:
    resolution = _resolve(args, "resolution", int)
    pad = _resolve(args, "pad", int)
    try:
        cfg = RenderConfig(resolution, pad)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    src = Path(args.input)
    dst = Path(args.output)
    if src.is_dir():
        files = _iter_off_files(src)
        if not files:
            raise DataError(f"{src}: no .off files found")
        written = failed = 0
        for path in files:
            rel = path.relative_to(src).with_suffix(".svox")
            out = dst / rel
            out.parent.mkdir(parents=True, exist_ok=True)
            try:
                _voxelize_one(path, out, cfg)
                written += 1
            except DataError as exc:
                print(f"error: {exc}", file=sys.stderr)
                failed += 1
        print(f"wrote {written} files, {failed} failed")
        return 0 if written else 2
    _voxelize_one(src, dst, cfg)
    return 0


def _voxelize_one(src: Path, dst: Path, cfg: RenderConfig):
    mesh = normalize(load_off(src))
    grid = voxelize(mesh, cfg)
    save_svox(grid, dst, geometry_only=True)
    frac = sparsity(grid, cfg.render_size ** 3)
    print(f"{src}: sites={grid.num_sites} sparsity={frac:.6f}")


# -- train ---------------------------------------------------------------------

def _parse_channels(text):
    if text is None:
        return None
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise UsageError(f"bad --channels list: {text!r}") from None


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        task=_resolve(args, "task"),
        epochs=_resolve(args, "epochs", int),
        batch_size=_resolve(args, "batch", int),
        lr0=_resolve(args, "lr", float),
        momentum=_resolve(args, "momentum", float),
        lr_decay=_resolve(args, "lr_decay", float),
        margin=_resolve(args, "margin", float),
        seed=_resolve(args, "seed", int),
        resolution=_resolve(args, "resolution", int),
        pad_to=_resolve(args, "pad", int),
        augment=_resolve(args, "augment", bool),
        jitter=_resolve(args, "jitter", int),
        val_fraction=_resolve(args, "val_fraction", float),
        val_interval=_resolve(args, "val_interval", int),
        threads=_resolve(args, "threads", int),
    )


def cmd_train(args) -> int:
    cfg = _train_config(args)
    corpus = _load_corpus(args)
    train_split = corpus.subset(corpus.split_indices("train"))
    if len(train_split) == 0:
        raise DataError("corpus has no train split samples")
    if cfg.task == "triplet":
        sizes = [n for n in train_split.class_counts().values() if n > 0]
        if len(sizes) < 2:
            raise DataError("triplet training needs at least 2 classes")
    channels = _parse_channels(args.channels)
    n_classes = corpus.n_classes if cfg.task == "classify" else None
    try:
        spec = default_spec(n_classes=n_classes, input_spatial=cfg.pad_to,
                            linear_channels=channels)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    net = None
    if args.resume:
        net, meta = load_checkpoint(args.resume, expect_spec=spec)
        cfg.start_epoch = int(meta.get("epoch", -1)) + 1
        print(f"resuming at epoch {cfg.start_epoch}")
    out = Path(args.out) if args.out else None
    best = out.with_suffix(".best" + out.suffix) if out else None
    result = train(train_split, spec, cfg, ckpt_path=out, best_path=best,
                   log_path=args.log, net=net)
    print(f"done: best validation metric {result.best_metric:.4f}")
    if result.checkpoint_last:
        print(f"checkpoint: {result.checkpoint_last}")
    return 0


# -- embed -----------------------------------------------------------------------

def cmd_embed(args) -> int:
    net, meta = load_checkpoint(args.checkpoint)
    resolution = args.resolution if args.resolution is not None else int(
        meta.get("resolution", DEFAULTS["resolution"]))
    pad = net.spec.input.spatial
    corpus = _load_corpus(args)
    split = _resolve(args, "split")
    subset = corpus.subset(corpus.split_indices(split))
    if len(subset) == 0:
        raise DataError(f"corpus has no {split!r} samples")
    cache = VoxelCache(subset, RenderConfig(resolution, pad))
    plan = BatchPlan(_resolve(args, "batch", int) if hasattr(args, "batch")
                     else DEFAULTS["batch"], seed=_resolve(args, "seed", int))
    root = Path(args.data) if args.data else None
    ids, labels, rows = [], [], []
    for batch, labs, idxs in make_batches(subset, plan, cache,
                                          augment_samples=False,
                                          threads=_resolve(args, "threads", int)):
        emb = net.embed(batch)
        for row, lab, idx in zip(emb, labs, idxs):
            path = Path(subset.samples[idx].path)
            sid = path.relative_to(root).as_posix() if root else path.as_posix()
            ids.append(sid)
            labels.append(subset.class_names[int(lab)])
            rows.append(row)
    order = np.argsort(np.array(ids, dtype=object), kind="stable")
    ids = [ids[i] for i in order]
    labels = [labels[i] for i in order]
    rows = [rows[i] for i in order]
    write_embeddings_csv(args.out, ids, labels, np.array(rows))
    print(f"wrote {len(ids)} embeddings to {args.out}")
    return 0


# -- evaluate --------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    emb = read_embeddings_csv(args.embeddings)
    per_class = _resolve(args, "queries_per_class", int)
    metric = _resolve(args, "rank_by")
    if metric not in ("cosine", "l2"):
        raise UsageError(f"--rank-by must be cosine or l2, got {metric!r}")
    rng = np.random.default_rng(_resolve(args, "seed", int))
    queries = select_queries_per_class(emb.labels, per_class, rng)
    result = evaluate(emb, query_indices=queries, metric=metric)
    if args.out:
        write_metrics_json(args.out, result)
    if args.pr_curve:
        write_pr_csv(args.pr_curve, result.pr_curve)
    print(f"mAP={result.map:.4f} AUC={result.auc:.4f} "
          f"queries={result.n_queries} skipped={result.n_skipped}")
    return 0


# -- sweep -----------------------------------------------------------------------

def cmd_sweep(args) -> int:
    try:
        resolutions = [int(tok) for tok in args.resolutions.split(",") if tok]
    except ValueError:
        raise UsageError(f"bad --resolutions list: {args.resolutions!r}") from None
    if not resolutions:
        raise UsageError("--resolutions must list at least one value")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "sweep.csv"
    done = {}
    if csv_path.exists():
        for line in csv_path.read_text().splitlines()[1:]:
            if line.strip():
                r, m = line.split(",")
                done[int(r)] = float(m)
    corpus = _load_corpus(args)
    train_split = corpus.subset(corpus.split_indices("train"))
    test_split = corpus.subset(corpus.split_indices("test"))
    if len(test_split) == 0:
        raise DataError("sweep needs a test split to evaluate on")
    for resolution in resolutions:
        if resolution in done:
            print(f"resolution {resolution}: already computed "
                  f"(map={done[resolution]:.4f}), skipping")
            continue
        cfg = _train_config(args)
        cfg.resolution = resolution
        spec = default_spec(
            n_classes=corpus.n_classes if cfg.task == "classify" else None,
            input_spatial=cfg.pad_to, linear_channels=_parse_channels(args.channels))
        ckpt = out_dir / f"res{resolution}.ckpt"
        log = out_dir / f"res{resolution}.jsonl"
        train(train_split, spec, cfg, ckpt_path=ckpt, best_path=None,
              log_path=log)
        net, _ = load_checkpoint(ckpt)
        cache = VoxelCache(test_split, RenderConfig(resolution, cfg.pad_to))
        plan = BatchPlan(cfg.batch_size, seed=cfg.seed)
        ids, labels, rows = [], [], []
        for batch, labs, idxs in make_batches(test_split, plan, cache,
                                              augment_samples=False,
                                              threads=cfg.threads):
            emb = net.embed(batch)
            for row, lab, idx in zip(emb, labs, idxs):
                ids.append(test_split.samples[idx].path)
                labels.append(int(lab))
                rows.append(row)
        from .retrieval import EmbeddingSet
        result = evaluate(EmbeddingSet(ids, np.array(rows), np.array(labels)))
        done[resolution] = result.map
        with open(csv_path, "w") as fh:
            fh.write("resolution,map\n")
            for r in sorted(done):
                fh.write(f"{r},{done[r]!r}\n")
        print(f"resolution {resolution}: map={result.map:.4f}")
    return 0


# -- bench -----------------------------------------------------------------------

def cmd_bench(args) -> int:
    resolution = _resolve(args, "resolution", int)
    repeat = _resolve(args, "repeat", int)
    limit = _resolve(args, "limit", int)
    if args.checkpoint:
        net, _ = load_checkpoint(args.checkpoint)
        pad = net.spec.input.spatial
    else:
        pad = _resolve(args, "pad", int)
        try:
            net = build(default_spec(input_spatial=pad),
                        seed=_resolve(args, "seed", int))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    src = Path(args.data)
    files = _iter_off_files(src) if src.is_dir() else [src]
    files = files[:limit]
    if not files:
        raise DataError(f"{src}: no meshes to benchmark")
    cfg = RenderConfig(resolution, pad)
    grids = [voxelize(normalize(load_off(p)), cfg) for p in files]
    times = []
    rule_counts = []
    for _ in range(repeat):
        for grid in grids:
            t0 = time.perf_counter()
            net.embed(grid)
            times.append(time.perf_counter() - t0)
            rule_counts.append(net.rule_count())
    times_arr = np.array(times)
    print(f"samples={len(files)} repeat={repeat} resolution={resolution}")
    print(f"forward seconds/sample: mean={times_arr.mean():.6f} "
          f"std={times_arr.std():.6f}")
    print(f"rule count: mean={np.mean(rule_counts):.1f} "
          f"min={np.min(rule_counts)} max={np.max(rule_counts)}")
    return 0


# -- wiring ----------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="sparsevox",
                     description="Sparse voxel CNN engine for 3D shapes")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("voxelize", help="rasterize OFF meshes into .svox grids")
    p.add_argument("--input", required=True, help="OFF file or directory")
    p.add_argument("--output", required=True, help=".svox file or directory")
    p.add_argument("--resolution", type=int, default=None,
                   help="render cube edge in voxels (default 40)")
    p.add_argument("--pad", type=int, default=None,
                   help="padded field size (default 126)")
    _add_common(p)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("train", help="train a classification or triplet model")
    p.add_argument("--task", choices=("classify", "triplet"), default=None,
                   help="training regime (default classify)")
    p.add_argument("--data", default=None, help="corpus root directory")
    p.add_argument("--manifest", default=None,
                   help="CSV manifest (path,label,split) overriding --data")
    p.add_argument("--resolution", type=int, default=None,
                   help="render size (default 40)")
    p.add_argument("--pad", type=int, default=None,
                   help="input field size (default 126)")
    p.add_argument("--epochs", type=int, default=None, help="default 200")
    p.add_argument("--lr", type=float, default=None,
                   help="base learning rate (default 0.002)")
    p.add_argument("--momentum", type=float, default=None, help="default 0.99")
    p.add_argument("--lr-decay", dest="lr_decay", type=float, default=None,
                   help="per-epoch lr factor (default 0.985)")
    p.add_argument("--margin", type=float, default=None,
                   help="triplet margin (default 0.2)")
    p.add_argument("--batch", type=int, default=None,
                   help="batch size (default 45)")
    p.add_argument("--channels", default=None,
                   help="comma list of per-block linear widths")
    p.add_argument("--augment", action=argparse.BooleanOptionalAction,
                   default=None, help="rotation/jitter augmentation (default on)")
    p.add_argument("--jitter", type=int, default=None,
                   help="translation jitter bound in voxels (default 2)")
    p.add_argument("--val-fraction", dest="val_fraction", type=float,
                   default=None, help="held-out fraction of train (default 0.1)")
    p.add_argument("--val-interval", dest="val_interval", type=int,
                   default=None, help="epochs between validations (default 5)")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--out", default=None, help="checkpoint output path")
    p.add_argument("--log", default=None, help="metrics JSONL output path")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="write per-sample embeddings to CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None, help="corpus root directory")
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", choices=("train", "test"), default=None,
                   help="which split to embed (default test)")
    p.add_argument("--resolution", type=int, default=None,
                   help="render size (default: from checkpoint)")
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--out", required=True, help="embeddings CSV path")
    _add_common(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("evaluate", help="retrieval metrics from embeddings CSV")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--queries-per-class", dest="queries_per_class", type=int,
                   default=None, help="default 20")
    p.add_argument("--rank-by", dest="rank_by", choices=("cosine", "l2"),
                   default=None, help="ranking distance (default cosine)")
    p.add_argument("--out", default=None, help="metrics JSON path")
    p.add_argument("--pr-curve", dest="pr_curve", default=None,
                   help="PR curve CSV path")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train+evaluate across render resolutions")
    p.add_argument("--resolutions", required=True,
                   help="comma list, e.g. 20,30,40")
    p.add_argument("--task", choices=("classify", "triplet"), default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--pad", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--lr-decay", dest="lr_decay", type=float, default=None)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--channels", default=None)
    p.add_argument("--augment", action=argparse.BooleanOptionalAction,
                   default=None)
    p.add_argument("--jitter", type=int, default=None)
    p.add_argument("--val-fraction", dest="val_fraction", type=float,
                   default=None)
    p.add_argument("--val-interval", dest="val_interval", type=int, default=None)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="time forward passes and count rules")
    p.add_argument("--checkpoint", default=None,
                   help="trained checkpoint (default: fresh default spec)")
    p.add_argument("--data", required=True, help="OFF file or directory")
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--pad", type=int, default=None)
    p.add_argument("--repeat", type=int, default=None,
                   help="timing repetitions (default 3)")
    p.add_argument("--limit", type=int, default=None,
                   help="max meshes from a directory (default 8)")
    _add_common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args._config = (_read_config(args.config)
                        if getattr(args, "config", None) else {})
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
