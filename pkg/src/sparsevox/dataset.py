"""Corpus ingestion, batch assembly, and triplet sampling.

The on-disk layout is <root>/<class>/{train,test}/<name>.off; a CSV manifest
(path,label,split) can override it.  Batch assembly voxelizes through a
per-sample cache: the unaugmented cell set is rasterized once per resolution,
translation jitter is applied to cached cells (exact for whole-voxel shifts),
and only rotations force a re-rasterization of the mesh.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .grid import SparseGrid, merge_batch
from .losses import Triplet
from .voxelizer import RenderConfig, augment, load_off, normalize, voxelize

log = logging.getLogger(__name__)

SPLITS = ("train", "test")


@dataclass(frozen=True)
class CorpusSample:
    path: str
    label: int
    split: str


@dataclass
class Corpus:
    samples: list[CorpusSample]
    class_names: list[str]

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def split_indices(self, split: str) -> list[int]:
        return [i for i, s in enumerate(self.samples) if s.split == split]

    def subset(self, indices) -> "Corpus":
        return Corpus([self.samples[i] for i in indices], self.class_names)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def class_counts(self, split: str | None = None) -> dict[str, int]:
        counts = {name: 0 for name in self.class_names}
        for s in self.samples:
            if split is None or s.split == split:
                counts[self.class_names[s.label]] += 1
        return counts

    def by_class(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.class_names]
        for i, s in enumerate(self.samples):
            out[s.label].append(i)
        return out


def scan_corpus(root) -> Corpus:
    """Walk <root>/<class>/{train,test}/*.off into a labeled corpus."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DataError(f"{root}: no class directories found")
    class_names = [p.name for p in class_dirs]
    samples = []
    for label, cdir in enumerate(class_dirs):
        split_dirs = [cdir / s for s in SPLITS if (cdir / s).is_dir()]
        if not split_dirs:
            raise DataError(f"{cdir}: missing train/test split directories")
        for sdir in split_dirs:
            for path in sorted(sdir.glob("*.off")):
                samples.append(CorpusSample(str(path), label, sdir.name))
    if not samples:
        raise DataError(f"{root}: no .off files found")
    return Corpus(samples, class_names)


def load_manifest(path) -> Corpus:
    """CSV manifest with a path,label,split header; labels become sorted classes."""
    rows = []
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"path", "label", "split"} <= set(
                    reader.fieldnames):
                raise DataError(f"{path}: manifest needs path,label,split columns")
            for row in reader:
                rows.append((row["path"], row["label"], row["split"]))
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: empty manifest")
    class_names = sorted({label for _, label, _ in rows})
    index = {name: i for i, name in enumerate(class_names)}
    samples = [CorpusSample(p, index[label], split) for p, label, split in rows]
    return Corpus(samples, class_names)


def split_validation(corpus: Corpus, fraction: float, seed: int
                     ) -> tuple[Corpus, Corpus]:
    """Hold out a seeded, class-stratified slice of the corpus for validation."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("validation fraction must be in [0, 1)")
    rng = np.random.default_rng([seed, 0x5A11D])
    train_idx: list[int] = []
    val_idx: list[int] = []
    for members in corpus.by_class():
        if len(members) < 2 or fraction == 0.0:
            train_idx += members
            continue
        k = min(len(members) - 1, max(1, round(fraction * len(members))))
        order = rng.permutation(len(members))
        chosen = {members[j] for j in order[:k]}
        val_idx += sorted(chosen)
        train_idx += [m for m in members if m not in chosen]
    return corpus.subset(sorted(train_idx)), corpus.subset(sorted(val_idx))


@dataclass
class BatchPlan:
    batch_size: int
    seed: int = 0
    epoch: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class VoxelCache:
    """Per-sample voxelization cache bound to one corpus and render geometry.

    Unreadable meshes are skipped and logged once; they render as None.
    """

    def __init__(self, corpus: Corpus, cfg: RenderConfig):
        self.corpus = corpus
        self.cfg = cfg
        self._cells: dict[int, np.ndarray | None] = {}
        self.skipped: dict[int, str] = {}

    def _mesh(self, idx: int):
        sample = self.corpus.samples[idx]
        try:
            return normalize(load_off(sample.path))
        except DataError as exc:
            if idx not in self.skipped:
                self.skipped[idx] = str(exc)
                log.warning("skipping unreadable mesh %s: %s", sample.path, exc)
            return None

    def base_cells(self, idx: int) -> np.ndarray | None:
        """In-cube cell coordinates of the unaugmented voxelization."""
        if idx not in self._cells:
            mesh = self._mesh(idx)
            if mesh is None:
                self._cells[idx] = None
            else:
                grid = voxelize(mesh, self.cfg)
                self._cells[idx] = grid.coords[:, 1:] - self.cfg.offset
        return self._cells[idx]

    def _grid_from_cells(self, cells: np.ndarray) -> SparseGrid:
        coords = np.zeros((cells.shape[0], 4), dtype=np.int32)
        coords[:, 1:] = cells + self.cfg.offset
        feats = np.ones((cells.shape[0], 1), dtype=np.float32)
        return SparseGrid.from_arrays(self.cfg.pad_to, 1, coords, feats)

    def render(self, idx: int, rng: np.random.Generator | None = None,
               with_rotation: bool = False,
               with_jitter: bool = False) -> SparseGrid | None:
        """Voxelize sample idx, optionally augmented using draws from rng."""
        if with_rotation:
            mesh = self._mesh(idx)
            if mesh is None:
                return None
            eff = self.cfg if with_jitter else RenderConfig(
                self.cfg.render_size, self.cfg.pad_to, rotation=self.cfg.rotation)
            mesh = augment(mesh, rng, eff, rotate=True)
            return voxelize(mesh, self.cfg)
        cells = self.base_cells(idx)
        if cells is None:
            return None
        if with_jitter and self.cfg.translation_jitter > 0:
            j = self.cfg.translation_jitter
            steps = rng.integers(-j, j + 1, size=3)
            if cells.shape[0]:
                r = self.cfg.render_size
                lo = cells.min(axis=0)
                hi = cells.max(axis=0)
                steps = np.clip(steps, -lo, (r - 1) - hi)
                cells = cells + steps
        return self._grid_from_cells(cells)


def sample_rng(seed: int, epoch: int, idx: int) -> np.random.Generator:
    """Deterministic per-(epoch, sample) stream, independent of batch order."""
    return np.random.default_rng([seed, epoch, idx])


def make_batches(corpus: Corpus, plan: BatchPlan, cache: VoxelCache,
                 augment_samples: bool = True, threads: int = 1):
    """Yield (batch grid, labels, corpus indices) for one epoch-shuffled pass.

    Each sample is voxelized with fresh augmentation draws; unreadable samples
    are dropped from their batch.
    """
    order = np.random.default_rng([plan.seed, plan.epoch]).permutation(len(corpus))

    def render(idx: int):
        rng = sample_rng(plan.seed, plan.epoch, int(idx))
        return cache.render(int(idx), rng=rng, with_rotation=augment_samples,
                            with_jitter=augment_samples)

    for start in range(0, len(order), plan.batch_size):
        chunk = order[start:start + plan.batch_size]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                grids = list(pool.map(render, chunk))
        else:
            grids = [render(i) for i in chunk]
        kept = [(g, corpus.samples[int(i)].label, int(i))
                for g, i in zip(grids, chunk) if g is not None]
        if not kept:
            continue
        batch = merge_batch([g for g, _, _ in kept])
        labels = np.array([lab for _, lab, _ in kept], dtype=np.int64)
        indices = [i for _, _, i in kept]
        yield batch, labels, indices


def sample_triplet(corpus: Corpus, rng: np.random.Generator) -> Triplet:
    """Anchor class uniform over classes with >=2 samples, then uniform members.

    The (anchor, positive) pair is a uniform unordered distinct pair from the
    anchor class; the negative class is uniform over the remaining classes and
    its sample uniform within it.
    """
    by_class = corpus.by_class()
    eligible = [c for c, members in enumerate(by_class) if len(members) >= 2]
    others_exist = sum(1 for members in by_class if len(members) >= 1) >= 2
    if not eligible or not others_exist:
        raise DataError("triplet sampling needs >=2 classes and an anchor "
                        "class with >=2 samples")
    anchor_class = eligible[rng.integers(len(eligible))]
    members = by_class[anchor_class]
    pick = rng.choice(len(members), size=2, replace=False)
    a, p = members[pick[0]], members[pick[1]]
    negative_classes = [c for c, m in enumerate(by_class)
                        if c != anchor_class and len(m) >= 1]
    if not negative_classes:
        raise DataError("no negative class available")
    neg_class = negative_classes[rng.integers(len(negative_classes))]
    neg_members = by_class[neg_class]
    n = neg_members[rng.integers(len(neg_members))]
    return Triplet(a, p, n)
