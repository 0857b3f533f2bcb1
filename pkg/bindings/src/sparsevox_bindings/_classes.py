"""The four bound classes: network, dataset, batch view, and OFF wrapper."""

from __future__ import annotations

import numpy as np

from sparsevox.dataset import (BatchPlan, VoxelCache, load_manifest,
                               make_batches, scan_corpus)
from sparsevox.grid import SparseGrid, merge_batch, save_svox
from sparsevox.layers import LinearLeakyReLU
from sparsevox.network import (LinearHead, Network, build, default_spec,
                               load_checkpoint, save_checkpoint)
from sparsevox.voxelizer import RenderConfig, load_off, normalize, voxelize

DEFAULT_PAD = 126


class Off3DPicture:
    """OFF mesh wrapper that voxelizes samples for SparseNetwork."""

    def __init__(self, path):
        self.path = str(path)
        self._mesh = normalize(load_off(path))

    @property
    def vertices(self) -> np.ndarray:
        return self._mesh.vertices

    @property
    def faces(self) -> np.ndarray:
        return self._mesh.faces

    def voxelize(self, render_size: int, pad: int | None = None) -> np.ndarray:
        """(n, 3) int32 active-site coordinates in the padded field."""
        grid = self.voxelize_grid(render_size, pad)
        return grid.coords[:, 1:].copy()

    def voxelize_grid(self, render_size: int, pad: int | None = None
                      ) -> SparseGrid:
        cfg = RenderConfig(render_size, pad if pad is not None else
                           max(render_size, DEFAULT_PAD))
        return voxelize(self._mesh, cfg)

    def write_svox(self, out_path, render_size: int,
                   pad: int | None = None) -> None:
        """Serialize the voxelization in the engine's geometry-only format."""
        save_svox(self.voxelize_grid(render_size, pad), out_path,
                  geometry_only=True)


class SparseDataset:
    """Labeled sample container over a corpus directory or CSV manifest."""

    def __init__(self, root=None, manifest=None, split: str | None = None):
        if (root is None) == (manifest is None):
            raise ValueError("provide exactly one of root or manifest")
        corpus = scan_corpus(root) if root is not None else load_manifest(manifest)
        if split is not None:
            corpus = corpus.subset(corpus.split_indices(split))
        self._corpus = corpus

    def __len__(self) -> int:
        return len(self._corpus)

    @property
    def classes(self) -> list[str]:
        return list(self._corpus.class_names)

    def path(self, index: int) -> str:
        return self._corpus.samples[index].path

    def label(self, index: int) -> int:
        return self._corpus.samples[index].label

    def __getitem__(self, index: int) -> tuple[str, int]:
        s = self._corpus.samples[index]
        return s.path, s.label

    def batches(self, batch_size: int, render_size: int,
                pad: int = DEFAULT_PAD, seed: int = 0, epoch: int = 0,
                augment: bool = False, jitter: int = 2):
        """Iterate SparseBatch views over one epoch-shuffled pass."""
        cfg = RenderConfig(render_size, pad,
                           translation_jitter=jitter if augment else 0)
        cache = VoxelCache(self._corpus, cfg)
        plan = BatchPlan(batch_size, seed=seed, epoch=epoch)
        for grid, labels, indices in make_batches(self._corpus, plan, cache,
                                                  augment_samples=augment):
            yield SparseBatch(grid, labels, indices)


class SparseBatch:
    """Read-only view of one packed mini-batch."""

    def __init__(self, grid: SparseGrid, labels: np.ndarray, indices):
        self._grid = grid
        self._labels = np.asarray(labels)
        self._indices = list(indices)

    @property
    def grid(self) -> SparseGrid:
        return self._grid

    @property
    def labels(self) -> np.ndarray:
        return self._labels.copy()

    @property
    def indices(self) -> list[int]:
        return list(self._indices)

    def __len__(self) -> int:
        return len(self._indices)


class SparseNetwork:
    """Network wrapper: structure, weights, activations, forward/backward."""

    def __init__(self, input_spatial: int = DEFAULT_PAD,
                 n_classes: int | None = None, channels=None, seed: int = 0,
                 _net: Network | None = None):
        if _net is not None:
            self._net = _net
        else:
            spec = default_spec(n_classes=n_classes,
                                input_spatial=input_spatial,
                                linear_channels=channels)
            self._net = build(spec, seed=seed)

    @classmethod
    def from_checkpoint(cls, path) -> "SparseNetwork":
        net, _ = load_checkpoint(path)
        return cls(_net=net)

    def save(self, path, meta: dict | None = None) -> None:
        save_checkpoint(self._net, path, meta=meta)

    # -- structure and weights --

    @property
    def input_spatial(self) -> int:
        return self._net.spec.input.spatial

    @property
    def num_rows(self) -> int:
        return len(self._net.rows)

    @property
    def embedding_row(self) -> int:
        return self._net.spec.embedding_row

    def learned_rows(self) -> list[int]:
        """1-based row indices that carry weights."""
        return [i for i, row in enumerate(self._net.rows, start=1)
                if isinstance(row, (LinearLeakyReLU, LinearHead))]

    def get_weights(self, row: int) -> tuple[np.ndarray, np.ndarray]:
        layer = self._learned(row)
        return layer.weight.copy(), layer.bias.copy()

    def set_weights(self, row: int, weight, bias) -> None:
        layer = self._learned(row)
        layer.weight[...] = np.asarray(weight, dtype=layer.weight.dtype)
        layer.bias[...] = np.asarray(bias, dtype=layer.bias.dtype)

    def _learned(self, row: int):
        if not 1 <= row <= len(self._net.rows):
            raise IndexError(f"row {row} out of range 1..{len(self._net.rows)}")
        layer = self._net.rows[row - 1]
        if not isinstance(layer, (LinearLeakyReLU, LinearHead)):
            raise IndexError(f"row {row} has no learned parameters")
        return layer

    # -- execution --

    @staticmethod
    def _as_grid(batch) -> SparseGrid:
        if isinstance(batch, SparseBatch):
            return batch.grid
        if isinstance(batch, SparseGrid):
            return batch
        if isinstance(batch, Off3DPicture):
            raise TypeError("voxelize the picture first: "
                            "picture.voxelize_grid(render_size)")
        if isinstance(batch, (list, tuple)):
            return merge_batch([SparseNetwork._as_grid(b) for b in batch])
        raise TypeError(f"cannot forward {type(batch).__name__}")

    def forward(self, batch, upto_row: int | None = None):
        """Run the stack; returns the output grid (or logits after a head)."""
        return self._net.forward(self._as_grid(batch), upto_row=upto_row)

    def embed(self, batch) -> np.ndarray:
        """One embedding vector per sample (the last non-head row's output)."""
        return self._net.embed(self._as_grid(batch))

    def layer_activations(self, layer_index: int, batch=None) -> list:
        """Per-sample activations of a row: a list of (coords, features).

        Rows at spatial size 1 yield one feature row per sample (the layer-17
        entry is the embedding); samples with no active sites yield an empty
        coordinate list and a zero feature row.  Runs forward when a batch is
        given, otherwise reads the cache of the previous forward.
        """
        if batch is not None:
            self._net.forward(self._as_grid(batch),
                              upto_row=max(layer_index, 1))
        if not 0 <= layer_index <= self.num_rows:
            raise IndexError(
                f"layer index {layer_index} out of range 0..{self.num_rows}")
        grid = self._net.activation(layer_index)
        if isinstance(grid, np.ndarray):          # logits after a head row
            empty = np.zeros((0, 3), dtype=np.int32)
            return [(empty, grid[i].copy()) for i in range(grid.shape[0])]
        out = []
        coords = grid.coords
        feats = np.asarray(grid.features)
        for sample in range(grid.num_samples):
            mask = coords[:, 0] == sample
            sample_coords = coords[mask][:, 1:].copy()
            sample_feats = feats[mask].copy()
            if grid.spatial_size == 1:
                vec = (sample_feats[0] if sample_feats.shape[0]
                       else np.zeros(grid.channels, dtype=feats.dtype))
                out.append((sample_coords, vec))
            else:
                out.append((sample_coords, sample_feats))
        return out

    def backward(self, grad_per_sample: np.ndarray) -> list[np.ndarray]:
        """Backpropagate embedding gradients; returns parameter gradients."""
        self._net.zero_grad()
        self._net.backward_from_embedding(np.asarray(grad_per_sample))
        return [g.copy() for g in self._net.gradients()]
