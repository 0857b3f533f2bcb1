"""Sparse voxel grids: only active sites are stored, everything else is zero.

A grid holds an ordered set of active sites (sample, x, y, z) plus one feature
row per site.  Inactive cells are implicitly the zero feature vector, so memory
and compute scale with the number of active sites, never with spatial_size^3.

Two storage modes back the same interface: a builder mode (site dict, used
while populating a grid site by site) and an array mode (the fast path the
layer kernels produce).  Conversion between them is lazy; the hash index is
only materialized when site lookups are actually requested.
"""

from __future__ import annotations

import struct
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

SVOX_MAGIC = b"SVOX"
SVOX_VERSION = 1


class Site(tuple):
    """Active cell address (sample, x, y, z). Plain tuple with named accessors."""

    __slots__ = ()

    def __new__(cls, sample, x, y, z):
        return super().__new__(cls, (int(sample), int(x), int(y), int(z)))

    @property
    def sample(self):
        return self[0]

    @property
    def x(self):
        return self[1]

    @property
    def y(self):
        return self[2]

    @property
    def z(self):
        return self[3]


class SparseGrid:
    """Set of active sites with per-site feature vectors.

    Sites keep insertion order; lookups go through a hash on (sample, x, y, z).
    Mutation (set_site) is meant for a single-owner build phase; afterwards the
    grid is treated as read-only and is safe to share.
    """

    def __init__(self, spatial_size: int, channels: int, num_samples: int = 1,
                 dtype=np.float32):
        if spatial_size < 1:
            raise ValueError(f"spatial_size must be >= 1, got {spatial_size}")
        if channels < 1:
            raise ValueError(f"channels must be >= 1, got {channels}")
        self.spatial_size = int(spatial_size)
        self.channels = int(channels)
        self.num_samples = int(num_samples)
        self.dtype = np.dtype(dtype)
        self._coords_list: list[tuple] | None = []
        self._rows: list[np.ndarray] | None = []
        self._index: dict[tuple, int] | None = {}
        self._coord_arr: np.ndarray | None = None
        self._feat_arr: np.ndarray | None = None

    # -- construction ----------------------------------------------------

    def _to_builder(self):
        if self._coords_list is None:
            self._coords_list = [tuple(int(v) for v in c) for c in self._coord_arr]
            self._rows = list(self._feat_arr)
            self._index = {c: i for i, c in enumerate(self._coords_list)}

    def _ensure_index(self) -> dict:
        if self._index is None:
            self._index = {tuple(int(v) for v in c): i
                           for i, c in enumerate(self.coords)}
        return self._index

    def set_site(self, site, feature) -> "SparseGrid":
        """Activate a site with the given feature; overwrites on repeat."""
        key = (int(site[0]), int(site[1]), int(site[2]), int(site[3]))
        sample, x, y, z = key
        if sample < 0:
            raise ValueError(f"sample index must be non-negative, got {sample}")
        s = self.spatial_size
        if not (0 <= x < s and 0 <= y < s and 0 <= z < s):
            raise ValueError(f"site {key} out of bounds for spatial_size {s}")
        vec = np.asarray(feature, dtype=self.dtype).reshape(-1)
        if vec.shape[0] != self.channels:
            raise ValueError(
                f"feature length {vec.shape[0]} != channels {self.channels}")
        self._to_builder()
        row = self._index.get(key)
        if row is None:
            self._index[key] = len(self._coords_list)
            self._coords_list.append(key)
            self._rows.append(vec)
        else:
            self._rows[row] = vec
        self._coord_arr = None
        self._feat_arr = None
        if sample >= self.num_samples:
            self.num_samples = sample + 1
        return self

    @classmethod
    def from_arrays(cls, spatial_size: int, channels: int, coords: np.ndarray,
                    features: np.ndarray, num_samples: int = 1,
                    dtype=None) -> "SparseGrid":
        """Bulk constructor from (n, 4) int coords and (n, channels) features.

        Coords must already be unique and in bounds; this is the fast path used
        by the layer kernels, which guarantee both by construction.
        """
        features = np.asarray(features)
        if dtype is None:
            dtype = features.dtype if features.dtype.kind == "f" else np.float32
        g = cls(spatial_size, channels, num_samples=num_samples, dtype=dtype)
        coords = np.asarray(coords, dtype=np.int32).reshape(-1, 4)
        features = features.astype(dtype, copy=False).reshape(-1, channels)
        if coords.shape[0] != features.shape[0]:
            raise ValueError("coords/features row count mismatch")
        g._coord_arr = coords
        g._feat_arr = features
        g._coords_list = None
        g._rows = None
        g._index = None
        if coords.shape[0] and int(coords[:, 0].max()) >= g.num_samples:
            g.num_samples = int(coords[:, 0].max()) + 1
        return g

    # -- access ----------------------------------------------------------

    @property
    def num_sites(self) -> int:
        if self._coord_arr is not None:
            return self._coord_arr.shape[0]
        return len(self._coords_list)

    def __len__(self) -> int:
        return self.num_sites

    @property
    def coords(self) -> np.ndarray:
        """(n, 4) int32 array of (sample, x, y, z), insertion order."""
        if self._coord_arr is None:
            self._coord_arr = (np.array(self._coords_list, dtype=np.int32)
                               if self._coords_list else
                               np.zeros((0, 4), dtype=np.int32))
        return self._coord_arr

    @property
    def features(self) -> np.ndarray:
        """(n, channels) feature matrix, row i belonging to coords[i]."""
        if self._feat_arr is None:
            self._feat_arr = (np.stack(self._rows).astype(self.dtype)
                              if self._rows else
                              np.zeros((0, self.channels), dtype=self.dtype))
        return self._feat_arr

    def get_site(self, site) -> np.ndarray | None:
        key = (int(site[0]), int(site[1]), int(site[2]), int(site[3]))
        row = self._ensure_index().get(key)
        if row is None:
            return None
        return self.features[row]

    def has_site(self, site) -> bool:
        key = (int(site[0]), int(site[1]), int(site[2]), int(site[3]))
        return key in self._ensure_index()

    def sites(self) -> Iterable[Site]:
        for c in self.coords:
            yield Site(*c)

    def with_features(self, features: np.ndarray) -> "SparseGrid":
        """Same site set, new feature matrix (possibly different channel count)."""
        features = np.asarray(features)
        if features.shape[0] != self.num_sites:
            raise ValueError("feature row count must match site count")
        return SparseGrid.from_arrays(self.spatial_size, features.shape[1],
                                      self.coords, features,
                                      num_samples=self.num_samples)


def new_grid(spatial_size: int, channels: int) -> SparseGrid:
    """Empty grid with zero active sites."""
    return SparseGrid(spatial_size, channels)


def sparsity(grid: SparseGrid, per_sample_volume: int) -> float:
    """Fraction of active sites relative to num_samples * per_sample_volume."""
    if per_sample_volume <= 0:
        raise ValueError("per_sample_volume must be positive")
    if grid.num_sites == 0:
        return 0.0
    return grid.num_sites / (grid.num_samples * per_sample_volume)


def merge_batch(grids: Sequence[SparseGrid]) -> SparseGrid:
    """Pack grids into one batch; sites of grids[i] get sample index i."""
    if len(grids) == 0:
        raise ValueError("cannot merge an empty list of grids")
    spatial = grids[0].spatial_size
    channels = grids[0].channels
    for g in grids:
        if g.spatial_size != spatial or g.channels != channels:
            raise ValueError("all grids must share spatial_size and channels")
    coords = []
    feats = []
    for i, g in enumerate(grids):
        c = g.coords.copy()
        c[:, 0] = i
        coords.append(c)
        feats.append(g.features)
    merged = SparseGrid.from_arrays(spatial, channels, np.concatenate(coords),
                                    np.concatenate(feats),
                                    num_samples=len(grids))
    merged.num_samples = len(grids)
    return merged


# -- .svox binary interchange --------------------------------------------
#
# Little-endian layout:
#   "SVOX" | u8 version | u32 spatial_size | u32 channels | u32 site_count |
#   site_count * (u32 sample, u16 x, u16 y, u16 z, channels * f32)
# channels == 0 marks a geometry-only file; each site has the implicit
# feature [1.0] and no feature bytes are stored.

def _record_dtype(channels: int) -> np.dtype:
    fields = [("sample", "<u4"), ("x", "<u2"), ("y", "<u2"), ("z", "<u2")]
    if channels > 0:
        fields.append(("f", "<f4", (channels,)))
    return np.dtype(fields)


def save_svox(grid: SparseGrid, path, geometry_only: bool = False) -> None:
    """Write a grid to a .svox file.

    geometry_only drops the feature payload (channels=0 convention); only valid
    for 1-channel grids whose features are all exactly [1.0], as produced by
    the voxelizer.
    """
    channels = 0 if geometry_only else grid.channels
    if geometry_only and grid.channels != 1:
        raise ValueError("geometry-only files require a 1-channel grid")
    coords = grid.coords
    if coords.shape[0]:
        if coords[:, 1:].max() >= 2 ** 16:
            raise ValueError("coordinates exceed u16 range")
    rec = np.zeros(grid.num_sites, dtype=_record_dtype(channels))
    rec["sample"] = coords[:, 0]
    rec["x"] = coords[:, 1]
    rec["y"] = coords[:, 2]
    rec["z"] = coords[:, 3]
    if channels > 0:
        rec["f"] = grid.features.astype("<f4").reshape(grid.num_sites, channels)
    header = SVOX_MAGIC + struct.pack("<BIII", SVOX_VERSION, grid.spatial_size,
                                      channels, grid.num_sites)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())


def load_svox(path) -> SparseGrid:
    """Read a .svox file; geometry-only files come back with feature [1.0]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != SVOX_MAGIC:
        raise DataError(f"{path}: not a .svox file (bad magic)")
    if len(blob) < 17:
        raise DataError(f"{path}: truncated .svox header")
    version, spatial, channels, count = struct.unpack("<BIII", blob[4:17])
    if version != SVOX_VERSION:
        raise DataError(f"{path}: unsupported .svox version {version}")
    rec_dt = _record_dtype(channels)
    expected = 17 + count * rec_dt.itemsize
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} bytes, got {len(blob)}")
    rec = np.frombuffer(blob[17:], dtype=rec_dt, count=count)
    coords = np.empty((count, 4), dtype=np.int32)
    coords[:, 0] = rec["sample"]
    coords[:, 1] = rec["x"]
    coords[:, 2] = rec["y"]
    coords[:, 3] = rec["z"]
    if channels > 0:
        feats = np.array(rec["f"], dtype=np.float32).reshape(count, channels)
        out_channels = channels
    else:
        feats = np.ones((count, 1), dtype=np.float32)
        out_channels = 1
    return SparseGrid.from_arrays(spatial, out_channels, coords, feats)
