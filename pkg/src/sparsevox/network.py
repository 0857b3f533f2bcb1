"""Network assembly: layer stack, forward/backward over batches, checkpoints.

The default architecture interleaves gather convolutions (channels x8) with
learned per-site projections under Leaky ReLU and strided max pools, shrinking
the spatial chain 126 -> ... -> 1 and ending in a 192-wide embedding; an
optional classifier head maps embeddings to class logits.  Rows are numbered
like the architecture table: row 0 is the input, the embedding is row 17 of
the default stack.
"""

from __future__ import annotations

import hashlib
import logging
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .grid import SparseGrid
from .layers import (GatherConv, LinearLeakyReLU, MaxPool, init_linear_params,
                     out_spatial_size)

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"S3DC"
CHECKPOINT_VERSION = 1

DEFAULT_ALPHA = 0.33
DEFAULT_INPUT_SPATIAL = 126
DEFAULT_LINEAR_CHANNELS = (32, 64, 96, 128, 160, 192)


class CheckpointFormatError(DataError):
    """Checkpoint file is not parseable (magic, version, CRC, truncation)."""


class SpecMismatchError(DataError):
    """Checkpoint was produced by a different network spec."""


# -- layer descriptors -------------------------------------------------------

@dataclass(frozen=True)
class InputSpec:
    channels: int = 1
    spatial: int = DEFAULT_INPUT_SPATIAL


@dataclass(frozen=True)
class ConvSpec:
    f: int = 2
    s: int = 1


@dataclass(frozen=True)
class LinearSpec:
    c_out: int
    alpha: float = DEFAULT_ALPHA


@dataclass(frozen=True)
class PoolSpec:
    f: int = 3
    s: int = 2


@dataclass(frozen=True)
class HeadSpec:
    n_classes: int


@dataclass(frozen=True)
class NetworkSpec:
    input: InputSpec
    layers: tuple

    def __post_init__(self):
        self.validate()

    def validate(self):
        sp = self.input.spatial
        ch = self.input.channels
        if sp < 1 or ch < 1:
            raise ValueError("input spatial size and channels must be >= 1")
        for i, layer in enumerate(self.layers, start=1):
            if isinstance(layer, ConvSpec):
                sp = out_spatial_size(sp, layer.f, layer.s)
                ch *= layer.f ** 3
            elif isinstance(layer, PoolSpec):
                sp = out_spatial_size(sp, layer.f, layer.s)
            elif isinstance(layer, LinearSpec):
                if layer.c_out < 1:
                    raise ValueError(f"row {i}: c_out must be >= 1")
                ch = layer.c_out
            elif isinstance(layer, HeadSpec):
                if i != len(self.layers):
                    raise ValueError("classifier head must be the last row")
                if sp != 1:
                    raise ValueError(
                        f"classifier head requires spatial size 1, got {sp}")
            else:
                raise ValueError(f"row {i}: unknown layer descriptor {layer!r}")

    @property
    def has_head(self) -> bool:
        return bool(self.layers) and isinstance(self.layers[-1], HeadSpec)

    @property
    def embedding_row(self) -> int:
        """Row index of the last non-head layer (the embedding output)."""
        return len(self.layers) - (1 if self.has_head else 0)

    def spatial_chain(self) -> list[int]:
        """Input spatial size followed by the size after each conv/pool row."""
        sp = self.input.spatial
        chain = [sp]
        for layer in self.layers:
            if isinstance(layer, (ConvSpec, PoolSpec)):
                sp = out_spatial_size(sp, layer.f, layer.s)
                chain.append(sp)
        return chain

    def channel_chain(self) -> list[int]:
        """Input channels followed by the width after each conv/linear row."""
        ch = self.input.channels
        chain = [ch]
        for layer in self.layers:
            if isinstance(layer, ConvSpec):
                ch *= layer.f ** 3
                chain.append(ch)
            elif isinstance(layer, LinearSpec):
                ch = layer.c_out
                chain.append(ch)
        return chain

    def embedding_dim(self) -> int:
        ch = self.input.channels
        for layer in self.layers:
            if isinstance(layer, ConvSpec):
                ch *= layer.f ** 3
            elif isinstance(layer, LinearSpec):
                ch = layer.c_out
        return ch

    def parameter_count(self) -> int:
        total = 0
        ch = self.input.channels
        for layer in self.layers:
            if isinstance(layer, ConvSpec):
                ch *= layer.f ** 3
            elif isinstance(layer, LinearSpec):
                total += ch * layer.c_out + layer.c_out
                ch = layer.c_out
            elif isinstance(layer, HeadSpec):
                total += ch * layer.n_classes + layer.n_classes
        return total


def standard_block_count(input_spatial: int) -> int:
    """Number of conv/linear/pool blocks that take input_spatial down to 2.

    Each block halves-and-shrinks the spatial size (x -> x/2 - 1), so valid
    field sizes are 2, 6, 14, 30, 62, 126, ...  Raises for anything else.
    """
    sp = input_spatial
    blocks = 0
    while sp > 2:
        if sp % 2 != 0:
            raise ValueError(
                f"input spatial size {input_spatial} cannot reach 1 under the "
                "standard conv/pool schedule")
        sp = sp // 2 - 1
        blocks += 1
    if sp != 2:
        raise ValueError(
            f"input spatial size {input_spatial} cannot reach 1 under the "
            "standard conv/pool schedule")
    return blocks


def default_spec(n_classes: int | None = None,
                 input_spatial: int = DEFAULT_INPUT_SPATIAL,
                 linear_channels=None,
                 alpha: float = DEFAULT_ALPHA) -> NetworkSpec:
    """Conv/linear/pool blocks down to spatial 2, then a conv/linear tail.

    With the 126 field this is the standard 17-row stack; smaller valid fields
    (62, 30, 14, 6) get proportionally fewer blocks.  linear_channels must hold
    one width per block plus the embedding width.
    """
    blocks = standard_block_count(input_spatial)
    if linear_channels is None:
        linear_channels = (tuple(DEFAULT_LINEAR_CHANNELS[:blocks])
                           + (DEFAULT_LINEAR_CHANNELS[-1],))
    if len(linear_channels) != blocks + 1:
        raise ValueError(
            f"need {blocks + 1} channel widths for a {input_spatial} field, "
            f"got {len(linear_channels)}")
    rows = []
    for c_out in linear_channels[:-1]:
        rows += [ConvSpec(2, 1), LinearSpec(c_out, alpha), PoolSpec(3, 2)]
    rows += [ConvSpec(2, 1), LinearSpec(linear_channels[-1], alpha)]
    if n_classes is not None:
        rows.append(HeadSpec(n_classes))
    return NetworkSpec(InputSpec(1, input_spatial), tuple(rows))


# -- canonical spec text ------------------------------------------------------

def spec_to_text(spec: NetworkSpec) -> str:
    lines = [f"input channels={spec.input.channels} spatial={spec.input.spatial}"]
    for layer in spec.layers:
        if isinstance(layer, ConvSpec):
            lines.append(f"conv f={layer.f} s={layer.s}")
        elif isinstance(layer, LinearSpec):
            lines.append(f"linear c_out={layer.c_out} alpha={layer.alpha!r}")
        elif isinstance(layer, PoolSpec):
            lines.append(f"pool f={layer.f} s={layer.s}")
        elif isinstance(layer, HeadSpec):
            lines.append(f"head classes={layer.n_classes}")
    return "\n".join(lines) + "\n"


def spec_from_text(text: str) -> NetworkSpec:
    input_spec = None
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        kind, _, rest = line.partition(" ")
        kv = {}
        for tok in rest.split():
            key, _, val = tok.partition("=")
            kv[key] = val
        try:
            if kind == "input":
                input_spec = InputSpec(int(kv["channels"]), int(kv["spatial"]))
            elif kind == "conv":
                rows.append(ConvSpec(int(kv["f"]), int(kv["s"])))
            elif kind == "linear":
                rows.append(LinearSpec(int(kv["c_out"]), float(kv["alpha"])))
            elif kind == "pool":
                rows.append(PoolSpec(int(kv["f"]), int(kv["s"])))
            elif kind == "head":
                rows.append(HeadSpec(int(kv["classes"])))
            else:
                raise KeyError(kind)
        except (KeyError, ValueError):
            raise CheckpointFormatError(
                f"spec line {lineno}: cannot parse {line!r}") from None
    if input_spec is None:
        raise CheckpointFormatError("spec text has no input row")
    return NetworkSpec(input_spec, tuple(rows))


def spec_hash(spec: NetworkSpec) -> str:
    return hashlib.sha256(spec_to_text(spec).encode()).hexdigest()


# -- the network ---------------------------------------------------------------

class LinearHead:
    """Plain linear map from embeddings to class logits (no activation)."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = weight
        self.bias = bias
        self.grad_weight = np.zeros_like(weight)
        self.grad_bias = np.zeros_like(bias)
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.weight + self.bias

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward called before forward")
        self.grad_weight += self._x.T @ grad_out
        self.grad_bias += grad_out.sum(axis=0)
        return grad_out @ self.weight.T

    def zero_grad(self):
        self.grad_weight[...] = 0
        self.grad_bias[...] = 0


class Network:
    """Executable layer stack with cached forward state for backward."""

    def __init__(self, spec: NetworkSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.rows = []
        self.head: LinearHead | None = None
        ch = spec.input.channels
        for layer in spec.layers:
            if isinstance(layer, ConvSpec):
                self.rows.append(GatherConv(layer.f, layer.s))
                ch *= layer.f ** 3
            elif isinstance(layer, LinearSpec):
                w, b = init_linear_params(ch, layer.c_out, rng, dtype=self.dtype)
                self.rows.append(LinearLeakyReLU(w, b, layer.alpha))
                ch = layer.c_out
            elif isinstance(layer, PoolSpec):
                self.rows.append(MaxPool(layer.f, layer.s))
            elif isinstance(layer, HeadSpec):
                w, b = init_linear_params(ch, layer.n_classes, rng,
                                          dtype=self.dtype)
                self.head = LinearHead(w, b)
                self.rows.append(self.head)
        self._acts: list = []
        self._last_grid: SparseGrid | None = None
        self._num_samples: int = 0

    # -- parameter access --

    def linear_rows(self):
        return [r for r in self.rows if isinstance(r, (LinearLeakyReLU, LinearHead))]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for r in self.linear_rows():
            out += [r.weight, r.bias]
        return out

    def gradients(self) -> list[np.ndarray]:
        out = []
        for r in self.linear_rows():
            out += [r.grad_weight, r.grad_bias]
        return out

    def zero_grad(self):
        for r in self.linear_rows():
            r.zero_grad()

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def astype(self, dtype) -> "Network":
        """Copy of this network with parameters cast to dtype."""
        net = Network(self.spec, seed=self.seed, dtype=dtype)
        for mine, theirs in zip(self.linear_rows(), net.linear_rows()):
            theirs.weight[...] = mine.weight.astype(dtype)
            theirs.bias[...] = mine.bias.astype(dtype)
        return net

    # -- execution --

    def forward(self, batch: SparseGrid, upto_row: int | None = None):
        """Run rows 1..upto_row; returns the grid (or logits after a head row).

        upto_row defaults to the full stack.
        """
        if batch.spatial_size != self.spec.input.spatial:
            raise ValueError(
                f"batch spatial size {batch.spatial_size} != "
                f"{self.spec.input.spatial}")
        if batch.channels != self.spec.input.channels:
            raise ValueError(
                f"batch channels {batch.channels} != {self.spec.input.channels}")
        if upto_row is None:
            upto_row = len(self.rows)
        if not 1 <= upto_row <= len(self.rows):
            raise ValueError(f"row index {upto_row} out of range")
        self._acts = [batch]
        self._num_samples = batch.num_samples
        current = batch
        for row in self.rows[:upto_row]:
            if isinstance(row, LinearHead):
                emb = self._extract_embeddings(current)
                self._last_grid = current
                logits = row.forward(emb)
                self._acts.append(logits)
                return logits
            current = row.forward(current)
            self._acts.append(current)
        self._last_grid = current
        return current

    def _extract_embeddings(self, grid: SparseGrid) -> np.ndarray:
        if grid.spatial_size != 1:
            raise ValueError(
                f"embeddings require spatial size 1, got {grid.spatial_size}")
        out = np.zeros((self._num_samples, grid.channels), dtype=grid.features.dtype)
        coords = grid.coords
        if coords.shape[0]:
            out[coords[:, 0]] = grid.features
        empty = self._num_samples - coords.shape[0]
        if empty > 0:
            log.warning("%d sample(s) had no active sites; their embeddings "
                        "are zero vectors", empty)
        return out

    def embed(self, batch: SparseGrid, upto_row: int | None = None) -> np.ndarray:
        """One embedding vector per sample, zeros for empty samples."""
        if upto_row is None:
            upto_row = self.spec.embedding_row
        grid = self.forward(batch, upto_row=upto_row)
        return self._extract_embeddings(grid)

    def forward_logits(self, batch: SparseGrid) -> np.ndarray:
        if self.head is None:
            raise ValueError("network has no classifier head")
        return self.forward(batch)

    def activation(self, row: int):
        """Cached output of a row from the latest forward (0 = input batch)."""
        if not self._acts:
            raise RuntimeError("no forward pass has been run")
        if not 0 <= row < len(self._acts):
            raise ValueError(f"row {row} not cached (ran {len(self._acts) - 1} rows)")
        return self._acts[row]

    def backward_from_logits(self, grad_logits: np.ndarray) -> None:
        if self.head is None:
            raise ValueError("network has no classifier head")
        if not self._acts or self._last_grid is None:
            raise RuntimeError("backward called before forward")
        grad_emb = self.head.backward(grad_logits)
        self._backward_grid(grad_emb, len(self.rows) - 1)

    def backward_from_embedding(self, grad_embed: np.ndarray,
                                upto_row: int | None = None) -> None:
        if upto_row is None:
            upto_row = self.spec.embedding_row
        self._backward_grid(grad_embed, upto_row)

    def _backward_grid(self, grad_per_sample: np.ndarray, upto_row: int) -> None:
        """Scatter per-sample gradients onto the final grid's rows, then chain."""
        grid = self._last_grid
        coords = grid.coords
        g = np.asarray(grad_per_sample)
        grad = g[coords[:, 0]] if coords.shape[0] else np.zeros(
            (0, grid.channels), dtype=g.dtype)
        for row in reversed(self.rows[:upto_row]):
            grad = row.backward(grad)

    def rule_count(self) -> int:
        """Total rule count across conv/pool rows from the latest forward."""
        return sum(r.rule_count for r in self.rows
                   if isinstance(r, (GatherConv, MaxPool)))


def build(spec: NetworkSpec, seed: int = 0, dtype=np.float32) -> Network:
    return Network(spec, seed=seed, dtype=dtype)


# -- checkpoints ---------------------------------------------------------------
#
# Little-endian layout:
#   "S3DC" | u16 version | u64 text length | spec+meta text (utf-8) |
#   u32 blob count | blobs (u64 byte length + f32 data, row-major) |
#   u32 CRC32 over everything before it
# Blob order follows the stack: weight then bias for every learned row.

def _meta_to_lines(meta: dict) -> str:
    return "".join(f"meta {k}={v}\n" for k, v in sorted(meta.items()))


def save_checkpoint(net: Network, path, meta: dict | None = None) -> None:
    meta = dict(meta or {})
    text = spec_to_text(net.spec) + _meta_to_lines(meta)
    payload = bytearray()
    payload += CHECKPOINT_MAGIC
    payload += struct.pack("<H", CHECKPOINT_VERSION)
    raw = text.encode()
    payload += struct.pack("<Q", len(raw))
    payload += raw
    blobs = []
    for row in net.linear_rows():
        blobs.append(np.ascontiguousarray(row.weight, dtype="<f4"))
        blobs.append(np.ascontiguousarray(row.bias, dtype="<f4"))
    payload += struct.pack("<I", len(blobs))
    for blob in blobs:
        data = blob.tobytes()
        payload += struct.pack("<Q", len(data))
        payload += data
    payload += struct.pack("<I", zlib.crc32(bytes(payload)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(payload))


def load_checkpoint(path, expect_spec: NetworkSpec | None = None
                    ) -> tuple[Network, dict]:
    """Rebuild a network from a checkpoint; returns (network, metadata)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint file (bad magic)")
    if len(blob) < 10 + 4:
        raise CheckpointFormatError(f"{path}: truncated checkpoint")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointFormatError(f"{path}: CRC mismatch, file is corrupted")
    pos = 4
    (version,) = struct.unpack_from("<H", blob, pos)
    pos += 2
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    (text_len,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    text = blob[pos:pos + text_len].decode()
    pos += text_len
    spec_lines = []
    meta = {}
    for line in text.splitlines():
        if line.startswith("meta "):
            key, _, val = line[5:].partition("=")
            meta[key] = val
        elif line.strip():
            spec_lines.append(line)
    spec = spec_from_text("\n".join(spec_lines))
    if expect_spec is not None and spec_hash(spec) != spec_hash(expect_spec):
        raise SpecMismatchError(
            f"{path}: checkpoint spec does not match the requested spec")
    (blob_count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    net = Network(spec, seed=int(meta.get("seed", 0)))
    params = []
    for row in net.linear_rows():
        params += [row.weight, row.bias]
    if blob_count != len(params):
        raise CheckpointFormatError(
            f"{path}: expected {len(params)} parameter blobs, found {blob_count}")
    for param in params:
        (length,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        if length != param.size * 4:
            raise CheckpointFormatError(
                f"{path}: parameter blob length {length} != {param.size * 4}")
        data = np.frombuffer(blob[pos:pos + length], dtype="<f4")
        pos += length
        param[...] = data.reshape(param.shape)
    if pos != len(blob) - 4:
        raise CheckpointFormatError(f"{path}: trailing bytes after parameters")
    return net, meta
