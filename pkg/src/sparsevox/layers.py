"""Sparse layer kernels driven by rule books.

A rule book maps every output site to the active input sites that feed it, one
pair list per filter offset.  Forward and backward work is proportional to the
number of rules, never to spatial_size^3.  Within a single offset each input
row pairs with at most one output row (and vice versa), so per-offset gathers
and scatters need no duplicate handling; only cross-offset accumulation does.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .grid import SparseGrid


def out_spatial_size(in_spatial: int, f: int, s: int) -> int:
    """(in - f)/s + 1 with the divisibility check that keeps windows flush."""
    if f > in_spatial:
        raise ValueError(f"filter size {f} exceeds spatial size {in_spatial}")
    if (in_spatial - f) % s != 0:
        raise ValueError(
            f"geometry {in_spatial} with filter {f} stride {s} does not tile "
            f"exactly: ({in_spatial} - {f}) % {s} != 0")
    return (in_spatial - f) // s + 1


def filter_offsets(f: int) -> list[tuple[int, int, int]]:
    """Canonical offset order: lexicographic over (ox, oy, oz)."""
    return list(itertools.product(range(f), repeat=3))


@dataclass
class RuleBook:
    """Per-offset (input_row, output_row) pairs for one layer geometry.

    rules[i] is a pair of equally long int arrays; out_coords lists the output
    sites (sample, u, v, w) sorted lexicographically.
    """
    filter_size: int
    stride: int
    in_spatial: int
    out_spatial: int
    num_in_sites: int
    out_coords: np.ndarray
    rules: list[tuple[np.ndarray, np.ndarray]] = field(repr=False)

    @property
    def num_out_sites(self) -> int:
        return self.out_coords.shape[0]

    @property
    def rule_count(self) -> int:
        return sum(len(ri) for ri, _ in self.rules)


def build_rulebook(grid: SparseGrid, f: int, s: int) -> RuleBook:
    """Enumerate output sites and their contributing input rows.

    An output site (sample, u, v, w) exists iff any input site of the same
    sample lies inside the window [s*u, s*u + f)^3; offset o pairs the input at
    (s*u + o) with it.
    """
    out_sp = out_spatial_size(grid.spatial_size, f, s)
    coords = grid.coords
    n = coords.shape[0]
    offsets = filter_offsets(f)

    if n == 0:
        return RuleBook(f, s, grid.spatial_size, out_sp, 0,
                        np.zeros((0, 4), dtype=np.int32),
                        [(np.zeros(0, np.int64), np.zeros(0, np.int64))
                         for _ in offsets])

    per_offset_rows: list[np.ndarray] = []
    per_offset_keys: list[np.ndarray] = []
    samples = coords[:, 0].astype(np.int64)
    xyz = coords[:, 1:].astype(np.int64)
    for off in offsets:
        t = xyz - np.asarray(off, dtype=np.int64)
        q, rem = np.divmod(t, s)
        ok = ((rem == 0) & (q >= 0) & (q < out_sp)).all(axis=1)
        rows = np.flatnonzero(ok)
        qok = q[rows]
        keys = ((samples[rows] * out_sp + qok[:, 0]) * out_sp
                + qok[:, 1]) * out_sp + qok[:, 2]
        per_offset_rows.append(rows)
        per_offset_keys.append(keys)

    all_keys = np.concatenate(per_offset_keys)
    uniq_keys = np.unique(all_keys)
    out_coords = np.empty((uniq_keys.shape[0], 4), dtype=np.int32)
    k = uniq_keys
    out_coords[:, 3] = k % out_sp
    k = k // out_sp
    out_coords[:, 2] = k % out_sp
    k = k // out_sp
    out_coords[:, 1] = k % out_sp
    out_coords[:, 0] = k // out_sp

    rules = []
    for rows, keys in zip(per_offset_rows, per_offset_keys):
        out_rows = np.searchsorted(uniq_keys, keys)
        rules.append((rows.astype(np.int64), out_rows.astype(np.int64)))
    return RuleBook(f, s, grid.spatial_size, out_sp, n, out_coords, rules)


# -- gather convolution ------------------------------------------------------

def conv_gather_forward(grid: SparseGrid, rb: RuleBook) -> SparseGrid:
    """Concatenate the f^3 neighborhood of every output site (channels * f^3).

    Offsets with no active input contribute zeros, matching the zero feature
    convention for inactive cells.
    """
    if rb.num_in_sites != grid.num_sites or rb.in_spatial != grid.spatial_size:
        raise ValueError("rule book was built for a different grid")
    c = grid.channels
    feats = grid.features
    out = np.zeros((rb.num_out_sites, c * len(rb.rules)), dtype=feats.dtype)
    for oi, (ri, ro) in enumerate(rb.rules):
        if len(ri):
            out[ro, oi * c:(oi + 1) * c] = feats[ri]
    return SparseGrid.from_arrays(rb.out_spatial, out.shape[1], rb.out_coords,
                                  out, num_samples=grid.num_samples,
                                  dtype=feats.dtype)


def conv_gather_backward(grad_out: np.ndarray, rb: RuleBook,
                         channels: int) -> np.ndarray:
    """Scatter-add the upstream offset segments back onto input rows."""
    if grad_out.shape[0] != rb.num_out_sites:
        raise ValueError("upstream gradient does not match the output site set")
    grad_in = np.zeros((rb.num_in_sites, channels), dtype=grad_out.dtype)
    for oi, (ri, ro) in enumerate(rb.rules):
        if len(ri):
            grad_in[ri] += grad_out[ro, oi * channels:(oi + 1) * channels]
    return grad_in


# -- learned projection with Leaky ReLU --------------------------------------

def init_linear_params(c_in: int, c_out: int, rng: np.random.Generator,
                       dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero bias."""
    bound = np.sqrt(6.0 / (c_in + c_out))
    w = rng.uniform(-bound, bound, size=(c_in, c_out)).astype(dtype)
    b = np.zeros(c_out, dtype=dtype)
    return w, b


def leaky_relu(x: np.ndarray, alpha: float) -> np.ndarray:
    return np.where(x >= 0, x, alpha * x)


def linear_leakyrelu_forward(grid: SparseGrid, weight: np.ndarray,
                             bias: np.ndarray, alpha: float
                             ) -> tuple[SparseGrid, np.ndarray]:
    """y = LReLU(x W + b) per active site; the site set is unchanged.

    Returns the output grid and the pre-activation matrix needed by backward.
    """
    if grid.channels != weight.shape[0]:
        raise ValueError(
            f"grid channels {grid.channels} != weight rows {weight.shape[0]}")
    pre = grid.features @ weight + bias
    out = leaky_relu(pre, alpha)
    return grid.with_features(out), pre


def linear_leakyrelu_backward(grad_out: np.ndarray, x: np.ndarray,
                              pre: np.ndarray, weight: np.ndarray,
                              alpha: float
                              ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_input, grad_weight, grad_bias).

    The LReLU derivative at exactly 0 is taken as 1.
    """
    if grad_out.shape != pre.shape:
        raise ValueError("upstream gradient does not match the forward cache")
    slope = np.where(pre >= 0, 1.0, alpha).astype(grad_out.dtype)
    g_pre = grad_out * slope
    grad_w = x.T @ g_pre
    grad_b = g_pre.sum(axis=0)
    grad_in = g_pre @ weight.T
    return grad_in, grad_w, grad_b


# -- max pooling --------------------------------------------------------------

def maxpool_forward(grid: SparseGrid, rb: RuleBook
                    ) -> tuple[SparseGrid, np.ndarray]:
    """Channel-wise max over the active inputs of each window.

    Inactive cells are excluded rather than treated as zero, so an all-negative
    window pools to its largest (least negative) active value.  Returns the
    output grid and the (out_site, channel) -> input-row argmax map used by
    backward; ties go to the earliest offset.
    """
    if rb.num_in_sites != grid.num_sites or rb.in_spatial != grid.spatial_size:
        raise ValueError("rule book was built for a different grid")
    c = grid.channels
    feats = grid.features
    out = np.full((rb.num_out_sites, c), -np.inf, dtype=feats.dtype)
    argmax = np.full((rb.num_out_sites, c), -1, dtype=np.int64)
    for ri, ro in rb.rules:
        if not len(ri):
            continue
        cand = feats[ri]
        cur = out[ro]
        better = cand > cur
        out[ro] = np.where(better, cand, cur)
        argmax[ro] = np.where(better, ri[:, None], argmax[ro])
    grid_out = SparseGrid.from_arrays(rb.out_spatial, c, rb.out_coords, out,
                                      num_samples=grid.num_samples,
                                      dtype=feats.dtype)
    return grid_out, argmax


def maxpool_backward(grad_out: np.ndarray, argmax: np.ndarray,
                     num_in_sites: int) -> np.ndarray:
    """Route each output gradient entry to its recorded argmax input row."""
    if grad_out.shape != argmax.shape:
        raise ValueError("upstream gradient does not match the forward cache")
    m, c = grad_out.shape
    grad_in = np.zeros((num_in_sites, c), dtype=grad_out.dtype)
    if m:
        cols = np.tile(np.arange(c), m)
        np.add.at(grad_in, (argmax.ravel(), cols), grad_out.ravel())
    return grad_in


# -- layer objects used by the network ----------------------------------------

class GatherConv:
    """Size-f stride-s neighborhood gather; output channels = in channels * f^3."""

    def __init__(self, f: int = 2, s: int = 1):
        self.f = f
        self.s = s
        self._rb: RuleBook | None = None
        self._c_in: int | None = None

    def forward(self, grid: SparseGrid) -> SparseGrid:
        self._rb = build_rulebook(grid, self.f, self.s)
        self._c_in = grid.channels
        return conv_gather_forward(grid, self._rb)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._rb is None:
            raise RuntimeError("backward called before forward")
        return conv_gather_backward(grad_out, self._rb, self._c_in)

    @property
    def rule_count(self) -> int:
        return self._rb.rule_count if self._rb is not None else 0


class LinearLeakyReLU:
    """Per-site learned projection followed by Leaky ReLU."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, alpha: float = 0.33):
        self.weight = weight
        self.bias = bias
        self.alpha = alpha
        self.grad_weight = np.zeros_like(weight)
        self.grad_bias = np.zeros_like(bias)
        self._x: np.ndarray | None = None
        self._pre: np.ndarray | None = None

    def forward(self, grid: SparseGrid) -> SparseGrid:
        self._x = grid.features
        out, self._pre = linear_leakyrelu_forward(grid, self.weight, self.bias,
                                                  self.alpha)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._pre is None:
            raise RuntimeError("backward called before forward")
        grad_in, gw, gb = linear_leakyrelu_backward(grad_out, self._x,
                                                    self._pre, self.weight,
                                                    self.alpha)
        self.grad_weight += gw
        self.grad_bias += gb
        return grad_in

    def zero_grad(self):
        self.grad_weight[...] = 0
        self.grad_bias[...] = 0


class MaxPool:
    """Size-f stride-s channel-wise max over active sites."""

    def __init__(self, f: int = 3, s: int = 2):
        self.f = f
        self.s = s
        self._rb: RuleBook | None = None
        self._argmax: np.ndarray | None = None

    def forward(self, grid: SparseGrid) -> SparseGrid:
        self._rb = build_rulebook(grid, self.f, self.s)
        out, self._argmax = maxpool_forward(grid, self._rb)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._argmax is None:
            raise RuntimeError("backward called before forward")
        return maxpool_backward(grad_out, self._argmax, self._rb.num_in_sites)

    @property
    def rule_count(self) -> int:
        return self._rb.rule_count if self._rb is not None else 0
