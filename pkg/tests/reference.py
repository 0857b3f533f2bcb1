"""Independent reference implementations used as test oracles.

Everything here is deliberately written with plain loops and a different code
structure from the library: the scalar separating-axis test, a cell-by-cell
voxelizer, a dense zero-padded network reference, and brute-force retrieval
metrics.  Oracles stay independent of the code paths they check.
"""

from __future__ import annotations

import numpy as np


# -- scalar separating-axis test -------------------------------------------

def sat_triangle_box(tri, lo, hi) -> bool:
    """True when triangle and axis-aligned box [lo, hi] intersect (touch counts)."""
    tri = [np.asarray(v, dtype=np.float64) for v in tri]
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    center = (lo + hi) / 2.0
    ext = (hi - lo) / 2.0
    v = [p - center for p in tri]

    edges = [v[1] - v[0], v[2] - v[1], v[0] - v[2]]
    axes = []
    for k in range(3):
        unit = np.zeros(3)
        unit[k] = 1.0
        axes.append(unit)
    axes.append(np.cross(edges[0], edges[1]))
    for e in edges:
        for k in range(3):
            unit = np.zeros(3)
            unit[k] = 1.0
            axes.append(np.cross(e, unit))

    for axis in axes:
        r = ext[0] * abs(axis[0]) + ext[1] * abs(axis[1]) + ext[2] * abs(axis[2])
        p = [float(np.dot(w, axis)) for w in v]
        if min(p) > r or max(p) < -r:
            return False
    return True


def brute_voxelize_cells(mesh, render_size: int) -> set[tuple[int, int, int]]:
    """All cells of the render_size^3 tiling of [0,1]^3 hit by any triangle."""
    tris = mesh.triangles()
    cells = set()
    step = 1.0 / render_size
    for i in range(render_size):
        for j in range(render_size):
            for k in range(render_size):
                lo = np.array([i, j, k]) * step
                hi = lo + step
                for tri in tris:
                    if sat_triangle_box(tri, lo, hi):
                        cells.add((i, j, k))
                        break
    return cells


# -- dense network reference --------------------------------------------------

def dense_from_grid(grid):
    """(B, S, S, S, C) zero-padded tensor plus the (B, S, S, S) active mask."""
    s = grid.spatial_size
    b = grid.num_samples
    dense = np.zeros((b, s, s, s, grid.channels), dtype=np.float64)
    mask = np.zeros((b, s, s, s), dtype=bool)
    coords = grid.coords
    feats = grid.features
    for row in range(coords.shape[0]):
        smp, x, y, z = (int(v) for v in coords[row])
        dense[smp, x, y, z] = feats[row]
        mask[smp, x, y, z] = True
    return dense, mask


def dense_gather(dense, mask, f: int, s: int):
    """Window concatenation in lexicographic offset order, zeros off-support."""
    b, size = dense.shape[0], dense.shape[1]
    c = dense.shape[4]
    out_size = (size - f) // s + 1
    out = np.zeros((b, out_size, out_size, out_size, c * f ** 3))
    out_mask = np.zeros((b, out_size, out_size, out_size), dtype=bool)
    for smp in range(b):
        for u in range(out_size):
            for v in range(out_size):
                for w in range(out_size):
                    slot = 0
                    any_active = False
                    for ox in range(f):
                        for oy in range(f):
                            for oz in range(f):
                                x, y, z = s * u + ox, s * v + oy, s * w + oz
                                if mask[smp, x, y, z]:
                                    out[smp, u, v, w, slot:slot + c] = \
                                        dense[smp, x, y, z]
                                    any_active = True
                                slot += c
                    out_mask[smp, u, v, w] = any_active
    return out, out_mask


def dense_linear_lrelu(dense, weight, bias, alpha: float):
    pre = dense @ weight + bias
    return np.where(pre >= 0, pre, alpha * pre)


def dense_maxpool_active(dense, mask, f: int, s: int):
    """Max over active cells only (-inf padding restricted to active coverage)."""
    b, size = dense.shape[0], dense.shape[1]
    c = dense.shape[4]
    out_size = (size - f) // s + 1
    out = np.full((b, out_size, out_size, out_size, c), -np.inf)
    out_mask = np.zeros((b, out_size, out_size, out_size), dtype=bool)
    for smp in range(b):
        for u in range(out_size):
            for v in range(out_size):
                for w in range(out_size):
                    for ox in range(f):
                        for oy in range(f):
                            for oz in range(f):
                                x, y, z = s * u + ox, s * v + oy, s * w + oz
                                if mask[smp, x, y, z]:
                                    out[smp, u, v, w] = np.maximum(
                                        out[smp, u, v, w], dense[smp, x, y, z])
                                    out_mask[smp, u, v, w] = True
    return out, out_mask


def grid_to_dict(grid) -> dict:
    """{(sample, x, y, z): feature vector} for order-insensitive comparison."""
    coords = grid.coords
    feats = grid.features
    return {tuple(int(v) for v in coords[i]): np.array(feats[i], dtype=np.float64)
            for i in range(coords.shape[0])}


# -- finite differences ---------------------------------------------------------

def central_difference(fn, array: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar fn w.r.t. every entry of array."""
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.ravel()
    flat_g = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = fn()
        flat[i] = orig - eps
        f_minus = fn()
        flat[i] = orig
        flat_g[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def assert_close_rel(actual: np.ndarray, expected: np.ndarray,
                     rtol: float, atol: float = 1e-6):
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(actual), np.abs(expected)), atol)
    rel = np.abs(actual - expected) / denom
    worst = float(rel.max()) if rel.size else 0.0
    assert worst <= rtol, f"worst relative error {worst:.3e} > {rtol:.1e}"


# -- retrieval metric oracles -----------------------------------------------------

RECALL_LEVELS_ORACLE = [i / 10.0 for i in range(11)]


def rank_oracle(query, vectors, metric="cosine") -> list[int]:
    dists = []
    for i in range(vectors.shape[0]):
        v = vectors[i]
        if metric == "cosine":
            d = 1.0 - float(np.dot(query, v)) / (
                float(np.linalg.norm(query)) * float(np.linalg.norm(v)))
        else:
            d = float(np.linalg.norm(np.asarray(query) - v))
        dists.append(d)
    return sorted(range(len(dists)), key=lambda i: (dists[i], i))


def ap_oracle(ranked_labels, query_label) -> float | None:
    hits = 0
    total = sum(1 for lab in ranked_labels if lab == query_label)
    if total == 0:
        return None
    acc = 0.0
    for k, lab in enumerate(ranked_labels, start=1):
        if lab == query_label:
            hits += 1
            acc += hits / k
    return acc / total


def pr11_oracle(ranked_labels, query_label) -> list[float] | None:
    total = sum(1 for lab in ranked_labels if lab == query_label)
    if total == 0:
        return None
    precisions, recalls = [], []
    hits = 0
    for k, lab in enumerate(ranked_labels, start=1):
        if lab == query_label:
            hits += 1
        precisions.append(hits / k)
        recalls.append(hits / total)
    out = []
    for level in RECALL_LEVELS_ORACLE:
        best = 0.0
        for p, r in zip(precisions, recalls):
            if r >= level - 1e-12 and p > best:
                best = p
        out.append(best)
    return out


def evaluate_oracle(vectors, labels, query_indices, metric="cosine"):
    """Brute-force leave-query-out mAP/AUC/PR over an embedding matrix."""
    n = vectors.shape[0]
    aps = []
    curves = []
    skipped = 0
    for qi in query_indices:
        cand = [i for i in range(n) if i != qi and np.linalg.norm(vectors[i]) > 0]
        if np.linalg.norm(vectors[qi]) == 0:
            skipped += 1
            continue
        order = [cand[j] for j in rank_oracle(vectors[qi],
                                              vectors[cand], metric)]
        ranked_labels = [labels[i] for i in order]
        ap = ap_oracle(ranked_labels, labels[qi])
        if ap is None:
            skipped += 1
            continue
        aps.append(ap)
        curves.append(pr11_oracle(ranked_labels, labels[qi]))
    mean_curve = [sum(c[i] for c in curves) / len(curves) for i in range(11)]
    auc = 0.0
    for i in range(10):
        dr = RECALL_LEVELS_ORACLE[i + 1] - RECALL_LEVELS_ORACLE[i]
        auc += dr * (mean_curve[i] + mean_curve[i + 1]) / 2.0
    return {"map": sum(aps) / len(aps), "auc": auc, "curve": mean_curve,
            "aps": aps, "skipped": skipped}
