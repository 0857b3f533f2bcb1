"""Mesh ingestion and surface voxelization.

OFF meshes are parsed, normalized into the unit cube, and rasterized into
active voxels: a cell is active exactly when its cube intersects a triangle,
decided by the separating-axis test over the 13 candidate axes (3 box normals,
the triangle normal, 9 edge cross products).  Touching counts as intersecting,
so the test uses strict inequalities for separation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .grid import SparseGrid

_BOX_AXES = np.eye(3)


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (n, 3) float64
    faces: np.ndarray     # (m, 3) int32, fan-triangulated

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int32).reshape(-1, 3)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    def triangles(self) -> np.ndarray:
        """(m, 3, 3) vertex coordinates per face."""
        return self.vertices[self.faces]


@dataclass
class RenderConfig:
    """Voxelization geometry: render_size^3 cells centered in a pad_to^3 field.

    rotation is a deterministic pre-rotation about the vertical (z) axis;
    translation_jitter bounds the random per-axis voxel offset drawn by
    augment().
    """
    render_size: int
    pad_to: int = 126
    rotation: float = 0.0
    translation_jitter: int = 0

    def __post_init__(self):
        if self.render_size < 1:
            raise ValueError(f"render_size must be >= 1, got {self.render_size}")
        if self.render_size > self.pad_to:
            raise ValueError(
                f"render_size {self.render_size} exceeds pad_to {self.pad_to}")

    @property
    def offset(self) -> int:
        """Corner offset of the render cube inside the padded field."""
        return (self.pad_to - self.render_size) // 2


# -- OFF parsing -----------------------------------------------------------

def _significant_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def parse_off(text) -> TriangleMesh:
    """Parse OFF text into a triangle mesh.

    Accepts the counts on the line after "OFF" as well as the variant where
    they follow "OFF" on the same line (with or without a space), which some
    corpus files use.  Faces with more than 3 vertices are fan-triangulated.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    lines = _significant_lines(text)

    def next_line(what):
        try:
            return next(lines)
        except StopIteration:
            raise DataError(f"unexpected end of file while reading {what}") from None

    lineno, header = next_line("header")
    if not header.upper().startswith("OFF"):
        raise DataError(f"line {lineno}: missing OFF header")
    rest = header[3:].strip()
    if rest:
        count_line, count_lineno = rest, lineno
    else:
        count_lineno, count_line = next_line("element counts")
    parts = count_line.split()
    if len(parts) < 2:
        raise DataError(f"line {count_lineno}: expected vertex/face counts")
    try:
        n_vertices, n_faces = int(parts[0]), int(parts[1])
    except ValueError:
        raise DataError(f"line {count_lineno}: non-integer element counts") from None
    if n_vertices < 0 or n_faces < 0:
        raise DataError(f"line {count_lineno}: negative element counts")

    vertices = np.empty((n_vertices, 3), dtype=np.float64)
    for i in range(n_vertices):
        lineno, line = next_line(f"vertex {i + 1}/{n_vertices}")
        toks = line.split()
        if len(toks) < 3:
            raise DataError(f"line {lineno}: vertex needs 3 coordinates")
        try:
            vertices[i] = [float(toks[0]), float(toks[1]), float(toks[2])]
        except ValueError:
            raise DataError(f"line {lineno}: non-numeric vertex coordinate") from None

    triangles = []
    for i in range(n_faces):
        lineno, line = next_line(f"face {i + 1}/{n_faces}")
        toks = line.split()
        try:
            k = int(toks[0])
            idx = [int(t) for t in toks[1:1 + k]]
        except (ValueError, IndexError):
            raise DataError(f"line {lineno}: malformed face record") from None
        if k < 3 or len(idx) != k:
            raise DataError(f"line {lineno}: face lists {len(idx)} of {k} indices")
        for v in idx:
            if not 0 <= v < n_vertices:
                raise DataError(f"line {lineno}: face index {v} out of range")
        for j in range(1, k - 1):
            triangles.append((idx[0], idx[j], idx[j + 1]))

    faces = (np.array(triangles, dtype=np.int32) if triangles
             else np.zeros((0, 3), dtype=np.int32))
    return TriangleMesh(vertices, faces)


def load_off(path) -> TriangleMesh:
    try:
        with open(path, "rb") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None
    try:
        return parse_off(text)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


# -- geometry --------------------------------------------------------------

def normalize(mesh: TriangleMesh) -> TriangleMesh:
    """Center the mesh in [0,1]^3 with its longest bbox edge spanning 1.

    Aspect ratio is preserved; a degenerate (zero-extent) bbox is centered
    without scaling.
    """
    if mesh.num_vertices == 0:
        raise DataError("cannot normalize an empty mesh")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    extent = float((hi - lo).max())
    scale = 1.0 / extent if extent > 0 else 1.0
    center = (lo + hi) / 2.0
    vertices = (mesh.vertices - center) * scale + 0.5
    return TriangleMesh(vertices, mesh.faces.copy())


def rotate_z(mesh: TriangleMesh, angle: float,
             center=(0.5, 0.5)) -> TriangleMesh:
    """Rotate about the vertical axis through (center_x, center_y)."""
    c, s = np.cos(angle), np.sin(angle)
    v = mesh.vertices.copy()
    x = v[:, 0] - center[0]
    y = v[:, 1] - center[1]
    v[:, 0] = c * x - s * y + center[0]
    v[:, 1] = s * x + c * y + center[1]
    return TriangleMesh(v, mesh.faces.copy())


def translate(mesh: TriangleMesh, offset) -> TriangleMesh:
    return TriangleMesh(mesh.vertices + np.asarray(offset, dtype=np.float64),
                        mesh.faces.copy())


def augment(mesh: TriangleMesh, seed, cfg: RenderConfig,
            rotate: bool = True) -> TriangleMesh:
    """Random z-rotation plus integer-voxel translation jitter, seeded.

    The jitter is drawn per axis from [-translation_jitter, +translation_jitter]
    whole voxels (1/render_size in mesh units) and clamped so the bounding box
    stays inside the unit cube where possible.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = mesh
    if rotate:
        angle = rng.uniform(0.0, 2.0 * np.pi)
        out = rotate_z(out, angle)
    j = cfg.translation_jitter
    if j > 0:
        steps = rng.integers(-j, j + 1, size=3)
        offset = steps.astype(np.float64) / cfg.render_size
        lo = out.vertices.min(axis=0)
        hi = out.vertices.max(axis=0)
        for axis in range(3):
            lo_t, hi_t = -lo[axis], 1.0 - hi[axis]
            if lo_t > hi_t:
                offset[axis] = 0.0
            else:
                offset[axis] = min(max(offset[axis], lo_t), hi_t)
        out = translate(out, offset)
    return out


def _triangle_cell_hits(tri: np.ndarray, r: int) -> np.ndarray:
    """Indices (k, 3) of the cells of the r^3 unit-cube tiling hit by one triangle."""
    half = 0.5 / r
    lo = tri.min(axis=0)
    hi = tri.max(axis=0)
    # one cell of slack per side; exact acceptance is left to the SAT test
    i_lo = np.maximum(np.floor(lo * r).astype(np.int64) - 1, 0)
    i_hi = np.minimum(np.floor(hi * r).astype(np.int64) + 1, r - 1)
    if np.any(i_lo > i_hi):
        return np.zeros((0, 3), dtype=np.int64)
    ranges = [np.arange(i_lo[a], i_hi[a] + 1) for a in range(3)]
    cells = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, 3)
    centers = (cells + 0.5) / r

    e0 = tri[1] - tri[0]
    e1 = tri[2] - tri[1]
    e2 = tri[0] - tri[2]
    axes = [_BOX_AXES[0], _BOX_AXES[1], _BOX_AXES[2], np.cross(e0, e1)]
    for edge in (e0, e1, e2):
        for box_axis in _BOX_AXES:
            axes.append(np.cross(edge, box_axis))

    alive = np.ones(cells.shape[0], dtype=bool)
    for axis in axes:
        if not alive.any():
            break
        rbox = half * np.abs(axis).sum()
        p = tri @ axis                     # (3,)
        s = centers[alive] @ axis          # (k,)
        p_lo = p.min() - s
        p_hi = p.max() - s
        separated = (p_lo > rbox) | (p_hi < -rbox)
        idx = np.flatnonzero(alive)
        alive[idx[separated]] = False
    return cells[alive]


def voxelize(mesh: TriangleMesh, cfg: RenderConfig) -> SparseGrid:
    """Rasterize a normalized mesh into a sparse occupancy grid.

    The render cube tiles [0,1]^3 into render_size^3 cells and sits centered in
    the pad_to^3 field; every cell whose cube intersects a triangle becomes an
    active site with feature [1.0].  Sites come out sorted by (x, y, z).
    """
    work = mesh
    if cfg.rotation != 0.0:
        work = rotate_z(work, cfg.rotation)
    r = cfg.render_size
    hits = [_triangle_cell_hits(tri, r) for tri in work.triangles()]
    grid = SparseGrid(cfg.pad_to, 1)
    if not hits:
        return grid
    cells = np.concatenate(hits)
    if cells.shape[0] == 0:
        return grid
    keys = (cells[:, 0] * r + cells[:, 1]) * r + cells[:, 2]
    uniq = np.unique(keys)
    x, rem = np.divmod(uniq, r * r)
    y, z = np.divmod(rem, r)
    coords = np.zeros((uniq.shape[0], 4), dtype=np.int32)
    coords[:, 1] = x + cfg.offset
    coords[:, 2] = y + cfg.offset
    coords[:, 3] = z + cfg.offset
    feats = np.ones((uniq.shape[0], 1), dtype=np.float32)
    return SparseGrid.from_arrays(cfg.pad_to, 1, coords, feats)
