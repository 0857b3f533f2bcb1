"""Parametric toy meshes (spheres, cubes, pyramids) for experiments and tests.

The generated corpora follow the on-disk layout the dataset module scans, so
toy end-to-end runs exercise exactly the same code paths as real data.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .voxelizer import TriangleMesh

CUBE_FACES = np.array([
    (0, 1, 2), (0, 2, 3),      # z = lo
    (4, 6, 5), (4, 7, 6),      # z = hi
    (0, 4, 5), (0, 5, 1),      # y = lo
    (3, 2, 6), (3, 6, 7),      # y = hi
    (0, 3, 7), (0, 7, 4),      # x = lo
    (1, 5, 6), (1, 6, 2),      # x = hi
], dtype=np.int32)


def cube_mesh(half=0.5, center=(0.0, 0.0, 0.0), aspect=(1.0, 1.0, 1.0)
              ) -> TriangleMesh:
    c = np.asarray(center, dtype=np.float64)
    h = half * np.asarray(aspect, dtype=np.float64)
    corners = np.array([
        (-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1),
        (-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1),
    ], dtype=np.float64)
    return TriangleMesh(c + corners * h, CUBE_FACES.copy())


def unit_cube_mesh() -> TriangleMesh:
    """The surface of [0,1]^3 as 12 triangles."""
    return cube_mesh(half=0.5, center=(0.5, 0.5, 0.5))


def sphere_mesh(radius=0.5, center=(0.0, 0.0, 0.0), rings=12, segments=18,
                aspect=(1.0, 1.0, 1.0)) -> TriangleMesh:
    """Latitude/longitude tessellation with triangulated caps."""
    c = np.asarray(center, dtype=np.float64)
    r = radius * np.asarray(aspect, dtype=np.float64)
    vertices = [c + r * np.array([0.0, 0.0, 1.0])]
    for i in range(1, rings):
        phi = np.pi * i / rings
        for j in range(segments):
            theta = 2.0 * np.pi * j / segments
            direction = np.array([np.sin(phi) * np.cos(theta),
                                  np.sin(phi) * np.sin(theta),
                                  np.cos(phi)])
            vertices.append(c + r * direction)
    vertices.append(c + r * np.array([0.0, 0.0, -1.0]))
    top, bottom = 0, len(vertices) - 1

    def ring_vertex(i, j):
        return 1 + (i - 1) * segments + (j % segments)

    faces = []
    for j in range(segments):
        faces.append((top, ring_vertex(1, j), ring_vertex(1, j + 1)))
        faces.append((bottom, ring_vertex(rings - 1, j + 1),
                      ring_vertex(rings - 1, j)))
    for i in range(1, rings - 1):
        for j in range(segments):
            a = ring_vertex(i, j)
            b = ring_vertex(i, j + 1)
            d = ring_vertex(i + 1, j)
            e = ring_vertex(i + 1, j + 1)
            faces.append((a, e, b))
            faces.append((a, d, e))
    return TriangleMesh(np.array(vertices), np.array(faces, dtype=np.int32))


def pyramid_mesh(half=0.5, height=1.0, center=(0.0, 0.0, 0.0),
                 aspect=(1.0, 1.0, 1.0)) -> TriangleMesh:
    """Square pyramid: four sides plus a triangulated base."""
    c = np.asarray(center, dtype=np.float64)
    a = np.asarray(aspect, dtype=np.float64)
    base = np.array([(-half, -half, 0), (half, -half, 0),
                     (half, half, 0), (-half, half, 0)], dtype=np.float64)
    apex = np.array([0.0, 0.0, height])
    vertices = np.vstack([base, apex[None, :]]) * a + c
    faces = np.array([(0, 2, 1), (0, 3, 2),
                      (0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)],
                     dtype=np.int32)
    return TriangleMesh(vertices, faces)


def write_off(mesh: TriangleMesh, path) -> None:
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.num_vertices} {mesh.num_faces} 0\n")
        for v in mesh.vertices:
            fh.write(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


def random_class_mesh(kind: str, rng: np.random.Generator) -> TriangleMesh:
    """One randomized instance of a shape class; aspect survives normalization."""
    aspect = rng.uniform(0.6, 1.0, size=3)
    if kind == "sphere":
        rings = int(rng.integers(10, 16))
        segments = int(rng.integers(14, 22))
        return sphere_mesh(radius=0.5, rings=rings, segments=segments,
                           aspect=aspect)
    if kind == "cube":
        return cube_mesh(half=0.5, aspect=aspect)
    if kind == "pyramid":
        height = float(rng.uniform(0.8, 1.2))
        return pyramid_mesh(half=0.5, height=height, aspect=aspect)
    raise ValueError(f"unknown toy class {kind!r}")


def write_toy_corpus(root, classes=("sphere", "cube", "pyramid"),
                     n_train=20, n_test=5, seed=0) -> Path:
    """ModelNet-style directory tree of randomized toy shapes."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for kind in classes:
        for split, count in (("train", n_train), ("test", n_test)):
            d = root / kind / split
            d.mkdir(parents=True, exist_ok=True)
            for i in range(count):
                mesh = random_class_mesh(kind, rng)
                write_off(mesh, d / f"{kind}_{split}_{i:04d}.off")
    return root
