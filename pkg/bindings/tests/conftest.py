import subprocess
import sys

import pytest

from sparsevox.synthetic import (cube_mesh, pyramid_mesh, sphere_mesh,
                                 write_off)

FIXTURE_BUILDERS = [
    lambda: sphere_mesh(radius=0.5, rings=10, segments=14),
    lambda: sphere_mesh(radius=0.5, rings=12, segments=18,
                        aspect=(1.0, 0.8, 0.6)),
    lambda: sphere_mesh(radius=0.5, rings=8, segments=12,
                        aspect=(0.7, 1.0, 0.9)),
    lambda: cube_mesh(half=0.5),
    lambda: cube_mesh(half=0.5, aspect=(1.0, 0.6, 0.8)),
    lambda: cube_mesh(half=0.5, aspect=(0.5, 1.0, 0.7)),
    lambda: pyramid_mesh(half=0.5, height=1.0),
    lambda: pyramid_mesh(half=0.5, height=0.7, aspect=(1.0, 0.8, 1.0)),
    lambda: pyramid_mesh(half=0.4, height=1.2, aspect=(0.9, 1.0, 0.85)),
    lambda: sphere_mesh(radius=0.5, rings=14, segments=10,
                        aspect=(0.85, 0.95, 1.0)),
]


@pytest.fixture(scope="session")
def fixture_meshes(tmp_path_factory):
    """Ten OFF files in a train/test corpus layout (5 test, 5 train)."""
    root = tmp_path_factory.mktemp("fixtures")
    paths = []
    for i, builder in enumerate(FIXTURE_BUILDERS):
        cls = ("shape_a", "shape_b")[i % 2]
        split = "test" if i < 5 else "train"
        d = root / cls / split
        d.mkdir(parents=True, exist_ok=True)
        path = d / f"mesh_{i:02d}.off"
        write_off(builder(), path)
        paths.append(path)
    return root, paths


def run_cli(*args):
    proc = subprocess.run([sys.executable, "-m", "sparsevox.cli", *args],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc.stdout
