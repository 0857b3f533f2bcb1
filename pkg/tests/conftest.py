import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sparsevox.dataset import scan_corpus
from sparsevox.synthetic import write_toy_corpus


def modelnet_root():
    """ModelNet40 directory from the environment, or None when absent."""
    root = os.environ.get("MODELNET40_DIR")
    if root and Path(root).is_dir():
        return Path(root)
    return None


requires_modelnet = pytest.mark.skipif(
    modelnet_root() is None,
    reason="set MODELNET40_DIR to run dataset-scale checks")


@pytest.fixture(scope="session")
def toy_corpus_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_corpus")
    write_toy_corpus(root, classes=("sphere", "cube", "pyramid"),
                     n_train=30, n_test=5, seed=7)
    return root


@pytest.fixture(scope="session")
def toy_corpus(toy_corpus_root):
    return scan_corpus(toy_corpus_root)


@pytest.fixture(scope="session")
def two_class_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_two_class")
    write_toy_corpus(root, classes=("sphere", "cube"),
                     n_train=10, n_test=3, seed=3)
    return root


@pytest.fixture()
def rng():
    return np.random.default_rng(20240)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = {}
    for status in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(status, []):
            if "acceptance" not in getattr(rep, "keywords", {}):
                continue
            if status != "skipped" and getattr(rep, "when", "call") != "call":
                continue
            name = rep.nodeid.split("::")[-1]
            lines[name] = status.upper()
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name in sorted(lines):
            terminalreporter.write_line(f"{name}: {lines[name]}")
