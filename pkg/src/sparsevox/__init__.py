"""Sparse 3D convolutional network engine for voxelized shape learning."""

__version__ = "0.1.0"

from .grid import SparseGrid, Site, load_svox, merge_batch, new_grid, save_svox, sparsity
from .layers import RuleBook, build_rulebook
from .losses import Triplet, cosine_distance, softmax_nll, triplet_loss
from .network import Network, NetworkSpec, build, default_spec, load_checkpoint, save_checkpoint
from .optim import SgdState, lr_at_epoch, sgd_step
from .retrieval import EmbeddingSet, average_precision, evaluate, rank
from .voxelizer import RenderConfig, TriangleMesh, augment, load_off, normalize, parse_off, voxelize

__all__ = [
    "SparseGrid", "Site", "new_grid", "merge_batch", "sparsity", "save_svox",
    "load_svox", "RuleBook", "build_rulebook", "Triplet", "cosine_distance",
    "triplet_loss", "softmax_nll", "Network", "NetworkSpec", "build",
    "default_spec", "save_checkpoint", "load_checkpoint", "SgdState",
    "lr_at_epoch", "sgd_step", "EmbeddingSet", "rank", "average_precision",
    "evaluate", "RenderConfig", "TriangleMesh", "parse_off", "load_off",
    "normalize", "voxelize", "augment",
]
