"""Four-class scripting surface over the sparsevox engine.

The bindings are a thin veneer: every result is produced by the engine
itself, so numbers obtained here are identical to driving the engine (or its
CLI) directly with the same seed and inputs.
"""

import sparsevox as _engine

from ._classes import Off3DPicture, SparseBatch, SparseDataset, SparseNetwork

__version__ = _engine.__version__

__all__ = ["SparseNetwork", "SparseDataset", "SparseBatch", "Off3DPicture"]
