"""sketchpca: sketch-based low-rank PCA in batch, distributed, and
streaming models, with exact communication and space accounting.

The package is organized by execution model rather than by estimator
classes: each protocol is a function over explicit inputs (a matrix, a
cluster of partitions, or a stream of updates) returning a result record
with the computed factors, flags, and cost accounting.
"""

from .errors import (
    InputError,
    InternalError,
    ProtocolError,
    SketchPcaError,
    StreamReplayError,
)

__all__ = [
    "InputError",
    "InternalError",
    "ProtocolError",
    "SketchPcaError",
    "StreamReplayError",
]

__version__ = "0.1.0"
