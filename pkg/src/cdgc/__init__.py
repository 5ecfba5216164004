"""Central-difference graph convolution for skeleton graphs.

Reference, vectorized and shift-based operators, reverse-mode gradients,
a small backbone with an SGD training loop, and synthetic skeleton data.
"""

from cdgc.errors import (
    ConfigError,
    DimensionError,
    FormatError,
    GraphError,
    NumericError,
    ParseError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DimensionError",
    "FormatError",
    "GraphError",
    "NumericError",
    "ParseError",
    "TrainingError",
]
