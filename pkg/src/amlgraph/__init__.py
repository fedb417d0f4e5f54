"""amlgraph: anti-money-laundering benchmark on the Bitcoin transaction graph.

Data ingestion and cleaning for the public labeled transaction graph,
from-scratch baseline classifiers, graph convolutional and graph attention
networks with hand-derived gradients, evaluation reports, and a CLI
(``amlgraph``) tying them together.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    NumericsError,
    ParseError,
    ShapeError,
    StructuralError,
    TrainingError,
)
