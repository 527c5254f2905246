"""From-scratch neural-network engine (NumPy, NHWC)."""
from .graph import INPUT, Graph, GraphError, LayerNode, NonFiniteError
from .layers import ShapeError, softmax
from .losses import cross_entropy
from .optim import SGD, TrainConfig, poly_lr, sgd_step
from .serialize import FormatError, load_tensors, save_tensors

__all__ = [
    "INPUT", "Graph", "GraphError", "LayerNode", "NonFiniteError", "ShapeError", "softmax",
    "cross_entropy", "SGD", "TrainConfig", "poly_lr", "sgd_step",
    "FormatError", "load_tensors", "save_tensors",
]
