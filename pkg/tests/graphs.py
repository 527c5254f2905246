"""Tiny float64 graphs exercising one layer kind each, for gradient checks."""
import numpy as np

from carcount.nn import INPUT, Graph


def _g(shape, seed):
    return Graph(shape, seed=seed, dtype=np.float64)


def conv_graph(seed):
    g = _g((7, 7, 2), seed)
    a = g.add("conv2d", INPUT, "c3", cin=2, cout=3, k=3, stride=1, pad=1)
    b = g.add("conv2d", a, "c3s2", cin=3, cout=2, k=3, stride=2, pad=0, bias=False)
    g.outputs = [g.add("conv2d", b, "c1", cin=2, cout=2, k=1, stride=1, pad=0)]
    return g


def batchnorm_graph(seed):
    g = _g((3, 3, 3), seed)
    g.outputs = [g.add("batchnorm", INPUT, "bn", channels=3)]
    g.training = True
    return g


def relu_graph(seed):
    g = _g((4, 4, 2), seed)
    g.outputs = [g.add("relu", INPUT, "r")]
    return g


def maxpool_graph(seed):
    g = _g((6, 6, 2), seed)
    g.outputs = [g.add("maxpool", INPUT, "mp", k=3, stride=2, pad=1)]
    return g


def avgpool_graph(seed):
    g = _g((6, 6, 2), seed)
    a = g.add("avgpool", INPUT, "ap", k=2, stride=2)
    b = g.add("avgpool", INPUT, "ap3", k=3, stride=2, pad=1)
    gap = g.add("avgpool", a, "gap", **{"global": True})
    g.outputs = [b, gap]
    return g


def concat_graph(seed):
    g = _g((4, 4, 2), seed)
    a = g.add("conv2d", INPUT, "a", cin=2, cout=2, k=1, stride=1, pad=0)
    b = g.add("conv2d", INPUT, "b", cin=2, cout=3, k=3, stride=1, pad=1)
    g.outputs = [g.add("concat", [a, b], "cat")]
    return g


def add_graph(seed):
    g = _g((4, 4, 2), seed)
    a = g.add("conv2d", INPUT, "a", cin=2, cout=2, k=3, stride=1, pad=1)
    g.outputs = [g.add("add", [a, INPUT], "sum")]
    return g


def fc_graph(seed):
    g = _g((3, 3, 2), seed)
    g.outputs = [g.add("fc", INPUT, "fc", fin=18, fout=4)]
    return g


def softmax_graph(seed):
    g = _g((3, 3, 2), seed)
    f = g.add("fc", INPUT, "fc", fin=18, fout=5)
    g.outputs = [g.add("softmax", f, "prob")]
    return g


BUILDERS = {
    "conv2d": conv_graph, "batchnorm": batchnorm_graph, "relu": relu_graph, "maxpool": maxpool_graph,
    "avgpool": avgpool_graph, "concat": concat_graph, "add": add_graph, "fc": fc_graph,
    "softmax": softmax_graph,
}


def sample_input(g, seed, n=3):
    return np.random.default_rng(seed + 1000).standard_normal((n,) + g.input_shape)
