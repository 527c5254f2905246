"""A small DAG of layer nodes with cached forward and reverse-mode backward."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers
from .layers import ShapeError


class GraphError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class LayerNode:
    name: str
    kind: str
    inputs: list[str]
    params: dict
    weights: list[np.ndarray] = field(default_factory=list)
    buffers: list[np.ndarray] = field(default_factory=list)
    shape: tuple = ()


WEIGHT_NAMES = {"conv2d": ("W", "b"), "fc": ("W", "b"), "batchnorm": ("gamma", "beta")}
BUFFER_NAMES = {"batchnorm": ("running_mean", "running_var")}

INPUT = "input"


class Graph:
    """Acyclic graph of layer nodes.

    Nodes are appended in topological order: a node may only consume nodes
    that already exist. ``outputs`` lists the nodes returned by ``forward``.
    """

    def __init__(self, input_shape, seed=0, dtype=np.float32):
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.nodes: dict[str, LayerNode] = {}
        self.outputs: list[str] = []
        self.training = False
        self._rng = np.random.default_rng(seed)
        self._cache: dict[str, object] | None = None
        self._shapes = {INPUT: self.input_shape}

    # ------------------------------------------------------------ build

    def add(self, kind, inputs, name=None, **params):
        if kind not in layers.KINDS:
            raise GraphError(f"unknown layer kind {kind!r}")
        if isinstance(inputs, str):
            inputs = [inputs]
        name = name or f"{kind}{len(self.nodes)}"
        if name in self.nodes or name == INPUT:
            raise GraphError(f"duplicate node name {name!r}")
        for src in inputs:
            if src not in self._shapes:
                raise GraphError(f"node {name!r} consumes unknown node {src!r}")
        spec = layers.KINDS[kind]
        try:
            shape = tuple(spec["shape"](params, [self._shapes[s] for s in inputs]))
        except ShapeError as exc:
            raise ShapeError(f"node {name!r} ({kind}): {exc}") from None
        node = LayerNode(name, kind, list(inputs), params, shape=shape)
        if "init" in spec:
            node.weights = spec["init"](params, self._rng, self.dtype)
        if "buffers" in spec:
            node.buffers = spec["buffers"](params, self.dtype)
        self.nodes[name] = node
        self._shapes[name] = shape
        return name

    def shape_of(self, name):
        return self._shapes[name]

    # ------------------------------------------------------- parameters

    def parameters(self):
        """Trainable tensors as ``(qualified_name, array)``, in build order."""
        out = []
        for node in self.nodes.values():
            for label, w in zip(WEIGHT_NAMES.get(node.kind, ()), node.weights):
                out.append((f"{node.name}.{label}", w))
        return out

    def buffers(self):
        out = []
        for node in self.nodes.values():
            for label, b in zip(BUFFER_NAMES.get(node.kind, ()), node.buffers):
                out.append((f"{node.name}.{label}", b))
        return out

    def state(self):
        return dict(self.parameters() + self.buffers())

    def load_state(self, tensors):
        own = self.state()
        missing = set(own) - set(tensors)
        if missing:
            raise GraphError(f"missing tensors: {sorted(missing)[:5]}")
        for key, arr in own.items():
            src = np.asarray(tensors[key])
            if src.shape != arr.shape:
                raise ShapeError(f"tensor {key!r}: expected {arr.shape}, got {src.shape}")
            arr[...] = src

    def astype(self, dtype):
        self.dtype = np.dtype(dtype)
        for node in self.nodes.values():
            node.weights = [w.astype(dtype) for w in node.weights]
            node.buffers = [b.astype(dtype) for b in node.buffers]
        return self

    # --------------------------------------------------------- forward

    def forward(self, x, keep=True, training=None):
        """Run the graph; returns the single output or a list for multi-head graphs.

        With ``keep`` the per-node caches are retained for ``backward``.
        """
        x = np.asarray(x)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"node {INPUT!r}: expected per-sample shape {self.input_shape}, got {x.shape[1:]}")
        x = x.astype(self.dtype, copy=False)
        training = self.training if training is None else training
        values = {INPUT: x}
        cache = {}
        consumers = self._consumer_counts() if not keep else None
        for node in self.nodes.values():
            spec = layers.KINDS[node.kind]
            xs = [values[s] for s in node.inputs]
            if node.kind == "batchnorm":
                out, c = spec["forward"](node.params, node.weights, xs, training, node.buffers)
            else:
                out, c = spec["forward"](node.params, node.weights, xs, training)
            if not np.isfinite(out).all():
                raise NonFiniteError(f"non-finite values produced by node {node.name!r} ({node.kind})")
            values[node.name] = out
            if keep:
                cache[node.name] = c
            else:
                for s in node.inputs:
                    consumers[s] -= 1
                    if consumers[s] == 0 and s not in self.outputs:
                        values.pop(s, None)
        if keep:
            self._cache = cache
            self._input_shape_batch = x.shape
        outs = [values[o] for o in self.outputs]
        return outs[0] if len(outs) == 1 else outs

    def predict(self, x, batch_size=64):
        """Inference-mode forward in batches without keeping caches."""
        chunks = [self.forward(x[i:i + batch_size], keep=False, training=False)
                  for i in range(0, len(x), batch_size)]
        if len(self.outputs) == 1:
            return np.concatenate(chunks)
        return [np.concatenate([c[h] for c in chunks]) for h in range(len(self.outputs))]

    def _consumer_counts(self):
        counts = {INPUT: 0}
        for node in self.nodes.values():
            counts.setdefault(node.name, 0)
            for s in node.inputs:
                counts[s] = counts.get(s, 0) + 1
        return counts

    # -------------------------------------------------------- backward

    def backward(self, seeds, input_grad=False):
        """Backpropagate from seed gradients.

        ``seeds`` is either one array (gradient of the single output) or a
        mapping ``node_name -> gradient of that node's output``. Returns a dict
        of parameter gradients keyed like ``parameters()``; with
        ``input_grad`` the gradient w.r.t. the graph input is stored under
        ``"input"``.
        """
        if self._cache is None:
            raise GraphError("backward called before forward")
        if not isinstance(seeds, dict):
            if len(self.outputs) != 1:
                raise GraphError("multi-output graph needs a dict of seed gradients")
            seeds = {self.outputs[0]: seeds}
        grads_out: dict[str, np.ndarray] = {}
        for name, g in seeds.items():
            if name not in self.nodes:
                raise GraphError(f"unknown seed node {name!r}")
            g = np.asarray(g, dtype=self.dtype)
            expect = self._batch_shape(name)
            if g.shape != expect:
                raise ShapeError(f"node {name!r}: seed gradient {g.shape} != output {expect}")
            grads_out[name] = g
        needs = self._needs_grad(set(grads_out), input_grad)
        pgrads = {}
        for node in reversed(list(self.nodes.values())):
            dout = grads_out.pop(node.name, None)
            if dout is None:
                continue
            spec = layers.KINDS[node.kind]
            need_dx = any(s in needs for s in node.inputs)
            dxs, dws = spec["backward"](node.params, node.weights, self._cache[node.name], dout, need_dx)
            for label, dw in zip(WEIGHT_NAMES.get(node.kind, ()), dws):
                pgrads[f"{node.name}.{label}"] = dw
            if need_dx:
                for src, dx in zip(node.inputs, dxs):
                    if src not in needs or dx is None:
                        continue
                    if src in grads_out:
                        grads_out[src] = grads_out[src] + dx
                    else:
                        grads_out[src] = dx
        for key, w in self.parameters():
            if key not in pgrads:
                pgrads[key] = np.zeros_like(w)
        if input_grad:
            pgrads[INPUT] = grads_out.get(INPUT, np.zeros(self._input_shape_batch, dtype=self.dtype))
        return pgrads

    def _batch_shape(self, name):
        n = self._input_shape_batch[0]
        return (n,) + self._shapes[name]

    def _needs_grad(self, seeded, input_grad):
        # a node's output gradient is needed if it has weights upstream of a seed
        needs = set()
        has_weights = {INPUT: input_grad}
        for node in self.nodes.values():
            has_weights[node.name] = bool(node.weights) or any(has_weights[s] for s in node.inputs)
        for name, flag in has_weights.items():
            if flag:
                needs.add(name)
        return needs

    # -------------------------------------------------------- analysis

    def macs_per_sample(self):
        total = 0
        for node in self.nodes.values():
            total += layers.macs(node.kind, node.params, [self._shapes[s] for s in node.inputs], node.shape)
        return total
