"""ResCeption layers, classifier/counter network builds and the training loop.

A ResCeption layer is an Inception-style block whose 1x1 branch (and 1x1
reductions) are dropped; a 1x1 projection of the input is added to the
concatenation of the remaining branches instead::

    x --+--> conv3x3 -> bn -> relu ------+
        +--> conv5x5 -> bn -> relu ------+-- concat --(+)--> out
        +--> maxpool3 -> conv1x1 -> bn -> relu
        +--> conv1x1 -> bn (projection) -----------------^
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .nn import SGD, Graph, NonFiniteError, TrainConfig, cross_entropy, load_tensors, save_tensors

log = logging.getLogger(__name__)

AUX_WEIGHT = 0.3
GRAY = 128.0
PIXEL_SCALE = 64.0

# (3x3, 5x5, pool) branch widths per stage at scale 1, and layers per stage.
STAGE_WIDTHS = ((128, 32, 32), (208, 48, 64), (320, 128, 128))
STAGE_LAYERS = (3, 5, 3)
STEM_WIDTH = 64


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class ResCeptionSpec:
    cin: int
    c3: int
    c5: int
    cpool: int
    proj: int

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ValueError(f"{f.name} must be >= 1")
        if self.c3 + self.c5 + self.cpool != self.proj:
            raise ValueError(
                f"branch widths {self.c3}+{self.c5}+{self.cpool} != projection width {self.proj}")

    @property
    def cout(self):
        return self.proj


def build_resception_layer(graph: Graph, src: str, spec: ResCeptionSpec, prefix: str) -> str:
    """Append one ResCeption layer reading ``src``; returns the output node name."""
    cin = graph.shape_of(src)[-1]
    if cin != spec.cin:
        raise ValueError(f"{prefix}: layer expects {spec.cin} input channels, source has {cin}")

    def conv_bn_relu(inp, k, cout, tag):
        c = graph.add("conv2d", inp, f"{prefix}/{tag}", cin=graph.shape_of(inp)[-1], cout=cout,
                      k=k, stride=1, pad=k // 2, bias=False)
        b = graph.add("batchnorm", c, f"{prefix}/{tag}_bn", channels=cout)
        return graph.add("relu", b, f"{prefix}/{tag}_relu")

    b3 = conv_bn_relu(src, 3, spec.c3, "b3x3")
    b5 = conv_bn_relu(src, 5, spec.c5, "b5x5")
    pool = graph.add("maxpool", src, f"{prefix}/pool", k=3, stride=1, pad=1)
    bp = conv_bn_relu(pool, 1, spec.cpool, "bpool")
    cat = graph.add("concat", [b3, b5, bp], f"{prefix}/concat")
    proj = graph.add("conv2d", src, f"{prefix}/proj", cin=spec.cin, cout=spec.proj, k=1, stride=1, pad=0,
                     bias=False, gain=1.0)
    proj = graph.add("batchnorm", proj, f"{prefix}/proj_bn", channels=spec.proj)
    return graph.add("add", [cat, proj], f"{prefix}/out")


def branch_convs(graph: Graph, prefix: str):
    return [graph.nodes[f"{prefix}/{t}"] for t in ("b3x3", "b5x5", "bpool")]


@dataclass
class NetworkSpec:
    task: str = "count64"           # classify2 | count64
    depth: str = "standard"         # standard (11 layers) | tall (22)
    error_heads: int = 1            # 1 | 3
    input_size: int = 224
    scale: float = 0.125
    reduce: int = 4                 # input average-pool factor
    channels: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("classify2", "count64"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.depth not in ("standard", "tall"):
            raise ValueError(f"unknown depth {self.depth!r}")
        if self.error_heads not in (1, 3):
            raise ValueError("error_heads must be 1 or 3")
        if not 0 < self.scale <= 1:
            raise ValueError("scale must lie in (0, 1]")
        if self.reduce < 1 or self.input_size % self.reduce:
            raise ValueError("input_size must be divisible by reduce")

    @property
    def class_count(self):
        return 2 if self.task == "classify2" else 64

    @property
    def layer_count(self):
        return sum(STAGE_LAYERS) * (2 if self.depth == "tall" else 1)

    def to_config(self):
        return "\n".join(f"{f.name}={getattr(self, f.name)}" for f in fields(self)) + "\n"

    @classmethod
    def from_config(cls, text):
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in types:
                raise ValueError(f"bad config line: {raw!r}")
            kw[key] = {"int": int, "float": float}.get(types[key], str)(value)
        return cls(**kw)


def _w(base, scale):
    return max(1, int(round(base * scale)))


@dataclass
class Network:
    spec: NetworkSpec
    graph: Graph
    logits: list[str] = field(default_factory=list)   # main head first
    layers: list[str] = field(default_factory=list)   # ResCeption outputs
    first_conv: str = ""

    @property
    def class_count(self):
        return self.spec.class_count

    def preprocess(self, patches):
        x = np.asarray(patches)
        if x.ndim == 3:
            x = x[..., None]
        return (x.astype(np.float32) - GRAY) / PIXEL_SCALE

    def probabilities(self, patches, batch_size=64):
        """Main-head softmax for a batch of uint8 NHWC patches."""
        out = self.graph.predict(self.preprocess(patches), batch_size=batch_size)
        return out[0] if isinstance(out, list) else out

    def save(self, path):
        tensors = {f"meta:{self.spec.to_config().strip().replace(chr(10), ';')}": np.zeros(1, np.float32)}
        tensors.update(self.graph.state())
        save_tensors(path, tensors)

    @classmethod
    def load(cls, path):
        tensors = load_tensors(path)
        meta = [k for k in tensors if k.startswith("meta:")]
        if len(meta) != 1:
            raise ValueError(f"{path}: no network metadata record")
        spec = NetworkSpec.from_config(meta[0][5:].replace(";", "\n"))
        net = build_network(spec)
        net.graph.load_state({k: v for k, v in tensors.items() if not k.startswith("meta:")})
        return net


def build_network(spec: NetworkSpec, scale: float | None = None) -> Network:
    """Stem -> stacked ResCeption layers -> global average pool -> FC -> softmax.

    With three error heads, auxiliary GAP -> FC -> softmax heads are attached
    after the layers at one and two thirds of the depth.
    """
    if scale is not None:
        spec = NetworkSpec(**{**spec.__dict__, "scale": scale})
    s = spec.input_size
    g = Graph((s, s, spec.channels), seed=spec.seed)
    x = "input"
    if spec.reduce > 1:
        x = g.add("avgpool", x, "reduce", k=spec.reduce, stride=spec.reduce)
    stem = _w(STEM_WIDTH, spec.scale)
    net = Network(spec, g)
    net.first_conv = g.add("conv2d", x, "stem/conv", cin=spec.channels, cout=stem, k=3, stride=2, pad=1, bias=False)
    x = g.add("batchnorm", net.first_conv, "stem/bn", channels=stem)
    x = g.add("relu", x, "stem/relu")
    x = g.add("maxpool", x, "stem/pool", k=3, stride=2, pad=1)

    repeat = 2 if spec.depth == "tall" else 1
    for stage, (n_layers, widths) in enumerate(zip(STAGE_LAYERS, STAGE_WIDTHS)):
        if stage:
            x = g.add("maxpool", x, f"pool{stage}", k=3, stride=2, pad=1)
        c3, c5, cp = (_w(v, spec.scale) for v in widths)
        for i in range(n_layers * repeat):
            rs = ResCeptionSpec(cin=g.shape_of(x)[-1], c3=c3, c5=c5, cpool=cp, proj=c3 + c5 + cp)
            x = build_resception_layer(g, x, rs, f"rc{len(net.layers) + 1:02d}")
            net.layers.append(x)

    def head(src, tag):
        gap = g.add("avgpool", src, f"{tag}/gap", **{"global": True})
        fin = g.shape_of(gap)[0]
        fc = g.add("fc", gap, f"{tag}/fc", fin=fin, fout=spec.class_count, init_std=0.01 / math.sqrt(fin))
        return fc, g.add("softmax", fc, f"{tag}/prob")

    fc, prob = head(x, "main")
    net.logits.append(fc)
    g.outputs = [prob]
    if spec.error_heads == 3:
        n = len(net.layers)
        for tag, idx in (("aux1", n // 3 - 1), ("aux2", 2 * n // 3 - 1)):
            fc, prob = head(net.layers[idx], tag)
            net.logits.append(fc)
            g.outputs.append(prob)
    return net


def dihedral(batch, rng):
    """Random flip/transpose of square NHWC patches; label-preserving for counts."""
    out = batch
    if rng.random() < 0.5:
        out = out[:, :, ::-1]
    if rng.random() < 0.5:
        out = out[:, ::-1]
    if rng.random() < 0.5:
        out = out.transpose(0, 2, 1, 3)
    return np.ascontiguousarray(out)


def _as_arrays(data):
    if isinstance(data, tuple) and len(data) == 2 and isinstance(data[0], np.ndarray):
        return data
    xs, ys = zip(*data)
    return np.stack(xs), np.asarray(ys, dtype=np.int64)


def train(net: Network, data, cfg: TrainConfig, seed=0, augment=False, log_every=0):
    """Train in place; returns the per-iteration loss curve.

    ``data`` is ``(patches, labels)`` arrays or an iterable of ``(patch, label)``.
    Three-head networks minimise ``main + 0.3 * (aux1 + aux2)``.
    """
    X, y = _as_arrays(data)
    if len(X) == 0:
        raise ValueError("empty training set")
    if y.max() >= net.class_count:
        raise ValueError(f"label {y.max()} outside {net.class_count} classes")
    rng = np.random.default_rng(seed)
    g = net.graph
    opt = SGD(g.parameters(), cfg)
    weights = [1.0] + [AUX_WEIGHT] * (len(net.logits) - 1)
    order = rng.permutation(len(X))
    pos = 0
    curve = []
    g.training = True
    try:
        for it in range(cfg.max_iter):
            if pos + cfg.batch_size > len(order):
                order, pos = rng.permutation(len(X)), 0
            idx = order[pos:pos + cfg.batch_size]
            pos += cfg.batch_size
            xb = X[idx]
            if augment:
                xb = dihedral(xb, rng)
            try:
                outs = g.forward(net.preprocess(xb))
            except NonFiniteError as exc:
                raise TrainingDiverged(f"iteration {it}: {exc}") from None
            outs = outs if isinstance(outs, list) else [outs]
            total = 0.0
            seeds = {}
            for w, probs, node in zip(weights, outs, net.logits):
                loss, dlogits, _ = cross_entropy(probs, y[idx])
                total += w * loss
                seeds[node] = w * dlogits
            if not np.isfinite(total):
                raise TrainingDiverged(f"iteration {it}: loss is {total}")
            opt.step(g.backward(seeds), it)
            curve.append(total)
            if log_every and it % log_every == 0:
                log.info("iter %d lr %.5f loss %.4f", it, opt.cfg.base_lr * (1 - it / cfg.max_iter) ** cfg.lr_power, total)
    finally:
        g.training = False
        g._cache = None
    return curve


def accuracy(net: Network, X, y, batch_size=64):
    probs = net.probabilities(X, batch_size)
    return float((probs.argmax(axis=1) == np.asarray(y)).mean())
