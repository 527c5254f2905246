"""Central finite-difference gradient checking for graphs."""
from __future__ import annotations

import numpy as np


def relative_error(analytic, numeric, floor=1e-8):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max()) if a.size else 0.0


def check_graph(graph, x, rng, h=1e-6, max_entries=40):
    """Compare analytic and numeric gradients of ``sum(out * R)``.

    The graph must already be float64. Every parameter tensor and the input
    are probed at up to ``max_entries`` random coordinates. Returns the worst
    relative error per tensor name.
    """
    x = np.asarray(x, dtype=np.float64)
    out = graph.forward(x)
    outs = out if isinstance(out, list) else [out]
    projections = [rng.standard_normal(o.shape) for o in outs]

    def objective(inp):
        o = graph.forward(inp, keep=False)
        o = o if isinstance(o, list) else [o]
        return sum(float((oi * ri).sum()) for oi, ri in zip(o, projections))

    graph.forward(x)
    seeds = {name: r for name, r in zip(graph.outputs, projections)}
    grads = graph.backward(seeds, input_grad=True)

    targets = list(graph.parameters()) + [("input", x)]
    worst = {}
    for name, arr in targets:
        flat = arr.reshape(-1)
        picks = rng.choice(flat.size, size=min(max_entries, flat.size), replace=False)
        num = np.empty(len(picks))
        for i, idx in enumerate(picks):
            old = flat[idx]
            flat[idx] = old + h
            up = objective(x)
            flat[idx] = old - h
            down = objective(x)
            flat[idx] = old
            num[i] = (up - down) / (2 * h)
        worst[name] = relative_error(grads[name].reshape(-1)[picks], num)
    return worst
