"""Strided heat-map scanning, fixed-size non-maximum suppression and scoring."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from .dataset.patches import GRAY, extract_patch

BOX_SIDE = 48
FOOTPRINT = 32


def heat_value(o1, o2=None, exponent=16):
    """Map softmax (car, not-car) outputs to a heat value in [0, 1].

    ``(o1 - o2 + 1) ** e / 2 ** e``; ``o2`` defaults to ``1 - o1``.
    """
    o1 = np.asarray(o1, dtype=np.float64)
    o2 = 1.0 - o1 if o2 is None else np.asarray(o2, dtype=np.float64)
    p = ((o1 - o2 + 1.0) / 2.0) ** exponent
    return np.clip(p, 0.0, 1.0)


@dataclass
class HeatMap:
    values: np.ndarray
    stride: int = 8
    origin: tuple[int, int] = (0, 0)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.size and (v.min() < 0 or v.max() > 1):
            raise ValueError("heat values must lie in [0, 1]")
        self.values = v

    def center(self, i, j):
        return self.origin[0] + j * self.stride, self.origin[1] + i * self.stride


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    score: float
    side: int = BOX_SIDE


class WrongNetwork(ValueError):
    pass


def scan_patches(pixels, centers, core=192, margin=32, gray=GRAY):
    """Build scan inputs: a ``core`` crop framed by ``margin`` total grey border."""
    size = core + margin
    off = margin // 2
    out = np.full((len(centers), size, size, pixels.shape[2]), gray, dtype=pixels.dtype)
    for k, (x, y) in enumerate(centers):
        out[k, off:off + core, off:off + core] = extract_patch(pixels, x, y, core)
    return out


def scan(scene, network, stride=8, core=192, margin=32, exponent=16, batch_size=64, workers=1) -> HeatMap:
    """Classify a ``core`` window at every stride location into a heat map.

    ``margin`` is the total grey border added around the core (half on each
    side), so the network input is ``core + margin`` pixels square. Windows
    reaching past the scene edge are zero padded.
    """
    if network.class_count != 2:
        raise WrongNetwork(f"scan needs a 2-class network, got {network.class_count} classes")
    if network.spec.input_size != core + margin:
        raise WrongNetwork(f"network input {network.spec.input_size} != core {core} + margin {margin}")
    h, w = scene.pixels.shape[:2]
    rows, cols = math.ceil(h / stride), math.ceil(w / stride)
    centers = [(j * stride, i * stride) for i in range(rows) for j in range(cols)]
    chunks = [centers[k:k + batch_size] for k in range(0, len(centers), batch_size)]

    def run(chunk):
        probs = network.probabilities(scan_patches(scene.pixels, chunk, core, margin), batch_size)
        return heat_value(probs[:, 1], probs[:, 0], exponent)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    values = np.concatenate(parts) if parts else np.zeros(0)
    return HeatMap(values.reshape(rows, cols), stride)


# ----------------------------------------------------------------- nms

def local_maxima(values):
    """Indices (i, j) that beat their 8-neighbourhood.

    A cell must be strictly greater than neighbours that precede it in
    row-major order and at least equal to those that follow, so a plateau
    keeps only its lexicographically smallest cell.
    """
    v = np.asarray(values, dtype=np.float64)
    padded = np.pad(v, 1, constant_values=-np.inf)
    h, w = v.shape
    keep = np.ones_like(v, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            nb = padded[1 + di:1 + di + h, 1 + dj:1 + dj + w]
            after = di > 0 or (di == 0 and dj > 0)
            keep &= (v >= nb) if after else (v > nb)
    return [(int(i), int(j)) for i, j in np.argwhere(keep)]


def box_overlap(a: BoundingBox, b: BoundingBox):
    """Smaller of the per-axis intersection extents of two boxes."""
    ix = min(a.x + a.side / 2, b.x + b.side / 2) - max(a.x - a.side / 2, b.x - b.side / 2)
    iy = min(a.y + a.side / 2, b.y + b.side / 2) - max(a.y - a.side / 2, b.y - b.side / 2)
    return max(0.0, min(ix, iy))


def suppress(candidates, max_overlap=20, side=BOX_SIDE):
    """Greedy suppression of ``(x, y, score)`` candidates, best score first.

    Ties are broken by (y, x), so the result does not depend on input order.
    """
    ordered = sorted(candidates, key=lambda c: (-c[2], c[1], c[0]))
    kept: list[BoundingBox] = []
    for x, y, s in ordered:
        box = BoundingBox(int(x), int(y), float(s), side)
        if all(box_overlap(box, k) <= max_overlap for k in kept):
            kept.append(box)
    return kept


def nms(heat: HeatMap, threshold=0.75, max_overlap=20, side=BOX_SIDE):
    cands = []
    for i, j in local_maxima(heat.values):
        s = heat.values[i, j]
        if s >= threshold:
            x, y = heat.center(i, j)
            cands.append((x, y, s))
    return suppress(cands, max_overlap, side)


# ------------------------------------------------------------- scoring

@dataclass
class DetectionScore:
    count: int
    tp: int
    fp: int
    fn: int
    mode: str

    @property
    def precision(self):
        d = self.tp + self.fp
        return self.tp / d if d else 1.0

    @property
    def recall(self):
        d = self.tp + self.fn
        return self.tp / d if d else 1.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def row(self):
        return (f"{self.mode}\t{self.count}\t{self.tp}\t{self.fp}\t{self.fn}\t"
                f"{100 * self.precision:.2f}%\t{100 * self.recall:.2f}%\t{100 * self.f1:.2f}%")


SCORE_HEADER = "Condition\tCount\tTP\tFP\tFN\tPrecision\tRecall\tF"


def _inside_fraction(dots, boxes, footprint, side):
    """Fraction of each car footprint square inside each box, shape (cars, boxes)."""
    if len(dots) == 0 or len(boxes) == 0:
        return np.zeros((len(dots), len(boxes)))
    d = np.asarray(dots, dtype=np.float64)
    b = np.array([(bx.x, bx.y) for bx in boxes], dtype=np.float64)
    fh, bh = footprint / 2, side / 2
    ix = np.minimum(d[:, None, 0] + fh, b[None, :, 0] + bh) - np.maximum(d[:, None, 0] - fh, b[None, :, 0] - bh)
    iy = np.minimum(d[:, None, 1] + fh, b[None, :, 1] + bh) - np.maximum(d[:, None, 1] - fh, b[None, :, 1] - bh)
    return np.clip(ix, 0, None) * np.clip(iy, 0, None) / footprint ** 2


def score(boxes, dots, mode="detection", footprint=FOOTPRINT, side=BOX_SIDE) -> DetectionScore:
    """Score fixed-size boxes against car dots.

    A car is covered by a box when at least half of its ``footprint`` square
    lies inside the box. ``verification`` ignores splits and mergers: a car
    is found if any box covers it and a box is false only if it covers no
    car. ``detection`` matches cars and boxes one-to-one (greedy, largest
    coverage first), so every extra box on a car is a false positive and
    every extra car under one box a false negative.
    """
    if mode not in ("verification", "detection"):
        raise ValueError(f"unknown scoring mode {mode!r}")
    dots = np.asarray(dots).reshape(-1, 2)
    frac = _inside_fraction(dots, boxes, footprint, side)
    cover = frac >= 0.5
    n = len(dots)
    if mode == "verification":
        tp = int(cover.any(axis=1).sum())
        fp = int((~cover.any(axis=0)).sum()) if len(boxes) else 0
        return DetectionScore(n, tp, fp, n - tp, mode)
    pairs = sorted(((frac[i, j], i, j) for i, j in zip(*np.nonzero(cover))), key=lambda t: (-t[0], t[1], t[2]))
    used_c, used_b = set(), set()
    for _, i, j in pairs:
        if i not in used_c and j not in used_b:
            used_c.add(i)
            used_b.add(j)
    tp = len(used_c)
    return DetectionScore(n, tp, len(boxes) - tp, n - tp, mode)


# ----------------------------------------------------------- artifacts

def save_heatmap_png(heat: HeatMap, path):
    Image.fromarray(np.rint(heat.values * 255).astype(np.uint8)).save(path)


def save_heatmap_raw(heat: HeatMap, path):
    """Row-major little-endian float32 grid; shape goes in a ``.shape`` sidecar."""
    np.ascontiguousarray(heat.values, dtype="<f4").tofile(path)
    with open(f"{path}.shape", "w", encoding="utf-8") as fh:
        fh.write(f"rows={heat.values.shape[0]}\ncols={heat.values.shape[1]}\nstride={heat.stride}\n")


def write_boxes(boxes, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x,y,side,score\n")
        for b in boxes:
            fh.write(f"{b.x},{b.y},{b.side},{b.score:.6f}\n")


def read_boxes(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            x, y, side, s = line.strip().split(",")
            out.append(BoundingBox(int(x), int(y), float(s), int(side)))
    return out


def render_overlay(scene, heat: HeatMap, boxes, path):
    px = scene.pixels
    rgb = np.repeat(px, 3, axis=2) if px.shape[2] == 1 else px.copy()
    h, w = rgb.shape[:2]
    up = np.kron(heat.values, np.ones((heat.stride, heat.stride)))[:h, :w]
    pad = np.zeros((h, w))
    pad[:up.shape[0], :up.shape[1]] = up
    out = rgb.astype(np.float32)
    out[..., 0] = out[..., 0] * (1 - 0.6 * pad) + 255 * 0.6 * pad
    im = Image.fromarray(np.clip(out, 0, 255).astype(np.uint8))
    draw = ImageDraw.Draw(im)
    for b in boxes:
        hs = b.side / 2
        draw.rectangle([b.x - hs, b.y - hs, b.x + hs, b.y + hs], outline=(255, 230, 0))
    im.save(path)
