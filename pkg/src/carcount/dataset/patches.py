"""Contextual patch extraction for classification and counting.

A patch of side ``S`` centred at scene point ``(cx, cy)`` covers pixels
``[cx - S//2, cx - S//2 + S)`` on each axis; its centre pixel is ``S//2``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .partition import TRAIN, GridPartition

log = logging.getLogger(__name__)

GRAY = 128
CENTRAL_REGION = 48
MIN_INSIDE = 8
MAX_COUNT = 63


@dataclass
class PatchSample:
    pixels: np.ndarray
    label: int              # 1 = car in the central region
    rotation: float
    center: tuple[int, int]
    source_cell: int

    @property
    def is_car(self):
        return self.label == 1


@dataclass
class CountSample:
    pixels: np.ndarray
    count: int
    center: tuple[int, int]
    source_cell: int


class PatchList(list):
    """List of samples that also remembers how many targets were skipped."""

    def __init__(self, items=(), skipped=0):
        super().__init__(items)
        self.skipped = skipped


class CountOverflow(ValueError):
    pass


# ------------------------------------------------------------ geometry

def extract_patch(pixels, cx, cy, size, angle=0.0):
    """Crop a ``size``-square patch around (cx, cy), zero outside the scene.

    A non-zero ``angle`` (degrees) samples the scene bilinearly on a grid
    rotated about the centre, so the corners come from real scene pixels.
    """
    h, w, c = pixels.shape
    half = size // 2
    if angle % 360 == 0 and float(angle) == int(angle):
        out = np.zeros((size, size, c), dtype=pixels.dtype)
        x0, y0 = cx - half, cy - half
        sx0, sy0 = max(x0, 0), max(y0, 0)
        sx1, sy1 = min(x0 + size, w), min(y0 + size, h)
        if sx0 < sx1 and sy0 < sy1:
            out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = pixels[sy0:sy1, sx0:sx1]
        return out
    t = math.radians(angle)
    cos, sin = math.cos(t), math.sin(t)
    d = np.arange(size, dtype=np.float64) - half
    du, dv = np.meshgrid(d, d)
    xs = cx + du * cos - dv * sin
    ys = cy + du * sin + dv * cos
    out = np.empty((size, size, c), dtype=np.float64)
    for ch in range(c):
        out[..., ch] = map_coordinates(pixels[..., ch].astype(np.float64), [ys, xs], order=1,
                                       mode="constant", cval=0.0)
    return np.clip(np.rint(out), 0, 255).astype(pixels.dtype)


def in_central_region(du, dv, region=CENTRAL_REGION):
    """True where offset (du, dv) from the patch centre lies in the central square."""
    half = region // 2
    du, dv = np.asarray(du), np.asarray(dv)
    return (du >= -half) & (du < region - half) & (dv >= -half) & (dv < region - half)


def count_inside(dots, x0, y0, size, visible=None, min_inside=MIN_INSIDE):
    """Number of dots at least ``min_inside`` pixels into the visible window.

    A dot at patch column ``u`` counts iff ``m + min_inside <= u <=
    m + visible - 1 - min_inside`` (same for rows), with ``m`` the grey margin.
    """
    dots = np.asarray(dots).reshape(-1, 2)
    visible = size if visible is None else visible
    m = (size - visible) // 2
    lo, hi = m + min_inside, m + visible - 1 - min_inside
    u = dots[:, 0] - x0
    v = dots[:, 1] - y0
    return int(((u >= lo) & (u <= hi) & (v >= lo) & (v <= hi)).sum())


def mask_context(patch, visible, gray=GRAY):
    """Grey out everything outside the centred ``visible`` x ``visible`` window."""
    size = patch.shape[0]
    if visible > size:
        raise ValueError(f"visible window {visible} larger than patch {size}")
    if visible <= 0 or (size - visible) % 2:
        raise ValueError(f"visible window {visible} cannot be centred in {size}")
    if visible == size:
        return patch.copy()
    m = (size - visible) // 2
    out = np.full_like(patch, gray)
    out[m:m + visible, m:m + visible] = patch[m:m + visible, m:m + visible]
    return out


def center_crop(patch, size):
    off = (patch.shape[0] - size) // 2
    return patch[off:off + size, off:off + size]


# ------------------------------------------------------ classification

def _owning_split(part: GridPartition, cx, cy, x0, y0, x1, y1):
    cell = part.cell_of(cx, cy)
    if cell is None:
        return None, None
    split = part.region_split(x0, y0, x1, y1)
    if split != part.split(cell):
        return None, cell
    return split, cell


def _car_free_centers(scene, part, split, n, region, rng, margin):
    cars = scene.dots("car")
    out = []
    tries = 0
    while len(out) < n and tries < 200 * max(n, 1):
        tries += 1
        cx = int(rng.integers(margin, scene.width - margin))
        cy = int(rng.integers(margin, scene.height - margin))
        cell = part.cell_of(cx, cy)
        if cell is None or part.split(cell) != split:
            continue
        if len(cars) and in_central_region(cars[:, 0] - cx, cars[:, 1] - cy, region).any():
            continue
        out.append((cx, cy))
    return out


def extract_classification_patches(scene, part: GridPartition, split=TRAIN, rotation_step=15.0,
                                   size=256, visible=192, jitter=8, random_negatives=0,
                                   region=CENTRAL_REGION, seed=0):
    """Labelled, rotated, margin-greyed patches around cars and negatives of one split.

    Targets are every unambiguous car dot (centre jittered by up to ``jitter``
    pixels), every negative dot, and ``random_negatives`` car-free locations.
    The label is fixed per target from the unrotated geometry and shared by
    all rotational variants. Targets whose rotation footprint leaves the scene
    or crosses into the other split are skipped; the skip count is available
    as ``.skipped`` on the returned list.
    """
    rng = np.random.default_rng(seed)
    angles = [0.0] if not rotation_step else list(np.arange(0.0, 360.0, rotation_step))
    reach = int(math.ceil(size / 2 * (math.sqrt(2) if len(angles) > 1 else 1))) + 1
    targets = []
    for x, y in scene.dots("car", ambiguous=False):
        j = rng.integers(-jitter, jitter + 1, size=2) if jitter else (0, 0)
        targets.append((int(x + j[0]), int(y + j[1])))
    for x, y in scene.dots("negative"):
        targets.append((int(x), int(y)))
    targets += _car_free_centers(scene, part, split, random_negatives, region, rng, reach)

    clear_cars = scene.dots("car", ambiguous=False)
    fuzzy_cars = scene.dots("car", ambiguous=True)
    out = PatchList()
    for cx, cy in targets:
        x0, y0 = cx - reach, cy - reach
        x1, y1 = cx + reach, cy + reach
        if x0 < 0 or y0 < 0 or x1 > scene.width or y1 > scene.height:
            out.skipped += 1
            continue
        owner, cell = _owning_split(part, cx, cy, x0, y0, x1, y1)
        if owner != split:
            if owner is None and cell is not None and part.split(cell) == split:
                out.skipped += 1
            continue
        if len(fuzzy_cars) and in_central_region(fuzzy_cars[:, 0] - cx, fuzzy_cars[:, 1] - cy, region).any():
            out.skipped += 1
            continue
        label = int(len(clear_cars) > 0 and
                    bool(in_central_region(clear_cars[:, 0] - cx, clear_cars[:, 1] - cy, region).any()))
        for angle in angles:
            px = extract_patch(scene.pixels, cx, cy, size, angle)
            if visible is not None and visible < size:
                px = mask_context(px, visible)
            out.append(PatchSample(px, label, float(angle), (cx, cy), cell))
    if out.skipped:
        log.info("classification extraction skipped %d targets", out.skipped)
    return out


# ------------------------------------------------------------ counting

def extract_count_patches(scene, part: GridPartition, split=TRAIN, size=224, jitter=24,
                          random_count=None, visible=None, min_inside=MIN_INSIDE, seed=0):
    """Count-labelled patches of one split.

    Locations are every car dot (jittered by up to ``jitter`` pixels) plus
    ``random_count`` uniform locations (default: as many as there are cars).
    A patch may extend past the scene edge (zero filled) but every in-scene
    pixel must belong to cells of ``split``.
    """
    rng = np.random.default_rng(seed)
    cars = scene.dots("car")
    centers = []
    for x, y in cars:
        j = rng.integers(-jitter, jitter + 1, size=2) if jitter else (0, 0)
        centers.append((int(x + j[0]), int(y + j[1])))
    n_random = len(cars) if random_count is None else random_count
    for _ in range(n_random):
        centers.append((int(rng.integers(0, scene.width)), int(rng.integers(0, scene.height))))

    half = size // 2
    out = PatchList()
    for cx, cy in centers:
        x0, y0 = cx - half, cy - half
        owner, cell = _owning_split(part, cx, cy, x0, y0, x0 + size, y0 + size)
        if owner != split:
            continue
        n = count_inside(cars, x0, y0, size, visible, min_inside)
        if n > MAX_COUNT:
            raise CountOverflow(f"patch at ({cx}, {cy}) holds {n} cars (> {MAX_COUNT})")
        px = extract_patch(scene.pixels, cx, cy, size)
        if visible is not None and visible < size:
            px = mask_context(px, visible)
        out.append(CountSample(px, n, (cx, cy), cell))
    return out
