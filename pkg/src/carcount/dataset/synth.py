"""Deterministic synthetic overhead scenes with exact dot annotations.

Scenes are a textured ground plane with roads, parking lots, buildings and
trees; cars are rounded rectangles 24-48 px long and confounders (boats,
A/C units, sheds) are annotated as negatives.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import zoom

from .scene import Annotation, SceneImage

CAR_LENGTH = (24, 48)
CAR_COLORS = np.array([
    (236, 236, 238), (205, 206, 210), (172, 174, 180), (32, 32, 36), (60, 62, 70),
    (176, 28, 30), (30, 62, 158), (214, 186, 44), (24, 110, 60), (128, 82, 48),
], dtype=np.float32)
ASPHALT = np.array((96, 96, 102), dtype=np.float32)
GROUNDS = np.array([(88, 122, 64), (120, 132, 78), (142, 124, 96), (104, 110, 92)], dtype=np.float32)
STALL_PITCH, STALL_DEPTH = 28, 56


class CapacityError(ValueError):
    pass


class _Canvas:
    def __init__(self, h, w, rng):
        self.h, self.w, self.rng = h, w, rng
        self.img = np.zeros((h, w, 3), dtype=np.float32)
        self.occupied = np.zeros((h, w), dtype=bool)

    def window(self, cx, cy, radius):
        x0, x1 = max(int(cx - radius), 0), min(int(cx + radius) + 1, self.w)
        y0, y1 = max(int(cy - radius), 0), min(int(cy + radius) + 1, self.h)
        return x0, x1, y0, y1

    def blend(self, x0, x1, y0, y1, alpha, color):
        region = self.img[y0:y1, x0:x1]
        a = alpha[..., None]
        region *= 1 - a
        region += a * color

    def rect(self, x0, y0, x1, y1, color, occupy=False):
        x0, y0 = max(x0, 0), max(y0, 0)
        x1, y1 = min(x1, self.w), min(y1, self.h)
        self.img[y0:y1, x0:x1] = color
        if occupy:
            self.occupied[y0:y1, x0:x1] = True


def _local(cx, cy, angle, x0, x1, y0, y1):
    xs = np.arange(x0, x1, dtype=np.float32) - cx
    ys = np.arange(y0, y1, dtype=np.float32) - cy
    X, Y = np.meshgrid(xs, ys)
    c, s = math.cos(angle), math.sin(angle)
    return X * c + Y * s, -X * s + Y * c


def _rounded_rect_sdf(du, dv, length, width, radius):
    qx = np.abs(du) - (length / 2 - radius)
    qy = np.abs(dv) - (width / 2 - radius)
    outside = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0))
    return outside + np.minimum(np.maximum(qx, qy), 0) - radius


def car_mask(du, dv, length, width):
    """Anti-aliased coverage of a car body in car-aligned coordinates."""
    return np.clip(0.5 - _rounded_rect_sdf(du, dv, length, width, 0.3 * width), 0, 1)


def _place(canvas: _Canvas, cx, cy, angle, length, width, gap=3):
    """Reserve a footprint; None if it collides or leaves the image."""
    r = math.hypot(length, width) / 2 + gap
    if cx - r < 0 or cy - r < 0 or cx + r >= canvas.w or cy + r >= canvas.h:
        return None
    x0, x1, y0, y1 = canvas.window(cx, cy, r)
    du, dv = _local(cx, cy, angle, x0, x1, y0, y1)
    foot = _rounded_rect_sdf(du, dv, length, width, 0.3 * width) < gap
    if (canvas.occupied[y0:y1, x0:x1] & foot).any():
        return None
    canvas.occupied[y0:y1, x0:x1] |= foot
    return x0, x1, y0, y1, du, dv


def _draw_car(canvas, cx, cy, angle, length, width, color, box):
    x0, x1, y0, y1, du, dv = box
    # soft shadow offset toward +x,+y
    sh = car_mask(du - 2.5, dv - 2.5, length, width) * 0.35
    canvas.blend(x0, x1, y0, y1, sh, np.zeros(3, np.float32))
    body = car_mask(du, dv, length, width)
    canvas.blend(x0, x1, y0, y1, body, color)
    glass = np.where(np.abs(dv) < width / 2 - 2.5,
                     np.clip(1 - np.abs(du - 0.17 * length) / (0.09 * length), 0, 1), 0)
    rear = np.where(np.abs(dv) < width / 2 - 3,
                    np.clip(1 - np.abs(du + 0.3 * length) / (0.05 * length), 0, 1), 0)
    tint = color * 0.3 + 18
    canvas.blend(x0, x1, y0, y1, np.minimum(glass + rear, 1) * body * 0.85, tint)


def _draw_negative(canvas, kind, cx, cy, angle, length, width, rng, box):
    x0, x1, y0, y1, du, dv = box
    if kind == "boat":
        taper = 1 - 0.55 * np.clip(du / (length / 2), 0, 1)
        rr = np.sqrt((du / (length / 2)) ** 2 + (dv / (width / 2 * np.maximum(taper, 0.2))) ** 2)
        cover = np.clip((1 - rr) * width / 2 + 0.5, 0, 1)
        canvas.blend(x0, x1, y0, y1, cover, np.array((240, 240, 236), np.float32))
        deck = np.clip((0.55 - rr) * width, 0, 1)
        canvas.blend(x0, x1, y0, y1, deck, np.array((150, 120, 90), np.float32))
    elif kind == "ac":
        cover = np.clip(0.5 - _rounded_rect_sdf(du, dv, length, length, 1.0), 0, 1)
        canvas.blend(x0, x1, y0, y1, cover, np.array((190, 192, 196), np.float32))
        fan = np.clip(length * 0.3 - np.hypot(du, dv) + 0.5, 0, 1)
        canvas.blend(x0, x1, y0, y1, fan, np.array((70, 72, 76), np.float32))
    else:  # shed
        cover = np.clip(0.5 - _rounded_rect_sdf(du, dv, length, width, 0.5), 0, 1)
        color = rng.uniform(70, 200, 3).astype(np.float32)
        canvas.blend(x0, x1, y0, y1, cover, color)
        ridge = np.clip(1.5 - np.abs(dv), 0, 1) * cover
        canvas.blend(x0, x1, y0, y1, ridge * 0.6, color * 0.6)


def _background(h, w, rng):
    ground = GROUNDS[rng.integers(len(GROUNDS))]
    coarse = rng.normal(0, 14, (h // 64 + 2, w // 64 + 2, 1)).astype(np.float32)
    field = zoom(coarse, (64, 64, 1), order=1)[:h, :w]
    img = np.empty((h, w, 3), dtype=np.float32)
    img[...] = ground
    img += field
    return img


def _stall_grid(x0, y0, rows, cols):
    """Stall centres and orientation for a lot whose cars face up/down."""
    out = []
    for r in range(rows):
        for c in range(cols):
            out.append((x0 + c * STALL_PITCH + STALL_PITCH // 2, y0 + r * STALL_DEPTH + STALL_DEPTH // 2))
    return out


def synth_scene(seed, width=2048, height=2048, car_count=100, clutter_level=1.0, gsd=0.15,
                lot_fraction=0.6, grayscale=False, fine_noise=4.0) -> SceneImage:
    """Render a synthetic scene; identical arguments give a bit-identical scene."""
    if car_count < 0:
        raise ValueError("car_count must be >= 0")
    if car_count * CAR_LENGTH[1] * CAR_LENGTH[1] * 0.5 > 0.3 * width * height:
        raise CapacityError(f"{car_count} cars cannot fit without overlap in {width}x{height}")
    rng = np.random.default_rng(seed)
    cv = _Canvas(height, width, rng)
    cv.img = _background(height, width, rng)
    area = width * height / 2048 ** 2

    # roads
    roads = []
    road_mask = np.zeros_like(cv.occupied)
    for axis in (0, 1):
        extent = width if axis == 0 else height
        for _ in range(max(1, int(round(extent / 900 + rng.random())))):
            wd = int(rng.integers(56, 84))
            pos = int(rng.integers(0, max(extent - wd, 1)))
            roads.append((axis, pos, wd))
            color = ASPHALT + rng.normal(0, 4)
            if axis == 0:
                cv.rect(pos, 0, pos + wd, height, color)
                road_mask[:, pos:pos + wd] = True
                cv.img[::24, pos + wd // 2 - 1:pos + wd // 2 + 1][:height] = 215
            else:
                cv.rect(0, pos, width, pos + wd, color)
                road_mask[pos:pos + wd] = True
                cv.img[pos + wd // 2 - 1:pos + wd // 2 + 1, ::24] = 215

    # buildings and trees reserve space so cars never sit on them
    for _ in range(int(round(clutter_level * 6 * area))):
        bw, bh = (int(v) for v in rng.integers(70, 220, 2))
        bx, by = int(rng.integers(0, max(width - bw, 1))), int(rng.integers(0, max(height - bh, 1)))
        if cv.occupied[by:by + bh, bx:bx + bw].any() or road_mask[by:by + bh, bx:bx + bw].any():
            continue
        roof = rng.uniform(80, 190) + rng.normal(0, 8, 3)
        cv.rect(bx, by, bx + bw, by + bh, roof.astype(np.float32), occupy=True)
        cv.rect(bx + 3, by + bh // 2 - 1, bx + bw - 3, by + bh // 2 + 1, (roof * 0.8).astype(np.float32))
    for _ in range(int(round(clutter_level * 40 * area))):
        r = float(rng.uniform(10, 28))
        tx, ty = float(rng.uniform(r, width - r)), float(rng.uniform(r, height - r))
        x0, x1, y0, y1 = cv.window(tx, ty, r + 1)
        du, dv = _local(tx, ty, 0.0, x0, x1, y0, y1)
        cover = np.clip(r - np.hypot(du, dv) + 0.5, 0, 1)
        if (cv.occupied[y0:y1, x0:x1] & (cover > 0)).any():
            continue
        cv.blend(x0, x1, y0, y1, cover, np.array((38, 70, 34), np.float32) + rng.normal(0, 5, 3).astype(np.float32))
        cv.occupied[y0:y1, x0:x1] |= cover > 0

    # parking lots
    n_lot_cars = int(round(lot_fraction * car_count))
    stalls = []
    lot_mask = np.zeros_like(cv.occupied)
    attempts = 0
    while n_lot_cars and len(stalls) < int(n_lot_cars * 1.6) + 1 and attempts < 400:
        attempts += 1
        rows, cols = int(rng.integers(1, 3)), int(rng.integers(3, 9))
        lw, lh = cols * STALL_PITCH + 8, rows * STALL_DEPTH + 8
        lx, ly = int(rng.integers(0, max(width - lw, 1))), int(rng.integers(0, max(height - lh, 1)))
        if cv.occupied[ly:ly + lh, lx:lx + lw].any() or lot_mask[ly:ly + lh, lx:lx + lw].any():
            continue
        lot_mask[ly:ly + lh, lx:lx + lw] = True
        cv.rect(lx, ly, lx + lw, ly + lh, ASPHALT + rng.normal(0, 3))
        for c in range(cols + 1):
            sx = lx + 4 + c * STALL_PITCH
            for r in range(rows):
                cv.rect(sx, ly + 8 + r * STALL_DEPTH, sx + 1, ly + (r + 1) * STALL_DEPTH, np.float32(220))
        stalls += _stall_grid(lx + 4, ly + 4, rows, cols)

    annotations, objects = [], []

    def add_car(cx, cy, angle, where):
        length = float(rng.uniform(*CAR_LENGTH))
        width_ = length * float(rng.uniform(0.42, 0.5))
        box = _place(cv, cx, cy, angle, length, width_)
        if box is None:
            return False
        color = CAR_COLORS[rng.integers(len(CAR_COLORS))] + rng.normal(0, 4, 3).astype(np.float32)
        _draw_car(cv, cx, cy, angle, length, width_, color, box)
        annotations.append(Annotation(int(cx), int(cy), "car"))
        objects.append(dict(kind="car", x=int(cx), y=int(cy), angle=angle, length=length,
                            width=width_, where=where))
        return True

    order = rng.permutation(len(stalls))
    placed = 0
    for i in order:
        if placed >= n_lot_cars:
            break
        sx, sy = stalls[i]
        angle = math.pi / 2 + float(rng.normal(0, 0.04)) + (math.pi if rng.random() < 0.5 else 0.0)
        if add_car(sx, sy, angle, "lot"):
            placed += 1

    remaining = car_count - placed
    tries = 0
    while remaining > 0:
        tries += 1
        if tries > 500 + 400 * car_count:
            raise CapacityError(f"placed {car_count - remaining} of {car_count} cars")
        if roads and rng.random() < 0.6:
            axis, pos, wd = roads[rng.integers(len(roads))]
            lane = pos + wd * (0.28 if rng.random() < 0.5 else 0.72)
            along = float(rng.uniform(30, (height if axis == 0 else width) - 30))
            if axis == 0:
                cx, cy, angle = lane, along, math.pi / 2
            else:
                cx, cy, angle = along, lane, 0.0
            angle += float(rng.normal(0, 0.05)) + (math.pi if rng.random() < 0.5 else 0.0)
            where = "road"
        else:
            cx, cy = float(rng.uniform(30, width - 30)), float(rng.uniform(30, height - 30))
            angle = float(rng.uniform(0, 2 * math.pi))
            where = "free"
        cx, cy = int(round(cx)), int(round(cy))
        if where == "free" and lot_mask[cy, cx]:
            continue
        if add_car(cx, cy, angle, where):
            remaining -= 1

    # annotated confounders
    n_neg = int(round(clutter_level * (12 * area + 0.15 * car_count)))
    done = 0
    for _ in range(20 * n_neg):
        if done >= n_neg:
            break
        kind = ("boat", "ac", "shed")[rng.integers(3)]
        if kind == "boat":
            length, wd = float(rng.uniform(50, 80)), float(rng.uniform(14, 20))
        elif kind == "ac":
            length = float(rng.uniform(10, 18))
            wd = length
        else:
            length, wd = float(rng.uniform(36, 64)), float(rng.uniform(26, 40))
        cx, cy = int(rng.integers(40, width - 40)), int(rng.integers(40, height - 40))
        angle = float(rng.uniform(0, 2 * math.pi)) if kind != "shed" else float(rng.integers(2)) * math.pi / 2
        box = _place(cv, cx, cy, angle, length, wd)
        if box is None:
            continue
        _draw_negative(cv, kind, cx, cy, angle, length, wd, rng, box)
        annotations.append(Annotation(cx, cy, "negative"))
        objects.append(dict(kind=kind, x=cx, y=cy, angle=angle, length=length, width=wd, where="clutter"))
        done += 1

    img = cv.img
    if fine_noise:
        img += rng.normal(0, fine_noise, img.shape).astype(np.float32)
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    if grayscale:
        lum = pixels.astype(np.float32) @ np.array([0.299, 0.587, 0.114], np.float32)
        pixels = np.clip(np.rint(lum), 0, 255).astype(np.uint8)[..., None]
    return SceneImage(pixels, annotations, gsd=gsd, objects=objects)


def blank_scene(width, height, value=110, channels=3, gsd=0.15) -> SceneImage:
    """Constant-background scene with no annotations."""
    return SceneImage(np.full((height, width, channels), value, dtype=np.uint8), [], gsd=gsd)
