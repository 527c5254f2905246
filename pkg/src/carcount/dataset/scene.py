"""Scenes, dot annotations and their on-disk formats."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

DOTS_HEADER = "#carcount-dots v1"
KINDS = ("car", "negative")


@dataclass(frozen=True)
class Annotation:
    x: int
    y: int
    kind: str = "car"
    ambiguous: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"annotation kind must be one of {KINDS}, got {self.kind!r}")


@dataclass
class SceneImage:
    """A raster with dot annotations. ``pixels`` is H x W x C uint8, C in {1, 3}."""

    pixels: np.ndarray
    annotations: list[Annotation] = field(default_factory=list)
    gsd: float = 0.15
    objects: list[dict] = field(default_factory=list)   # rendered geometry, synthetic scenes only

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[..., None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"scene must be H x W x {{1,3}}, got {px.shape}")
        self.pixels = px
        if not self.gsd > 0:
            raise ValueError("gsd must be positive")
        h, w = px.shape[:2]
        for a in self.annotations:
            if not (0 <= a.x < w and 0 <= a.y < h):
                raise ValueError(f"annotation ({a.x}, {a.y}) outside {w}x{h} image")

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def dots(self, kind="car", ambiguous=None):
        """(N, 2) int array of x, y for annotations of ``kind``.

        ``ambiguous`` filters on the flag when not None.
        """
        pts = [(a.x, a.y) for a in self.annotations
               if a.kind == kind and (ambiguous is None or a.ambiguous == ambiguous)]
        return np.array(pts, dtype=np.int64).reshape(-1, 2)

    @property
    def car_count(self):
        return sum(a.kind == "car" for a in self.annotations)


def format_dots(annotations) -> str:
    lines = [DOTS_HEADER]
    for a in annotations:
        row = f"{a.x},{a.y},{a.kind}"
        if a.ambiguous:
            row += ",ambiguous"
        lines.append(row)
    return "\n".join(lines) + "\n"


def parse_dots(text: str) -> list[Annotation]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != DOTS_HEADER:
        raise ValueError(f"missing {DOTS_HEADER!r} header")
    out = []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (3, 4):
            raise ValueError(f"line {lineno}: expected x,y,kind[,ambiguous]")
        ambiguous = len(parts) == 4 and parts[3].lower() in ("ambiguous", "1", "true", "yes")
        out.append(Annotation(int(parts[0]), int(parts[1]), parts[2], ambiguous))
    return out


def save_scene(scene: SceneImage, stem) -> tuple[Path, Path]:
    """Write ``<stem>.png`` and ``<stem>.dots``."""
    stem = Path(stem)
    png, dots = stem.with_suffix(".png"), stem.with_suffix(".dots")
    px = scene.pixels[..., 0] if scene.pixels.shape[2] == 1 else scene.pixels
    Image.fromarray(px).save(png)
    dots.write_text(format_dots(scene.annotations), encoding="utf-8")
    return png, dots


def load_scene(png, dots=None, gsd=0.15) -> SceneImage:
    png = Path(png)
    dots = Path(dots) if dots is not None else png.with_suffix(".dots")
    with Image.open(png) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        px = np.asarray(im)
    ann = parse_dots(dots.read_text(encoding="utf-8")) if dots.exists() else []
    return SceneImage(px, ann, gsd=gsd)


def list_scenes(directory) -> list[Path]:
    return sorted(Path(directory).glob("*.png"))
