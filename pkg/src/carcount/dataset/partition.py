from __future__ import annotations

from dataclasses import dataclass

TRAIN, TEST = "train", "test"


@dataclass(frozen=True)
class GridPartition:
    """Square cells tiling a scene, each assigned to the train or test split.

    Cells are numbered in row-major order and cell ``i`` is a test cell iff
    ``i % 4 == 3``. Cells on the right and bottom edges may be truncated when
    the scene is not a multiple of ``cell_size``.
    """

    width: int
    height: int
    cell_size: int = 1024

    @property
    def cols(self):
        return -(-self.width // self.cell_size)

    @property
    def rows(self):
        return -(-self.height // self.cell_size)

    def __len__(self):
        return self.rows * self.cols

    def split(self, index):
        return TEST if index % 4 == 3 else TRAIN

    def assignments(self):
        return [self.split(i) for i in range(len(self))]

    def cell_bounds(self, index):
        r, c = divmod(index, self.cols)
        x0, y0 = c * self.cell_size, r * self.cell_size
        return x0, y0, min(x0 + self.cell_size, self.width), min(y0 + self.cell_size, self.height)

    def cell_of(self, x, y):
        if not (0 <= x < self.width and 0 <= y < self.height):
            return None
        return (y // self.cell_size) * self.cols + x // self.cell_size

    def cells_touching(self, x0, y0, x1, y1):
        """Cells overlapping the half-open box, clipped to the scene."""
        x0, y0 = max(x0, 0), max(y0, 0)
        x1, y1 = min(x1, self.width), min(y1, self.height)
        if x0 >= x1 or y0 >= y1:
            return []
        cs = self.cell_size
        return [r * self.cols + c
                for r in range(y0 // cs, (y1 - 1) // cs + 1)
                for c in range(x0 // cs, (x1 - 1) // cs + 1)]

    def region_split(self, x0, y0, x1, y1):
        """The split owning every in-scene pixel of the box, or None if mixed.

        Pixels outside the scene belong to no split.
        """
        splits = {self.split(i) for i in self.cells_touching(x0, y0, x1, y1)}
        return splits.pop() if len(splits) == 1 else None


def partition(scene, cell_size=1024) -> GridPartition:
    h, w = scene.pixels.shape[:2]
    if h < cell_size or w < cell_size:
        raise ValueError(f"scene {w}x{h} smaller than cell size {cell_size}")
    return GridPartition(w, h, cell_size)
