"""Throughput and cost accounting for scene scans."""
from __future__ import annotations

import os
import statistics
import time
from dataclasses import dataclass

from .counting import DEFAULT_STRIDE, FOUR_OFFSETS, NetworkCounter, StrideConfig, count_scene, scene_windows
from .detection import scan

BENCH_HEADER = "mode\tworkers\tbatches\tseconds\tfps\tkm2_per_s\tops_per_px"


def scene_area_km2(side=2048, gsd=0.15):
    return (side * gsd / 1000.0) ** 2


def estimate_ops(network, stride, scene_size=None):
    """Multiply-accumulates per scene pixel for a strided scan.

    Each patch costs its MAC count from layer shapes and one patch is placed
    per ``stride**2`` pixels, ignoring the partial row/column at the border.
    """
    macs = network.graph.macs_per_sample() if hasattr(network, "graph") else float(network)
    return ops_per_scene_pixel(macs, stride)


def ops_per_scene_pixel(macs_per_patch, stride):
    if stride <= 0:
        raise ValueError("stride must be positive")
    return macs_per_patch / stride ** 2


@dataclass
class BenchConfig:
    mode: str = "count"          # "count" (one-look scan) or "detect" (heat map scan)
    stride: int = DEFAULT_STRIDE
    offsets: int = 1
    runs: int = 5
    gsd: float = 0.15
    workers: int = 1
    batch_size: int = 64

    def __post_init__(self):
        if self.mode not in ("count", "detect"):
            raise ValueError(f"unknown bench mode {self.mode!r}")
        if self.runs < 5:
            raise ValueError("need at least 5 timed runs")
        if self.offsets not in (1, 4):
            raise ValueError("offsets must be 1 or 4")


@dataclass
class BenchResult:
    mode: str
    workers: int
    batches: int
    seconds: float
    ops_per_px: float
    scene_side: int = 2048
    gsd: float = 0.15

    @property
    def fps(self):
        return 1.0 / self.seconds

    @property
    def km2_per_s(self):
        return self.fps * scene_area_km2(self.scene_side, self.gsd)

    def row(self):
        return (f"{self.mode}\t{self.workers}\t{self.batches}\t{self.seconds:.4f}\t{self.fps:.4f}\t"
                f"{self.km2_per_s:.4f}\t{self.ops_per_px:.1f}")


def bench_scene(network, scene, cfg: BenchConfig = BenchConfig()) -> BenchResult:
    """Median wall time of ``cfg.runs`` scans after one untimed warm-up.

    Only inference and stitching are timed: the scene is already decoded.
    """
    side = max(scene.width, scene.height)
    if cfg.mode == "count":
        counter = NetworkCounter(network, batch_size=cfg.batch_size, workers=cfg.workers)
        offsets = FOUR_OFFSETS if cfg.offsets == 4 else ((0, 0),)
        sc = StrideConfig(cfg.stride, network.spec.input_size, offsets)

        def once():
            count_scene(scene, counter, sc)
        per_pass = len(count_windows(scene, sc))
    else:
        core = network.spec.input_size - 32

        def once():
            scan(scene, network, cfg.stride, core, 32, batch_size=cfg.batch_size, workers=cfg.workers)
        per_pass = -(-scene.width // cfg.stride) * -(-scene.height // cfg.stride)
    once()
    times = []
    for _ in range(cfg.runs):
        t = time.perf_counter()
        once()
        times.append(time.perf_counter() - t)
    batches = -(-per_pass // cfg.batch_size)
    return BenchResult(cfg.mode, cfg.workers, batches, statistics.median(times),
                       estimate_ops(network, cfg.stride), side, cfg.gsd)


def count_windows(scene, sc: StrideConfig):
    out = []
    for off in sc.offsets:
        out += scene_windows(scene.width, scene.height, sc.stride, sc.patch, off)
    return out


def write_bench(results, path):
    exists = os.path.exists(path)
    with open(path, "a", encoding="utf-8") as fh:
        if not exists:
            fh.write(BENCH_HEADER + "\n")
        for r in results:
            fh.write(r.row() + "\n")
