"""One-look strided scene counting and its error statistics."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset.patches import MIN_INSIDE, count_inside, extract_patch

FOUR_OFFSETS = ((0, 0), (0, 4), (4, 0), (4, 4))
DEFAULT_STRIDE = 167
STRIDE_SEARCH = range(120, 225)

TOTAL_ERROR_NOTE = (
    "total error = |sum(estimated) - sum(true)| / sum(true); "
    "for example 3463 counted of 3456 is 0.2025%, which rounds to 0.20% (not 0.19%)"
)


class TaskMismatch(ValueError):
    pass


@dataclass
class StrideConfig:
    stride: int = DEFAULT_STRIDE
    patch: int = 224
    offsets: tuple = ((0, 0),)

    def __post_init__(self):
        if not 0 < self.stride <= self.patch:
            raise ValueError(f"stride {self.stride} must lie in (0, {self.patch}]: larger strides leave gaps")
        self.offsets = tuple(tuple(int(v) for v in o) for o in self.offsets)
        if not self.offsets:
            raise ValueError("at least one offset required")
        if len(set(self.offsets)) != len(self.offsets):
            raise ValueError("offsets must be distinct")
        half = self.patch // 2
        for dx, dy in self.offsets:
            if not (0 <= dx <= half and 0 <= dy <= half):
                raise ValueError(f"offset {(dx, dy)} would leave the scene edge uncovered")

    @property
    def overlap(self):
        return self.patch - self.stride


def window_centers(length, stride, patch, offset=0):
    """Patch centres along one axis of a zero-padded scene.

    The first centre sits at ``offset``; centres advance by ``stride`` until
    the last patch reaches the far edge, so every pixel is covered.
    """
    half = patch // 2
    reach = patch - half
    out = [offset]
    while out[-1] + reach < length:
        out.append(out[-1] + stride)
    return out


def scene_windows(width, height, stride, patch, offset=(0, 0)):
    xs = window_centers(width, stride, patch, offset[0])
    ys = window_centers(height, stride, patch, offset[1])
    return [(x, y) for y in ys for x in xs]


# ------------------------------------------------------------ readout

def readout_counts(probs, readout="argmax"):
    probs = np.asarray(probs)
    if readout == "argmax":
        return probs.argmax(axis=-1)
    if readout == "expectation":
        return probs @ np.arange(probs.shape[-1], dtype=np.float64)
    raise ValueError(f"unknown readout {readout!r}")


def predict_counts(network, patches, readout="argmax", batch_size=64):
    if network.spec.task != "count64":
        raise TaskMismatch(f"network task is {network.spec.task}, expected count64")
    return readout_counts(network.probabilities(patches, batch_size), readout)


def predict_count(network, patch, readout="argmax"):
    value = predict_counts(network, np.asarray(patch)[None], readout)[0]
    return int(value) if readout == "argmax" else float(value)


class NetworkCounter:
    """Counts each window with a count64 network; windows run in batches."""

    def __init__(self, network, readout="argmax", batch_size=64, workers=1):
        if network.spec.task != "count64":
            raise TaskMismatch(f"network task is {network.spec.task}, expected count64")
        self.network = network
        self.readout = readout
        self.batch_size = batch_size
        self.workers = workers

    def _run(self, pixels, centers, patch):
        batch = np.stack([extract_patch(pixels, x, y, patch) for x, y in centers])
        return predict_counts(self.network, batch, self.readout, self.batch_size)

    def count_windows(self, pixels, centers, patch):
        chunks = [centers[i:i + self.batch_size] for i in range(0, len(centers), self.batch_size)]
        if self.workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                parts = list(pool.map(lambda c: self._run(pixels, c, patch), chunks))
        else:
            parts = [self._run(pixels, c, patch) for c in chunks]
        return np.concatenate(parts) if parts else np.zeros(0)


class OracleCounter:
    """Exact per-window counts from dot annotations under the inside rule."""

    def __init__(self, dots, min_inside=MIN_INSIDE, visible=None):
        self.dots = np.asarray(dots).reshape(-1, 2)
        self.min_inside = min_inside
        self.visible = visible

    def count_windows(self, pixels, centers, patch):
        half = patch // 2
        return np.array([count_inside(self.dots, x - half, y - half, patch, self.visible, self.min_inside)
                         for x, y in centers])


def _as_counter(counter):
    return counter if hasattr(counter, "count_windows") else NetworkCounter(counter)


# ------------------------------------------------------ scene counting

def count_scene(scene, counter, cfg: StrideConfig = StrideConfig()):
    """Estimated car count per offset in ``cfg.offsets``."""
    counter = _as_counter(counter)
    px = scene.pixels
    h, w = px.shape[:2]
    out = []
    for off in cfg.offsets:
        centers = scene_windows(w, h, cfg.stride, cfg.patch, off)
        out.append(float(np.sum(counter.count_windows(px, centers, cfg.patch))))
    return out


def multi_offset_count(scene, counter, cfg: StrideConfig):
    if len(cfg.offsets) < 2:
        raise ValueError("multi-offset counting needs at least two offsets")
    return float(np.mean(count_scene(scene, counter, cfg)))


def tune_stride(scene, counter, candidates=STRIDE_SEARCH, patch=224, true_count=None):
    """Stride minimising |count - true| on a validation scene; ties go to the larger stride."""
    candidates = sorted(set(int(c) for c in candidates))
    if not candidates:
        raise ValueError("empty stride candidate range")
    if candidates[0] <= 0 or candidates[-1] > patch:
        raise ValueError(f"stride candidates must lie in (0, {patch}]")
    counter = _as_counter(counter)
    truth = scene.car_count if true_count is None else true_count
    best, best_err = None, math.inf
    for s in candidates:
        est, = count_scene(scene, counter, StrideConfig(s, patch))
        err = abs(est - truth)
        if err <= best_err:
            best, best_err = s, err
    return best


# -------------------------------------------------------- statistics

@dataclass
class PatchCountStats:
    exact: float
    within1: float
    within2: float
    mae: float
    rmse: float
    proposal: float
    n: int = 0

    def row(self):
        return (f"{100 * self.exact:.2f}%\t{100 * self.within1:.2f}%\t{100 * self.within2:.2f}%\t"
                f"{self.mae:.3f}\t{self.rmse:.3f}\t{100 * self.proposal:.2f}%")


PATCH_STATS_HEADER = "Correct\tis +/- 1\tis +/- 2\tMAE\tRMSE\tProposal Acc"


def patch_count_stats(true, pred) -> PatchCountStats:
    true = np.asarray(true, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if true.size == 0:
        raise ValueError("no samples")
    err = np.abs(pred - true)
    return PatchCountStats(
        exact=float((err == 0).mean()),
        within1=float((err <= 1).mean()),
        within2=float((err <= 2).mean()),
        mae=float(err.mean()),
        rmse=float(np.sqrt((err ** 2).mean())),
        proposal=float(((pred == 0) == (true == 0)).mean()),
        n=int(true.size),
    )


def eval_patch_counts(network, samples, readout="argmax", batch_size=64) -> PatchCountStats:
    samples = list(samples)
    if not samples:
        raise ValueError("empty test set")
    pixels = np.stack([s.pixels for s in samples])
    pred = predict_counts(network, pixels, readout, batch_size)
    return patch_count_stats([s.count for s in samples], pred)


@dataclass
class SceneCount:
    name: str
    true: int
    estimated: float

    @property
    def percent_error(self):
        if self.true == 0:
            return None
        return 100.0 * abs(self.estimated - self.true) / self.true


@dataclass
class CountReport:
    scenes: list[SceneCount]
    mae: float = 0.0
    rmse: float = 0.0
    max_error: float = 0.0
    cars_in_max_error: int = 0
    total_error: float = 0.0
    total_true: int = 0
    total_estimated: float = 0.0
    excluded: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=lambda: [TOTAL_ERROR_NOTE])


def scene_report(pairs, names=None) -> CountReport:
    """Aggregate per-scene (true, estimated) counts into percent error metrics.

    Scenes with no true cars are listed in ``excluded`` and left out of every
    percent metric.
    """
    pairs = [(int(t), float(e)) for t, e in pairs]
    names = list(names) if names is not None else [f"scene{i:03d}" for i in range(len(pairs))]
    scenes = [SceneCount(n, t, e) for n, (t, e) in zip(names, pairs)]
    kept = [s for s in scenes if s.true > 0]
    report = CountReport(scenes, excluded=[s.name for s in scenes if s.true == 0])
    if not kept:
        return report
    pct = np.array([s.percent_error for s in kept])
    worst = int(np.argmax(pct))
    report.mae = float(pct.mean())
    report.rmse = float(np.sqrt((pct ** 2).mean()))
    report.max_error = float(pct[worst])
    report.cars_in_max_error = kept[worst].true
    report.total_true = sum(s.true for s in kept)
    report.total_estimated = float(sum(s.estimated for s in kept))
    report.total_error = 100.0 * abs(report.total_estimated - report.total_true) / report.total_true
    return report


def round_half_up(x):
    return int(math.floor(x + 0.5))


def format_report(report: CountReport) -> str:
    lines = ["scene\ttrue\testimated\tdisplay\tpercent_error"]
    for s in report.scenes:
        pe = "excluded" if s.percent_error is None else f"{s.percent_error:.2f}"
        lines.append(f"{s.name}\t{s.true}\t{s.estimated:.4f}\t{round_half_up(s.estimated)}\t{pe}")
    lines += [
        "",
        "MAE\tRMSE\tMax Error\tCars in ME\tTotal Error",
        f"{report.mae:.2f}%\t{report.rmse:.2f}%\t{report.max_error:.2f}%\t"
        f"{report.cars_in_max_error}\t{report.total_error:.2f}%",
        "",
        f"# total true {report.total_true}, total estimated {report.total_estimated:.4f}",
    ]
    if report.excluded:
        lines.append("# excluded (no true cars): " + ",".join(report.excluded))
    lines += [f"# note: {n}" for n in report.notes]
    return "\n".join(lines) + "\n"


def write_report(report: CountReport, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_report(report))
