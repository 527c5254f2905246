"""Command-line entry points: carcount <command> [flags]."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import bench, counting, detection
from .dataset import (TEST, TRAIN, center_crop, extract_classification_patches, extract_count_patches,
                      list_scenes, load_scene, partition, save_scene, synth_scene)
from .nn import TrainConfig
from .resception import Network, NetworkSpec, accuracy, build_network, train

log = logging.getLogger("carcount")

INDEX = "patch_index.tsv"


# ------------------------------------------------------------- helpers

def parse_range(text):
    """``a..b:step`` (inclusive) or ``a:b`` or a single integer."""
    if ".." in text:
        span, _, step = text.partition(":")
        lo, hi = span.split("..")
        return list(range(int(lo), int(hi) + 1, int(step or 1)))
    if ":" in text:
        lo, hi = text.split(":")
        return list(range(int(lo), int(hi) + 1))
    return [int(text)]


def read_config(path):
    out = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise SystemExit(f"{path}: bad config line {raw!r}")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def scene_paths(arg):
    p = Path(arg)
    paths = list_scenes(p) if p.is_dir() else [p]
    if not paths:
        raise SystemExit(f"no scenes found in {arg}")
    return paths


def write_patch_set(samples, out_dir, task):
    out_dir = Path(out_dir)
    (out_dir / "patches").mkdir(parents=True, exist_ok=True)
    rows = ["path\tlabel\trotation\tsource_cell"]
    for i, s in enumerate(samples):
        rel = f"patches/{i:06d}.png"
        px = s.pixels[..., 0] if s.pixels.shape[2] == 1 else s.pixels
        Image.fromarray(px).save(out_dir / rel)
        label = s.label if task == "classify" else s.count
        rotation = getattr(s, "rotation", 0.0)
        rows.append(f"{rel}\t{label}\t{rotation:g}\t{s.source_cell}")
    (out_dir / INDEX).write_text("\n".join(rows) + "\n", encoding="utf-8")


def read_patch_set(directory, size=None):
    directory = Path(directory)
    lines = (directory / INDEX).read_text(encoding="utf-8").splitlines()[1:]
    xs, ys = [], []
    for line in lines:
        rel, label, _, _ = line.split("\t")
        with Image.open(directory / rel) as im:
            px = np.asarray(im)
        px = px[..., None] if px.ndim == 2 else px
        if size is not None and px.shape[0] > size:
            px = center_crop(px, size)
        xs.append(px)
        ys.append(int(label))
    if not xs:
        raise SystemExit(f"{directory}: empty patch set")
    return np.stack(xs), np.asarray(ys, dtype=np.int64)


def _out(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------ commands

def cmd_synth(args):
    out = _out(args)
    cars = parse_range(args.cars)
    rng = np.random.default_rng(args.seed)
    for i in range(args.scenes):
        n = int(rng.choice(cars))
        scene = synth_scene(args.seed * 1000 + i, args.size, args.size, n, args.clutter, args.gsd,
                            grayscale=args.grayscale)
        save_scene(scene, out / f"scene_{i:03d}")
        print(f"scene_{i:03d}\t{scene.car_count} cars")
    return 0


def cmd_extract(args):
    samples = []
    for k, path in enumerate(scene_paths(args.scenes)):
        scene = load_scene(path, gsd=args.gsd)
        part = partition(scene, args.cell_size)
        seed = args.seed * 1000 + k
        if args.task == "classify":
            samples += extract_classification_patches(
                scene, part, args.split, args.rotation_step, args.size, args.visible,
                random_negatives=args.random_negatives, seed=seed)
        else:
            samples += extract_count_patches(scene, part, args.split, args.size, visible=args.visible,
                                             seed=seed)
    write_patch_set(samples, _out(args), args.task)
    print(f"{len(samples)} patches -> {Path(args.out_dir) / INDEX}")
    return 0


def _spec(args):
    return NetworkSpec(task="classify2" if args.task == "classify" else "count64", depth=args.depth,
                       error_heads=args.heads, input_size=args.input_size, scale=args.scale, seed=args.seed)


def _train_cfg(args):
    return TrainConfig(base_lr=args.lr, max_iter=args.iters, batch_size=args.batch_size,
                       momentum=args.momentum, weight_decay=args.weight_decay, lr_power=args.lr_power)


def cmd_train(args):
    out = _out(args)
    X, y = read_patch_set(args.patches, args.input_size)
    net = build_network(_spec(args))
    curve = train(net, (X, y), _train_cfg(args), seed=args.seed, augment=args.augment)
    net.save(out / "model.ocnn")
    (out / "train_curve.tsv").write_text(
        "iter\tloss\n" + "".join(f"{i}\t{v:.6f}\n" for i, v in enumerate(curve)), encoding="utf-8")
    print(f"trained {len(curve)} iterations, final loss {np.mean(curve[-20:]):.4f}")
    return 0


def cmd_eval_patches(args):
    out = _out(args)
    net = Network.load(args.model)
    X, y = read_patch_set(args.patches, net.spec.input_size)
    if net.spec.task == "count64":
        stats = counting.patch_count_stats(y, counting.predict_counts(net, X, args.readout))
        text = counting.PATCH_STATS_HEADER + "\n" + stats.row() + "\n"
    else:
        text = f"accuracy\n{100 * accuracy(net, X, y):.2f}%\n"
    (out / "patch_stats.tsv").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_detect(args):
    out = _out(args)
    net = Network.load(args.model)
    core = net.spec.input_size - args.margin
    rows = [detection.SCORE_HEADER]
    for path in scene_paths(args.scene):
        scene = load_scene(path, gsd=args.gsd)
        heat = detection.scan(scene, net, args.stride, core, args.margin, args.exponent, workers=args.workers)
        boxes = detection.nms(heat, args.threshold, args.max_overlap)
        tag = "" if Path(args.scene).is_file() else f"{path.stem}_"
        detection.save_heatmap_png(heat, out / f"{tag}heatmap.png")
        detection.save_heatmap_raw(heat, out / f"{tag}heatmap.f32")
        detection.write_boxes(boxes, out / f"{tag}boxes.csv")
        detection.render_overlay(scene, heat, boxes, out / f"{tag}overlay.png")
        cars = scene.dots("car")
        for mode in ("verification", "detection"):
            rows.append(detection.score(boxes, cars, mode).row())
    (out / "detection_score.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    print("\n".join(rows))
    return 0


def cmd_count(args):
    out = _out(args)
    if args.oracle:
        make = lambda scene: counting.OracleCounter(scene.dots("car"))   # noqa: E731
        patch = args.patch
    else:
        net = Network.load(args.model)
        shared = counting.NetworkCounter(net, args.readout, workers=args.workers)
        make = lambda scene: shared   # noqa: E731
        patch = net.spec.input_size
    stride = args.stride
    if args.tune_scene:
        val = load_scene(args.tune_scene, gsd=args.gsd)
        stride = counting.tune_stride(val, make(val), parse_range(args.stride_range), patch)
        print(f"tuned stride {stride}")
    offsets = counting.FOUR_OFFSETS if args.offsets == 4 else ((0, 0),)
    cfg = counting.StrideConfig(stride, patch, offsets)
    pairs, names = [], []
    for path in scene_paths(args.scenes):
        scene = load_scene(path, gsd=args.gsd)
        est = float(np.mean(counting.count_scene(scene, make(scene), cfg)))
        pairs.append((scene.car_count, est))
        names.append(path.stem)
    report = counting.scene_report(pairs, names)
    report.notes.append(f"stride {stride}, patch {patch}, offsets {len(offsets)}")
    counting.write_report(report, out / "count_report.tsv")
    print(counting.format_report(report), end="")
    return 0


def cmd_context_sweep(args):
    out = _out(args)
    visibles = parse_range(args.visible)
    paths = scene_paths(args.scenes)
    scenes = [load_scene(p, gsd=args.gsd) for p in paths]
    rows = ["visible\ttrain_patches\ttest_patches\taccuracy"]
    for v in visibles:
        data = {}
        for split in (TRAIN, TEST):
            xs, ys = [], []
            for k, scene in enumerate(scenes):
                ps = extract_classification_patches(scene, partition(scene, args.cell_size), split,
                                                    args.rotation_step, args.size, v,
                                                    random_negatives=args.random_negatives,
                                                    seed=args.seed * 1000 + k)
                xs += [p.pixels for p in ps]
                ys += [p.label for p in ps]
            if not xs:
                raise SystemExit(f"no {split} patches extracted")
            data[split] = (np.stack(xs), np.asarray(ys, dtype=np.int64))
        spec = NetworkSpec(task="classify2", depth=args.depth, error_heads=args.heads, input_size=args.size,
                           scale=args.scale, seed=args.seed)
        net = build_network(spec)
        train(net, data[TRAIN], _train_cfg(args), seed=args.seed, augment=args.augment)
        acc = accuracy(net, *data[TEST])
        rows.append(f"{v}\t{len(data[TRAIN][1])}\t{len(data[TEST][1])}\t{100 * acc:.2f}%")
        print(rows[-1])
    (out / "context_sweep.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return 0


def cmd_bench(args):
    out = _out(args)
    net = Network.load(args.model)
    if args.scene.isdigit():
        side = int(args.scene)
        scene = synth_scene(args.seed, side, side, max(1, side * side // 40000), gsd=args.gsd)
    else:
        scene = load_scene(args.scene, gsd=args.gsd)
    mode = args.mode or ("count" if net.spec.task == "count64" else "detect")
    stride = args.stride or (counting.DEFAULT_STRIDE if mode == "count" else 8)
    cfg = bench.BenchConfig(mode, stride, args.offsets, args.runs, args.gsd, args.workers)
    res = bench.bench_scene(net, scene, cfg)
    path = out / "bench.tsv"
    path.unlink(missing_ok=True)
    bench.write_bench([res], path)
    print(bench.BENCH_HEADER)
    print(res.row())
    return 0


# -------------------------------------------------------------- parser

def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="key=value file overriding flag defaults")
    p.add_argument("--out-dir", default="out")
    p.add_argument("--gsd", type=float, default=0.15, help="metres per pixel")
    p.add_argument("--workers", type=int, default=1)


def _train_flags(p):
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--lr-power", type=float, default=0.5)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=0.0002)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--scale", type=float, default=0.0625, help="channel width multiplier")
    p.add_argument("--depth", choices=["standard", "tall"], default="standard")
    p.add_argument("--heads", type=int, choices=[1, 3], default=1)
    p.add_argument("--augment", action="store_true", help="random flips and transposes")


def build_parser():
    parser = argparse.ArgumentParser(prog="carcount", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    _common(p)
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--size", type=int, default=2048)
    p.add_argument("--cars", default="100", help="count or lo:hi range")
    p.add_argument("--clutter", type=float, default=1.0)
    p.add_argument("--grayscale", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="extract a patch set")
    _common(p)
    p.add_argument("--scenes", required=True, help="scene PNG or directory")
    p.add_argument("--task", choices=["classify", "count"], default="count")
    p.add_argument("--split", choices=[TRAIN, TEST], default=TRAIN)
    p.add_argument("--size", type=int, default=None, help="patch side (256 classify, 224 count)")
    p.add_argument("--visible", type=int, default=None, help="visible window; rest greyed")
    p.add_argument("--rotation-step", type=float, default=15.0)
    p.add_argument("--random-negatives", type=int, default=0)
    p.add_argument("--cell-size", type=int, default=1024)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a classifier or counter")
    _common(p)
    _train_flags(p)
    p.add_argument("--patches", required=True, help="patch set directory")
    p.add_argument("--task", choices=["classify", "count"], default="count")
    p.add_argument("--input-size", type=int, default=224)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-patches", help="evaluate a model on a patch set")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--patches", required=True)
    p.add_argument("--readout", choices=["argmax", "expectation"], default="argmax")
    p.set_defaults(func=cmd_eval_patches)

    p = sub.add_parser("detect", help="heat map scan, NMS and scoring")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--scene", required=True, help="scene PNG or directory")
    p.add_argument("--stride", type=int, default=8)
    p.add_argument("--threshold", type=float, default=0.75)
    p.add_argument("--exponent", type=float, default=16)
    p.add_argument("--margin", type=int, default=32, help="total grey border around the scan core")
    p.add_argument("--max-overlap", type=int, default=20)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("count", help="one-look scene counting")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model")
    src.add_argument("--oracle", action="store_true", help="count windows from the dot annotations")
    p.add_argument("--scenes", required=True)
    p.add_argument("--stride", type=int, default=counting.DEFAULT_STRIDE)
    p.add_argument("--offsets", type=int, choices=[1, 4], default=1)
    p.add_argument("--patch", type=int, default=224, help="window side for --oracle")
    p.add_argument("--tune-scene", help="validation scene for stride tuning")
    p.add_argument("--stride-range", default="120:224")
    p.add_argument("--readout", choices=["argmax", "expectation"], default="argmax")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("context-sweep", help="classifier accuracy against visible window size")
    _common(p)
    _train_flags(p)
    p.add_argument("--scenes", required=True)
    p.add_argument("--visible", default="32..256:32")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--rotation-step", type=float, default=90.0)
    p.add_argument("--random-negatives", type=int, default=20)
    p.add_argument("--cell-size", type=int, default=1024)
    p.set_defaults(func=cmd_context_sweep)

    p = sub.add_parser("bench", help="time whole-scene scans")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--scene", default="2048", help="scene PNG or side of a synthetic scene")
    p.add_argument("--mode", choices=["count", "detect"])
    p.add_argument("--stride", type=int)
    p.add_argument("--offsets", type=int, choices=[1, 4], default=1)
    p.add_argument("--runs", type=int, default=5)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        overrides = {}
        for key, value in read_config(args.config).items():
            if key not in known:
                parser.error(f"{args.config}: unknown key {key!r}")
            act = known[key]
            overrides[key] = act.type(value) if act.type else (value.lower() in ("1", "true", "yes")
                                                               if act.const is True else value)
        sub.set_defaults(**overrides)
        args = parser.parse_args(argv)
    if args.command == "extract" and args.size is None:
        args.size = 256 if args.task == "classify" else 224
    if args.command == "extract" and args.task == "classify" and args.visible is None:
        args.visible = 192
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"carcount {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
