"""Shared trained models and the acceptance summary."""
import time

import numpy as np
import pytest

from carcount.dataset import (TEST, TRAIN, center_crop, extract_classification_patches, extract_count_patches,
                              in_central_region, partition, synth_scene)
from carcount.detection import scan_patches
from carcount.nn import TrainConfig
from carcount.resception import NetworkSpec, build_network, train

# desk-scale counting recipe
COUNT_SCENES = 22
COUNT_ITERS = 4500
COUNT_LR = 0.05

ACCEPTANCE = []


def record(number, ok, detail):
    """Log one acceptance criterion; printed again in the session summary."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


def count_dataset(n_scenes, seed0=100):
    """Count patches from the train and test cells of ``n_scenes`` synthetic scenes."""
    rng = np.random.default_rng(seed0)
    tr, te = [], []
    for i in range(n_scenes):
        scene = synth_scene(seed0 + i, 2048, 2048, car_count=int(rng.integers(120, 260)),
                            clutter_level=float(rng.uniform(0.5, 1.5)))
        part = partition(scene)
        tr += extract_count_patches(scene, part, TRAIN, seed=i)
        te += extract_count_patches(scene, part, TEST, seed=i)

    def stack(samples):
        return np.stack([s.pixels for s in samples]), np.array([s.count for s in samples])

    return stack(tr), stack(te)


@pytest.fixture(scope="session")
def trained_counter():
    """A 1/16-width count64 network trained on synthetic patches, with its data stats."""
    t0 = time.perf_counter()
    (Xtr, ytr), (Xte, yte) = count_dataset(COUNT_SCENES)
    net = build_network(NetworkSpec(task="count64", scale=1 / 16))
    curve = train(net, (Xtr, ytr), TrainConfig(base_lr=COUNT_LR, max_iter=COUNT_ITERS, batch_size=32),
                  seed=0, augment=True)
    info = {"n_train": len(Xtr), "curve": curve, "seconds": time.perf_counter() - t0}
    del Xtr, ytr
    return net, (Xte, yte), info


@pytest.fixture(scope="session")
def trained_classifier():
    """A 1/16-width car/no-car network for scan tests.

    Besides the rotated target patches it sees car-free windows cut the way
    the scan cuts them, zero-padded edges included.
    """
    rng = np.random.default_rng(0)
    X, y = [], []
    for i in range(6):
        scene = synth_scene(300 + i, 1024, 1024, car_count=60, clutter_level=1.0)
        for s in extract_classification_patches(scene, partition(scene, 512), TRAIN, rotation_step=45,
                                                random_negatives=60, seed=i):
            X.append(center_crop(s.pixels, 224))
            y.append(s.label)
        dots = scene.dots()
        centers = [(int(a), int(b)) for a, b in rng.integers(-40, 1064, (150, 2))]
        for (cx, cy), patch in zip(centers, scan_patches(scene.pixels, centers)):
            if not in_central_region(dots[:, 0] - cx, dots[:, 1] - cy).any():
                X.append(patch)
                y.append(0)
    net = build_network(NetworkSpec(task="classify2", scale=1 / 16))
    train(net, (np.stack(X), np.array(y)), TrainConfig(base_lr=0.05, max_iter=1200, batch_size=32),
          seed=0, augment=True)
    return net
