import pytest

from carcount.bench import (BENCH_HEADER, BenchConfig, BenchResult, bench_scene, estimate_ops, ops_per_scene_pixel,
                            scene_area_km2, write_bench)
from carcount.dataset import synth_scene
from carcount.nn import INPUT, Graph
from carcount.resception import NetworkSpec, build_network

FPS_TABLE = [(11.486, 1.084), (2.731, 0.258), (2.906, 0.274), (1.337, 0.126), (1.294, 0.122)]


def test_scene_area():
    assert scene_area_km2() == pytest.approx(0.094372, abs=1e-6)
    assert scene_area_km2(2048, 0.30) == pytest.approx(4 * scene_area_km2())


@pytest.mark.parametrize("fps,km2", FPS_TABLE)
def test_km2_per_second(fps, km2):
    r = BenchResult("count", 1, 1, 1 / fps, 0.0)
    assert r.fps == pytest.approx(fps)
    assert abs(r.km2_per_s - km2) < 0.001


def test_gsd_scaling():
    a = BenchResult("count", 1, 1, 0.5, 0.0, gsd=0.15)
    b = BenchResult("count", 1, 1, 0.5, 0.0, gsd=0.30)
    assert b.km2_per_s == pytest.approx(4 * a.km2_per_s)


def test_ops_scaling():
    per_patch = 30_000 * 224 ** 2
    assert ops_per_scene_pixel(per_patch, 224) == pytest.approx(30_000)
    assert ops_per_scene_pixel(per_patch, 167) == pytest.approx(53_974, abs=1)
    assert ops_per_scene_pixel(per_patch, 100) == pytest.approx(4 * ops_per_scene_pixel(per_patch, 200))
    with pytest.raises(ValueError):
        ops_per_scene_pixel(per_patch, 0)


def test_estimate_ops_from_shapes():
    net = build_network(NetworkSpec(scale=1 / 16))
    macs = net.graph.macs_per_sample()
    assert estimate_ops(net, 167) == pytest.approx(macs / 167 ** 2)
    assert estimate_ops(net, 167) == estimate_ops(build_network(NetworkSpec(scale=1 / 16, seed=9)), 167)


def test_dense_scan_needs_a_million_ops_per_pixel():
    g = Graph((64, 64, 3))
    x = g.add("conv2d", INPUT, "c1", cin=3, cout=32, k=5, stride=2, pad=2)
    x = g.add("conv2d", x, "c2", cin=32, cout=64, k=3, stride=2, pad=1)
    g.outputs = [g.add("conv2d", x, "c3", cin=64, cout=64, k=3, stride=1, pad=1)]
    assert estimate_ops(g.macs_per_sample(), 1) >= 1e6


def test_bench_config_validation():
    with pytest.raises(ValueError):
        BenchConfig(runs=3)
    with pytest.raises(ValueError):
        BenchConfig(mode="train")


def test_bench_scene(tmp_path):
    net = build_network(NetworkSpec(scale=1 / 16))
    scene = synth_scene(0, 512, 512, 5)
    r = bench_scene(net, scene, BenchConfig(stride=200, workers=2))
    assert r.seconds > 0 and r.workers == 2 and r.batches == 1
    assert r.km2_per_s == pytest.approx(r.fps * scene_area_km2(512))
    write_bench([r], tmp_path / "bench.tsv")
    lines = (tmp_path / "bench.tsv").read_text().splitlines()
    assert lines[0] == BENCH_HEADER and len(lines) == 2
