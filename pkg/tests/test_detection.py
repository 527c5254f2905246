import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carcount.dataset import blank_scene
from carcount.detection import (BoundingBox, DetectionScore, HeatMap, WrongNetwork, box_overlap, heat_value,
                                local_maxima, nms, read_boxes, render_overlay, save_heatmap_png,
                                save_heatmap_raw, scan, scan_patches, score, suppress, write_boxes)
from carcount.resception import NetworkSpec, build_network


def test_heat_value_extremes():
    assert heat_value(1.0, 0.0) == 1.0
    assert heat_value(0.0, 1.0) == 0.0
    assert heat_value(0.5, 0.5) == pytest.approx(2.0 ** -16)


@given(st.floats(0, 1))
def test_heat_exponent_one_is_identity(o1):
    assert heat_value(o1, 1 - o1, exponent=1) == pytest.approx(o1)


def test_heat_is_strictly_increasing():
    o1 = np.linspace(0, 1, 1000)
    p = heat_value(o1)
    assert (np.diff(p[1:]) > 0).all() and p[0] == 0


def test_heatmap_validates_range():
    with pytest.raises(ValueError):
        HeatMap(np.array([[1.5]]))


# ---------------------------------------------------------------- nms

def test_nms_empty():
    assert nms(HeatMap(np.zeros((10, 10)))) == []


def heat_with(peaks, shape=(40, 40), stride=1):
    v = np.zeros(shape)
    for (i, j), s in peaks.items():
        v[i, j] = s
    return HeatMap(v, stride)


def test_nms_keeps_separated_boxes():
    boxes = nms(heat_with({(10, 10): 0.9, (10, 58): 0.8}, shape=(20, 80)))
    assert [(b.x, b.y) for b in boxes] == [(10, 10), (58, 10)]


def test_nms_suppresses_20px_neighbour():
    boxes = nms(heat_with({(10, 10): 0.9, (10, 30): 0.8}))
    assert [(b.x, b.y, b.score) for b in boxes] == [(10, 10, 0.9)]
    assert box_overlap(BoundingBox(10, 10, 1), BoundingBox(30, 10, 1)) == 28


def test_nms_allows_exactly_20px_overlap():
    boxes = nms(heat_with({(10, 10): 0.9, (10, 38): 0.8}, shape=(20, 60)))
    assert len(boxes) == 2


def test_nms_threshold():
    assert nms(heat_with({(5, 5): 0.74})) == []
    assert len(nms(heat_with({(5, 5): 0.75}))) == 1


def test_nms_uses_stride_coordinates():
    b, = nms(heat_with({(3, 4): 0.9}, shape=(10, 10), stride=8))
    assert (b.x, b.y, b.side) == (32, 24, 48)


def test_plateau_keeps_lexicographically_smallest():
    v = np.zeros((6, 6))
    v[2:4, 2:4] = 0.9
    assert [ij for ij in local_maxima(v) if v[ij] > 0] == [(2, 2)]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_nms_pairwise_overlap_and_order_independence(seed):
    rng = np.random.default_rng(seed)
    v = rng.random((24, 24)) ** 0.3
    if rng.random() < 0.3:
        v = np.round(v, 1)
    heat = HeatMap(v, stride=int(rng.integers(1, 9)))
    boxes = nms(heat)
    for i, a in enumerate(boxes):
        assert a.score >= 0.75 and a.side == 48
        for b in boxes[i + 1:]:
            assert box_overlap(a, b) <= 20
    cands = [(*heat.center(i, j), v[i, j]) for i, j in local_maxima(v) if v[i, j] >= 0.75]
    perm = [cands[k] for k in rng.permutation(len(cands))]
    assert suppress(perm) == boxes


# ------------------------------------------------------------ scoring

def test_score_arithmetic():
    s = DetectionScore(260, 253, 9, 7, "verification")
    assert round(100 * s.precision, 2) == 96.56
    assert round(100 * s.recall, 2) == 97.31
    assert round(100 * s.f1, 2) == 96.93


def test_score_empty_convention():
    s = score([], np.zeros((0, 2)))
    assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0)


def test_split_costs_a_false_positive_in_detection_mode():
    boxes = [BoundingBox(100, 100, 0.9), BoundingBox(110, 100, 0.8)]
    dots = [(105, 100)]
    v = score(boxes, dots, "verification")
    d = score(boxes, dots, "detection")
    assert (v.tp, v.fp, v.fn) == (1, 0, 0)
    assert (d.tp, d.fp, d.fn) == (1, 1, 0)


def test_merger_costs_a_false_negative_in_detection_mode():
    boxes = [BoundingBox(100, 100, 0.9)]
    dots = [(92, 100), (108, 100)]
    v = score(boxes, dots, "verification")
    d = score(boxes, dots, "detection")
    assert (v.tp, v.fp, v.fn) == (2, 0, 0)
    assert (d.tp, d.fp, d.fn) == (1, 0, 1)
    assert d.tp + d.fn == d.count


def test_half_area_rule():
    # 32-px footprint: a dot 24 px off the box centre has exactly half inside
    assert score([BoundingBox(100, 100, 1)], [(124, 100)]).tp == 1
    assert score([BoundingBox(100, 100, 1)], [(125, 100)]).tp == 0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_verification_never_below_detection(seed):
    rng = np.random.default_rng(seed)
    dots = rng.integers(0, 300, (int(rng.integers(0, 15)), 2))
    boxes = [BoundingBox(int(x), int(y), 0.9) for x, y in rng.integers(0, 300, (int(rng.integers(0, 15)), 2))]
    v, d = score(boxes, dots, "verification"), score(boxes, dots, "detection")
    assert v.tp >= d.tp
    assert d.tp + d.fn == len(dots) and d.tp + d.fp == len(boxes)


def test_unknown_mode():
    with pytest.raises(ValueError):
        score([], [], "strict")


# --------------------------------------------------------------- scan

@pytest.fixture(scope="module")
def classifier():
    return build_network(NetworkSpec(task="classify2", scale=1 / 16))


def test_scan_grid_shape(classifier):
    heat = scan(blank_scene(96, 64), classifier, stride=8)
    assert heat.values.shape == (8, 12)
    assert ((0 <= heat.values) & (heat.values <= 1)).all()


def test_scan_patch_layout():
    px = np.full((300, 300, 3), 50, np.uint8)
    p, = scan_patches(px, [(150, 150)])
    assert p.shape == (224, 224, 3)
    assert (p[:16] == 128).all() and (p[:, -16:] == 128).all()
    assert (p[16:208, 16:208] == 50).all()
    edge, = scan_patches(px, [(0, 0)])
    assert (edge[16:112, 16:112] == 0).all() and (edge[112:208, 112:208] == 50).all()


def test_scan_rejects_count_network_and_bad_geometry(classifier):
    with pytest.raises(WrongNetwork):
        scan(blank_scene(64, 64), build_network(NetworkSpec(task="count64", scale=1 / 16)))
    with pytest.raises(WrongNetwork):
        scan(blank_scene(64, 64), classifier, core=200, margin=32)


def test_scan_workers_agree(classifier):
    scene = blank_scene(160, 160)
    scene.pixels[40:80, 40:80] = 200
    a = scan(scene, classifier, stride=16, batch_size=8)
    b = scan(scene, classifier, stride=16, batch_size=8, workers=3)
    np.testing.assert_array_equal(a.values, b.values)


# ---------------------------------------------------------- artifacts

def test_artifacts(tmp_path):
    heat = HeatMap(np.linspace(0, 1, 12).reshape(3, 4), stride=8)
    save_heatmap_png(heat, tmp_path / "h.png")
    save_heatmap_raw(heat, tmp_path / "h.f32")
    raw = np.fromfile(tmp_path / "h.f32", dtype="<f4").reshape(3, 4)
    np.testing.assert_allclose(raw, heat.values, rtol=1e-6)
    assert "rows=3" in (tmp_path / "h.f32.shape").read_text()
    boxes = [BoundingBox(8, 16, 0.875), BoundingBox(24, 0, 1.0)]
    write_boxes(boxes, tmp_path / "b.csv")
    assert (tmp_path / "b.csv").read_text().splitlines()[0] == "x,y,side,score"
    assert read_boxes(tmp_path / "b.csv") == boxes
    render_overlay(blank_scene(32, 24), heat, boxes, tmp_path / "o.png")
    assert (tmp_path / "o.png").stat().st_size > 0
