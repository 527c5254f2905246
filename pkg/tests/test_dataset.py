import numpy as np
import pytest
from hypothesis import given, strategies as st

from carcount.dataset import (CENTRAL_REGION, TEST, TRAIN, Annotation, CapacityError, CountOverflow, GridPartition,
                              SceneImage, blank_scene, count_inside, extract_classification_patches,
                              extract_count_patches, extract_patch, format_dots, in_central_region, load_scene,
                              mask_context, parse_dots, partition, save_scene, synth_scene)
from carcount.dataset.synth import car_mask


def flat_scene(size=1024, dots=(), value=100):
    ann = [Annotation(*d) if len(d) > 2 else Annotation(d[0], d[1]) for d in dots]
    return SceneImage(np.full((size, size, 3), value, np.uint8), ann)


# ---------------------------------------------------------- partition

@pytest.mark.parametrize("side,train,test", [(2048, 3, 1), (4096, 12, 4)])
def test_partition_ratio(side, train, test):
    part = GridPartition(side, side)
    a = part.assignments()
    assert a.count(TRAIN) == train and a.count(TEST) == test


def test_partition_of_a_4x4_grid_holds_out_the_right_column():
    part = GridPartition(4096, 4096)
    assert [i for i in range(16) if part.split(i) == TEST] == [3, 7, 11, 15]


def test_partition_rejects_small_scene():
    with pytest.raises(ValueError):
        partition(blank_scene(512, 2048))


@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 60), st.integers(0, 60),
       st.integers(1, 30), st.integers(1, 30))
def test_region_split_matches_pixel_membership(w, h, x0, y0, bw, bh):
    part = GridPartition(40, 40, cell_size=8)
    expect = {part.split(part.cell_of(x, y))
              for y in range(y0, y0 + bh) for x in range(x0, x0 + bw) if x < 40 and y < 40}
    got = part.region_split(x0, y0, x0 + bw, y0 + bh)
    assert got == (expect.pop() if len(expect) == 1 else None)


def test_truncated_edge_cells():
    part = GridPartition(2500, 1100)
    assert (part.cols, part.rows) == (3, 2)
    assert part.cell_bounds(5) == (2048, 1024, 2500, 1100)


# ---------------------------------------------------------- geometry

def test_extract_patch_zero_pads_outside():
    px = np.arange(16, dtype=np.uint8).reshape(4, 4, 1)
    p = extract_patch(px, 0, 0, 4)
    assert p[:2].sum() == 0 and p[:, :2].sum() == 0
    np.testing.assert_array_equal(p[2:, 2:, 0], [[0, 1], [4, 5]])


def test_full_rotation_reproduces_patch():
    scene = synth_scene(5, 512, 512, 10)
    a = extract_patch(scene.pixels, 256, 256, 128).astype(float)
    b = extract_patch(scene.pixels, 256, 256, 128, angle=360.0 + 1e-9).astype(float)
    assert np.abs(a - b).mean() < 2


def test_rotation_by_90_matches_array_rotation():
    scene = synth_scene(6, 512, 512, 10)
    a = extract_patch(scene.pixels, 256, 256, 64)
    b = extract_patch(scene.pixels, 256, 256, 64, angle=90.0 + 1e-9)
    # at +90 degrees b[v, u] samples a[u, size - v]
    np.testing.assert_allclose(np.rot90(a)[:-1].astype(float), b[1:].astype(float), atol=1)


def test_central_region_boundary():
    half = CENTRAL_REGION // 2
    assert in_central_region(-half, 0) and not in_central_region(-half - 1, 0)
    assert in_central_region(half - 1, 0) and not in_central_region(half, 0)


def test_count_boundary_is_exactly_8px():
    # visible window 0..223; counted iff 8 <= u <= 215
    for u, inside in [(7, False), (8, True), (215, True), (216, False)]:
        assert count_inside([[u, 100]], 0, 0, 224) == int(inside)
        assert count_inside([[100, u]], 0, 0, 224) == int(inside)


def test_count_boundary_with_grey_margin():
    # 256 patch, 192 visible: margin 32, counted iff 40 <= u <= 215
    assert count_inside([[39, 100]], 0, 0, 256, visible=192) == 0
    assert count_inside([[40, 100]], 0, 0, 256, visible=192) == 1


def test_mask_context():
    p = np.arange(256 * 256 * 3, dtype=np.uint32).reshape(256, 256, 3).astype(np.uint8)
    np.testing.assert_array_equal(mask_context(p, 256), p)
    m = mask_context(p, 32)
    assert (m[:112] == 128).all() and (m[:, 144:] == 128).all()
    np.testing.assert_array_equal(m[112:144, 112:144], p[112:144, 112:144])
    m192 = mask_context(p, 192)
    assert (m192[:32] == 128).all() and (m192[32:224, 32:224] == p[32:224, 32:224]).all()
    with pytest.raises(ValueError):
        mask_context(p, 288)


# ------------------------------------------------------ classification

def test_one_car_one_negative_gives_48_patches():
    scene = flat_scene(dots=[(300, 300), (600, 300, "negative")])
    ps = extract_classification_patches(scene, partition(scene, 512), TRAIN, jitter=0)
    assert len(ps) == 48
    assert sorted({p.label for p in ps}) == [0, 1]
    for centre in {p.center for p in ps}:
        labels = {p.label for p in ps if p.center == centre}
        assert len(labels) == 1
    assert all(p.pixels.shape == (256, 256, 3) for p in ps)
    assert (ps[0].pixels[:32] == 128).all()


def test_off_centre_car_is_context_only():
    scene = flat_scene(dots=[(300, 300), (330, 600, "negative")])
    scene.annotations.append(Annotation(330 + 30, 600))
    ps = extract_classification_patches(scene, partition(scene, 512), TRAIN, rotation_step=0, jitter=0)
    by_center = {p.center: p.label for p in ps}
    assert by_center[(300, 300)] == 1
    assert by_center[(330, 600)] == 0


def test_label_flips_at_the_central_boundary():
    for dx, label in [(-24, 1), (-25, 0), (23, 1), (24, 0)]:
        scene = flat_scene(dots=[(300, 300, "negative")])
        scene.annotations.append(Annotation(300 + dx, 300))
        ps = extract_classification_patches(scene, partition(scene, 512), TRAIN, rotation_step=0, jitter=0)
        assert {p.center: p.label for p in ps}[(300, 300)] == label, dx


def test_edge_targets_are_skipped_and_counted():
    scene = flat_scene(dots=[(20, 20), (300, 300)])
    ps = extract_classification_patches(scene, partition(scene, 512), TRAIN, jitter=0)
    assert len(ps) == 24 and ps.skipped == 1


def test_ambiguous_cars_dropped_for_classification_kept_for_counting():
    scene = flat_scene(dots=[(300, 300, "car", True), (300, 700)])
    part = partition(scene, 512)
    ps = extract_classification_patches(scene, part, TRAIN, rotation_step=0, jitter=0)
    assert {p.center for p in ps} == {(300, 700)}
    cs = extract_count_patches(scene, part, TRAIN, jitter=0, random_count=0)
    assert {c.center for c in cs} == {(300, 300), (300, 700)}


def test_train_and_test_patch_sources_are_disjoint():
    scene = synth_scene(11, 2048, 2048, 60)
    part = partition(scene)
    for split in (TRAIN, TEST):
        ps = extract_classification_patches(scene, part, split, rotation_step=90, random_negatives=20, seed=1)
        assert ps
        r = int(np.ceil(128 * np.sqrt(2))) + 1
        for x, y in {p.center for p in ps}:
            assert part.region_split(x - r, y - r, x + r, y + r) == split
        cs = extract_count_patches(scene, part, split, seed=1)
        for c in cs:
            x, y = c.center
            assert part.region_split(x - 112, y - 112, x + 112, y + 112) == split


# ----------------------------------------------------------- counting

def test_count_labels_match_brute_force():
    scene = synth_scene(12, 2048, 2048, 200)
    cars = scene.dots("car")
    cs = extract_count_patches(scene, partition(scene), TRAIN, seed=2)
    assert len(cs) > 100
    assert any(c.count == 0 for c in cs)
    for c in cs:
        x0, y0 = c.center[0] - 112, c.center[1] - 112
        brute = sum(1 for x, y in cars if x0 + 8 <= x <= x0 + 215 and y0 + 8 <= y <= y0 + 215)
        assert c.count == brute


def test_empty_region_counts_zero():
    scene = flat_scene(dots=[(300, 300)])
    cs = extract_count_patches(scene, partition(scene, 512), TRAIN, jitter=0, random_count=0)
    assert [c.count for c in cs] == [1]
    assert count_inside(scene.dots(), 600 - 112, 200 - 112, 224) == 0


def test_count_overflow():
    dots = [(400 + 12 * (i % 8), 400 + 12 * (i // 8)) for i in range(64)]
    scene = flat_scene(dots=dots)
    with pytest.raises(CountOverflow):
        extract_count_patches(scene, partition(scene, 1024), TRAIN, jitter=0, random_count=0)


# -------------------------------------------------------------- synth

def test_synth_is_deterministic():
    a, b = synth_scene(3, 1024, 1024, 40), synth_scene(3, 1024, 1024, 40)
    np.testing.assert_array_equal(a.pixels, b.pixels)
    assert a.annotations == b.annotations
    assert synth_scene(4, 1024, 1024, 40).pixels.tobytes() != a.pixels.tobytes()


def test_synth_counts_and_sizes():
    s = synth_scene(8, 2048, 2048, 120)
    assert s.car_count == 120
    lengths = [o["length"] for o in s.objects if o["kind"] == "car"]
    assert min(lengths) >= 24 and max(lengths) <= 48
    assert len(s.dots("negative")) > 0
    assert synth_scene(1, 1024, 1024, 0).car_count == 0


def test_synth_grayscale():
    assert synth_scene(2, 1024, 1024, 5, grayscale=True).pixels.shape == (1024, 1024, 1)


def test_synth_capacity_error():
    with pytest.raises(CapacityError):
        synth_scene(0, 256, 256, 500)
    with pytest.raises(ValueError):
        synth_scene(0, 256, 256, -1)


def test_car_mask_is_a_rounded_rectangle():
    u, v = np.meshgrid(np.arange(-30, 31), np.arange(-30, 31))
    m = car_mask(u, v, 40, 18)
    assert m[30, 30] and m[30, 30 + 18] and not m[30, 30 + 22]
    assert m[30 + 8, 30] and not m[30 + 11, 30]


# ------------------------------------------------------------ formats

def test_dots_round_trip():
    ann = [Annotation(1, 2), Annotation(3, 4, "negative"), Annotation(5, 6, "car", True)]
    text = format_dots(ann)
    assert text.splitlines()[0] == "#carcount-dots v1"
    assert parse_dots(text) == ann


@pytest.mark.parametrize("bad", ["#carcount-dots v1\n1,2,truck\n", "#carcount-dots v1\n1\n", "1,2,car\n"])
def test_dots_reject_bad_lines(bad):
    with pytest.raises(ValueError):
        parse_dots(bad)


def test_scene_png_round_trip(tmp_path):
    s = synth_scene(9, 1024, 1024, 20)
    png, _ = save_scene(s, tmp_path / "s")
    back = load_scene(png)
    np.testing.assert_array_equal(back.pixels, s.pixels)
    assert back.annotations == s.annotations


def test_annotations_must_lie_inside():
    with pytest.raises(ValueError):
        SceneImage(np.zeros((10, 10, 3), np.uint8), [Annotation(10, 0)])
    with pytest.raises(ValueError):
        SceneImage(np.zeros((10, 10, 2), np.uint8))
