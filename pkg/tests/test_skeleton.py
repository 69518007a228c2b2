import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionedit.skeleton import (
    BONE_PALETTE,
    BONES,
    JOINT_NAMES,
    DegenerateExtentError,
    SceneError,
    SceneSpec,
    Skeleton,
    SkeletonError,
    SkeletonSequence,
    gen_scene,
    get_center,
    get_hw,
    line_pixels,
    load_skeletons,
    make_mask,
    offset_skeletons,
    rasterize,
    rasterize_sequence,
    save_skeletons,
    scene_skeletons,
)


def box_seq(cx, cy, h, w, extra=(), frames=1, size=(256, 256)):
    """Two joints spanning the box corners plus optional interior joints."""
    pts = [(cx - w / 2, cy - h / 2), (cx + w / 2, cy + h / 2), *extra]
    coords = np.tile(np.array(pts, dtype=float)[None], (frames, 1, 1))
    names = tuple(f"j{i}" for i in range(len(pts)))
    return SkeletonSequence(coords, np.ones(coords.shape[:2], bool), size, names, ((0, 1),))


def random_seq(rng, frames, joints=6):
    coords = rng.uniform(0, 200, size=(frames, joints, 2))
    names = tuple(f"j{i}" for i in range(joints))
    return SkeletonSequence(coords, np.ones((frames, joints), bool), (256, 256), names, ((0, 1),))


class TestTopology:
    def test_counts(self):
        assert len(JOINT_NAMES) == 14
        assert len(BONES) == 13
        assert len(BONE_PALETTE) == len(BONES)

    def test_tree(self):
        # every joint reachable, no cycles
        assert len({j for b in BONES for j in b}) == len(JOINT_NAMES)
        assert len(BONES) == len(JOINT_NAMES) - 1


class TestOffset:
    def test_center_and_extents(self):
        seq = box_seq(40, 60, 100, 50)
        assert get_center(seq) == (40.0, 60.0)
        assert get_hw(seq) == (100.0, 50.0)

    def test_hand_example(self):
        src = box_seq(40, 60, 100, 50)
        ref = box_seq(100, 100, 200, 100, extra=[(120, 140)])
        out = offset_skeletons(src, ref)
        assert tuple(out.coords[0, 2]) == (50.0, 80.0)

    def test_identity(self):
        seq = random_seq(np.random.default_rng(0), 4)
        out = offset_skeletons(seq, seq)
        assert np.array_equal(out.coords, seq.coords)

    def test_pure_translation_maps_back_onto_source(self):
        seq = random_seq(np.random.default_rng(1), 3)
        out = offset_skeletons(seq, seq.translated(40.0, -7.0))
        np.testing.assert_allclose(out.coords, seq.coords, atol=1e-12)

    def test_conjugacy_1000_pairs(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            f = int(rng.integers(1, 5))
            src, ref = random_seq(rng, f), random_seq(rng, f)
            out = offset_skeletons(src, ref)
            np.testing.assert_allclose(get_center(out), get_center(src), atol=1e-6)
            np.testing.assert_allclose(get_hw(out), get_hw(src), atol=1e-6)
            assert out.coords.shape == ref.coords.shape and out.bones == ref.bones

    def test_per_frame(self):
        rng = np.random.default_rng(3)
        src, ref = random_seq(rng, 3), random_seq(rng, 3)
        out = offset_skeletons(src, ref, per_frame=True)
        for i in range(3):
            np.testing.assert_allclose(get_center(out, i), get_center(src, i), atol=1e-9)

    def test_per_frame_length_mismatch(self):
        rng = np.random.default_rng(4)
        with pytest.raises(SkeletonError):
            offset_skeletons(random_seq(rng, 2), random_seq(rng, 3), per_frame=True)

    def test_degenerate_reference(self):
        flat = box_seq(10, 10, 0, 20)
        with pytest.raises(DegenerateExtentError, match="h=0"):
            offset_skeletons(box_seq(10, 10, 5, 5), flat)

    def test_invisible_joints_ignored(self):
        seq = box_seq(40, 60, 100, 50, extra=[(1000, 1000)])
        seq.visible[0, 2] = False
        assert get_center(seq) == (40.0, 60.0)

    def test_needs_two_joints(self):
        seq = box_seq(0, 0, 2, 2)
        seq.visible[0, 1] = False
        with pytest.raises(SkeletonError):
            get_center(seq)


class TestRaster:
    def test_bresenham_endpoints_and_connectivity(self):
        pts = line_pixels(0, 0, 7, 3)
        assert pts[0] == (0, 0) and pts[-1] == (7, 3)
        for (a, b), (c, d) in zip(pts, pts[1:]):
            assert max(abs(a - c), abs(b - d)) == 1

    @settings(max_examples=50, deadline=None)
    @given(st.integers(-20, 20), st.integers(-20, 20), st.integers(-20, 20), st.integers(-20, 20))
    def test_bresenham_symmetric_length(self, x0, y0, x1, y1):
        pts = line_pixels(x0, y0, x1, y1)
        assert len(pts) == max(abs(x1 - x0), abs(y1 - y0)) + 1
        assert len(set(pts)) == len(pts)

    def test_golden_single_bone(self):
        skel = Skeleton([[2, 8], [12, 8]], [True, True], ((0, 1),))
        img = rasterize(skel, (16, 16))
        yy, xx = np.mgrid[0:16, 0:16]
        expected = ((xx >= 1) & (xx <= 13) & (yy >= 7) & (yy <= 9))
        for cx in (2, 12):
            expected |= (xx - cx) ** 2 + (yy - 8) ** 2 <= 4
        assert np.array_equal(img.any(axis=0), expected)
        # joint discs drawn white over the bone colour
        assert np.array_equal(img[:, 8, 2], [1, 1, 1])
        np.testing.assert_array_equal(img[:, 8, 7], BONE_PALETTE[0])

    def test_invisible_joint_drops_bone(self):
        skel = Skeleton([[2, 8], [12, 8]], [True, False], ((0, 1),))
        img = rasterize(skel, (16, 16))
        assert img.any(axis=0).sum() == 13  # one radius-2 disc

    def test_out_of_frame_clamped(self):
        skel = Skeleton([[-50, 8], [100, 8]], [True, True], ((0, 1),))
        img = rasterize(skel, (16, 16))
        assert img[:, 8, 0].any() and img[:, 8, 15].any()

    def test_mask_covers_raster(self):
        scene = gen_scene(SceneSpec())
        raster = rasterize_sequence(scene.skeletons)
        assert raster.shape == (8, 3, 32, 32)
        assert np.all(scene.masks[:, 0][raster.any(axis=1)] == 1)

    def test_mask_values(self):
        m = make_mask(Skeleton([[5, 5], [10, 5]], [True, True], ((0, 1),)), (16, 16))
        assert m.shape == (1, 16, 16)
        assert set(np.unique(m)) <= {0.0, 1.0}


class TestScenes:
    def test_deterministic(self):
        a, b = gen_scene(SceneSpec(seed=3)), gen_scene(SceneSpec(seed=3))
        assert a.frames.tobytes() == b.frames.tobytes()
        assert a.masks.tobytes() == b.masks.tobytes()

    def test_shapes_and_range(self):
        scene = gen_scene(SceneSpec())
        assert scene.frames.shape == (8, 3, 32, 32)
        assert scene.masks.shape == (8, 1, 32, 32)
        assert scene.frames.min() >= 0 and scene.frames.max() <= 1
        assert scene.prompt == "figure walking right"

    def test_background_outside_mask(self):
        scene = gen_scene(SceneSpec(seed=5))
        outside = scene.masks[:, 0] == 0
        for f in range(8):
            assert np.array_equal(scene.frames[f][:, outside[f]], scene.background[:, outside[f]])

    def test_walk_moves_right(self):
        c = gen_scene(SceneSpec(program="walk", direction=1)).skeletons.centroids()
        assert np.all(np.diff(c[:, 0]) > 0)

    def test_wave_stays_put(self):
        c = scene_skeletons(SceneSpec(program="wave")).centroids()
        assert np.ptp(c[:, 0]) < 1.0

    def test_leaving_frame_rejected(self):
        with pytest.raises(SceneError):
            scene_skeletons(SceneSpec(speed=5.0))

    def test_unknown_program(self):
        with pytest.raises(SceneError):
            scene_skeletons(SceneSpec(program="dance"))


class TestFiles:
    def test_round_trip(self, tmp_path):
        seq = gen_scene(SceneSpec()).skeletons
        seq.visible[2, 4] = False
        save_skeletons(seq, tmp_path / "s.json")
        back = load_skeletons(tmp_path / "s.json")
        assert np.array_equal(back.coords, seq.coords)
        assert np.array_equal(back.visible, seq.visible)
        assert back.bones == seq.bones and back.joint_names == seq.joint_names

    def test_schema_violation(self, tmp_path):
        doc = json.loads(json.dumps({"format": "motionedit-skeleton", "version": 2}))
        (tmp_path / "bad.json").write_text(json.dumps(doc))
        with pytest.raises(SkeletonError, match="invalid skeleton file"):
            load_skeletons(tmp_path / "bad.json")

    def test_bad_bone_index(self, tmp_path):
        seq = box_seq(5, 5, 2, 2)
        save_skeletons(seq, tmp_path / "s.json")
        doc = json.loads((tmp_path / "s.json").read_text())
        doc["bones"] = [[0, 5]]
        (tmp_path / "s.json").write_text(json.dumps(doc))
        with pytest.raises(SkeletonError, match="unknown joint"):
            load_skeletons(tmp_path / "s.json")

    def test_not_json(self, tmp_path):
        (tmp_path / "x.json").write_text("{")
        with pytest.raises(SkeletonError):
            load_skeletons(tmp_path / "x.json")
