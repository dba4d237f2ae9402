import numpy as np
import pytest

from ldisplat.geometry import Intrinsics
from ldisplat.ldi import validate
from ldisplat.scenesynth import (
    ROOM_MAX,
    Camera,
    Scene,
    ViewRanges,
    canonical_camera,
    check_scene,
    disocclusion_mask,
    generate_scene,
    ground_truth_ldi,
    raycast,
    sample_view_pair,
    scene_from_text,
    scene_to_text,
)
from ldisplat.splat import SplatConfig, render
from conftest import identity_view


def empty_room(seed=0):
    return Scene(generate_scene(seed).room, [], seed)


class TestGenerate:
    def test_deterministic(self):
        assert scene_to_text(generate_scene(42)) == scene_to_text(generate_scene(42))
        assert scene_to_text(generate_scene(42)) != scene_to_text(generate_scene(43))

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_exact_count(self, n):
        assert len(generate_scene(5, n, n).sprites) == n

    @pytest.mark.parametrize("bounds", [(0, 2), (3, 2), (1, 5)])
    def test_bounds(self, bounds):
        with pytest.raises(ValueError):
            generate_scene(0, *bounds)

    def test_thousand_seeds_valid(self):
        counts = set()
        for seed in range(1000):
            scene = generate_scene(seed, 1, 4)
            assert check_scene(scene) == [], seed
            counts.add(len(scene.sprites))
        assert counts == {1, 2, 3, 4}

    def test_text_round_trip(self):
        scene = generate_scene(9, 2, 3)
        text = scene_to_text(scene)
        assert scene_to_text(scene_from_text(text)) == text
        cam = canonical_camera(24, 24)
        a, _ = raycast(scene, cam, 24, 24)
        b, _ = raycast(scene_from_text(text), cam, 24, 24)
        assert np.array_equal(a, b)

    def test_bad_header(self):
        with pytest.raises(ValueError):
            scene_from_text("ldisplat-scene 99\nseed 0\nsprites 0\n")


class TestRaycast:
    def test_empty_room_center(self):
        _, disp = raycast(empty_room(), canonical_camera(65, 65), 65, 65)
        assert disp[32, 32] == pytest.approx(1.0 / ROOM_MAX[2], abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_disparity_bounded(self, seed):
        color, disp = raycast(generate_scene(seed), canonical_camera(32, 32), 32, 32)
        assert disp.max() <= 1.0 and disp.min() > 0
        assert color.min() >= 0 and color.max() <= 1

    def test_sprite_in_front_of_back_wall(self):
        scene = generate_scene(3, 1, 1)
        cam = canonical_camera(48, 48)
        _, with_sprite = raycast(scene, cam, 48, 48)
        _, room_only = raycast(Scene(scene.room, [], 3), cam, 48, 48)
        covered = with_sprite != room_only
        assert covered.any()
        assert np.all(with_sprite[covered] > room_only[covered])

    def test_supersampled_color_averages(self):
        scene = generate_scene(1)
        cam = canonical_camera(16, 16)
        color, _ = raycast(scene, cam, 16, 16, supersample=2)
        fine, _ = raycast(scene, cam.scaled(2), 32, 32)
        assert np.allclose(color, fine.reshape(16, 2, 16, 2, 3).mean(axis=(1, 3)))


class TestGroundTruth:
    @pytest.mark.parametrize("seed", range(10))
    def test_valid_and_consistent(self, seed):
        scene = generate_scene(seed)
        cam = canonical_camera(32, 32)
        ldi, second = ground_truth_ldi(scene, cam, 32, 32)
        assert validate(ldi) == []
        color, disp = raycast(scene, cam, 32, 32)
        assert np.array_equal(ldi.textures[0], color) and np.array_equal(ldi.disparities[0], disp)
        # single-surface rays repeat the first layer
        assert np.array_equal(ldi.textures[1][~second], ldi.textures[0][~second])
        assert np.array_equal(ldi.disparities[1][~second], ldi.disparities[0][~second])

    def test_second_hit_oracle(self):
        scene = generate_scene(7, 1, 1)
        cam = canonical_camera(40, 40)
        ldi, second = ground_truth_ldi(scene, cam, 40, 40)
        assert second.any()
        color, disp = raycast(Scene(scene.room, [], 7), cam, 40, 40)
        assert np.allclose(ldi.textures[1][second], color[second], atol=1e-12)
        assert np.allclose(ldi.disparities[1][second], disp[second], atol=1e-12)

    def test_empty_room_has_no_second_layer(self):
        _, second = ground_truth_ldi(empty_room(), canonical_camera(16, 16), 16, 16)
        assert not second.any()

    def test_two_layers_only(self):
        with pytest.raises(ValueError):
            ground_truth_ldi(generate_scene(0), canonical_camera(8, 8), 8, 8, n_layers=3)

    @pytest.mark.parametrize("seed", range(5))
    def test_identity_render_reproduces_raycast(self, seed):
        scene = generate_scene(seed)
        cam = canonical_camera(32, 32)
        ldi, _ = ground_truth_ldi(scene, cam, 32, 32)
        color, _ = raycast(scene, cam, 32, 32)
        img = render(ldi, identity_view(32), SplatConfig(target_downsampling=1.0))
        assert np.abs(img - color)[3:-3, 3:-3].max() <= 1e-3


class TestViews:
    def test_zero_ranges(self):
        pair = sample_view_pair(3, ViewRanges(0, 0, 0, 0))
        assert np.allclose(pair.relative.rotation, np.eye(3)) and np.allclose(pair.relative.translation, 0)

    def test_deterministic(self):
        a, b = sample_view_pair(11), sample_view_pair(11)
        assert np.array_equal(a.relative.rotation, b.relative.rotation)
        assert np.array_equal(a.relative.translation, b.relative.translation)

    def test_within_ranges(self):
        r = ViewRanges()
        sides = set()
        for seed in range(1000):
            pair = sample_view_pair(seed, r)
            moved = pair.target if pair.source_is_canonical else pair.source
            canon = pair.source if pair.source_is_canonical else pair.target
            assert np.array_equal(canon.rotation, np.eye(3)) and not canon.center.any()
            assert np.all(np.abs(moved.center) <= [r.lateral, r.vertical, r.axial])
            angle = np.degrees(np.arccos(np.clip((np.trace(moved.rotation) - 1) / 2, -1, 1)))
            assert angle <= np.sqrt(3) * r.rotation_deg + 1e-9
            sides.add(pair.source_is_canonical)
        assert sides == {True, False}

    def test_canonical_choice(self):
        assert sample_view_pair(0, canonical="source").source_is_canonical
        assert not sample_view_pair(0, canonical="target").source_is_canonical
        with pytest.raises(ValueError):
            sample_view_pair(0, canonical="left")
        with pytest.raises(ValueError):
            ViewRanges(lateral=-1)


class TestDisocclusion:
    def test_identical_cameras(self):
        cam = canonical_camera(32, 32)
        assert not disocclusion_mask(generate_scene(2), cam, cam, 32, 32, (32, 32)).any()

    def test_empty_room_shift(self):
        src = canonical_camera(32, 32)
        tgt = Camera(src.intrinsics, np.eye(3), np.array([0.05, 0.0, 0.0]))
        mask = disocclusion_mask(empty_room(), src, tgt, 32, 32, (32, 32))
        assert not mask[:, :-4].any()

    def test_sprite_band(self):
        scene = generate_scene(4, 1, 1)
        src = canonical_camera(48, 48)
        tgt = Camera(src.intrinsics, np.eye(3), np.array([0.15, 0.0, 0.0]))
        mask = disocclusion_mask(scene, src, tgt, 48, 48, (48, 48))
        # interior columns, away from the frame edge the camera moved toward
        inner = mask[:, :-8]
        assert inner.any()
        _, disp = raycast(scene, tgt, 48, 48)
        _, room = raycast(Scene(scene.room, [], 4), tgt, 48, 48)
        sprite = disp > room + 1e-12
        # each dis-occluded pixel sits just beside the sprite silhouette, on room surfaces
        ys, xs = np.nonzero(inner)
        assert not sprite[ys, xs].any()
        near = np.zeros_like(sprite)
        for dx in range(-6, 7):
            near |= np.roll(sprite, dx, axis=1)
        assert near[ys, xs].all()

    def test_downsampled_target(self):
        src = canonical_camera(32, 32)
        small = src.scaled(0.5)
        assert not disocclusion_mask(generate_scene(1), src, small, 16, 16, (32, 32)).any()

    def test_swap_symmetry_in_expectation(self):
        fwd, back = [], []
        for seed in range(100):
            scene = generate_scene(seed)
            pair = sample_view_pair(seed + 500, width=24, height=24)
            fwd.append(disocclusion_mask(scene, pair.source, pair.target, 24, 24, (24, 24)).mean())
            back.append(disocclusion_mask(scene, pair.target, pair.source, 24, 24, (24, 24)).mean())
        assert 0.75 < np.mean(fwd) / np.mean(back) < 1.33


def test_intrinsics_of_canonical_camera():
    k = canonical_camera(64, 48).intrinsics
    assert k == Intrinsics.from_fov(64, 48)
    assert (k.cx, k.cy) == (31.5, 23.5)
