import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jmpose.core.augment import AugmentParams, affine_matrix, augment, augment_pose, transform_points
from jmpose.core.heatmaps import crop_and_enlarge, decode_batch, decode_heatmaps, render_gaussian_heatmaps
from jmpose.core.skeleton import FLIP_PERMUTATION, JOINT_INDEX, JOINT_NAMES, NUM_JOINTS
from jmpose.core.synthetic import (
    SyntheticSceneSpec,
    Trajectory,
    generate_synthetic_clip,
    random_scene_spec,
    render_scene,
)
from jmpose.core.types import Box, FrameClip, HeatmapStack, Keypoint, PersonPose


def _pose(points, visible=None):
    visible = [True] * len(points) if visible is None else visible
    return PersonPose(tuple(Keypoint(float(x), float(y), bool(v)) for (x, y), v in zip(points, visible)))


# --- types ---


def test_pose_array_round_trip():
    arr = np.array([[i, 2 * i, i % 2] for i in range(NUM_JOINTS)], dtype=float)
    pose = PersonPose.from_array(arr)
    np.testing.assert_array_equal(pose.to_array(), arr)
    assert pose.joint_names == JOINT_NAMES


def test_pose_rejects_wrong_joint_count():
    with pytest.raises(ValueError):
        PersonPose.from_array(np.zeros((3, 3)))


def test_frame_clip_keyframe_is_delta():
    clip = FrameClip(np.zeros((5, 3, 8, 8)), 2, Box(4, 4, 4, 4))
    assert clip.keyframe_index == 2
    assert clip.image_shape == (8, 8)


def test_frame_clip_frame_count_must_match_delta():
    with pytest.raises(ValueError):
        FrameClip(np.zeros((4, 3, 8, 8)), 2, Box(4, 4, 4, 4))


def test_flip_permutation_swaps_sides():
    assert FLIP_PERMUTATION[JOINT_INDEX["left_ankle"]] == JOINT_INDEX["right_ankle"]
    assert FLIP_PERMUTATION[JOINT_INDEX["nose"]] == JOINT_INDEX["nose"]
    assert sorted(FLIP_PERMUTATION) == list(range(NUM_JOINTS))


# --- crop_and_enlarge ---


def test_enlarge_by_quarter():
    out = crop_and_enlarge(Box(50, 50, 40, 80), 0.25)
    assert (out.cx, out.cy, out.w, out.h) == (50, 50, 50, 100)


def test_enlarge_factor_zero_is_identity():
    box = Box(13.5, 7.25, 9.0, 3.0)
    assert crop_and_enlarge(box, 0.0) == box


def test_enlarge_clamps_to_image_edges():
    # box touching the left/top edges of a 100x60 (H x W) image
    box = Box(10.0, 20.0, 20.0, 40.0)
    out = crop_and_enlarge(box, 0.25, image_shape=(100, 60))
    x0 = max(10.0 - 12.5, 0.0)
    y0 = max(20.0 - 25.0, 0.0)
    x1 = min(10.0 + 12.5, 60.0)
    y1 = min(20.0 + 25.0, 100.0)
    assert out.corners == pytest.approx((x0, y0, x1, y1), abs=1e-12)


def test_enlarge_degenerate_box_errors():
    with pytest.raises(ValueError):
        crop_and_enlarge(Box(5, 5, 0, 10))


# --- heatmaps ---


def test_gaussian_peak_at_cell_is_one():
    pose = _pose([(8.0, 12.0)] * NUM_JOINTS)
    hm = render_gaussian_heatmaps(pose, (NUM_JOINTS, 24, 18), sigma=2.0, stride=4)
    assert hm.maps[0, 3, 2] == 1.0


def test_invisible_joint_channel_is_zero():
    pose = _pose([(8.0, 12.0)] * NUM_JOINTS, [False] + [True] * (NUM_JOINTS - 1))
    hm = render_gaussian_heatmaps(pose, (NUM_JOINTS, 24, 18))
    assert hm.maps[0].sum() == 0.0


def test_gaussian_value_two_cells_away():
    # joint at heatmap (7, 5); cell (x=9, y=5) is 2 cells away
    pose = _pose([(7.0 * 4, 5.0 * 4)] * NUM_JOINTS)
    hm = render_gaussian_heatmaps(pose, (NUM_JOINTS, 24, 18), sigma=2.0, stride=4)
    assert hm.maps[0, 5, 9] == pytest.approx(math.exp(-4 / 8), abs=1e-12)
    assert hm.maps[0, 5, 9] == pytest.approx(0.6065306597, abs=1e-9)


def test_keypoint_outside_heatmap_is_treated_as_invisible():
    pose = _pose([(200.0, 5.0)] * NUM_JOINTS)
    hm = render_gaussian_heatmaps(pose, (NUM_JOINTS, 24, 18))
    assert not hm.maps.any()


def test_decode_uniform_channel_is_invisible():
    hm = HeatmapStack(np.full((NUM_JOINTS, 24, 18), 0.5))
    assert not decode_heatmaps(hm).visible.any()


def test_decode_quarter_offset_toward_larger_neighbour():
    maps = np.zeros((NUM_JOINTS, 12, 12))
    maps[:, 5, 5] = 1.0
    maps[:, 5, 6] = 0.8
    pose = decode_heatmaps(HeatmapStack(maps, stride=1))
    assert pose.keypoints[0].x == 5.25
    assert pose.keypoints[0].y == 5.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 17), st.integers(0, 23)), min_size=NUM_JOINTS, max_size=NUM_JOINTS))
def test_render_decode_round_trip(cells):
    pose = _pose([(4.0 * u, 4.0 * v) for u, v in cells])
    hm = render_gaussian_heatmaps(pose, (NUM_JOINTS, 24, 18))
    assert hm.maps.min() >= 0.0 and hm.maps.max() <= 1.0
    flat = hm.maps.reshape(NUM_JOINTS, -1).argmax(1)
    np.testing.assert_array_equal(np.stack(np.unravel_index(flat, (24, 18)), 1), np.array(cells)[:, ::-1])
    dec = decode_heatmaps(hm)
    err = np.abs(dec.xy - pose.xy) / 4.0
    assert err.max() <= 0.5
    assert dec.visible.all()
    np.testing.assert_allclose(decode_batch(hm.maps[None])[0], dec.xy)


# --- synthetic generator ---


def _translation_spec(vx=3.0, vy=-2.0, **kw):
    return SyntheticSceneSpec(trajectory=Trajectory(root=(36.0, 50.0), root_velocity=(vx, vy)), **kw)


def test_static_scene_identical_frames_zero_flow():
    clip, poses, flows = generate_synthetic_clip(SyntheticSceneSpec())
    for f in clip.frames[1:]:
        np.testing.assert_array_equal(f, clip.frames[0])
    for fl in flows:
        assert not fl.u.any() and not fl.v.any()
    assert len(poses) == 5 and len(flows) == 4


def test_translation_flow_is_exact_on_figure_and_zero_on_background():
    scene = render_scene(_translation_spec())
    for i in range(scene.num_frames - 1):
        fl = scene.pair_flow(i, i + 1)
        fig = scene.owner[i] >= 0
        np.testing.assert_allclose(fl.u[fig], 3.0, atol=1e-9)
        np.testing.assert_allclose(fl.v[fig], -2.0, atol=1e-9)
        assert not fl.u[~fig].any() and not fl.v[~fig].any()


def test_generation_is_deterministic():
    spec = random_scene_spec(np.random.default_rng(5))
    a = generate_synthetic_clip(spec)
    b = generate_synthetic_clip(spec)
    np.testing.assert_array_equal(a[0].frames, b[0].frames)
    assert [p.to_array().tolist() for p in a[1]] == [p.to_array().tolist() for p in b[1]]
    for fa, fb in zip(a[2], b[2]):
        np.testing.assert_array_equal(fa.u, fb.u)
        np.testing.assert_array_equal(fa.v, fb.v)


def test_figure_leaving_canvas_errors():
    spec = SyntheticSceneSpec(trajectory=Trajectory(root=(36.0, 50.0), root_velocity=(80.0, 0.0)))
    with pytest.raises(ValueError):
        render_scene(spec)


def test_frames_are_eight_bit_levels():
    clip, _, _ = generate_synthetic_clip(random_scene_spec(np.random.default_rng(1)))
    levels = clip.frames.astype(np.float64) * 255
    np.testing.assert_allclose(levels, np.round(levels), atol=1e-4)
    assert clip.frames.min() >= 0 and clip.frames.max() <= 1


def test_keypoints_lie_inside_image_when_visible():
    for s in range(10):
        clip, poses, _ = generate_synthetic_clip(random_scene_spec(np.random.default_rng(s)))
        H, W = clip.image_shape
        for p in poses:
            xy = p.xy[p.visible]
            assert ((xy[:, 0] >= 0) & (xy[:, 0] < W) & (xy[:, 1] >= 0) & (xy[:, 1] < H)).all()


def _warp_mask(mask, u, v):
    H, W = mask.shape
    out = np.zeros_like(mask)
    ys, xs = np.nonzero(mask)
    tx = np.rint(xs + u[ys, xs]).astype(int)
    ty = np.rint(ys + v[ys, xs]).astype(int)
    ok = (tx >= 0) & (tx < W) & (ty >= 0) & (ty < H)
    out[ty[ok], tx[ok]] = True
    return out


def _iou(a, b):
    return (a & b).sum() / max((a | b).sum(), 1)


def test_flow_warp_reproduces_next_mask_on_integer_translation():
    scene = render_scene(_translation_spec())
    for i in range(scene.num_frames - 1):
        fl = scene.pair_flow(i, i + 1)
        warped = _warp_mask(scene.figure_mask(i), fl.u, fl.v)
        assert _iou(warped, scene.figure_mask(i + 1)) >= 0.95


def test_flow_warp_beats_identity_on_articulated_scenes():
    for s in range(5):
        spec = random_scene_spec(np.random.default_rng(100 + s), occlusion_prob=0.0, defocus_prob=0.0)
        scene = render_scene(spec)
        fl = scene.pair_flow(1, 2)
        nxt = scene.figure_mask(2)
        assert _iou(_warp_mask(scene.figure_mask(1), fl.u, fl.v), nxt) >= _iou(scene.figure_mask(1), nxt)


def test_challenging_flags_follow_scene():
    rng = np.random.default_rng(0)
    spec = random_scene_spec(rng, occlusion_prob=1.0, defocus_prob=1.0)
    clip, _, _ = generate_synthetic_clip(spec)
    assert clip.meta == {"occluded": True, "defocused": True}
    assert clip.is_challenging


# --- augmentation ---


def test_identity_augmentation():
    clip, poses, _ = generate_synthetic_clip(random_scene_spec(np.random.default_rng(3)))
    out_clip, out_poses = augment(clip, poses, AugmentParams())
    np.testing.assert_allclose(out_clip.frames, clip.frames, atol=1e-6)
    for a, b in zip(out_poses, poses):
        np.testing.assert_allclose(a.to_array(), b.to_array(), atol=1e-9)


def test_flip_mirrors_and_swaps_channels():
    H, W = 96, 72
    pts = [(10.0 + k, 20.0 + 2 * k) for k in range(NUM_JOINTS)]
    pose = _pose(pts)
    out = augment_pose(pose, AugmentParams(flip=True), (H, W))
    la, ra = JOINT_INDEX["left_ankle"], JOINT_INDEX["right_ankle"]
    assert out.keypoints[ra].x == pytest.approx(W - 1 - pts[la][0])
    assert out.keypoints[ra].y == pytest.approx(pts[la][1])


def test_rotation_quarter_turn_about_center():
    H, W, r = 96, 72, 7.0
    c = np.array([(W - 1) / 2, (H - 1) / 2])
    out = transform_points([c + [r, 0.0]], AugmentParams(rotation=90.0), (H, W))[0]
    np.testing.assert_allclose(out - c, [0.0, r], atol=1e-4)


def test_augmentation_applies_the_same_transform_to_every_frame():
    clip, poses, _ = generate_synthetic_clip(random_scene_spec(np.random.default_rng(4)))
    p = AugmentParams(rotation=20.0, scale=1.1)
    out, _ = augment(clip, poses, p)
    for f in range(clip.frames.shape[0]):
        single = FrameClip(np.repeat(clip.frames[f : f + 1], 5, 0), 2, clip.person_box)
        ref, _ = augment(single, poses, p)
        np.testing.assert_array_equal(out.frames[f], ref.frames[0])


def _warped_gaussian(center_xy, params, image_shape, sigma=2.0, stride=4, hm_shape=(24, 18)):
    """Render a Gaussian at ``center_xy`` and carry it through ``params`` by inverse mapping."""
    A, t = affine_matrix(params, image_shape)
    ys, xs = np.mgrid[0 : hm_shape[0], 0 : hm_shape[1]].astype(float)
    cells = np.stack([xs.ravel(), ys.ravel()], 1) * stride
    src = (cells - t) @ np.linalg.inv(A).T / stride
    c = np.asarray(center_xy) / stride
    return np.exp(-((src - c) ** 2).sum(1) / (2 * sigma**2)).reshape(hm_shape)


@settings(max_examples=25, deadline=None)
@given(st.floats(-45, 45), st.booleans(), st.floats(-8, 8), st.floats(-8, 8))
def test_augmented_heatmaps_match_transformed_heatmaps(rotation, flip, dx, dy):
    H, W = 96, 72
    xy = (36.0 + dx, 48.0 + dy)
    pose = _pose([xy] * NUM_JOINTS)
    p = AugmentParams(rotation=rotation, flip=flip)
    moved = augment_pose(pose, p, (H, W))
    direct = render_gaussian_heatmaps(moved, (NUM_JOINTS, 24, 18)).maps[0]
    np.testing.assert_allclose(direct, _warped_gaussian(xy, p, (H, W)), atol=1e-2)


@settings(max_examples=25, deadline=None)
@given(st.floats(-45, 45), st.floats(0.65, 1.35))
def test_scaled_augmentation_keeps_peak_under_transformed_joint(rotation, scale):
    # target width stays sigma=2 by design, so compare peak cells rather than values
    H, W = 96, 72
    pose = _pose([(36.0, 48.0)] * NUM_JOINTS)
    p = AugmentParams(rotation=rotation, scale=scale)
    direct = render_gaussian_heatmaps(augment_pose(pose, p, (H, W)), (NUM_JOINTS, 24, 18)).maps[0]
    warped = _warped_gaussian((36.0, 48.0), p, (H, W), sigma=2.0 * scale)
    assert np.unravel_index(direct.argmax(), direct.shape) == np.unravel_index(warped.argmax(), warped.shape)
