import numpy as np
import pytest

from jmpose.core.synthetic import FlowField, SyntheticSceneSpec, Trajectory, render_scene, scene_to_clip
from jmpose.core.types import Box, FrameClip
from jmpose.flow import (
    MOTION_CHANNELS,
    BlockMatchFlowProvider,
    FileFlowProvider,
    OracleFlowProvider,
    build_motion_volume,
    compose_flows,
    downsample_flow,
    flows_to_volume,
    make_provider,
)


def _scene(vx=3.0, vy=-2.0, delta=2, **kw):
    return render_scene(
        SyntheticSceneSpec(trajectory=Trajectory(root=(36.0, 50.0), root_velocity=(vx, vy)), delta=delta, **kw)
    )


def test_channel_names():
    assert MOTION_CHANNELS == ("u_prev", "v_prev", "u_next", "v_next")


def test_identical_frames_give_zero_flow():
    scene = _scene()
    fl = OracleFlowProvider(scene).estimate_flow(scene.frames[1], scene.frames[1])
    assert not fl.u.any() and not fl.v.any()


def test_oracle_translation():
    scene = _scene()
    fl = OracleFlowProvider(scene).estimate_flow(scene.frames[0], scene.frames[1])
    fig = scene.figure_mask(0)
    np.testing.assert_allclose(fl.u[fig], 3.0)
    np.testing.assert_allclose(fl.v[fig], -2.0)


def test_shape_mismatch_errors():
    scene = _scene()
    with pytest.raises(ValueError):
        OracleFlowProvider(scene).estimate_flow(scene.frames[0], scene.frames[1][:, :-4])
    with pytest.raises(ValueError):
        BlockMatchFlowProvider().estimate_flow(np.zeros((3, 8, 8)), np.zeros((3, 8, 12)))


def test_blockmatch_recovers_translation():
    scene = _scene()
    fl = BlockMatchFlowProvider().estimate_flow(scene.frames[1], scene.frames[2])
    fig = scene.figure_mask(1)
    assert abs(np.median(fl.u[fig]) - 3.0) <= 0.5
    assert abs(np.median(fl.v[fig]) + 2.0) <= 0.5


def test_static_clip_gives_zero_volume():
    scene = _scene(0.0, 0.0)
    clip, _, _ = scene_to_clip(scene)
    vol = build_motion_volume(clip, OracleFlowProvider(scene))
    assert vol.shape == (4, 24, 18)
    assert not vol.any()


def test_volume_shape_contract():
    scene = _scene()
    clip, _, _ = scene_to_clip(scene)
    assert build_motion_volume(clip, OracleFlowProvider(scene), stride=4).shape == (4, 24, 18)


def _figure_mean(vol_channel, mask, stride=4):
    # each heatmap cell weighted by how many of its pixels belong to the figure
    H, W = mask.shape
    cov = mask.reshape(H // stride, stride, W // stride, stride).mean(axis=(1, 3))
    return vol_channel.sum() / cov.sum()


@pytest.mark.parametrize("delta,span,scale", [(1, "delta", 1), (2, "adjacent", 1), (2, "delta", 2)])
def test_translation_volume_figure_mean(delta, span, scale):
    scene = _scene(delta=delta)
    clip, _, _ = scene_to_clip(scene)
    vol = build_motion_volume(clip, OracleFlowProvider(scene), span=span)
    k = clip.keyframe_index
    s = 1 if span == "adjacent" else delta
    src = [k - s, k, k - s, k]
    expected = np.array([3 / 4, -2 / 4, 3 / 4, -2 / 4]) * scale
    for c in range(4):
        assert _figure_mean(vol[c], scene.owner[src[c]] >= 0) == pytest.approx(expected[c], abs=0.1)


def test_antisymmetry_on_rigid_translation():
    scene = _scene()
    p = OracleFlowProvider(scene)
    fwd = p.estimate_flow(scene.frames[1], scene.frames[2])
    bwd = p.estimate_flow(scene.frames[2], scene.frames[1])
    both = (scene.owner[1] >= 0) & (scene.owner[2] >= 0)
    assert both.sum() > 50
    np.testing.assert_array_equal(fwd.u[both], -bwd.u[both])
    np.testing.assert_array_equal(fwd.v[both], -bwd.v[both])


def test_channel_order_contract():
    rng = np.random.default_rng(0)
    prev, nxt = rng.normal(size=(2, 96, 72)), rng.normal(size=(2, 96, 72))
    a = flows_to_volume(prev, nxt)
    b = flows_to_volume(nxt, prev)
    np.testing.assert_array_equal(b, a[[2, 3, 0, 1]])


class _Scaled:
    def __init__(self, inner, factor):
        self.inner, self.factor = inner, factor

    def estimate_flow(self, a, b):
        fl = self.inner.estimate_flow(a, b)
        return FlowField(fl.u * self.factor, fl.v * self.factor)


def test_resampling_is_linear_in_displacement():
    scene = render_scene(
        SyntheticSceneSpec(
            trajectory=Trajectory(root=(36.0, 50.0), root_velocity=(1.3, 0.4), angular_velocity={"r_forearm": 0.05})
        )
    )
    clip, _, _ = scene_to_clip(scene)
    base = OracleFlowProvider(scene)
    v1 = build_motion_volume(clip, base)
    v2 = build_motion_volume(clip, _Scaled(base, 2.0))
    np.testing.assert_allclose(v2, 2 * v1, atol=1e-6)


def test_downsample_divides_by_stride():
    fl = FlowField(np.full((8, 8), 4.0), np.full((8, 8), -8.0))
    out = downsample_flow(fl, 4)
    np.testing.assert_array_equal(out[0], 1.0)
    np.testing.assert_array_equal(out[1], -2.0)
    with pytest.raises(ValueError):
        downsample_flow(FlowField(np.zeros((6, 8)), np.zeros((6, 8))), 4)


def test_volume_needs_three_frames():
    clip = FrameClip(np.zeros((5, 3, 8, 8)), 2, Box(4, 4, 4, 4))
    clip.frames = clip.frames[:2]
    with pytest.raises(ValueError):
        build_motion_volume(clip, BlockMatchFlowProvider())


def test_file_provider_composes_consecutive_flows():
    scene = _scene()
    clip, _, flows = scene_to_clip(scene)
    p = FileFlowProvider(clip.frames, flows)
    two = p.estimate_flow(clip.frames[0], clip.frames[2])
    fig = scene.figure_mask(0)
    np.testing.assert_allclose(two.u[fig], 6.0, atol=1e-9)
    np.testing.assert_allclose(two.v[fig], -4.0, atol=1e-9)
    with pytest.raises(ValueError):
        p.estimate_flow(clip.frames[2], clip.frames[0])
    with pytest.raises(ValueError):
        FileFlowProvider(clip.frames, flows[:2])


def test_compose_with_zero_is_identity():
    rng = np.random.default_rng(1)
    a = FlowField(rng.normal(size=(6, 6)), rng.normal(size=(6, 6)))
    out = compose_flows(a, FlowField.zeros((6, 6)))
    np.testing.assert_array_equal(out.u, a.u)


def test_make_provider():
    assert isinstance(make_provider("blockmatch"), BlockMatchFlowProvider)
    with pytest.raises(ValueError):
        make_provider("raft")
