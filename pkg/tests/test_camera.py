import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from headsplat.camera import (CameraError, CameraPose, Intrinsics, ViewRig, make_view_ring,
                              pixel_rays, plucker_map, recenter_shift, recompute_extrinsic)


def test_ring_six_views():
    rig = make_view_ring(0.0, 6)
    assert rig.azimuths == [0, -45, 45, -90, 90, 180]
    assert rig.elevations == [0] * 6


def test_ring_four_views():
    assert make_view_ring(0.0, 4).azimuths == [0, -90, 90, 180]


def test_ring_shifted():
    assert make_view_ring(30.0, 6).azimuths == [30, -15, 75, -60, 120, 210]


def test_ring_eight_views_has_top_and_bottom():
    rig = make_view_ring(0.0, 8)
    assert sorted(rig.elevations) == [-30] + [0] * 6 + [30]


def test_ring_rejects_bad_count():
    with pytest.raises(CameraError):
        make_view_ring(0.0, 5)


@given(st.floats(-360, 360))
def test_ring_closure(alpha):
    az = np.sort(np.mod(make_view_ring(alpha, 6).azimuths, 360.0))
    gaps = np.diff(np.append(az, az[0] + 360.0))
    np.testing.assert_allclose(np.sort(gaps), [45, 45, 45, 45, 90, 90], atol=1e-9)


def test_front_camera_convention():
    pose = CameraPose.orbit(0.0, 0.0, 2.7)
    np.testing.assert_allclose(pose.center, [0, 0, 2.7], atol=1e-12)
    # optical axis looks toward -z
    np.testing.assert_allclose(pose.rotation[2], [0, 0, -1], atol=1e-12)


def test_plucker_origin_camera_has_zero_moment():
    pose = CameraPose(np.eye(3), np.zeros(3))
    pl = plucker_map(Intrinsics(50, 8, 8), pose)
    assert np.all(pl[..., :3] == 0)


def test_plucker_center_ray():
    intr = Intrinsics(50, 9, 9)
    pl = plucker_map(intr, CameraPose.orbit(0.0, 0.0, 2.0))
    np.testing.assert_allclose(pl[4, 4, 3:], [0, 0, -1], atol=1e-12)
    np.testing.assert_allclose(pl[4, 4, :3], [0, 0, 0], atol=1e-12)


def test_plucker_constraint():
    pl = plucker_map(Intrinsics(50, 16, 12), CameraPose.orbit(33.0, 12.0, 2.7))
    np.testing.assert_allclose(np.sum(pl[..., :3] * pl[..., 3:], axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(pl[..., 3:], axis=-1), 1.0, atol=1e-12)


def test_plucker_rigid_invariance():
    rng = np.random.default_rng(3)
    intr = Intrinsics(50, 8, 8)
    pose = CameraPose.orbit(20.0, 5.0, 2.7)
    R = Rotation.random(random_state=4).as_matrix()
    t = rng.normal(size=3)
    pl = plucker_map(intr, pose)
    moved = plucker_map(intr, pose.transformed(R, t))
    d_rot = pl[..., 3:] @ R.T
    np.testing.assert_allclose(moved[..., 3:], d_rot, atol=1e-12)
    np.testing.assert_allclose(moved[..., :3], pl[..., :3] @ R.T + np.cross(t, d_rot), atol=1e-12)


def test_pixel_rays_hit_pixel_centers():
    intr = Intrinsics(50, 10, 6)
    pose = CameraPose.orbit(40.0, -10.0, 3.0)
    origin, dirs = pixel_rays(intr, pose)
    pts = origin + 2.0 * dirs
    cam = pts @ pose.rotation.T + pose.translation
    uv = intr.focal * cam[..., :2] / cam[..., 2:] + np.array(intr.principal_point)
    jj, ii = np.meshgrid(np.arange(10) + 0.5, np.arange(6) + 0.5)
    np.testing.assert_allclose(uv[..., 0], jj, atol=1e-9)
    np.testing.assert_allclose(uv[..., 1], ii, atol=1e-9)


def test_recompute_identity():
    ds = CameraPose.orbit(15.0, 5.0, 3.0)
    method = CameraPose.orbit(0.0, 0.0, 2.7)
    out = recompute_extrinsic(ds, ds, method, 2.7)
    np.testing.assert_array_equal(out.rotation, method.rotation)
    np.testing.assert_allclose(out.translation, method.translation, atol=1e-15)


def test_recompute_quarter_turn():
    ds_in, ds_test = CameraPose.orbit(0.0, 0.0, 4.0), CameraPose.orbit(90.0, 0.0, 4.0)
    method = CameraPose.orbit(0.0, 0.0, 2.0)
    out = recompute_extrinsic(ds_in, ds_test, method, 2.0)
    # hand-computed: the camera sits on +x looking toward -x, image-down = -y
    expected_R = np.array([[0.0, 0.0, -1.0], [0.0, -1.0, 0.0], [-1.0, 0.0, 0.0]])
    np.testing.assert_allclose(out.rotation, expected_R, atol=1e-9)
    np.testing.assert_allclose(out.center, [2.0, 0.0, 0.0], atol=1e-9)


def test_recompute_rescales_radius():
    out = recompute_extrinsic(CameraPose.orbit(0, 0, 5), CameraPose.orbit(45, 10, 5),
                              CameraPose.orbit(0, 0, 1.3), 2.7)
    assert np.linalg.norm(out.center) == pytest.approx(2.7, abs=1e-12)


def test_recompute_chain_composes():
    poses = [CameraPose.orbit(a, e, 3.0) for a, e in [(0, 0), (30, 10), (75, -20), (160, 5)]]
    method = CameraPose.orbit(0, 0, 2.7)
    step = method
    for a, b in zip(poses[:-1], poses[1:]):
        step = recompute_extrinsic(a, b, step, 2.7)
    direct = recompute_extrinsic(poses[0], poses[-1], method, 2.7)
    np.testing.assert_allclose(step.rotation, direct.rotation, atol=1e-9)
    np.testing.assert_allclose(step.translation, direct.translation, atol=1e-9)


def test_recenter_means():
    np.testing.assert_allclose(recenter_shift([(1, 0, 0), (-1, 0, 0)]), [0, 0, 0])
    np.testing.assert_allclose(recenter_shift([(2, 0, 0), (0, 0, 0)]), [1, 0, 0])


def test_recompute_zero_distance_rejected():
    with pytest.raises(CameraError):
        recompute_extrinsic(CameraPose(np.eye(3), np.zeros(3)), CameraPose.orbit(0, 0, 1),
                            CameraPose.orbit(0, 0, 1), 1.0)


def test_rig_roundtrip(tmp_path):
    rig = make_view_ring(10.0, 8, 2.5, Intrinsics(50, 16, 16))
    rig.save(tmp_path / "rig.json")
    back = ViewRig.load(tmp_path / "rig.json")
    assert back.azimuths == rig.azimuths and back.radius == rig.radius
    for a, b in zip(rig, back):
        np.testing.assert_array_equal(a.pose.rotation, b.pose.rotation)


@settings(max_examples=30)
@given(st.floats(1, 179))
def test_focal_matches_fov(fov):
    intr = Intrinsics(fov, 32, 32)
    assert np.degrees(2 * np.arctan(16 / intr.focal)) == pytest.approx(fov)
