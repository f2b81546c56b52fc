import numpy as np
import pytest
import torch
from scipy.spatial.transform import Rotation

from headsplat.camera import CameraPose, Intrinsics
from headsplat.splat import (GaussianSplat, PlyError, SplatCloud, SplatError, compositing_weights,
                             covariance, export_ply, import_ply, render, render_gradients,
                             render_torch, rotmat_to_quat)
from headsplat.splat.cloud import quat_multiply

from oracles import composite_pixel, gradient_rel_errors, random_cloud, render_raw

FRONT = CameraPose.orbit(0.0, 0.0, 2.7)


def one(pos, scale, opacity, color, q=(1.0, 0.0, 0.0, 0.0)):
    return GaussianSplat(np.array(pos, float), np.array(scale, float), np.array(q, float),
                         opacity, np.array(color, float))


def test_covariance_cases():
    np.testing.assert_allclose(covariance(one([0, 0, 0], [1, 1, 1], 1, [0, 0, 0])), np.eye(3))
    np.testing.assert_allclose(covariance(one([0, 0, 0], [2, 1, 1], 1, [0, 0, 0])),
                               np.diag([4.0, 1, 1]))
    q = [np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)]
    np.testing.assert_allclose(covariance(one([0, 0, 0], [2, 1, 1], 1, [0, 0, 0], q)),
                               np.diag([1.0, 4, 1]), atol=1e-12)


def test_splat_validation():
    with pytest.raises(SplatError):
        one([0, 0, 0], [0, 1, 1], 0.5, [0, 0, 0])
    with pytest.raises(SplatError):
        one([0, 0, 0], [1, 1, 1], 1.5, [0, 0, 0])
    with pytest.raises(SplatError):
        one([0, 0, 0], [1, 1, 1], 0.5, [0, 0, 0], q=(2, 0, 0, 0))


def test_empty_cloud_renders_background():
    img = render(SplatCloud.empty(), Intrinsics(50, 8, 8), FRONT)
    assert np.all(img.rgb == 0) and np.all(img.alpha == 0)


def test_opaque_splat_center_pixel():
    intr = Intrinsics(50, 17, 17)
    cloud = SplatCloud.from_splats([one([0, 0, 0], [0.1] * 3, 1.0, [1, 0, 0])])
    img = render(cloud, intr, FRONT)
    np.testing.assert_allclose(img.rgb[8, 8], [1, 0, 0], atol=1 / 255)
    assert img.alpha[8, 8] == pytest.approx(1.0, abs=1 / 255)


def test_two_splat_compositing():
    intr = Intrinsics(50, 17, 17)
    cloud = SplatCloud.from_splats([one([0, 0, 0.5], [0.1] * 3, 0.5, [1, 0, 0]),
                                    one([0, 0, -0.5], [0.1] * 3, 1.0, [0, 0, 1])])
    np.testing.assert_allclose(render(cloud, intr, FRONT).rgb[8, 8], [0.5, 0, 0.5], atol=1e-12)


def test_compositing_matches_hand_sum():
    rng = np.random.default_rng(7)
    intr = Intrinsics(50, 16, 16)
    pose = CameraPose.orbit(25.0, 10.0, 2.7)
    for _ in range(5):
        cloud = random_cloud(rng, 3, spread=0.15)
        rgb = render_raw(cloud, intr, pose, (0.2, 0.4, 0.6))
        for py in range(0, 16, 3):
            for px in range(0, 16, 3):
                color, weights, T = composite_pixel(cloud, intr, pose, px, py, (0.2, 0.4, 0.6))
                np.testing.assert_allclose(rgb[py, px], color, atol=1e-6)
                ids, w, bg = compositing_weights(cloud, intr, pose, px, py)
                assert dict(zip(ids.tolist(), w.tolist())) == pytest.approx(weights, abs=1e-6)
                assert w.sum() + bg == pytest.approx(1.0, abs=1e-6)


def test_alpha_range_and_order_invariance():
    rng = np.random.default_rng(1)
    intr = Intrinsics(50, 16, 16)
    cloud = random_cloud(rng, 12)
    img = render(cloud, intr, FRONT)
    assert img.alpha.min() >= 0 and img.alpha.max() <= 1
    perm = rng.permutation(12)
    np.testing.assert_allclose(render(cloud.take(perm), intr, FRONT).rgb, img.rgb, atol=1e-6)


def test_rigid_equivariance():
    rng = np.random.default_rng(2)
    intr = Intrinsics(50, 24, 24)
    cloud = random_cloud(rng, 8)
    A = Rotation.random(random_state=5).as_matrix()
    b = rng.normal(size=3)
    qa = rotmat_to_quat(A)
    moved = SplatCloud(cloud.positions @ A.T + b, cloud.scales,
                       np.stack([quat_multiply(qa, q) for q in cloud.rotations]),
                       cloud.opacities, cloud.colors)
    pose = CameraPose.orbit(30.0, 15.0, 2.7)
    np.testing.assert_allclose(render(moved, intr, pose.transformed(A, b)).rgb,
                               render(cloud, intr, pose).rgb, atol=1e-5)


def test_zero_upstream_zero_gradients():
    cloud = random_cloud(np.random.default_rng(0))
    grads = render_gradients(cloud, Intrinsics(50, 16, 16), FRONT, np.zeros((16, 16, 3)))
    assert all(np.all(g == 0) for g in grads.values())


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    intr = Intrinsics(50, 16, 16)
    pose = CameraPose.orbit(20.0, 10.0, 2.7)
    for _ in range(3):
        errs, _ = gradient_rel_errors(random_cloud(rng), intr, pose,
                                      rng.normal(size=(16, 16, 3)))
        assert max(errs.values()) < 1e-3, errs


def test_opacity_gradient_sign():
    intr = Intrinsics(50, 9, 9)
    cloud = SplatCloud.from_splats([one([0, 0, 0], [0.2] * 3, 0.5, [1, 0, 0])])
    up = np.zeros((9, 9, 3))
    up[..., 0] = 1.0
    assert render_gradients(cloud, intr, FRONT, up)["opacities"][0] > 0


def test_float32_gradients_flow():
    cloud = random_cloud(np.random.default_rng(4)).torch(torch.float32, requires_grad=True)
    rgb, alpha, n_bad = render_torch(cloud, Intrinsics(50, 12, 12), FRONT)
    assert rgb.dtype == torch.float32 and n_bad == 0
    (rgb.sum() + alpha.sum()).backward()
    assert all(p.grad is not None and p.grad.dtype == torch.float32 for p in cloud.parameters())


def test_splat_behind_camera_is_culled():
    cloud = SplatCloud.from_splats([one([0, 0, 3.0], [0.1] * 3, 1.0, [1, 1, 1])])
    assert np.all(render(cloud, Intrinsics(50, 8, 8), FRONT).rgb == 0)


def test_ply_roundtrip(tmp_path):
    cloud = random_cloud(np.random.default_rng(9), 20)
    export_ply(cloud, tmp_path / "a.ply")
    back = import_ply(tmp_path / "a.ply")
    for name in ("positions", "scales", "rotations", "opacities", "colors"):
        np.testing.assert_allclose(getattr(back, name), getattr(cloud, name), atol=1e-6)


def test_ply_header_and_zero_point(tmp_path):
    export_ply(SplatCloud.from_splats([one([0, 0, 0], [1, 1, 1], 0.5, [0.5] * 3)]),
               tmp_path / "a.ply")
    raw = (tmp_path / "a.ply").read_bytes()
    assert b"element vertex 1\n" in raw
    header_end = raw.index(b"end_header\n") + len(b"end_header\n")
    values = np.frombuffer(raw[header_end:], dtype="<f4")
    np.testing.assert_array_equal(values[6:9], [0, 0, 0])


def test_ply_rejects_garbage(tmp_path):
    (tmp_path / "bad.ply").write_bytes(b"not a ply")
    with pytest.raises(PlyError):
        import_ply(tmp_path / "bad.ply")
