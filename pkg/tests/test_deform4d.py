import json

import numpy as np
import pytest
import torch

from headsplat.camera import Intrinsics, make_view_ring
from headsplat.deform4d import (DeformationField, DeformConfig, apply_deformation, apply_deltas,
                                fit_sequence, positional_encoding)
from headsplat.splat import import_ply
from headsplat.synthdata import SceneSpec, generate_scene

from oracles import random_cloud


def test_zero_field_is_identity():
    cloud = random_cloud(np.random.default_rng(0), 10).torch(torch.float32)
    out = apply_deformation(cloud, DeformationField(DeformConfig(layers=3, width=16)))
    for name in ("positions", "scales", "rotations", "opacities", "colors"):
        assert torch.equal(getattr(out, name), getattr(cloud, name))


def test_constant_shift_and_clamp():
    cloud = random_cloud(np.random.default_rng(1), 4)
    cloud.opacities[:] = 0.5
    out = apply_deltas(cloud, [1.0, 0.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(out.positions.numpy(), cloud.positions + [1, 0, 0])
    assert torch.all(apply_deltas(cloud, [0, 0, 0, 10.0, 0]).opacities == 1.0)
    scaled = apply_deltas(cloud, [0, 0, 0, 0, np.log(2.0)])
    np.testing.assert_allclose(scaled.scales.numpy(), 2 * cloud.scales)


def test_field_shape_and_depth():
    field = DeformationField(DeformConfig(layers=8, width=32))
    assert len(field.layers) == 8
    assert field(torch.rand(7, 3)).shape == (7, 5)
    raw = DeformationField(DeformConfig(layers=2, width=8, encoding=False))
    assert raw.layers[0].in_features == 3
    assert positional_encoding(torch.zeros(2, 3), 4).shape == (2, 27)


def _rig():
    return make_view_ring(0.0, 4, 2.7, Intrinsics(50, 24, 24))


def test_static_sequence_keeps_identity_optimum():
    cloud = generate_scene(SceneSpec("head", 0))
    seq = fit_sequence([cloud, cloud, cloud], _rig(), steps_per_frame=3,
                       cfg=DeformConfig(layers=3, width=16))
    assert seq.initial_loss == [0.0, 0.0]
    assert seq.final_loss == [0.0, 0.0]


def test_fitting_never_worse_than_identity_and_anchor_untouched(tmp_path):
    cloud = generate_scene(SceneSpec("head", 1))
    frames = [cloud] + [apply_deltas(cloud, [0.02 * k, 0, 0, 0, 0]).numpy() for k in (1, 2)]
    anchor = cloud.positions.copy()
    seq = fit_sequence(frames, _rig(), steps_per_frame=15, lr=1e-3,
                       cfg=DeformConfig(layers=4, width=32))
    for init, final in zip(seq.initial_loss, seq.final_loss):
        assert final <= init
    assert seq.final_loss[0] < seq.initial_loss[0]
    np.testing.assert_array_equal(seq.frames[0].positions, anchor)
    assert all(len(f) == len(cloud) for f in seq.frames)
    path = seq.save(tmp_path)
    index = json.loads(path.read_text())["frames"]
    assert len(index) == 3
    assert len(import_ply(tmp_path / index[2]["file"])) == len(cloud)


def test_single_frame_warns():
    cloud = random_cloud(np.random.default_rng(2))
    with pytest.warns(UserWarning):
        seq = fit_sequence([cloud], _rig())
    assert len(seq.frames) == 1


def test_mismatched_frames_rejected():
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError):
        fit_sequence([random_cloud(rng, 4), random_cloud(rng, 5)], _rig())
