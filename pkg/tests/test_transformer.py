import numpy as np
import pytest
import torch

from headsplat.camera import Intrinsics, make_view_ring
from headsplat.splat import render_torch
from headsplat.transformer import (AttentionBlock, Backbone, BlockConfig, CheckpointError,
                                   NoisePredictor, NoisePredictorConfig, Reconstructor,
                                   ReconstructorConfig, attention_block, load_tensors,
                                   multiview_attend, reconstructor_forward, rig_inputs,
                                   save_tensors)


def _randomize(module, seed=0, std=0.3):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * std)
    return module


def test_zero_init_block_is_identity():
    block = AttentionBlock(32, 4)
    x = torch.randn(2, 7, 32)
    assert torch.equal(attention_block(x, block), x)


def test_single_token_attention_passes_values():
    block = _randomize(AttentionBlock(16, 2)).double()
    x = torch.randn(3, 1, 16, dtype=torch.float64)
    v = block.qkv(block.norm1(x))[..., 32:]
    torch.testing.assert_close(block.attend(block.norm1(x)), block.proj(v))


def test_block_permutation_equivariant():
    block = _randomize(AttentionBlock(16, 2)).double()
    x = torch.randn(1, 9, 16, dtype=torch.float64)
    perm = torch.randperm(9)
    torch.testing.assert_close(block(x[:, perm]), block(x)[:, perm])


def test_attention_block_checks_shape():
    with pytest.raises(ValueError):
        attention_block(torch.zeros(2, 3, 8), AttentionBlock(16, 2))


def _backbone():
    return _randomize(Backbone(BlockConfig(2, 16, 2)), seed=1).double()


def test_multiview_single_view_is_plain_attention():
    bb = _backbone()
    x = torch.randn(2, 1, 3, 3, 16, dtype=torch.float64)
    torch.testing.assert_close(multiview_attend(x, bb).reshape(2, 9, 16),
                               bb(x.reshape(2, 9, 16)))


def test_multiview_view_swap_equivariance():
    bb = _backbone()
    x = torch.randn(1, 3, 2, 2, 16, dtype=torch.float64)
    out = multiview_attend(x, bb)
    swapped = multiview_attend(x[:, [1, 0, 2]], bb)
    torch.testing.assert_close(swapped, out[:, [1, 0, 2]])


def test_cross_view_influence():
    bb = _backbone()
    x = torch.randn(1, 2, 2, 2, 16, dtype=torch.float64)
    y = x.clone()
    y[:, 1] += 1e-3 * torch.randn_like(y[:, 1])
    assert (multiview_attend(y, bb)[:, 0] - multiview_attend(x, bb)[:, 0]).abs().max() > 1e-8


def _tiny_reconstructor(**kw):
    cfg = ReconstructorConfig(patch=4, depth=2, dim=32, heads=2, **kw)
    return Reconstructor(cfg).double()


def test_zero_decode_gives_zero_raw_cloud():
    model = _tiny_reconstructor(near=1.0, far=5.0)
    with torch.no_grad():
        model.decode.weight.zero_()
        model.decode.bias.zero_()
    rig = make_view_ring(0.0, 4, 2.7, Intrinsics(50, 8, 8))
    cloud = reconstructor_forward(torch.rand(4, 8, 8, 3), rig, model)
    dist = (cloud.positions - torch.as_tensor(rig[0].pose.center)).norm(dim=-1)[:64]
    torch.testing.assert_close(dist, torch.full_like(dist, 3.0, dtype=torch.float64))
    assert torch.all(cloud.opacities == 0.5) and torch.all(cloud.scales == 1.0)


def test_reconstructor_count_and_init_scale():
    model = Reconstructor(ReconstructorConfig(patch=8, depth=1, dim=32, heads=2))
    rig = make_view_ring(0.0, 6, 2.7, Intrinsics(50, 64, 64))
    with torch.no_grad():
        cloud = reconstructor_forward(torch.rand(6, 64, 64, 3), rig, model)
    assert len(cloud) == 24576
    # decode bias starts splats small and unrotated
    assert cloud.scales.median().item() == pytest.approx(0.02, rel=0.2)


def _directional_check(loss_fn, params, seed=0, h=1e-6):
    """Compare <grad, v> with a central difference along a random direction v, per tensor."""
    g = torch.Generator().manual_seed(seed)
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    worst = 0.0
    for p, grad in zip(params, grads):
        v = torch.randn(p.shape, generator=g, dtype=p.dtype)
        analytic = 0.0 if grad is None else float((grad * v).sum())
        with torch.no_grad():
            p.add_(h * v)
            up = float(loss_fn())
            p.sub_(2 * h * v)
            down = float(loss_fn())
            p.add_(h * v)
        numeric = (up - down) / (2 * h)
        worst = max(worst, abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-6))
    return worst


def test_decode_gradient_through_renderer():
    model = _tiny_reconstructor()
    with torch.no_grad():
        model.decode.weight.normal_(0, 0.05, generator=torch.Generator().manual_seed(2))
    rig = make_view_ring(0.0, 4, 2.7, Intrinsics(50, 8, 8))
    imgs = torch.rand(4, 8, 8, 3, generator=torch.Generator().manual_seed(3), dtype=torch.float64)
    target = torch.rand(8, 8, 3, generator=torch.Generator().manual_seed(4), dtype=torch.float64)

    def loss():
        cloud = reconstructor_forward(imgs, rig, model)
        rgb, _, _ = render_torch(cloud, rig[1].intrinsics, rig[1].pose, (1.0, 1.0, 1.0))
        return ((rgb - target) ** 2).mean()

    assert _directional_check(loss, [model.decode.weight, model.decode.bias]) < 1e-3


def test_full_model_gradients_noise_predictor():
    cfg = NoisePredictorConfig(image_size=8, patch=4, depth=2, dim=32, heads=2, timesteps=10)
    model = _randomize(NoisePredictor(cfg), std=0.1).double()
    g = torch.Generator().manual_seed(5)
    x = torch.randn(1, 4, 8, 8, 3, generator=g, dtype=torch.float64)
    y = torch.rand(1, 8, 8, 3, generator=g, dtype=torch.float64)
    target = torch.randn(1, 4, 8, 8, 3, generator=g, dtype=torch.float64)

    def loss():
        return ((model(x, torch.tensor([3]), y, [0, 3, 4, 5]) - target) ** 2).mean()

    assert _directional_check(loss, list(model.parameters())) < 1e-3


def test_full_model_gradients_reconstructor():
    model = _randomize(_tiny_reconstructor(), std=0.1, seed=3)
    rig = make_view_ring(0.0, 4, 2.7, Intrinsics(50, 8, 8))
    pl, _, _ = rig_inputs(rig, torch.float64)
    imgs = torch.rand(1, 4, 8, 8, 3, generator=torch.Generator().manual_seed(6),
                      dtype=torch.float64)

    def loss():
        return (model.raw(imgs, pl[None]) ** 2).mean()

    assert _directional_check(loss, list(model.parameters())) < 1e-3


@pytest.mark.parametrize("n", [4, 6, 8])
def test_noise_predictor_shapes(n):
    cfg = NoisePredictorConfig(image_size=8, patch=4, depth=1, dim=32, heads=2, timesteps=10)
    model = NoisePredictor(cfg)
    x = torch.randn(2, n, 8, 8, 3)
    out = model(x, torch.tensor([1, 10]), torch.rand(2, 8, 8, 3), list(range(n)))
    assert out.shape == x.shape


def test_noise_predictor_null_condition_differs_and_is_deterministic():
    cfg = NoisePredictorConfig(image_size=8, patch=4, depth=1, dim=32, heads=2, timesteps=10)
    model = _randomize(NoisePredictor(cfg), std=0.2)
    x, y = torch.randn(1, 6, 8, 8, 3), torch.rand(1, 8, 8, 3)
    t, ids = torch.tensor([5]), list(range(6))
    cond = model(x, t, y, ids, torch.tensor([False]))
    null = model(x, t, y, ids, torch.tensor([True]))
    assert (cond - null).norm() > 0
    assert torch.equal(cond, model(x, t, y, ids))
    assert torch.equal(NoisePredictor(cfg).x_embed.weight, NoisePredictor(cfg).x_embed.weight)


def test_noise_predictor_rejects_bad_timestep():
    cfg = NoisePredictorConfig(image_size=8, patch=4, depth=1, dim=32, heads=2, timesteps=10)
    with pytest.raises(ValueError):
        NoisePredictor(cfg)(torch.zeros(1, 4, 8, 8, 3), torch.tensor([0]), torch.zeros(1, 8, 8, 3),
                            [0, 1, 2, 3])


def test_checkpoint_roundtrip_and_corruption(tmp_path):
    tensors = {"a": torch.randn(3, 4), "b": np.arange(5, dtype=np.float32)}
    save_tensors(tmp_path / "c.ckpt", tensors, {"kind": "test", "step": 3})
    back, meta = load_tensors(tmp_path / "c.ckpt")
    assert torch.equal(back["a"], tensors["a"]) and meta == {"kind": "test", "step": 3}
    raw = (tmp_path / "c.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(raw[:-8])
    with pytest.raises(CheckpointError):
        load_tensors(tmp_path / "t.ckpt")
    (tmp_path / "m.ckpt").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError):
        load_tensors(tmp_path / "m.ckpt")
