"""Fusion network architecture: channel plans, shapes, determinism, gradients."""

import numpy as np
import pytest
import torch

from ivfuse.errors import ShapeError
from ivfuse.fusion_net import (
    FINAL_IN_CHANNELS,
    FusionNetConfig,
    MultiScaleFusionNet,
    build_fusion_net,
)


@pytest.fixture(scope="module")
def net():
    return build_fusion_net(FusionNetConfig(rng_seed=0))


def rand_image(rng, h=16, w=16):
    return torch.from_numpy(rng.uniform(-1, 1, (h, w)).astype(np.float32))


class TestInit:
    def test_same_seed_bit_identical(self):
        a = build_fusion_net(FusionNetConfig(rng_seed=5))
        b = build_fusion_net(FusionNetConfig(rng_seed=5))
        for (ka, va), (kb, vb) in zip(
            a.state_dict().items(), b.state_dict().items()
        ):
            assert ka == kb
            assert torch.equal(va, vb)

    def test_different_seed_differs(self):
        a = build_fusion_net(FusionNetConfig(rng_seed=1))
        b = build_fusion_net(FusionNetConfig(rng_seed=2))
        assert not torch.equal(
            a.trunk_ir.conv1.conv.weight, b.trunk_ir.conv1.conv.weight
        )

    def test_kernel_shapes_follow_channel_plan(self, net):
        assert net.trunk_ir.conv1.conv.weight.shape == (64, 1, 5, 5)
        assert net.trunk_ir.conv2.conv.weight.shape == (128, 64, 3, 3)
        assert net.trunk_ir.conv3.conv.weight.shape == (256, 192, 3, 3)
        assert net.trunk_ir.conv4.conv.weight.shape == (512, 448, 3, 3)

    def test_branch_plans(self, net):
        b1 = [m.conv.weight.shape for m in net.branch1.layers]
        assert b1 == [(64, 1, 3, 3), (128, 64, 3, 3), (256, 128, 3, 3)]
        b2 = [m.conv.weight.shape for m in net.branch2.layers]
        assert b2 == [(64, 1, 3, 3), (128, 64, 3, 3)]
        b3 = [m.conv.weight.shape for m in net.branch3.layers]
        assert b3 == [(64, 1, 3, 3)]

    def test_fusion_layer_channels(self, net):
        assert net.fuse1.conv.weight.shape == (1, 128, 1, 1)
        assert net.fuse2.conv.weight.shape == (1, 256, 1, 1)
        assert net.fuse3.conv.weight.shape == (1, 512, 1, 1)
        assert net.final_fuse.weight.shape == (1, FINAL_IN_CHANNELS, 1, 1)
        assert FINAL_IN_CHANNELS == 1472


class TestTrunk:
    def test_feature_channels_and_resolution(self, net, rng):
        feats = net.trunk_forward(rand_image(rng, 24, 20), "ir", diagnostics=True)
        assert [f.shape[1] for f in feats] == [64, 128, 256, 512]
        assert all(f.shape[-2:] == (24, 20) for f in feats)

    def test_modality_selects_independent_trunk(self, net, rng):
        img = rand_image(rng)
        ir_f = net.trunk_forward(img, "ir")
        vis_f = net.trunk_forward(img, "vis")
        assert not torch.equal(ir_f[0], vis_f[0])  # unshared parameters

    def test_no_parameter_sharing(self, rng):
        net = build_fusion_net(FusionNetConfig(rng_seed=3))
        net.eval()
        img = rand_image(rng)
        before = [f.detach().clone() for f in net.trunk_forward(img, "vis")]
        with torch.no_grad():
            net.trunk_ir.conv1.conv.weight += 0.5
        after = net.trunk_forward(img, "vis")
        for b, a in zip(before, after):
            assert torch.equal(b, a)

    def test_too_small_input(self, net):
        with pytest.raises(ShapeError):
            net.trunk_forward(torch.zeros(4, 4), "ir")

    def test_unknown_modality(self, net):
        with pytest.raises(ValueError):
            net.trunk_forward(torch.zeros(8, 8), "thermal")


class TestScaleFuseAndBranches:
    def test_scale_fuse_single_channel_bounded(self, net, rng):
        f_ir = torch.from_numpy(rng.standard_normal((1, 64, 8, 8)).astype(np.float32))
        f_vis = torch.from_numpy(rng.standard_normal((1, 64, 8, 8)).astype(np.float32))
        fused = net.scale_fuse(f_ir, f_vis, 1)
        assert fused.shape == (1, 1, 8, 8)
        assert fused.abs().max().item() < 1.0

    def test_zero_weights_give_zero_output(self, rng):
        net = build_fusion_net(FusionNetConfig(rng_seed=0))
        with torch.no_grad():
            net.fuse1.conv.weight.zero_()
            net.fuse1.conv.bias.zero_()
        f = torch.from_numpy(rng.standard_normal((1, 64, 6, 6)).astype(np.float32))
        assert torch.all(net.scale_fuse(f, f, 1) == 0.0)

    def test_mismatched_shapes_rejected(self, net):
        with pytest.raises(ShapeError):
            net.scale_fuse(torch.zeros(1, 64, 8, 8), torch.zeros(1, 64, 8, 9), 1)

    def test_branch_output_channels(self, net, rng):
        x = torch.from_numpy(rng.standard_normal((1, 1, 12, 12)).astype(np.float32))
        assert net.branch_forward(x, 1).shape == (1, 256, 12, 12)
        assert net.branch_forward(x, 2).shape == (1, 128, 12, 12)
        assert net.branch_forward(x, 3).shape == (1, 64, 12, 12)

    def test_branch_rejects_multichannel(self, net):
        with pytest.raises(ShapeError):
            net.branch_forward(torch.zeros(1, 2, 8, 8), 1)


class TestForward:
    def test_output_shape_and_open_range(self, net, rng):
        fused = net(rand_image(rng, 16, 16), rand_image(rng, 16, 16), diagnostics=True)
        assert fused.shape == (1, 1, 16, 16)
        assert fused.min().item() > -1.0 and fused.max().item() < 1.0

    def test_resolution_preserved_arbitrary_sizes(self, net, rng):
        for h, w in ((8, 8), (17, 23), (40, 28)):
            fused = net(rand_image(rng, h, w), rand_image(rng, h, w))
            assert fused.shape[-2:] == (h, w)

    def test_final_concat_width(self, net, rng):
        assert net.final_in_channels == 1472
        # diagnostics mode asserts the runtime concat width
        net(rand_image(rng, 8, 8), rand_image(rng, 8, 8), diagnostics=True)

    def test_unregistered_pair_rejected(self, net):
        with pytest.raises(ShapeError):
            net(torch.zeros(8, 8), torch.zeros(8, 9))

    def test_deterministic_in_eval_mode(self, rng):
        net = build_fusion_net(FusionNetConfig(rng_seed=0))
        net.eval()
        ir, vis = rand_image(rng), rand_image(rng)
        assert torch.equal(net(ir, vis), net(ir, vis))

    def test_batch_forward(self, net, rng):
        ir = torch.from_numpy(rng.uniform(-1, 1, (3, 1, 16, 16)).astype(np.float32))
        vis = torch.from_numpy(rng.uniform(-1, 1, (3, 1, 16, 16)).astype(np.float32))
        assert net(ir, vis).shape == (3, 1, 16, 16)


class TestWeightGradients:
    def test_weight_gradients_match_finite_differences(self, rng):
        """Central differences on a sample of weights, eval-mode batch norm."""
        net = build_fusion_net(FusionNetConfig(rng_seed=0)).double()
        net.eval()
        ir = torch.from_numpy(rng.uniform(-1, 1, (16, 16)))
        vis = torch.from_numpy(rng.uniform(-1, 1, (16, 16)))

        def objective():
            return net(ir, vis).square().mean()

        loss = objective()
        net.zero_grad()
        loss.backward()

        sampled = [
            net.trunk_ir.conv1.conv.weight,
            net.trunk_vis.conv2.conv.weight,
            net.trunk_ir.conv4.conv.weight,
            net.fuse2.conv.weight,
            net.branch1.layers[1].conv.weight,
            net.final_fuse.weight,
            net.trunk_ir.conv3.bn.weight,
        ]
        torch.manual_seed(0)
        h = 1e-6
        checked = passed = 0
        for param in sampled:
            flat = param.data.reshape(-1)
            grad = param.grad.reshape(-1)
            for idx in torch.randint(0, flat.numel(), (4,)):
                orig = flat[idx].item()
                flat[idx] = orig + h
                up = objective().item()
                flat[idx] = orig - h
                down = objective().item()
                flat[idx] = orig
                fd = (up - down) / (2 * h)
                g = grad[idx].item()
                checked += 1
                if abs(fd - g) / max(abs(fd), abs(g), 1e-8) <= 1e-3:
                    passed += 1
        assert passed >= 0.95 * checked, f"{passed}/{checked}"
