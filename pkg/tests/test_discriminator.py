import pytest
import torch

from seg_inpaint.discriminator import (
    DiscriminatorConfig,
    build_discriminator,
    disc_forward,
    downsample_pyramid,
)


def tiny_config(depth=6):
    return DiscriminatorConfig(input_depth=depth, base_channels=4, norm="instance")


class TestDownsamplePyramid:
    def test_scale_sizes(self):
        levels = downsample_pyramid(torch.randn(1, 3, 256, 256))
        assert [tuple(x.shape[-2:]) for x in levels] == [(256, 256), (128, 128), (64, 64)]

    def test_constant_input_stays_constant(self):
        x = torch.full((1, 2, 16, 16), 0.7)
        for level in downsample_pyramid(x):
            assert torch.allclose(level, torch.full_like(level, 0.7))

    def test_matches_block_mean_oracle(self):
        x = torch.randn(1, 1, 8, 8, dtype=torch.float64)
        half = downsample_pyramid(x)[1]
        for i in range(4):
            for j in range(4):
                block = x[0, 0, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                # fp64: only summation order separates the two, well below 1e-12
                assert abs(float(half[0, 0, i, j]) - float(block.mean())) < 1e-12

    def test_quarter_equals_two_halvings(self):
        x = torch.randn(2, 3, 32, 32)
        levels = downsample_pyramid(x)
        twice = downsample_pyramid(levels[1])[1]
        assert torch.allclose(levels[2], twice, atol=1e-7)

    def test_indivisible_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            downsample_pyramid(torch.randn(1, 3, 30, 30))


class TestPatchArithmetic:
    @pytest.mark.parametrize("size,expected", [(256, 16), (128, 8), (64, 4)])
    def test_patch_map_is_input_over_16(self, size, expected):
        disc = build_discriminator(tiny_config(), seed=0).scales[0]
        pred, _ = disc_forward(disc, torch.randn(3, size, size), torch.randn(3, size, size))
        assert pred.shape == (1, expected, expected)

    def test_predictions_strictly_inside_unit_interval(self):
        disc = build_discriminator(tiny_config(), seed=0).scales[0]
        pred, _ = disc_forward(disc, torch.randn(3, 64, 64) * 10, torch.randn(3, 64, 64) * 10)
        assert float(pred.min()) > 0.0 and float(pred.max()) < 1.0


class TestFeaturePyramid:
    def test_layer_zero_is_the_input(self):
        disc = build_discriminator(tiny_config(), seed=0).scales[0]
        cond = torch.randn(3, 64, 64)
        cand = torch.randn(3, 64, 64)
        _, pyramid = disc_forward(disc, cond, cand)
        assert torch.equal(pyramid[0], torch.cat([cond, cand], dim=0))

    def test_one_entry_per_layer_plus_input(self):
        disc = build_discriminator(tiny_config(), seed=0).scales[0]
        _, pyramid = disc_forward(disc, torch.randn(3, 64, 64), torch.randn(3, 64, 64))
        assert len(pyramid) == 5  # input + 4 down layers

    def test_multiscale_forward_returns_three(self):
        msd = build_discriminator(tiny_config(input_depth := 6), seed=0)
        preds, pyramids = msd(torch.randn(1, 3, 128, 128), torch.randn(1, 3, 128, 128))
        assert len(preds) == 3 and len(pyramids) == 3
        assert [tuple(p.shape[-2:]) for p in preds] == [(8, 8), (4, 4), (2, 2)]


class TestParameterIsolation:
    def test_scales_share_structure_not_weights(self):
        msd = build_discriminator(tiny_config(), seed=0)
        p0 = list(msd.scales[0].parameters())
        p1 = list(msd.scales[1].parameters())
        assert len(p0) == len(p1)
        assert all(a.shape == b.shape for a, b in zip(p0, p1))
        assert any(not torch.equal(a, b) for a, b in zip(p0, p1))

    def test_updating_one_scale_leaves_others_unchanged(self):
        msd = build_discriminator(tiny_config(), seed=0)
        before = [p.clone() for p in msd.scales[1].parameters()]
        opt = torch.optim.SGD(msd.scales[0].parameters(), lr=0.1)
        pred, _ = msd.scales[0](torch.randn(1, 6, 64, 64))
        pred.mean().backward()
        opt.step()
        assert all(torch.equal(a, b) for a, b in zip(before, msd.scales[1].parameters()))


class TestValidation:
    def test_misaligned_shapes_rejected(self):
        disc = build_discriminator(tiny_config(), seed=0).scales[0]
        with pytest.raises(ValueError, match="aligned"):
            disc_forward(disc, torch.randn(3, 64, 64), torch.randn(3, 32, 32))

    def test_depth_sum_mismatch_rejected(self):
        disc = build_discriminator(tiny_config(), seed=0).scales[0]
        with pytest.raises(ValueError, match="depth"):
            disc_forward(disc, torch.randn(3, 64, 64), torch.randn(4, 64, 64))

    def test_config_validation(self):
        with pytest.raises(ValueError, match="positive"):
            DiscriminatorConfig(input_depth=0)


class TestGradients:
    def test_analytic_matches_finite_differences(self):
        from test_generator import randomize_for_gradcheck

        torch.manual_seed(1)
        disc = build_discriminator(tiny_config(4), seed=3).scales[0].double()
        randomize_for_gradcheck(disc, seed=3)
        cond = torch.randn(2, 16, 16, dtype=torch.float64)
        cand = torch.randn(2, 16, 16, dtype=torch.float64)

        def loss_fn():
            pred, _ = disc_forward(disc, cond, cand)
            return ((pred - 0.3) ** 2).mean()

        loss = loss_fn()
        disc.zero_grad()
        loss.backward()
        import numpy as np
        rng = np.random.default_rng(0)
        for param in disc.parameters():
            flat = param.detach().view(-1)
            idx = int(rng.integers(0, flat.numel()))
            h = 1e-6
            with torch.no_grad():
                orig = float(flat[idx])
                flat[idx] = orig + h
                up = float(loss_fn())
                flat[idx] = orig - h
                down = float(loss_fn())
                flat[idx] = orig
            fd = (up - down) / (2 * h)
            a = float(param.grad.view(-1)[idx])
            assert abs(a - fd) <= 1e-3 * max(abs(a), abs(fd)) + 1e-9
