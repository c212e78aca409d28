"""Realism embedding algebra: frequency ladder, sinusoidal components against
scalar oracles, pointwise locality, conditioning blocks, and file formats."""

import math

import numpy as np
import pytest
import torch

from genjscc.config import SremConfig
from genjscc.srem import (
    CondResidualBottleneck,
    RealismMap,
    SpatialRealismEmbedding,
    frequency_vector,
    load_realism_map,
    save_realism_map,
    sinusoidal_components,
)


class TestFrequencyVector:
    def test_first_element_is_one_for_any_period(self):
        for p_max in (2.0, 100.0, 10000.0):
            nu = frequency_vector(SremConfig(p_max=p_max, channel_dim=16))
            assert nu[0] == 1.0

    def test_c4_pmax100_exact(self):
        nu = frequency_vector(SremConfig(p_max=100.0, channel_dim=4))
        assert nu.shape == (2,)
        assert nu[0] == 1.0
        assert nu[1] == 0.1  # 100^(-2/4) = 0.1 exactly in binary64

    def test_monotone_decreasing_at_paper_scale(self):
        nu = frequency_vector(SremConfig(p_max=10000.0, channel_dim=320))
        assert nu.shape == (160,)
        assert (np.diff(nu) < 0).all()
        assert (nu > 0).all()


class TestSinusoidalComponents:
    def test_zero_map_gives_exact_zero_sin_and_unit_cos(self):
        cfg = SremConfig(p_max=10000.0, channel_dim=32, beta_max=8.0)
        beta = torch.zeros(1, 4, 4)
        g_sin, g_cos = sinusoidal_components(beta, cfg)
        assert torch.equal(g_sin, torch.zeros(1, 16, 4, 4))
        assert torch.equal(g_cos, torch.ones(1, 16, 4, 4))

    def test_max_map_matches_scalar_loop_oracle(self):
        cfg = SremConfig(p_max=100.0, channel_dim=8, beta_max=8.0)
        beta = torch.full((1, 3, 5), 8.0, dtype=torch.float64)
        g_sin, g_cos = sinusoidal_components(beta, cfg)
        nu = frequency_vector(cfg)
        for i in range(4):
            expected_sin = math.sin(cfg.p_max * nu[i])
            expected_cos = math.cos(cfg.p_max * nu[i])
            assert torch.allclose(g_sin[0, i], torch.full((3, 5), expected_sin, dtype=torch.float64), atol=1e-12)
            assert torch.allclose(g_cos[0, i], torch.full((3, 5), expected_cos, dtype=torch.float64), atol=1e-12)

    def test_arbitrary_map_matches_scalar_loop_oracle(self):
        cfg = SremConfig(p_max=50.0, channel_dim=6, beta_max=4.0)
        rng = np.random.default_rng(0)
        values = rng.uniform(0, 4.0, size=(2, 3))
        g_sin, g_cos = sinusoidal_components(torch.tensor(values, dtype=torch.float64).unsqueeze(0), cfg)
        nu = frequency_vector(cfg)
        for i in range(3):
            for r in range(2):
                for c in range(3):
                    phase = values[r, c] / 4.0 * 50.0 * nu[i]
                    assert g_sin[0, i, r, c].item() == pytest.approx(math.sin(phase), abs=1e-12)
                    assert g_cos[0, i, r, c].item() == pytest.approx(math.cos(phase), abs=1e-12)

    def test_out_of_range_rejected(self):
        cfg = SremConfig(channel_dim=4, beta_max=2.0)
        with pytest.raises(ValueError):
            sinusoidal_components(torch.full((1, 2, 2), 3.0), cfg)


class TestEmbedding:
    @pytest.fixture
    def srem(self):
        torch.manual_seed(0)
        return SpatialRealismEmbedding(SremConfig(p_max=100.0, channel_dim=8, beta_max=8.0))

    def test_constant_map_gives_spatially_constant_features(self, srem):
        beta = torch.full((1, 4, 6), 3.25)
        g = srem(beta)
        flat = g.base.flatten(2)
        assert torch.allclose(flat, flat[:, :, :1].expand_as(flat), atol=1e-6)

    def test_upsamplings_are_deterministic_nearest(self, srem):
        beta = torch.rand(1, 4, 4) * 8.0
        g = srem(beta)
        for factor in (2, 4, 8):
            up = g.at_factor(factor)
            assert up.shape[-2:] == (4 * factor, 4 * factor)
            assert torch.equal(up, torch.nn.functional.interpolate(g.base, scale_factor=factor, mode="nearest"))

    def test_pointwise_locality_under_permutation(self, srem):
        beta = torch.rand(1, 4, 4) * 8.0
        perm = torch.randperm(16)
        permuted = beta.flatten(1)[:, perm].reshape(1, 4, 4)
        g = srem(beta).base.flatten(2)
        g_perm = srem(permuted).base.flatten(2)
        assert torch.allclose(g[:, :, perm], g_perm, atol=1e-6)

    def test_continuity_in_beta(self, srem):
        beta = torch.rand(1, 4, 4) * 4.0 + 1.0
        base = srem(beta).base
        for delta in (1e-2, 1e-4, 1e-6):
            shifted = srem(beta + delta).base
            diff = (shifted - base).abs().max().item()
            assert diff < 50 * delta + 1e-6

    def test_mlp_is_two_linear_layers_with_relu(self, srem):
        kinds = [type(m).__name__ for m in srem.mlp]
        assert kinds == ["Conv2d", "ReLU", "Conv2d"]
        assert all(m.kernel_size == (1, 1) for m in srem.mlp if hasattr(m, "kernel_size"))


class TestCondResidualBottleneck:
    def test_zero_projection_behaves_unconditioned(self):
        torch.manual_seed(0)
        block = CondResidualBottleneck(8, 4, cond_dim=6)
        for proj in (block.proj_reduce, block.proj_conv, block.proj_expand):
            torch.nn.init.zeros_(proj.weight)
        x = torch.randn(1, 8, 5, 5)
        cond = torch.randn(1, 6, 5, 5)
        assert torch.allclose(block(x, cond), block(x, None), atol=0)

    def test_spatial_mismatch_rejected(self):
        block = CondResidualBottleneck(8, 4, cond_dim=6)
        with pytest.raises(ValueError):
            block(torch.randn(1, 8, 5, 5), torch.randn(1, 6, 4, 4))

    def test_projection_gradient_matches_finite_differences(self):
        torch.manual_seed(1)
        block = CondResidualBottleneck(4, 2, cond_dim=2).double()
        x = torch.randn(1, 4, 3, 3, dtype=torch.float64)
        cond = torch.randn(1, 2, 3, 3, dtype=torch.float64, requires_grad=True)
        out = block(x, cond).sum()
        out.backward()
        eps = 1e-6
        rng = np.random.default_rng(0)
        for _ in range(5):
            i = tuple(rng.integers(s) for s in cond.shape)
            plus = cond.detach().clone()
            plus[i] += eps
            minus = cond.detach().clone()
            minus[i] -= eps
            fd = (block(x, plus).sum() - block(x, minus).sum()).item() / (2 * eps)
            assert fd == pytest.approx(cond.grad[i].item(), rel=1e-3, abs=1e-9)

    def test_local_beta_change_touches_only_matching_region(self):
        # conditioning is pointwise: a single-cell realism difference may only
        # change the block's additive inputs at that cell
        torch.manual_seed(2)
        cfg = SremConfig(p_max=100.0, channel_dim=8, beta_max=8.0)
        srem = SpatialRealismEmbedding(cfg)
        beta_a = torch.zeros(1, 4, 4)
        beta_b = beta_a.clone()
        beta_b[0, 2, 1] = 8.0
        ga = srem(beta_a).base
        gb = srem(beta_b).base
        diff = (ga - gb).abs().sum(dim=1)[0]
        changed = diff > 1e-9
        assert changed[2, 1]
        assert changed.sum() == 1


class TestRealismMapFiles:
    def test_text_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        rmap = RealismMap(values=rng.uniform(0, 8, size=(3, 5)), beta_max=8.0)
        path = tmp_path / "beta.txt"
        save_realism_map(path, rmap)
        loaded = load_realism_map(path)
        assert loaded.beta_max == 8.0
        assert np.array_equal(loaded.values, rmap.values)
        header = path.read_text().splitlines()[0].split()
        assert header[0] == "5" and header[1] == "3"  # w h beta_max

    def test_grayscale_raster_scaled(self, tmp_path):
        from PIL import Image

        arr = np.array([[0, 128], [255, 64]], dtype=np.uint8)
        path = tmp_path / "beta.png"
        Image.fromarray(arr, mode="L").save(path)
        rmap = load_realism_map(path, beta_max=8.0)
        assert rmap.values[0, 0] == 0.0
        assert rmap.values[1, 0] == 8.0
        assert rmap.values[0, 1] == pytest.approx(128 / 255 * 8.0)

    def test_range_validation(self):
        with pytest.raises(ValueError):
            RealismMap(values=np.array([[9.0]]), beta_max=8.0)
        with pytest.raises(ValueError):
            RealismMap(values=np.array([[-0.1]]), beta_max=8.0)
