"""Loss functions against scalar oracles, the zero-weight reduction chain,
gradient semantics, and the training-time sampling schedules."""

import math

import numpy as np
import pytest
import torch

from genjscc.config import LossWeights, TrainingSchedule
from genjscc.losses import (
    FixedFeatureDistance,
    loss_cct,
    loss_discriminator,
    loss_dpct,
    loss_rd,
    loss_rdp,
    sample_instance_mask,
    sample_realism_map,
)


def scalar_mse(x, y):
    total = 0.0
    count = 0
    for a, b in zip(x.flatten().tolist(), y.flatten().tolist()):
        total += (a - b) ** 2
        count += 1
    return total / count


class TestLossRd:
    def test_zero_on_identical_images_and_zero_rate(self):
        x = torch.rand(1, 3, 4, 4)
        assert loss_rd(x, x, 0.0, 0.5).item() == 0.0

    def test_lambda_zero_gives_pure_distortion(self):
        x = torch.rand(1, 3, 4, 4)
        y = torch.rand(1, 3, 4, 4)
        assert loss_rd(x, y, 123.0, 0.0).item() == pytest.approx(scalar_mse(x, y), rel=1e-6)

    def test_hand_computed_2x2_example(self):
        x = torch.tensor([[[[0.0, 0.5], [1.0, 0.25]]] * 3], dtype=torch.float64)
        x_hat = torch.tensor([[[[0.1, 0.5], [0.8, 0.25]]] * 3], dtype=torch.float64)
        # squared errors per channel: 0.01, 0, 0.04, 0 -> mean = 0.05/4
        expected = 0.05 / 4 + 0.025 * 7.0
        assert loss_rd(x, x_hat, 7.0, 0.025).item() == pytest.approx(expected, rel=1e-12)


class TestLossRdp:
    def test_beta_zero_equals_loss_rd_exactly(self):
        torch.manual_seed(0)
        x, x_hat = torch.rand(2, 1, 3, 4, 4, dtype=torch.float64).unbind(0)
        d = torch.rand(1, 2, 2, dtype=torch.float64) * 0.8 + 0.1
        w = LossWeights(lmbda=0.3, beta_scalar=0.0, c_p=0.0)
        assert loss_rdp(x, x_hat, 1.7, d, w).item() == loss_rd(x, x_hat, 1.7, 0.3).item()

    def test_perfect_scores_zero_perception(self):
        x = torch.rand(1, 3, 4, 4, dtype=torch.float64)
        d = torch.ones(1, 2, 2, dtype=torch.float64) - 1e-6
        w = LossWeights(lmbda=0.0, beta_scalar=5.0, score_eps=1e-6)
        got = loss_rdp(x, x, 0.0, d, w).item()
        assert got == pytest.approx(-5.0 * math.log(1 - 1e-6), abs=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        x = torch.tensor(rng.uniform(0, 1, (1, 3, 2, 2)))
        x_hat = torch.tensor(rng.uniform(0, 1, (1, 3, 2, 2)))
        d = torch.tensor(rng.uniform(0.05, 0.95, (1, 2, 2)))
        w = LossWeights(lmbda=0.4, beta_scalar=1.5)
        expected = scalar_mse(x, x_hat) + 0.4 * 2.0 + 1.5 * np.mean([-math.log(v) for v in d.flatten().tolist()])
        assert loss_rdp(x, x_hat, 2.0, d, w).item() == pytest.approx(expected, rel=1e-9)


class TestLossDiscriminator:
    def test_perfect_discrimination_near_zero(self):
        d_fake = torch.full((1, 2, 2), 1e-9, dtype=torch.float64)
        d_real = torch.ones(1, 2, 2, dtype=torch.float64)
        assert loss_discriminator(d_fake, d_real, eps=1e-12).item() == pytest.approx(0.0, abs=1e-8)

    def test_half_scores_give_2_ln2(self):
        half = torch.full((1, 4, 4), 0.5, dtype=torch.float64)
        assert loss_discriminator(half, half).item() == pytest.approx(2 * math.log(2), rel=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(1)
        d_fake = torch.tensor(rng.uniform(0.1, 0.9, (1, 3, 3)))
        d_real = torch.tensor(rng.uniform(0.1, 0.9, (1, 3, 3)))
        expected = np.mean([-math.log(1 - v) for v in d_fake.flatten().tolist()])
        expected += np.mean([-math.log(v) for v in d_real.flatten().tolist()])
        assert loss_discriminator(d_fake, d_real).item() == pytest.approx(expected, rel=1e-12)


class TestLossDpct:
    def rand_inputs(self, seed, h=4, w=4):
        rng = np.random.default_rng(seed)
        x = torch.tensor(rng.uniform(0, 1, (1, 3, 4 * h, 4 * w)))
        x_hat = torch.tensor(rng.uniform(0, 1, (1, 3, 4 * h, 4 * w)))
        d = torch.tensor(rng.uniform(0.05, 0.95, (1, h, w)))
        lp = torch.tensor(rng.uniform(0, 0.5, (1, h, w)))
        return x, x_hat, d, lp

    def test_zero_map_reduces_to_loss_rd_exactly(self):
        x, x_hat, d, lp = self.rand_inputs(0)
        w = LossWeights(lmbda=0.2, beta_scalar=3.0, c_p=1.0)
        got = loss_dpct(x, x_hat, 5.0, d, lp, torch.zeros(1, 4, 4, dtype=torch.float64), w)
        assert got.item() == loss_rd(x, x_hat, torch.tensor(5.0, dtype=torch.float64), 0.2).item()

    def test_constant_map_folds_into_scalar_weight(self):
        x, x_hat, d, lp = self.rand_inputs(1)
        b = 2.5
        w = LossWeights(lmbda=0.2, beta_scalar=b, c_p=0.0)
        dpct = loss_dpct(x, x_hat, 5.0, d, lp * 0, torch.full((1, 4, 4), b, dtype=torch.float64), w)
        rdp = loss_rdp(x, x_hat, 5.0, d, w)
        assert dpct.item() == pytest.approx(rdp.item(), rel=1e-12)

    def test_matches_double_loop_scalar_oracle(self):
        x, x_hat, d, lp = self.rand_inputs(2)
        rng = np.random.default_rng(3)
        beta = torch.tensor(rng.uniform(0, 8, (1, 4, 4)))
        w = LossWeights(lmbda=0.3, c_p=0.7)
        acc = 0.0
        for i in range(4):
            for j in range(4):
                acc += beta[0, i, j].item() * (-math.log(d[0, i, j].item()) + 0.7 * lp[0, i, j].item())
        expected = scalar_mse(x, x_hat) + 0.3 * 2.0 + acc / 16
        assert loss_dpct(x, x_hat, 2.0, d, lp, beta, w).item() == pytest.approx(expected, rel=1e-9)

    def test_shape_mismatch_rejected(self):
        x, x_hat, d, lp = self.rand_inputs(4)
        with pytest.raises(ValueError):
            loss_dpct(x, x_hat, 1.0, d, lp, torch.zeros(1, 3, 3), LossWeights())

    def test_beta_map_receives_no_gradient(self):
        x, x_hat, d, lp = self.rand_inputs(5)
        x_hat = x_hat.clone().requires_grad_(True)
        beta = torch.full((1, 4, 4), 2.0, dtype=torch.float64, requires_grad=True)
        loss = loss_dpct(x, x_hat, 1.0, d, lp, beta, LossWeights())
        loss.backward()
        assert x_hat.grad is not None
        assert beta.grad is None or torch.all(beta.grad == 0)

    def test_gradient_wrt_xhat_matches_finite_differences(self):
        x, _, _, _ = self.rand_inputs(6, h=2, w=2)
        x_hat = torch.rand(1, 3, 8, 8, dtype=torch.float64, requires_grad=True)
        d = torch.rand(1, 2, 2, dtype=torch.float64) * 0.8 + 0.1
        lp = torch.rand(1, 2, 2, dtype=torch.float64)
        beta = torch.rand(1, 2, 2, dtype=torch.float64) * 4
        w = LossWeights(lmbda=0.1)
        loss_dpct(x, x_hat, 1.0, d, lp, beta, w).backward()
        eps = 1e-7
        rng = np.random.default_rng(7)
        for _ in range(6):
            idx = (0, int(rng.integers(3)), int(rng.integers(8)), int(rng.integers(8)))
            plus = x_hat.detach().clone(); plus[idx] += eps
            minus = x_hat.detach().clone(); minus[idx] -= eps
            fd = (loss_dpct(x, plus, 1.0, d, lp, beta, w) - loss_dpct(x, minus, 1.0, d, lp, beta, w)).item() / (2 * eps)
            assert fd == pytest.approx(x_hat.grad[idx].item(), rel=1e-3, abs=1e-10)

    def test_monotone_in_each_cell(self):
        x, x_hat, d, lp = self.rand_inputs(8)
        w = LossWeights(lmbda=0.0)
        beta = torch.full((1, 4, 4), 1.0, dtype=torch.float64)
        base = loss_dpct(x, x_hat, 0.0, d, lp, beta, w).item()
        for i in range(4):
            for j in range(4):
                bumped = beta.clone()
                bumped[0, i, j] += 1.0
                got = loss_dpct(x, x_hat, 0.0, d, lp, bumped, w).item()
                assert got >= base  # -log d + c_p lp is nonnegative


class TestLossCct:
    def test_full_mask_equals_plain_mse(self):
        rng = np.random.default_rng(0)
        x = torch.tensor(rng.uniform(0, 1, (1, 3, 4, 4)))
        x_hat = torch.tensor(rng.uniform(0, 1, (1, 3, 4, 4)))
        d = torch.full((1, 1, 1), 0.5, dtype=torch.float64)
        w = LossWeights(lmbda=0.0, beta_scalar=0.0)
        got = loss_cct(x, x_hat, 0.0, d, 0.0, torch.ones(1, 4, 4, dtype=torch.float64), w)
        assert got.item() == pytest.approx(scalar_mse(x, x_hat), rel=1e-12)

    def test_empty_mask_removes_distortion(self):
        rng = np.random.default_rng(1)
        x = torch.tensor(rng.uniform(0, 1, (1, 3, 4, 4)))
        x_hat = torch.tensor(rng.uniform(0, 1, (1, 3, 4, 4)))
        d = torch.full((1, 2, 2), 0.5, dtype=torch.float64)
        w = LossWeights(lmbda=0.5, beta_scalar=2.0, c_p=1.0)
        got = loss_cct(x, x_hat, 3.0, d, 0.25, torch.zeros(1, 4, 4, dtype=torch.float64), w)
        expected = 0.5 * 3.0 + 2.0 * (math.log(2) + 0.25)
        assert got.item() == pytest.approx(expected, rel=1e-12)

    def test_half_mask_matches_scalar_oracle(self):
        x = torch.tensor([[[[0.0, 1.0], [0.5, 0.5]]] * 3], dtype=torch.float64)
        x_hat = torch.zeros(1, 3, 2, 2, dtype=torch.float64)
        m = torch.tensor([[[1.0, 0.0], [1.0, 0.0]]], dtype=torch.float64)
        d = torch.full((1, 1, 1), 0.5, dtype=torch.float64)
        w = LossWeights(lmbda=0.1, beta_scalar=1.0, c_p=2.0)
        # masked sqerr: pixels (0,0)=0 and (1,0)=0.25 kept per channel
        masked_mse = (3 * (0.0 + 0.25)) / 12
        expected = masked_mse + 0.1 * 4.0 + 1.0 * (math.log(2) + 2.0 * 0.125)
        got = loss_cct(x, x_hat, 4.0, d, 0.125, m, w)
        assert got.item() == pytest.approx(expected, rel=1e-12)

    def test_pixel_alignment_enforced(self):
        x = torch.rand(1, 3, 4, 4)
        with pytest.raises(ValueError):
            loss_cct(x, x, 0.0, torch.full((1, 1, 1), 0.5), 0.0, torch.ones(1, 2, 2), LossWeights())


class TestReductionChain:
    def test_dpct_rdp_rd_chain_to_machine_precision(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            x = torch.tensor(rng.uniform(0, 1, (1, 3, 8, 8)))
            x_hat = torch.tensor(rng.uniform(0, 1, (1, 3, 8, 8)))
            d = torch.tensor(rng.uniform(0.01, 0.99, (1, 2, 2)))
            lp = torch.tensor(rng.uniform(0, 1, (1, 2, 2)))
            rate = float(rng.uniform(0, 10))
            lmbda = float(rng.uniform(0, 1))
            w0 = LossWeights(lmbda=lmbda, beta_scalar=0.0, c_p=0.0)
            a = loss_dpct(x, x_hat, rate, d, lp, torch.zeros(1, 2, 2, dtype=torch.float64), w0).item()
            b = loss_rdp(x, x_hat, rate, d, w0).item()
            c = loss_rd(x, x_hat, rate, lmbda).item()
            assert abs(a - b) < 1e-12
            assert abs(b - c) < 1e-12


class TestFixedFeatureDistance:
    def test_zero_on_identical(self):
        metric = FixedFeatureDistance(seed=0)
        x = torch.rand(2, 3, 32, 32)
        assert torch.allclose(metric(x, x), torch.zeros(2), atol=1e-9)
        assert (metric.spatial(x, x, (4, 4)).abs() < 1e-9).all()

    def test_nonnegative_and_deterministic(self):
        metric_a = FixedFeatureDistance(seed=1)
        metric_b = FixedFeatureDistance(seed=1)
        x = torch.rand(1, 3, 32, 32)
        y = torch.rand(1, 3, 32, 32)
        da = metric_a(x, y)
        db = metric_b(x, y)
        assert (da >= 0).all()
        assert torch.equal(da, db)

    def test_spatial_map_aligned_to_grid(self):
        metric = FixedFeatureDistance(seed=0)
        x = torch.rand(1, 3, 64, 64)
        y = x.clone()
        y[:, :, :32, :32] = torch.rand(1, 3, 32, 32)  # corrupt top-left quadrant
        lp = metric.spatial(x, y, (8, 8))[0]
        assert lp.shape == (8, 8)
        assert lp[:4, :4].mean() > 3 * lp[4:, 4:].mean()


class TestSampleRealismMap:
    def make_schedule(self, total=100, const_frac=0.8):
        return TrainingSchedule(phase="rdp", total_steps=total, constant_map_fraction=const_frac)

    def test_constant_region_of_schedule(self):
        rng = np.random.default_rng(0)
        rmap = sample_realism_map(10, self.make_schedule(), 8.0, rng, (4, 4))
        assert np.unique(rmap.values).size == 1
        assert 0 <= rmap.values[0, 0] <= 8.0

    def test_independent_region_statistics(self):
        rng = np.random.default_rng(1)
        sched = self.make_schedule()
        draws = np.stack([sample_realism_map(90, sched, 8.0, rng, (2, 2)).values for _ in range(10_000)])
        cell_means = draws.mean(axis=0)
        se = 8.0 / np.sqrt(12) / np.sqrt(10_000)
        assert np.all(np.abs(cell_means - 4.0) <= 3 * se)
        # cells are independent: correlation across cells near zero
        flat = draws.reshape(-1, 4)
        corr = np.corrcoef(flat, rowvar=False)
        off_diag = corr[~np.eye(4, dtype=bool)]
        assert np.all(np.abs(off_diag) < 0.05)

    def test_reproducible_with_seed(self):
        a = sample_realism_map(90, self.make_schedule(), 8.0, np.random.default_rng(7), (3, 3))
        b = sample_realism_map(90, self.make_schedule(), 8.0, np.random.default_rng(7), (3, 3))
        assert np.array_equal(a.values, b.values)

    def test_step_outside_schedule_rejected(self):
        with pytest.raises(ValueError):
            sample_realism_map(100, self.make_schedule(100), 8.0, np.random.default_rng(0), (2, 2))


class TestSampleInstanceMask:
    def scene(self):
        from genjscc.data import synthetic_scene

        return synthetic_scene(32, np.random.default_rng(0))[1]

    def test_minimum_one_instance(self):
        from genjscc.content import InstanceLabelMap

        raster = np.zeros((3, 8, 8), dtype=np.uint8)
        w_map = InstanceLabelMap(raster=raster, registry={(0, 0, 0): "only"})
        hm = sample_instance_mask(w_map, 0.25, np.random.default_rng(0))
        assert hm.m.all()

    def test_selection_frequencies_uniform(self):
        w_map = self.scene()
        labels = w_map.labels()
        assert len(labels) == 4
        counts = {lb: 0 for lb in labels}
        rng = np.random.default_rng(1)
        n = 10_000
        for _ in range(n):
            hm = sample_instance_mask(w_map, 0.25, rng)
            for lb in labels:
                region = w_map.pixels_of(lb)
                if region.any() and hm.m[region].all():
                    counts[lb] += 1
        for lb in labels:
            p = counts[lb] / n
            se = math.sqrt(0.25 * 0.75 / n)
            assert abs(p - 0.25) <= 4 * se

    def test_support_equals_union_of_selected_instances(self):
        w_map = self.scene()
        rng = np.random.default_rng(2)
        hm = sample_instance_mask(w_map, 0.5, rng)
        # support must be a union of whole instances
        covered = np.zeros_like(hm.m)
        for lb in w_map.labels():
            region = w_map.pixels_of(lb)
            if not region.any():
                continue
            inside = hm.m[region]
            assert inside.all() or not inside.any()
            if inside.all():
                covered |= region.astype(np.uint8)
        assert np.array_equal(covered, hm.m)

    def test_zero_instances_rejected(self):
        from genjscc.content import InstanceLabelMap

        raster = np.zeros((3, 4, 4), dtype=np.uint8)
        w_map = InstanceLabelMap(raster=raster, registry={(0, 0, 0): "bg"})
        w_map.registry = {}
        with pytest.raises(ValueError):
            sample_instance_mask(w_map, 0.25, np.random.default_rng(0))
