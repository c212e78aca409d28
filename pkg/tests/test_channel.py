"""Channel statistics against Monte Carlo oracles, power normalization, and
reproducibility."""

import numpy as np
import pytest
import torch

from genjscc.channel import Channel, export_trace, noise_power, power_normalize, transmit
from genjscc.config import ChannelConfig


class TestPowerNormalize:
    def test_uniform_scaling(self):
        out, scale = power_normalize(np.array([2.0, 2.0, 2.0, 2.0]))
        assert np.allclose(out, [1, 1, 1, 1])
        assert scale == 2.0

    def test_unit_power_stream_unchanged(self):
        s = np.array([1.0, -1.0, 1.0, -1.0])
        out, scale = power_normalize(s)
        assert np.allclose(out, s)
        assert scale == 1.0

    def test_all_zero_stream_identity(self):
        out, scale = power_normalize(np.zeros(5))
        assert np.allclose(out, 0)
        assert scale == 1.0

    def test_random_stream_has_unit_mean_square(self):
        rng = np.random.default_rng(0)
        s = rng.normal(0, 3.7, size=1000)
        out, scale = power_normalize(s)
        assert np.mean(out**2) == pytest.approx(1.0, abs=1e-6)
        assert np.allclose(out * scale, s)


class TestTransmit:
    def test_noiseless_sentinel_is_identity(self):
        cfg = ChannelConfig(kind="awgn", snr_db=None, seed=0)
        s = np.random.default_rng(1).normal(size=101)  # odd length exercises padding
        out, realization = transmit(s, cfg)
        assert np.array_equal(out, s)
        assert np.all(realization.noise == 0)

    def test_nonfinite_snr_rejected(self):
        with pytest.raises(ValueError):
            ChannelConfig(kind="awgn", snr_db=float("inf"))

    def test_awgn_noise_power_at_10db(self):
        # Monte Carlo oracle: at 10 dB the per-symbol noise power on a
        # unit-power stream must be 10^(-1) = 0.1.
        cfg = ChannelConfig(kind="awgn", snr_db=10.0, seed=7)
        n = 1_000_000
        s = np.sign(np.random.default_rng(2).normal(size=n))  # exactly unit power
        out, _ = transmit(s, cfg)
        measured = np.mean((out - s) ** 2)
        assert measured == pytest.approx(0.1, rel=0.01)

    def test_rayleigh_zero_forcing_unbiased(self):
        cfg = ChannelConfig(kind="rayleigh", snr_db=10.0, seed=11, equalization="zero_forcing")
        n = 1_000_000
        s = np.ones(n)
        out, _ = transmit(s, cfg)
        residual = out - s
        # ZF residual is noise/h: symmetric around zero. Standard error uses
        # the empirical std since Var(n/h) is heavy-tailed but finite-sample.
        se = residual.std() / np.sqrt(n)
        assert abs(residual.mean()) <= 3 * se

    def test_rayleigh_requires_zero_forcing_with_perfect_csi(self):
        with pytest.raises(ValueError):
            ChannelConfig(kind="rayleigh", snr_db=10.0, equalization="none")

    def test_post_equalization_noise_scales_as_sigma2_over_h2(self):
        cfg = ChannelConfig(kind="rayleigh", snr_db=10.0, seed=13)
        n = 400_000
        s = np.ones(n)
        out, realization = transmit(s, cfg)
        sigma2 = noise_power(10.0)
        gains = np.abs(realization.gains)
        # per real symbol the equalized residual has variance sigma^2/|h|^2
        res = (out - s).reshape(-1, 2)
        symbol_power = (res**2).mean(axis=1)
        for lo, hi in [(0.5, 0.8), (0.8, 1.2), (1.2, 2.0)]:
            sel = (gains >= lo) & (gains < hi)
            assert sel.sum() > 1000
            expected = np.mean(sigma2 / gains[sel] ** 2)
            assert symbol_power[sel].mean() == pytest.approx(expected, rel=0.05)

    def test_reproducible_from_seed(self):
        cfg = ChannelConfig(kind="rayleigh", snr_db=5.0, seed=21)
        s = np.random.default_rng(3).normal(size=1000)
        out1, _ = transmit(s, cfg)
        out2, _ = transmit(s, cfg)
        assert np.array_equal(out1, out2)

    def test_awgn_preserves_length(self):
        cfg = ChannelConfig(kind="awgn", snr_db=0.0, seed=5)
        for n in (1, 2, 7, 64):
            out, _ = transmit(np.ones(n), cfg)
            assert out.shape == (n,)


class TestChannelObject:
    def test_counts_uses(self):
        ch = Channel(ChannelConfig(snr_db=10.0, seed=0))
        s = np.ones(10)
        ch.transmit(s)
        ch.transmit(s)
        assert ch.uses == 2

    def test_stream_rng_differs_per_call_but_reseeds_deterministically(self):
        ch = Channel(ChannelConfig(snr_db=10.0, seed=0))
        s = np.ones(100)
        a, _ = ch.transmit(s)
        b, _ = ch.transmit(s)
        assert not np.array_equal(a, b)
        ch.reseed(0)
        # reseed does not replay the raw cfg-seeded stream; it must still be
        # self-consistent across identical reseeds
        c, _ = ch.transmit(s)
        ch.reseed(0)
        d, _ = ch.transmit(s)
        assert np.array_equal(c, d)

    def test_torch_bridge_matches_channel_statistics_and_keeps_grad(self):
        ch = Channel(ChannelConfig(snr_db=10.0, seed=4))
        s = torch.ones(10_000, requires_grad=True)
        out = ch.apply_torch(s)
        out.sum().backward()
        assert torch.allclose(s.grad, torch.ones_like(s))  # unit effective gain
        noise = (out - s).detach().numpy()
        assert np.mean(noise**2) == pytest.approx(0.1, rel=0.1)

    def test_trace_export(self, tmp_path):
        cfg = ChannelConfig(kind="rayleigh", snr_db=10.0, seed=1)
        s = np.random.default_rng(0).normal(size=8)
        out, realization = transmit(s, cfg)
        path = tmp_path / "trace.csv"
        export_trace(str(path), s, out, realization)
        lines = path.read_text().strip().splitlines()
        assert lines[0].startswith("index,sent")
        assert len(lines) == 9
        # received column round-trips exactly through repr
        got = [float(ln.split(",")[-1]) for ln in lines[1:]]
        assert np.array_equal(np.array(got), out)
