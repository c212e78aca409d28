"""Simulated AWGN / Rayleigh fading channels over real-valued symbol streams.

Consecutive real symbols are paired into complex symbols with a unitary map
z_k = (s_{2k} + j*s_{2k+1}) / sqrt(2), so a unit-power real stream becomes a
unit-power complex stream and SNR has the same value in both domains. Streams
of odd length are zero-padded by one real slot for pairing and trimmed back
afterwards. Noise is circularly symmetric complex Gaussian with per-complex-
symbol variance 10^(-snr_db/10) against unit signal power; for Rayleigh fading
the per-symbol gains are CN(0, 1), known exactly at the receiver, and inverted
by zero-forcing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import torch

from .config import ChannelConfig

_SQRT2 = np.sqrt(2.0)


@dataclass
class ChannelRealization:
    """Per-complex-symbol gains and noise draws of one transmission."""

    gains: np.ndarray
    noise: np.ndarray

    def __post_init__(self):
        if self.gains.shape != self.noise.shape:
            raise ValueError("gains and noise must have the same length")


def power_normalize(s: np.ndarray) -> tuple[np.ndarray, float]:
    """Scale a stream to unit average per-symbol power; returns (stream, scale).

    The inverse is exact: multiply by `scale`. An all-zero (or empty) stream is
    returned unchanged with scale 1.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0:
        return s.copy(), 1.0
    power = float(np.mean(np.square(s)))
    if power == 0.0:
        return s.copy(), 1.0
    scale = float(np.sqrt(power))
    return s / scale, scale


def _pair_complex(s: np.ndarray) -> tuple[np.ndarray, bool]:
    padded = s.size % 2 == 1
    if padded:
        s = np.concatenate([s, np.zeros(1, dtype=s.dtype)])
    z = (s[0::2] + 1j * s[1::2]) / _SQRT2
    return z, padded


def _unpair_real(z: np.ndarray, padded: bool) -> np.ndarray:
    out = np.empty(2 * z.size, dtype=np.float64)
    out[0::2] = np.real(z) * _SQRT2
    out[1::2] = np.imag(z) * _SQRT2
    return out[:-1] if padded else out


def noise_power(snr_db: float | None) -> float:
    """Complex noise variance for unit signal power; 0 for the noiseless sentinel."""
    if snr_db is None:
        return 0.0
    return float(10.0 ** (-snr_db / 10.0))


def transmit(
    s: np.ndarray,
    cfg: ChannelConfig,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ChannelRealization]:
    """Push a (power-normalized) real stream through the channel.

    Returns the received real stream of identical length plus the realization.
    With `rng` omitted, a fresh generator is seeded from `cfg.seed`, so the
    same (stream, cfg) always reproduces the same output. Gains are drawn
    before noise, which keeps realizations comparable across channel kinds.
    """
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    z, padded = _pair_complex(s)
    n_complex = z.size
    sigma2 = noise_power(cfg.snr_db)

    if cfg.kind == "rayleigh":
        h = (rng.standard_normal(n_complex) + 1j * rng.standard_normal(n_complex)) / _SQRT2
    else:
        h = np.ones(n_complex, dtype=np.complex128)

    if sigma2 == 0.0:
        # noiseless sentinel: fading is inverted exactly by perfect CSI, so
        # the received stream is bit-identical to the sent one
        n = np.zeros(n_complex, dtype=np.complex128)
        return s.copy(), ChannelRealization(gains=h, noise=n)

    n = (rng.standard_normal(n_complex) + 1j * rng.standard_normal(n_complex)) * np.sqrt(sigma2 / 2.0)
    received = h * z + n
    if cfg.equalization == "zero_forcing":
        received = received / h

    return _unpair_real(received, padded), ChannelRealization(gains=h, noise=n)


class Channel:
    """Stateful wrapper owning an RNG stream and a transmission counter.

    Each instance spawns its generator from the config seed, so concurrent
    channels with distinct seeds never share draws; `uses` counts channel
    accesses, which lets callers assert one-shot transmission contracts.
    """

    def __init__(self, cfg: ChannelConfig):
        self.cfg = cfg
        self._rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
        self.uses = 0

    def reseed(self, seed: int) -> None:
        self._rng = np.random.default_rng(np.random.SeedSequence(seed))

    def transmit(self, s: np.ndarray) -> tuple[np.ndarray, ChannelRealization]:
        self.uses += 1
        return transmit(s, self.cfg, self._rng)

    def apply_torch(self, s: torch.Tensor) -> torch.Tensor:
        """Differentiable channel application for training.

        The channel perturbation is computed on detached values and re-added
        as a constant, which is exact for unit effective gain (AWGN, or fading
        with zero-forcing equalization): received = s + residual with
        d received / d s = 1.
        """
        if self.cfg.kind == "rayleigh" and self.cfg.equalization != "zero_forcing":
            raise ValueError("torch bridge requires unit effective gain (use zero_forcing)")
        flat = s.reshape(-1)
        if flat.numel() == 0:
            self.uses += 1
            return s
        sent = flat.detach().cpu().numpy().astype(np.float64)
        received, _ = self.transmit(sent)
        residual = torch.as_tensor(received - sent, dtype=s.dtype, device=s.device)
        return (flat + residual).reshape(s.shape)


def export_trace(path: str, sent: np.ndarray, received: np.ndarray, realization: ChannelRealization) -> None:
    """Dump one transmission as CSV (symbol index, sent, gain, noise, received)."""
    sent = np.asarray(sent).reshape(-1)
    received = np.asarray(received).reshape(-1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "sent", "gain_re", "gain_im", "noise_re", "noise_im", "received"])
        for i in range(sent.size):
            h = realization.gains[i // 2]
            n = realization.noise[i // 2]
            writer.writerow([i, repr(float(sent[i])), h.real, h.imag, n.real, n.imag, repr(float(received[i]))])
