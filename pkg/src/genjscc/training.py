"""Two-phase training: rate-distortion pre-training followed by adversarial
fine-tuning with the spatially weighted (realism-map) or masked (instance)
perception objectives.

Every run owns three split RNG streams (data sampling, channel noise,
schedule sampling), so reruns with one seed are reproducible and data order
cannot perturb channel draws. The generator-side step and the discriminator
step alternate; each optimizer only ever sees its own side's parameters.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .channel import Channel
from .config import ChannelConfig, LossWeights, TrainingSchedule
from .content import InstanceLabelMap, downsample_mask
from .entropy import allocate_rates_from_cost
from .jscc import full_mask
from .losses import (
    FixedFeatureDistance,
    loss_cct,
    loss_discriminator,
    loss_dpct,
    loss_rd,
    sample_instance_mask,
    sample_realism_map,
)
from .metrics import psnr
from .pipeline import TransmissionModel, save_checkpoint


@dataclass
class StepRecord:
    step: int
    phase: str
    loss: float
    rate_nats: float
    mse: float
    disc_loss: float
    probe_psnr: float


@dataclass
class TrainResult:
    checkpoints: list[str] = field(default_factory=list)
    records: list[StepRecord] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "phase", "loss", "rate_nats", "mse", "disc_loss", "probe_psnr"])
            for r in self.records:
                writer.writerow([r.step, r.phase, r.loss, r.rate_nats, r.mse, r.disc_loss, r.probe_psnr])


class Trainer:
    """Drives one model through its training phases.

    For distortion-perception models `dataset` is a (N, 3, H, W) tensor (or
    an object with sample_batch); for content models it is a list of
    (image, InstanceLabelMap) pairs. A small probe set is held out of the
    sampled batches only if the caller excludes it from `dataset`.
    """

    def __init__(
        self,
        model: TransmissionModel,
        dataset,
        weights: LossWeights,
        channel_cfg: ChannelConfig,
        out_dir: str | Path | None = None,
        seed: int = 0,
        probe=None,
        probe_every: int = 25,
        save_every: int | None = None,
    ):
        self.model = model
        self.dataset = dataset
        self.weights = weights
        self.out_dir = Path(out_dir) if out_dir else None
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        data_seed, channel_seed, schedule_seed = np.random.SeedSequence(seed).spawn(3)
        self.data_rng = np.random.default_rng(data_seed)
        self.schedule_rng = np.random.default_rng(schedule_seed)
        self.channel = Channel(channel_cfg)
        self.channel.reseed(int(channel_seed.generate_state(1)[0]))
        self.perceptual = FixedFeatureDistance()
        self.probe = probe
        self.probe_every = probe_every
        self.save_every = save_every
        self.global_step = 0
        torch.manual_seed(int(np.random.SeedSequence([seed, 1]).generate_state(1)[0]))

    # --- data -----------------------------------------------------------

    def _sample_batch(self, batch_size: int):
        if hasattr(self.dataset, "sample_batch"):
            return self.dataset.sample_batch(batch_size), None
        if isinstance(self.dataset, torch.Tensor):
            idx = self.data_rng.choice(len(self.dataset), size=batch_size, replace=len(self.dataset) < batch_size)
            return self.dataset[torch.as_tensor(idx)], None
        idx = self.data_rng.choice(len(self.dataset), size=batch_size, replace=len(self.dataset) < batch_size)
        images = torch.stack([self.dataset[i][0] for i in idx])
        maps = [self.dataset[i][1] for i in idx]
        return images, maps

    # --- plumbing ---------------------------------------------------------

    def _channel_pass(self, symbols: torch.Tensor) -> torch.Tensor:
        if symbols.numel() == 0:
            self.channel.uses += 1
            return symbols
        scale = symbols.detach().pow(2).mean().clamp_min(1e-12).sqrt()
        received = self.channel.apply_torch(symbols / scale)
        return received * scale

    def _transmit_batch(self, y: torch.Tensor, masks: list[np.ndarray] | None):
        """Batched encode -> per-image channel -> batched decode,
        differentiable end to end."""
        b, _, h, w = y.shape
        _, cost = self.model.rate_cost(y, training=False)
        allocs = [allocate_rates_from_cost(cost[i], self.model.rate_cfg) for i in range(b)]
        mask_list = list(masks) if masks is not None else [full_mask(h * w)] * b
        streams = self.model.vr_jscc.encode_batch(y, allocs, mask_list)
        received = [self._channel_pass(s) for s in streams]
        return self.model.vr_jscc.decode_batch(received, allocs, mask_list, (h, w))

    def _optimizers(self, schedule: TrainingSchedule):
        disc_params = list(self.model.discriminator.parameters())
        disc_ids = {id(p) for p in disc_params}
        cond_params, trunk_params = [], []
        for name, p in self.model.named_parameters():
            if id(p) in disc_ids:
                continue
            if name.startswith("srem.") or ".proj_" in name:
                cond_params.append(p)
            else:
                trunk_params.append(p)
        opt_g = torch.optim.Adam(
            [
                {"params": trunk_params, "lr": schedule.learning_rate, "lr_scale": 1.0},
                {"params": cond_params, "lr": schedule.learning_rate * schedule.cond_lr_scale,
                 "lr_scale": schedule.cond_lr_scale},
            ]
        )
        disc_lr = schedule.learning_rate if schedule.disc_learning_rate is None else schedule.disc_learning_rate
        opt_d = torch.optim.Adam(disc_params, lr=disc_lr)
        return opt_g, opt_d

    def _apply_lr(self, opt, schedule: TrainingSchedule, step: int, base_lr: float):
        lr = base_lr * schedule.decay_factor if step >= schedule.decay_start_fraction * schedule.total_steps else base_lr
        for group in opt.param_groups:
            group["lr"] = lr * group.get("lr_scale", 1.0)

    def _probe_psnr(self) -> float:
        if self.probe is None:
            return float("nan")
        self.model.eval()
        with torch.no_grad():
            if self.model.mode == "dpct":
                x = self.probe[:1] if isinstance(self.probe, torch.Tensor) else self.probe[0][0].unsqueeze(0)
                y = self.model.analyze(x)
                h, w = y.shape[-2:]
                from .srem import RealismMap

                x_hat = self.model.synthesize_realism(y, RealismMap.zeros(h, w, self.model.srem_cfg.beta_max))
            else:
                img, w_map = self.probe[0]
                x = img.unsqueeze(0)
                y = self.model.analyze(x)
                x_hat = self.model.synthesize_content(y, w_map)
        self.model.train()
        return psnr(x, x_hat)

    # --- phases -----------------------------------------------------------

    def train(self, phases: list[TrainingSchedule]) -> TrainResult:
        seen_rdp = False
        for schedule in phases:
            if schedule.phase == "rd_pretrain" and seen_rdp:
                raise ValueError("rd_pretrain must precede the rdp phase")
            seen_rdp = seen_rdp or schedule.phase == "rdp"
        result = TrainResult()
        for schedule in phases:
            self._run_phase(schedule, result)
            if self.out_dir:
                path = str(self.out_dir / f"{self.model.mode}_{schedule.phase}_{self.global_step:06d}.pt")
                save_checkpoint(self.model, path, phase=schedule.phase, step=self.global_step)
                result.checkpoints.append(path)
        if self.out_dir:
            result.write_csv(self.out_dir / "metrics.csv")
        return result

    def _run_phase(self, schedule: TrainingSchedule, result: TrainResult) -> None:
        self.model.train()
        opt_g, opt_d = self._optimizers(schedule)
        probe_value = float("nan")
        for step in range(schedule.total_steps):
            self._apply_lr(opt_g, schedule, step, schedule.learning_rate)
            disc_lr = schedule.learning_rate if schedule.disc_learning_rate is None else schedule.disc_learning_rate
            self._apply_lr(opt_d, schedule, step, disc_lr)
            if self.model.mode == "dpct":
                rec = self._dpct_step(schedule, step, opt_g, opt_d)
            else:
                rec = self._cct_step(schedule, step, opt_g, opt_d)
            if step % self.probe_every == 0:
                probe_value = self._probe_psnr()
            rec.probe_psnr = probe_value
            result.records.append(rec)
            self.global_step += 1
            if self.save_every and self.out_dir and self.global_step % self.save_every == 0:
                path = str(self.out_dir / f"{self.model.mode}_{schedule.phase}_{self.global_step:06d}.pt")
                save_checkpoint(self.model, path, phase=schedule.phase, step=self.global_step)
                result.checkpoints.append(path)

    def _dpct_step(self, schedule, step, opt_g, opt_d) -> StepRecord:
        x, _ = self._sample_batch(schedule.batch_size)
        y = self.model.analyze(x)
        b, _, h, w = y.shape
        nll_total, _ = self.model.rate_cost(y, training=True)
        rate_nats = self.model.rate_cfg.eta * nll_total.mean()
        y_hat = self._transmit_batch(y, None)

        disc_loss_value = 0.0
        if schedule.phase == "rd_pretrain":
            x_hat = self.model.generator(y_hat, None, clamp=False)
            total = loss_rd(x, x_hat, rate_nats, self.weights.lmbda)
            opt_g.zero_grad()
            total.backward()
            opt_g.step()
        else:
            beta_max = self.model.srem_cfg.beta_max
            maps = [
                sample_realism_map(step, schedule, beta_max, self.schedule_rng, (h, w)).values
                for _ in range(b)
            ]
            beta = torch.as_tensor(np.stack(maps), dtype=x.dtype)
            g_set = self.model.embed_realism(beta, batch=b)
            x_hat = self.model.generator(y_hat, g_set, clamp=False)
            d_fake = self.model.discriminator(x_hat, y)
            lp_map = self.perceptual.spatial(x, x_hat, (h, w))
            total = loss_dpct(x, x_hat, rate_nats, d_fake, lp_map, beta, self.weights)
            opt_g.zero_grad()
            total.backward()
            opt_g.step()

            d_fake = self.model.discriminator(x_hat.detach(), y.detach())
            d_real = self.model.discriminator(x, y.detach())
            d_loss = loss_discriminator(d_fake, d_real, self.weights.score_eps)
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()
            disc_loss_value = float(d_loss.detach())

        return StepRecord(
            step=self.global_step,
            phase=schedule.phase,
            loss=float(total.detach()),
            rate_nats=float(rate_nats.detach()),
            mse=float(torch.mean((x - x_hat) ** 2).detach()),
            disc_loss=disc_loss_value,
            probe_psnr=float("nan"),
        )

    def _cct_step(self, schedule, step, opt_g, opt_d) -> StepRecord:
        x, maps = self._sample_batch(schedule.batch_size)
        if maps is None:
            raise ValueError("content training needs (image, label map) pairs")
        y = self.model.analyze(x)
        b, _, h, w = y.shape
        nll_total, _ = self.model.rate_cost(y, training=True)
        rate_nats = self.model.rate_cfg.eta * nll_total.mean()

        if schedule.phase == "rd_pretrain":
            masks = None
            heat = torch.ones(b, x.shape[-2], x.shape[-1], dtype=x.dtype)
        else:
            heatmaps = [sample_instance_mask(m, schedule.instance_fraction, self.schedule_rng) for m in maps]
            masks = [downsample_mask(hm, (h, w)) for hm in heatmaps]
            heat = torch.as_tensor(np.stack([hm.m for hm in heatmaps]), dtype=x.dtype)

        y_hat = self._transmit_batch(y, masks)
        rasters = torch.cat([m.as_tensor() for m in maps], dim=0)
        label_feats = self.model.label_encoder(rasters)
        x_hat = self.model.generator(y_hat, label_feats, clamp=False)

        disc_loss_value = 0.0
        if schedule.phase == "rd_pretrain":
            total = loss_rd(x, x_hat, rate_nats, self.weights.lmbda)
            opt_g.zero_grad()
            total.backward()
            opt_g.step()
        else:
            d_fake = self.model.discriminator(x_hat, rasters)
            lp_scalar = self.perceptual(x, x_hat).mean()
            total = loss_cct(x, x_hat, rate_nats, d_fake, lp_scalar, heat, self.weights)
            opt_g.zero_grad()
            total.backward()
            opt_g.step()

            d_fake = self.model.discriminator(x_hat.detach(), rasters)
            d_real = self.model.discriminator(x, rasters)
            d_loss = loss_discriminator(d_fake, d_real, self.weights.score_eps)
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()
            disc_loss_value = float(d_loss.detach())

        return StepRecord(
            step=self.global_step,
            phase=schedule.phase,
            loss=float(total.detach()),
            rate_nats=float(rate_nats.detach()),
            mse=float(torch.mean((x - x_hat) ** 2).detach()),
            disc_loss=disc_loss_value,
            probe_psnr=float("nan"),
        )
