"""Training loops: phase ordering, optimizer isolation, learning-rate decay,
loss trend on a short run, and artifact emission."""

import hashlib

import numpy as np
import pytest
import torch

from genjscc.config import (
    ChannelConfig,
    LossWeights,
    TrainingSchedule,
    model_preset,
    rate_preset,
    srem_preset,
)
from genjscc.data import synthetic_scene_dataset, synthetic_texture_dataset
from genjscc.pipeline import TransmissionModel, load_checkpoint
from genjscc.training import Trainer


def make_dpct():
    torch.manual_seed(0)
    return TransmissionModel("dpct", model_preset("tiny"), rate_preset("tiny"), srem_preset("tiny"))


def make_cct():
    torch.manual_seed(0)
    return TransmissionModel("cct", model_preset("tiny"), rate_preset("tiny"))


def state_digest(module) -> str:
    """Checksum of trainable parameters (spectral-norm power-iteration
    buffers update on every training-mode forward and are not optimized)."""
    h = hashlib.sha256()
    for name, p in sorted(module.named_parameters()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


WEIGHTS = LossWeights(lmbda=2e-4, beta_scalar=0.05, c_p=1.0)


class TestPhaseOrdering:
    def test_rd_pretrain_after_rdp_rejected(self):
        trainer = Trainer(make_dpct(), synthetic_texture_dataset(8, 64, 0), WEIGHTS, ChannelConfig(seed=0))
        phases = [
            TrainingSchedule(phase="rdp", total_steps=1, batch_size=2),
            TrainingSchedule(phase="rd_pretrain", total_steps=1, batch_size=2),
        ]
        with pytest.raises(ValueError, match="precede"):
            trainer.train(phases)


class TestLearningRateSchedule:
    def test_decay_applies_to_last_half(self):
        sched = TrainingSchedule(phase="rd_pretrain", total_steps=100, learning_rate=1e-3,
                                 decay_factor=0.1, decay_start_fraction=0.5)
        assert sched.lr_at(0) == 1e-3
        assert sched.lr_at(49) == 1e-3
        assert sched.lr_at(50) == pytest.approx(1e-4)
        assert sched.lr_at(99) == pytest.approx(1e-4)

    def test_trainer_applies_decay_to_optimizer(self):
        model = make_dpct()
        trainer = Trainer(model, synthetic_texture_dataset(8, 64, 0), WEIGHTS, ChannelConfig(seed=0))
        sched = TrainingSchedule(phase="rd_pretrain", total_steps=4, batch_size=2,
                                 learning_rate=1e-3, decay_start_fraction=0.5, decay_factor=0.1)
        opt_g, _ = trainer._optimizers(sched)
        trainer._apply_lr(opt_g, sched, 0, sched.learning_rate)
        assert opt_g.param_groups[0]["lr"] == 1e-3
        trainer._apply_lr(opt_g, sched, 2, sched.learning_rate)
        assert opt_g.param_groups[0]["lr"] == pytest.approx(1e-4)


class TestOptimizerIsolation:
    def test_generator_step_never_touches_discriminator_and_vice_versa(self):
        model = make_dpct()
        data = synthetic_texture_dataset(8, 64, 0)
        trainer = Trainer(model, data, WEIGHTS, ChannelConfig(snr_db=10, seed=0), seed=0)

        # zero discriminator lr: its parameters must remain bit-identical
        sched = TrainingSchedule(phase="rdp", total_steps=2, batch_size=2,
                                 learning_rate=1e-3, disc_learning_rate=0.0,
                                 decay_start_fraction=1.0)
        disc_before = state_digest(model.discriminator)
        gen_before = state_digest(model.generator)
        trainer._run_phase(sched, __import__("genjscc.training", fromlist=["TrainResult"]).TrainResult())
        assert state_digest(model.discriminator) == disc_before
        assert state_digest(model.generator) != gen_before

        # zero generator lr: only the discriminator may move
        sched2 = TrainingSchedule(phase="rdp", total_steps=2, batch_size=2,
                                  learning_rate=0.0, disc_learning_rate=1e-3,
                                  decay_start_fraction=1.0)
        gen_mid = state_digest(model.generator)
        analysis_mid = state_digest(model.analysis)
        disc_mid = state_digest(model.discriminator)
        trainer._run_phase(sched2, __import__("genjscc.training", fromlist=["TrainResult"]).TrainResult())
        assert state_digest(model.generator) == gen_mid
        assert state_digest(model.analysis) == analysis_mid
        assert state_digest(model.discriminator) != disc_mid


class TestShortRuns:
    def test_rd_loss_trend_decreases(self):
        model = make_dpct()
        data = synthetic_texture_dataset(24, 64, 1)
        trainer = Trainer(model, data, WEIGHTS, ChannelConfig(snr_db=10, seed=0), seed=1)
        sched = TrainingSchedule(phase="rd_pretrain", total_steps=60, batch_size=4, learning_rate=1e-3)
        result = trainer.train([sched])
        losses = [r.loss for r in result.records]
        head = float(np.mean(losses[:10]))
        tail = float(np.mean(losses[-10:]))
        assert tail < head

    def test_cct_short_run_emits_artifacts(self, tmp_path):
        model = make_cct()
        scenes = synthetic_scene_dataset(8, 64, 2)
        trainer = Trainer(model, scenes, WEIGHTS, ChannelConfig(snr_db=10, seed=0),
                          out_dir=tmp_path, seed=2, probe=scenes[:1])
        phases = [
            TrainingSchedule(phase="rd_pretrain", total_steps=3, batch_size=2, learning_rate=1e-3),
            TrainingSchedule(phase="rdp", total_steps=3, batch_size=2, learning_rate=1e-3),
        ]
        result = trainer.train(phases)
        assert len(result.checkpoints) == 2
        model_back, meta = load_checkpoint(result.checkpoints[-1])
        assert meta.phase == "rdp" and meta.step == 6
        csv_path = tmp_path / "metrics.csv"
        assert csv_path.exists()
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0].startswith("step,phase,loss")
        assert len(lines) == 7

    def test_reproducible_with_same_seed(self):
        def run():
            model = make_dpct()
            data = synthetic_texture_dataset(8, 64, 3)
            trainer = Trainer(model, data, WEIGHTS, ChannelConfig(snr_db=10, seed=5), seed=7)
            sched = TrainingSchedule(phase="rd_pretrain", total_steps=3, batch_size=2, learning_rate=1e-3)
            return trainer.train([sched]).records[-1].loss

        assert run() == run()

    def test_channel_noise_fresh_each_step(self):
        model = make_dpct()
        data = synthetic_texture_dataset(8, 64, 3)
        trainer = Trainer(model, data, WEIGHTS, ChannelConfig(snr_db=10, seed=5), seed=7)
        s = torch.ones(64)
        a = trainer._channel_pass(s)
        b = trainer._channel_pass(s)
        assert not torch.equal(a, b)
        assert trainer.channel.uses == 2
