import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from landmarkgan.data import load_manifest, sample_batch
from landmarkgan.glyphs import make_synthetic_dataset
from landmarkgan.losses import DivergenceError, LossWeights
from landmarkgan.training import (TrainConfig, config_from_dict, config_to_dict,
                                  encode_heatmap_batch, init_train_state, load_checkpoint,
                                  load_generator, lr_at, restore_train_state,
                                  save_checkpoint, train, train_step)


def tiny_config(**overrides) -> TrainConfig:
    base = dict(
        epochs=1,
        iterations_per_epoch=3,
        batch_size=2,
        image_size=32,
        landmarks=12,
        base_width=4,
        res_blocks=1,
        disc_channels=(8, 16),
        seed=5,
        checkpoint_every=100,
        lr_start=1e-3,
        lr_end=1e-3,
        lr_decay_epochs=1,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def tiny_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("train_ds")
    return make_synthetic_dataset(out, identities=3, shapes_per_identity=4, quota=4,
                                  seed=2, n=12, image_size=64)


class TestSchedule:
    def test_paper_endpoints(self):
        cfg = TrainConfig()
        assert lr_at(0, cfg) == 1e-4
        assert lr_at(200_000, cfg) == 1e-6
        assert lr_at(300_000, cfg) == 1e-6

    def test_midpoint(self):
        cfg = TrainConfig()
        assert lr_at(100_000, cfg) == pytest.approx(5.05e-5, rel=1e-12)

    @given(st.integers(0, 400_000), st.integers(1, 1000))
    @settings(max_examples=50, deadline=None)
    def test_monotone_nonincreasing(self, step, delta):
        cfg = TrainConfig()
        assert lr_at(step + delta, cfg) <= lr_at(step, cfg) + 1e-18

    def test_continuous_at_ramp_end(self):
        cfg = TrainConfig()
        ramp = cfg.lr_decay_epochs * cfg.iterations_per_epoch
        assert lr_at(ramp - 1, cfg) == pytest.approx(lr_at(ramp, cfg), rel=1e-2)

    def test_negative_step_rejected(self):
        with pytest.raises(ValueError):
            lr_at(-1, TrainConfig())


class TestConfig:
    def test_paper_defaults(self):
        cfg = TrainConfig()
        assert cfg.epochs == 30
        assert cfg.iterations_per_epoch == 10_000
        assert cfg.batch_size == 16
        assert cfg.beta1 == 0.5
        assert cfg.beta2 == 0.9999
        assert cfg.lr_start == 1e-4
        assert cfg.lr_end == 1e-6
        assert cfg.weights == LossWeights()

    def test_dict_roundtrip(self):
        cfg = tiny_config(weights=LossWeights(triple=0.0))
        back = config_from_dict(json.loads(json.dumps(config_to_dict(cfg))))
        assert back == cfg

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(lr_start=1e-6, lr_end=1e-4)


class TestTrainStep:
    def test_terms_finite_and_signs(self, tiny_manifest):
        cfg = tiny_config()
        state = init_train_state(cfg)
        batch = sample_batch(tiny_manifest, cfg.batch_size, state.rng, out_size=32)
        report = train_step(state, batch, cfg)
        assert state.step == 1
        assert set(report.terms) == set(LossWeights().as_dict())
        for name, value in report.terms.items():
            assert np.isfinite(value)
            if name != "adv":
                assert value >= 0.0, name
        assert report.wall_time > 0

    def test_two_runs_same_seed_identical_reports(self, tiny_manifest):
        reports = []
        for _ in range(2):
            cfg = tiny_config()
            state = init_train_state(cfg)
            run = []
            for _ in range(3):
                batch = sample_batch(tiny_manifest, cfg.batch_size, state.rng, out_size=32)
                run.append(train_step(state, batch, cfg).terms)
            reports.append(run)
        assert reports[0] == reports[1]

    def test_skipped_term_equals_zero_weighted_run(self, tiny_manifest):
        deltas = {}
        for compute_all in (False, True):
            cfg = tiny_config(weights=LossWeights(triple=0.0),
                              compute_skipped_terms=compute_all)
            state = init_train_state(cfg)
            before = [p.detach().clone() for p in state.generator.parameters()]
            batch = sample_batch(tiny_manifest, cfg.batch_size, state.rng, out_size=32)
            report = train_step(state, batch, cfg)
            after = list(state.generator.parameters())
            deltas[compute_all] = [a - b for a, b in zip(after, before)]
            if compute_all:
                assert report.terms["triple"] > 0.0
            else:
                assert report.terms["triple"] == 0.0
        for a, b in zip(deltas[False], deltas[True]):
            assert (a - b).abs().max().item() <= 1e-7

    def test_divergence_aborts_with_terms(self, tiny_manifest):
        cfg = tiny_config()
        state = init_train_state(cfg)
        with torch.no_grad():
            next(state.generator.parameters()).fill_(float("nan"))
        batch = sample_batch(tiny_manifest, cfg.batch_size, state.rng, out_size=32)
        with pytest.raises(DivergenceError) as err:
            train_step(state, batch, cfg)
        assert err.value.terms  # diagnostic payload is populated


class TestCheckpoint:
    def test_roundtrip_one_step_identical(self, tiny_manifest, tmp_path):
        cfg = tiny_config()
        state = init_train_state(cfg)
        batch0 = sample_batch(tiny_manifest, cfg.batch_size, state.rng, out_size=32)
        train_step(state, batch0, cfg)
        save_checkpoint(tmp_path / "ckpt.pt", state, cfg)

        batch1 = sample_batch(tiny_manifest, cfg.batch_size, state.rng, out_size=32)
        direct = train_step(state, batch1, cfg)

        restored, cfg2 = restore_train_state(load_checkpoint(tmp_path / "ckpt.pt"))
        batch1b = sample_batch(tiny_manifest, cfg2.batch_size, restored.rng, out_size=32)
        assert torch.equal(batch1.image, batch1b.image)
        resumed = train_step(restored, batch1b, cfg2)
        assert resumed.terms == direct.terms
        assert resumed.total == direct.total
        for a, b in zip(state.generator.parameters(), restored.generator.parameters()):
            assert torch.equal(a, b)

    def test_load_generator_eval_mode(self, tiny_manifest, tmp_path):
        cfg = tiny_config()
        state = init_train_state(cfg)
        save_checkpoint(tmp_path / "g.pt", state, cfg)
        gen, cfg_back = load_generator(tmp_path / "g.pt")
        assert not gen.training
        assert cfg_back.landmarks == cfg.landmarks


class TestTrainLoop:
    def test_writes_logs_and_checkpoints(self, tiny_manifest, tmp_path):
        cfg = tiny_config(checkpoint_every=2)
        state = train(tiny_manifest, cfg, tmp_path / "run")
        assert state.step == cfg.total_steps
        log_lines = (tmp_path / "run/logs/loss_log.jsonl").read_text().splitlines()
        assert len(log_lines) == cfg.total_steps
        record = json.loads(log_lines[0])
        assert {"step", "adv", "pix", "self_consistency", "triple", "identity",
                "perceptual", "tv", "total", "wall_time"} <= set(record)
        assert (tmp_path / "run/checkpoints/latest.pt").exists()
        assert (tmp_path / "run/checkpoints/step_00000002.pt").exists()

    def test_fixed_seed_reproduces_loss_log(self, tiny_manifest, tmp_path):
        logs = []
        for name in ("a", "b"):
            train(tiny_manifest, tiny_config(), tmp_path / name)
            lines = (tmp_path / name / "logs/loss_log.jsonl").read_text().splitlines()
            records = [json.loads(ln) for ln in lines]
            for rec in records:
                rec.pop("wall_time")  # timing is the one nondeterministic field
            logs.append(records)
        assert logs[0] == logs[1]

    def test_resume_continues_bit_identically(self, tiny_manifest, tmp_path):
        full_cfg = tiny_config(iterations_per_epoch=4, checkpoint_every=2)
        train(tiny_manifest, full_cfg, tmp_path / "full")
        full = [json.loads(ln) for ln in
                (tmp_path / "full/logs/loss_log.jsonl").read_text().splitlines()]

        train(tiny_manifest, full_cfg, tmp_path / "resumed",
              resume_from=tmp_path / "full/checkpoints/step_00000002.pt")
        resumed = [json.loads(ln) for ln in
                   (tmp_path / "resumed/logs/loss_log.jsonl").read_text().splitlines()]
        assert len(resumed) == 2
        for a, b in zip(full[2:], resumed):
            a.pop("wall_time"), b.pop("wall_time")
            assert a == b

    def test_paper_scale_config_warns(self, tiny_manifest, tmp_path):
        cfg = TrainConfig(landmarks=12)
        with pytest.warns(RuntimeWarning, match="desk scale"):
            with pytest.raises(ValueError):
                # stop immediately afterwards: the manifest is tiny on purpose
                train(tiny_manifest, cfg, tmp_path / "big", callbacks=[_abort])
        assert True

    def test_landmark_mismatch_rejected(self, tiny_manifest, tmp_path):
        cfg = tiny_config(landmarks=68)
        with pytest.raises(ValueError):
            train(tiny_manifest, cfg, tmp_path / "bad")

    def test_frozen_extractors_unchanged(self, tiny_manifest, tmp_path):
        cfg = tiny_config()
        state = init_train_state(cfg)
        before = [p.clone() for p in state.f_id.parameters()]
        for _ in range(2):
            batch = sample_batch(tiny_manifest, cfg.batch_size, state.rng, out_size=32)
            train_step(state, batch, cfg)
        for a, b in zip(before, state.f_id.parameters()):
            assert torch.equal(a, b)


def _abort(state, report):
    raise ValueError("stop test run")


class TestHeatmapBatch:
    def test_shape_and_dtype(self, rng):
        pts = rng.uniform(4, 28, (3, 12, 2))
        hm = encode_heatmap_batch(pts, 32, sigma=2.0, radius=6.0)
        assert hm.shape == (3, 12, 32, 32)
        assert hm.dtype == torch.float32
