"""Optimization loop: alternating discriminator/generator updates, the linear
learning-rate ramp, seeded determinism, and single-file checkpoints that
resume bit-identically.

One training step updates the discriminator once on real target frames versus
generated ones (both carrying the target shape, so shape statistics alone
cannot separate them) and then updates the generator on the full weighted
objective. With a zero weight a term is skipped entirely and logged as 0.0
unless compute_skipped_terms is set; skipping is update-equivalent because a
zero-weighted term contributes exactly zero gradient.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import Batch, DatasetManifest, ImageCache, sample_batch
from .extractors import (FeatureExtractor, make_identity_extractor,
                         make_perceptual_extractor)
from .geometry import encode_heatmaps
from .losses import (DivergenceError, LossReport, LossWeights, adv_loss_d, adv_loss_g,
                     identity_loss, perceptual_loss, pixel_loss, self_consistency_loss,
                     total_generator_loss, triple_consistency_loss, tv_loss)
from .networks import Discriminator, DiscriminatorSpec, Generator, GeneratorSpec

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = 1


def default_disc_channels(image_size: int) -> tuple[int, ...]:
    """Stride-2 schedule doubling from 64 and capping at 512, ending at a
    small spatial grid (4x4x512 for 128px inputs)."""
    blocks = max(1, int(math.floor(math.log2(image_size / 4))))
    return tuple(min(64 * 2 ** i, 512) for i in range(blocks))


@dataclass
class TrainConfig:
    epochs: int = 30
    iterations_per_epoch: int = 10_000
    batch_size: int = 16
    lr_start: float = 1e-4
    lr_end: float = 1e-6
    lr_decay_epochs: int = 20
    beta1: float = 0.5
    beta2: float = 0.9999
    weights: LossWeights = field(default_factory=LossWeights)
    heatmap_sigma: float = 2.0
    heatmap_radius: float = 6.0
    crop_margin: float = 10.0
    image_size: int = 128
    landmarks: int = 68
    base_width: int = 64
    res_blocks: int = 6
    disc_channels: tuple[int, ...] | None = None
    seed: int = 0
    d_steps_per_g: int = 1
    checkpoint_every: int = 1000
    log_every: int = 1
    compute_skipped_terms: bool = False
    identity_seed: int = 101
    perceptual_seed: int = 202

    def __post_init__(self):
        for name in ("epochs", "iterations_per_epoch", "batch_size", "d_steps_per_g",
                     "landmarks", "base_width", "res_blocks", "image_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr_end > self.lr_start:
            raise ValueError("lr_end must not exceed lr_start")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.iterations_per_epoch

    def resolved_disc_channels(self) -> tuple[int, ...]:
        return self.disc_channels or default_disc_channels(self.image_size)


def config_to_dict(cfg: TrainConfig) -> dict:
    d = dataclasses.asdict(cfg)
    if d["disc_channels"] is not None:
        d["disc_channels"] = list(d["disc_channels"])
    return d


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["weights"] = LossWeights(**d["weights"])
    if d.get("disc_channels") is not None:
        d["disc_channels"] = tuple(d["disc_channels"])
    return TrainConfig(**d)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear ramp from lr_start at step 0 to lr_end over lr_decay_epochs,
    then held constant."""
    if step < 0:
        raise ValueError("step must be >= 0")
    ramp = cfg.lr_decay_epochs * cfg.iterations_per_epoch
    if step >= ramp or ramp == 0:
        return cfg.lr_end
    return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * (step / ramp)


def encode_heatmap_batch(points: np.ndarray, size: int, sigma: float, radius: float,
                         dtype=torch.float32) -> torch.Tensor:
    """(B, n, 2) landmark batches -> (B, n, size, size) heatmap tensors."""
    maps = np.stack([encode_heatmaps(p, size, size, sigma, radius) for p in points])
    return torch.from_numpy(maps).to(dtype)


@dataclass
class TrainState:
    generator: Generator
    discriminator: Discriminator
    g_opt: torch.optim.Optimizer
    d_opt: torch.optim.Optimizer
    f_id: FeatureExtractor
    f_pp: FeatureExtractor
    rng: np.random.Generator
    step: int = 0


def init_train_state(cfg: TrainConfig) -> TrainState:
    torch.manual_seed(cfg.seed)
    gen = Generator(GeneratorSpec(cfg.landmarks, cfg.base_width, cfg.res_blocks),
                    seed=cfg.seed)
    disc = Discriminator(DiscriminatorSpec(cfg.image_size, cfg.resolved_disc_channels()),
                         seed=cfg.seed + 1)
    g_opt = torch.optim.Adam(gen.parameters(), lr=cfg.lr_start, betas=(cfg.beta1, cfg.beta2))
    d_opt = torch.optim.Adam(disc.parameters(), lr=cfg.lr_start, betas=(cfg.beta1, cfg.beta2))
    return TrainState(
        generator=gen,
        discriminator=disc,
        g_opt=g_opt,
        d_opt=d_opt,
        f_id=make_identity_extractor(cfg.identity_seed),
        f_pp=make_perceptual_extractor(cfg.perceptual_seed),
        rng=np.random.default_rng(cfg.seed),
    )


def train_step(state: TrainState, batch: Batch, cfg: TrainConfig) -> LossReport:
    """One discriminator update followed by one generator update; returns the
    per-term report for the step."""
    t0 = time.perf_counter()
    lr = lr_at(state.step, cfg)
    for opt in (state.g_opt, state.d_opt):
        for group in opt.param_groups:
            group["lr"] = lr

    size = cfg.image_size
    hm_t = encode_heatmap_batch(batch.target_points, size, cfg.heatmap_sigma, cfg.heatmap_radius)
    hm_i = encode_heatmap_batch(batch.source_points, size, cfg.heatmap_sigma, cfg.heatmap_radius)
    hm_n = encode_heatmap_batch(batch.third_points, size, cfg.heatmap_sigma, cfg.heatmap_radius)
    img, target = batch.image, batch.target_image

    fake, _, _ = state.generator(img, hm_t)

    for _ in range(cfg.d_steps_per_g):
        d_loss = adv_loss_d(state.discriminator(target), state.discriminator(fake.detach()))
        state.d_opt.zero_grad(set_to_none=True)
        d_loss.backward()
        state.d_opt.step()

    w = cfg.weights
    want = lambda weight: weight != 0.0 or cfg.compute_skipped_terms
    terms: dict[str, torch.Tensor] = {}
    if want(w.adv):
        terms["adv"] = adv_loss_g(state.discriminator(fake))
    if want(w.pix):
        terms["pix"] = pixel_loss(fake, target)
    if want(w.self_consistency):
        terms["self_consistency"] = self_consistency_loss(
            state.generator, img, hm_t, hm_i, generated=fake)
    if want(w.triple):
        terms["triple"] = triple_consistency_loss(
            state.generator, img, hm_t, hm_n, generated=fake)
    if want(w.identity):
        terms["identity"] = identity_loss(state.f_id, img, fake)
    if want(w.perceptual):
        terms["perceptual"] = perceptual_loss(state.f_pp, img, fake)
    if want(w.tv):
        terms["tv"] = tv_loss(fake)

    total, report = total_generator_loss(terms, w, step=state.step)
    state.g_opt.zero_grad(set_to_none=True)
    total.backward()
    state.g_opt.step()

    report.wall_time = time.perf_counter() - t0
    state.step += 1
    return report


def save_checkpoint(path, state: TrainState, cfg: TrainConfig) -> None:
    payload = {
        "schema": CHECKPOINT_SCHEMA,
        "step": state.step,
        "config": config_to_dict(cfg),
        "generator_spec": dataclasses.asdict(state.generator.spec),
        "generator_state": state.generator.state_dict(),
        "discriminator_spec": dataclasses.asdict(state.discriminator.spec),
        "discriminator_state": state.discriminator.state_dict(),
        "g_opt_state": state.g_opt.state_dict(),
        "d_opt_state": state.d_opt.state_dict(),
        "torch_rng": torch.get_rng_state(),
        "numpy_rng": state.rng.bit_generator.state,
    }
    path = Path(path)
    try:
        torch.save(payload, path)
    except OSError as exc:
        raise OSError(f"failed writing checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"{path}: unsupported checkpoint schema {payload.get('schema')}")
    return payload


def restore_train_state(payload: dict) -> tuple[TrainState, TrainConfig]:
    cfg = config_from_dict(payload["config"])
    gen = Generator(GeneratorSpec(**payload["generator_spec"]))
    gen.load_state_dict(payload["generator_state"])
    disc_spec = dict(payload["discriminator_spec"])
    disc_spec["channels"] = tuple(disc_spec["channels"])
    disc = Discriminator(DiscriminatorSpec(**disc_spec))
    disc.load_state_dict(payload["discriminator_state"])
    g_opt = torch.optim.Adam(gen.parameters(), lr=cfg.lr_start, betas=(cfg.beta1, cfg.beta2))
    d_opt = torch.optim.Adam(disc.parameters(), lr=cfg.lr_start, betas=(cfg.beta1, cfg.beta2))
    g_opt.load_state_dict(payload["g_opt_state"])
    d_opt.load_state_dict(payload["d_opt_state"])
    torch.set_rng_state(payload["torch_rng"])
    rng = np.random.default_rng()
    rng.bit_generator.state = payload["numpy_rng"]
    state = TrainState(
        generator=gen,
        discriminator=disc,
        g_opt=g_opt,
        d_opt=d_opt,
        f_id=make_identity_extractor(cfg.identity_seed),
        f_pp=make_perceptual_extractor(cfg.perceptual_seed),
        rng=rng,
        step=payload["step"],
    )
    return state, cfg


def load_generator(path) -> tuple[Generator, TrainConfig]:
    """Inference-mode generator plus the config it was trained with."""
    payload = load_checkpoint(path)
    gen = Generator(GeneratorSpec(**payload["generator_spec"]))
    gen.load_state_dict(payload["generator_state"])
    gen.eval()
    return gen, config_from_dict(payload["config"])


def _warn_if_paper_scale(cfg: TrainConfig) -> None:
    # Rough per-step compute proxy; the paper-scale recipe lands around 5e12.
    cost = cfg.total_steps * cfg.batch_size * cfg.image_size ** 2 * cfg.base_width
    if cost > 1e12:
        hours = cost / 1e12 * 5.0
        warnings.warn(
            f"configured run ({cfg.total_steps} steps at {cfg.image_size}px, batch "
            f"{cfg.batch_size}) is far beyond desk scale; expect very roughly "
            f"{hours:.0f}+ CPU-hours", RuntimeWarning)


def train(manifest: DatasetManifest, cfg: TrainConfig, run_dir,
          callbacks=(), resume_from=None) -> TrainState:
    """Run the full schedule, logging one structured record per step and
    checkpointing on the configured cadence plus epoch boundaries."""
    if not manifest.records:
        raise ValueError("manifest has no records")
    if manifest.landmark_count != cfg.landmarks:
        raise ValueError(
            f"manifest has {manifest.landmark_count} landmarks, config expects {cfg.landmarks}")
    _warn_if_paper_scale(cfg)

    run = Path(run_dir)
    ckpt_dir = run / "checkpoints"
    log_dir = run / "logs"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_dir.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        state, cfg_ckpt = restore_train_state(load_checkpoint(resume_from))
        if config_to_dict(cfg_ckpt) != config_to_dict(cfg):
            log.warning("resuming with the checkpoint's config; supplied config differs")
        cfg = cfg_ckpt
    else:
        state = init_train_state(cfg)

    cache = ImageCache()
    log_path = log_dir / "loss_log.jsonl"
    with open(log_path, "a", encoding="ascii") as log_file:
        while state.step < cfg.total_steps:
            batch = sample_batch(manifest, cfg.batch_size, state.rng,
                                 crop_margin=cfg.crop_margin, out_size=cfg.image_size,
                                 cache=cache)
            try:
                report = train_step(state, batch, cfg)
            except DivergenceError as exc:
                diag = {"step": state.step, "lr": lr_at(state.step, cfg), "terms": exc.terms}
                diag_path = log_dir / "divergence.json"
                diag_path.write_text(json.dumps(diag, indent=1), encoding="ascii")
                log.error("aborting at step %d: %s (diagnostic in %s)",
                          state.step, exc, diag_path)
                raise
            if report.step % cfg.log_every == 0:
                log_file.write(json.dumps(report.to_record()) + "\n")
            for cb in callbacks:
                cb(state, report)
            at_epoch_end = state.step % cfg.iterations_per_epoch == 0
            if state.step % cfg.checkpoint_every == 0 or at_epoch_end:
                save_checkpoint(ckpt_dir / f"step_{state.step:08d}.pt", state, cfg)
                save_checkpoint(ckpt_dir / "latest.pt", state, cfg)
    save_checkpoint(ckpt_dir / "latest.pt", state, cfg)
    return state
