"""The seven training-loss terms and their weighted combination.

All norms are reduced as means over elements (not sums) so the default
weights behave the same at any resolution or batch size; the adversarial
terms use the hinge form with real scores pushed above +1 and fake scores
below -1.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F

from .extractors import FeatureExtractor
from .networks import gram_matrix


class ConfigurationError(Exception):
    """A component was wired with an incompatible configuration."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries the offending term values."""

    def __init__(self, message: str, terms: dict[str, float] | None = None):
        super().__init__(message)
        self.terms = terms or {}


@dataclass(frozen=True)
class LossWeights:
    """Default weights for the full generator objective."""

    adv: float = 1.0
    pix: float = 10.0
    self_consistency: float = 100.0
    triple: float = 100.0
    identity: float = 1.0
    perceptual: float = 10.0
    tv: float = 1e-4

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be >= 0")

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


TERM_NAMES = tuple(f.name for f in fields(LossWeights))


@dataclass
class LossReport:
    """Unweighted per-term values plus the weighted total for one step."""

    step: int
    terms: dict[str, float]
    total: float
    wall_time: float = 0.0

    def to_record(self) -> dict:
        rec = {"step": self.step}
        rec.update({name: self.terms.get(name, 0.0) for name in TERM_NAMES})
        rec["total"] = self.total
        rec["wall_time"] = self.wall_time
        return rec


def _check_nonempty(scores: torch.Tensor, what: str) -> torch.Tensor:
    scores = torch.as_tensor(scores)
    if scores.numel() == 0:
        raise ValueError(f"{what} batch must be non-empty")
    return scores


def adv_loss_d(scores_real: torch.Tensor, scores_fake: torch.Tensor) -> torch.Tensor:
    """Hinge discriminator loss: mean relu(1 - D(real)) + mean relu(1 + D(fake))."""
    real = _check_nonempty(scores_real, "real")
    fake = _check_nonempty(scores_fake, "fake")
    return F.relu(1.0 - real).mean() + F.relu(1.0 + fake).mean()


def adv_loss_g(scores_fake: torch.Tensor) -> torch.Tensor:
    """Generator adversarial loss: negative mean of fake scores."""
    fake = _check_nonempty(scores_fake, "fake")
    return -fake.mean()


def pixel_loss(generated: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all elements."""
    if generated.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(generated.shape)} vs {tuple(target.shape)}")
    return ((generated - target) ** 2).mean()


def tv_loss(img: torch.Tensor) -> torch.Tensor:
    """Smoothness penalty: mean squared horizontal plus mean squared vertical
    forward differences (no wraparound; the boundary row/column is excluded)."""
    if img.shape[-1] < 2 or img.shape[-2] < 2:
        raise ValueError("total variation needs spatial size >= 2x2")
    dh = img[..., :, 1:] - img[..., :, :-1]
    dv = img[..., 1:, :] - img[..., :-1, :]
    return (dh ** 2).mean() + (dv ** 2).mean()


def self_consistency_loss(generator, img: torch.Tensor, hm_target: torch.Tensor,
                          hm_source: torch.Tensor, generated: torch.Tensor | None = None
                          ) -> torch.Tensor:
    """Round-trip reconstruction: translate to the target shape, back to the
    source shape, and compare with the original. Pass `generated` to reuse an
    already-computed first pass (it must be G(img, hm_target))."""
    if generated is None:
        generated, _, _ = generator(img, hm_target)
    back, _, _ = generator(generated, hm_source)
    return pixel_loss(back, img)


def triple_consistency_loss(generator, img: torch.Tensor, hm_target: torch.Tensor,
                            hm_third: torch.Tensor, generated: torch.Tensor | None = None
                            ) -> torch.Tensor:
    """Route-independence penalty: reaching the third shape via the target
    shape must match reaching it directly from the input."""
    if generated is None:
        generated, _, _ = generator(img, hm_target)
    via, _, _ = generator(generated, hm_third)
    direct, _, _ = generator(img, hm_third)
    return pixel_loss(via, direct)


def identity_loss(extractor: FeatureExtractor, real: torch.Tensor,
                  generated: torch.Tensor) -> torch.Tensor:
    """Sum over the extractor's two layers of the mean absolute feature gap."""
    if len(extractor.layer_names) != 2:
        raise ConfigurationError(
            f"identity extractor must expose exactly 2 layers, got {len(extractor.layer_names)}")
    feats_real = extractor(real)
    feats_gen = extractor(generated)
    total = 0.0
    for name in extractor.layer_names:
        total = total + (feats_real[name] - feats_gen[name]).abs().mean()
    return total


def perceptual_loss(extractor: FeatureExtractor, real: torch.Tensor,
                    generated: torch.Tensor) -> torch.Tensor:
    """Feature reconstruction over four layers (mean absolute difference each)
    plus the Frobenius norm of the Gram-matrix difference at the style layer."""
    if len(extractor.layer_names) != 4:
        raise ConfigurationError(
            f"perceptual extractor must expose exactly 4 layers, got {len(extractor.layer_names)}")
    if extractor.style_layer is None or extractor.style_layer not in extractor.layer_names:
        raise ConfigurationError("perceptual extractor must designate a style layer")
    feats_real = extractor(real)
    feats_gen = extractor(generated)
    total = 0.0
    for name in extractor.layer_names:
        total = total + (feats_real[name] - feats_gen[name]).abs().mean()
    gram_real = gram_matrix(feats_real[extractor.style_layer])
    gram_gen = gram_matrix(feats_gen[extractor.style_layer])
    diff = gram_real - gram_gen
    if diff.dim() == 3:
        style = diff.flatten(1).norm(dim=1).mean()
    else:
        style = diff.norm()
    return total + style


def total_generator_loss(terms: dict[str, torch.Tensor], weights: LossWeights,
                         step: int = 0) -> tuple[torch.Tensor, LossReport]:
    """Weighted sum of the supplied terms; missing terms count as zero.

    Raises DivergenceError when any term is non-finite, carrying the per-term
    values for the abort diagnostic.
    """
    unknown = set(terms) - set(TERM_NAMES)
    if unknown:
        raise ValueError(f"unknown loss terms: {sorted(unknown)}")
    values = {}
    for name, value in terms.items():
        v = float(value.detach()) if torch.is_tensor(value) else float(value)
        values[name] = v
    if not all(v == v and abs(v) != float("inf") for v in values.values()):
        raise DivergenceError(f"non-finite loss term at step {step}: {values}", values)
    weight_map = weights.as_dict()
    total = None
    for name, value in terms.items():
        contribution = weight_map[name] * value
        total = contribution if total is None else total + contribution
    if total is None:
        total = torch.zeros(())
    report = LossReport(step=step, terms=values, total=float(total.detach()))
    return total, report
