"""Quantitative checks of route independence: the footprint gap between
one-pass and two-pass translations, progressive-chain degradation against
exact glyph ground truth, and identity drift under a frozen extractor.

Gaps are reported as mean absolute per-pixel differences (images live in
[-1, 1], so values are interpretable on a [0, 2] scale); a contrast-robust
variant is included that normalizes each image to zero mean and unit variance
first, since a model can hide its footprint in contrast-only changes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import (DatasetManifest, ImageCache, from_unit_range, load_image,
                   save_image, to_unit_range)
from .extractors import FeatureExtractor
from .geometry import crop_to_landmarks, landmark_crop_transform
from .glyphs import GlyphFaceSpec, render_glyph_face
from .losses import identity_loss
from .networks import Generator
from .shape_model import ShapeModel, frontalize, pose_sweep
from .training import encode_heatmap_batch


@dataclass(frozen=True)
class EvalProtocol:
    """Fully serializable description of a footprint evaluation."""

    samples: int = 16
    chain_length: int = 3
    pose_sigmas: float = 2.0
    expression_jitter: float = 0.0
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "chain_length": self.chain_length,
            "pose_sigmas": self.pose_sigmas,
            "expression_jitter": self.expression_jitter,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalProtocol":
        return cls(**d)


@dataclass
class FootprintReport:
    gap_mean: float
    gap_normalized_mean: float
    per_sample: list[float]
    chain_error: list[float]       # target-fidelity error at chain depth 1..K
    identity_drift: list[float]    # feature distance to the input at depth 1..K
    one_pass_error: float          # chain_error[0], kept explicit for A/B checks
    protocol: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "gap_mean": self.gap_mean,
            "gap_normalized_mean": self.gap_normalized_mean,
            "per_sample": self.per_sample,
            "chain_error": self.chain_error,
            "identity_drift": self.identity_drift,
            "one_pass_error": self.one_pass_error,
            "protocol": self.protocol,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="ascii")


def _encode(points: np.ndarray, size: int, sigma: float, radius: float) -> torch.Tensor:
    return encode_heatmap_batch(points[None], size, sigma, radius)[0]


def progressive_chain(generator: Generator, img: torch.Tensor,
                      heatmaps: list[torch.Tensor]) -> list[torch.Tensor]:
    """Feed each output back as the next input: out_k = G(out_{k-1}; H_k).

    Performs exactly len(heatmaps) generator forwards and returns every
    intermediate."""
    outs = []
    current = img
    with torch.no_grad():
        for hm in heatmaps:
            current, _, _ = generator(current, hm)
            outs.append(current)
    return outs


def mean_abs_gap(a: torch.Tensor, b: torch.Tensor) -> float:
    return float((a - b).abs().mean())


def normalized_gap(a: torch.Tensor, b: torch.Tensor) -> float:
    """Gap after per-image mean/variance normalization (contrast-insensitive)."""
    def norm(x):
        return (x - x.mean()) / (x.std() + 1e-8)
    return float((norm(a) - norm(b)).abs().mean())


def identity_drift(extractor: FeatureExtractor, original: torch.Tensor,
                   chain: list[torch.Tensor]) -> list[float]:
    """Per-chain-step feature distance between the original and each output."""
    with torch.no_grad():
        return [float(identity_loss(extractor, original, img)) for img in chain]


def evaluation_shapes(points: np.ndarray, model: ShapeModel, protocol: EvalProtocol,
                      rng: np.random.Generator) -> list[np.ndarray]:
    """Target sequence for one sample: frontalized shape first, then poses
    alternating at +-pose_sigmas standard deviations."""
    shapes = [frontalize(points, model)]
    sigma = model.component_sigma(model.pose_index)
    values = [((-1) ** i) * protocol.pose_sigmas * sigma
              for i in range(protocol.chain_length - 1)]
    if values:
        shapes.extend(pose_sweep(points, model, values,
                                 expression_jitter_scale=protocol.expression_jitter,
                                 rng=rng))
    return shapes


def render_cropped_truth(spec: GlyphFaceSpec, shape: np.ndarray, crop_margin: float,
                         out_size: int) -> torch.Tensor:
    """Exact ground-truth crop for a synthetic identity at an arbitrary shape."""
    truth = render_glyph_face(spec, shape)
    cropped, _, _ = crop_to_landmarks(truth, shape, crop_margin, out_size)
    return to_unit_range(cropped)


def target_fidelity(generator: Generator, spec: GlyphFaceSpec,
                    shape_pairs: list[tuple[np.ndarray, np.ndarray]],
                    heatmap_sigma: float, heatmap_radius: float,
                    crop_margin: float, out_size: int) -> float:
    """Mean absolute error between G(I; H(s_t)) and the rendered truth at s_t,
    averaged over (source shape, target shape) pairs."""
    errors = []
    with torch.no_grad():
        for src_shape, tgt_shape in shape_pairs:
            src = render_cropped_truth(spec, src_shape, crop_margin, out_size)
            truth = render_cropped_truth(spec, tgt_shape, crop_margin, out_size)
            tgt_crop = landmark_crop_transform(tgt_shape, crop_margin, out_size)
            hm = _encode(tgt_crop.apply(tgt_shape), out_size, heatmap_sigma, heatmap_radius)
            out, _, _ = generator(src, hm)
            errors.append(mean_abs_gap(out, truth))
    return float(np.mean(errors))


def footprint_gap(generator: Generator, manifest: DatasetManifest, model: ShapeModel,
                  protocol: EvalProtocol, heatmap_sigma: float, heatmap_radius: float,
                  crop_margin: float, out_size: int,
                  f_id: FeatureExtractor | None = None,
                  cache: ImageCache | None = None) -> FootprintReport:
    """Evaluate the two-route gap plus chain degradation over manifest samples.

    For each sample the input is sent to a frontalized shape s1 and then to a
    pose-swept shape s2; the gap compares G(G(I;H(s1));H(s2)) with the direct
    G(I;H(s2)). Chain fidelity uses exact rendered truth when the manifest
    carries glyph specs; otherwise chain_error entries are NaN.
    """
    if model.n_points != manifest.landmark_count:
        raise ValueError(
            f"shape model has {model.n_points} points, manifest has {manifest.landmark_count}")
    if not manifest.records:
        raise ValueError("manifest has no records")
    generator.eval()
    cache = cache or ImageCache()
    rng = np.random.default_rng(protocol.seed)
    idx = rng.choice(len(manifest.records), size=protocol.samples,
                     replace=protocol.samples > len(manifest.records))

    per_sample: list[float] = []
    per_sample_norm: list[float] = []
    chain_errors: list[list[float]] = []
    drifts: list[list[float]] = []
    with torch.no_grad():
        for record_index in idx:
            rec = manifest.records[int(record_index)]
            full = cache.get(manifest.resolve(rec.anchor_image))
            img_c, _, _ = crop_to_landmarks(full, rec.anchor_points, crop_margin, out_size)
            img = to_unit_range(img_c)

            shapes = evaluation_shapes(rec.anchor_points, model, protocol, rng)
            heatmaps = []
            for shape in shapes:
                to_crop = landmark_crop_transform(shape, crop_margin, out_size)
                heatmaps.append(_encode(to_crop.apply(shape), out_size,
                                        heatmap_sigma, heatmap_radius))

            step1, _, _ = generator(img, heatmaps[0])
            if len(heatmaps) > 1:
                two_step, _, _ = generator(step1, heatmaps[1])
                direct, _, _ = generator(img, heatmaps[1])
                per_sample.append(mean_abs_gap(two_step, direct))
                per_sample_norm.append(normalized_gap(two_step, direct))

            chain = progressive_chain(generator, img, heatmaps)
            spec_dict = manifest.glyph_specs.get(rec.identity)
            if spec_dict is not None:
                spec = GlyphFaceSpec.from_dict(spec_dict)
                truths = [render_cropped_truth(spec, s, crop_margin, out_size) for s in shapes]
                chain_errors.append([mean_abs_gap(o, t) for o, t in zip(chain, truths)])
            else:
                chain_errors.append([float("nan")] * len(chain))
            if f_id is not None:
                drifts.append(identity_drift(f_id, img, chain))

    chain_error = [float(np.mean([c[k] for c in chain_errors]))
                   for k in range(protocol.chain_length)]
    drift = ([float(np.mean([d[k] for d in drifts])) for k in range(protocol.chain_length)]
             if drifts else [])
    gap_mean = float(np.mean(per_sample)) if per_sample else 0.0
    gap_norm = float(np.mean(per_sample_norm)) if per_sample_norm else 0.0
    return FootprintReport(
        gap_mean=gap_mean,
        gap_normalized_mean=gap_norm,
        per_sample=per_sample,
        chain_error=chain_error,
        identity_drift=drift,
        one_pass_error=chain_error[0] if chain_error else float("nan"),
        protocol=protocol.to_dict(),
    )


def write_montage(rows: list[list[np.ndarray]], path=None, border: int = 2,
                  overlay: list[list[np.ndarray | None]] | None = None,
                  dot_color=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Tile equally sized float [0, 1] images into a bordered grid PNG.

    Canvas height is rows*(cell+border)+border and similarly for width.
    Overlay points (one optional array per cell, in cell coordinates) are
    drawn as small exact-color dots.
    """
    if not rows or not rows[0]:
        raise ValueError("montage grid must be non-empty")
    cell_h, cell_w = rows[0][0].shape[:2]
    for row in rows:
        for img in row:
            if img.shape[:2] != (cell_h, cell_w):
                raise ValueError("all montage cells must share the same size")
    n_rows = len(rows)
    n_cols = max(len(row) for row in rows)
    canvas = np.full((n_rows * (cell_h + border) + border,
                      n_cols * (cell_w + border) + border, 3), 1.0)
    for r, row in enumerate(rows):
        for c, img in enumerate(row):
            cell = np.asarray(img, dtype=np.float64)
            if cell.ndim == 2:
                cell = np.repeat(cell[:, :, None], 3, axis=2)
            pts = overlay[r][c] if overlay is not None else None
            if pts is not None:
                cell = cell.copy()
                for x, y in np.asarray(pts):
                    xi, yi = int(round(x)), int(round(y))
                    if 0 <= xi < cell_w and 0 <= yi < cell_h:
                        cell[max(0, yi - 1):yi + 2, max(0, xi - 1):xi + 2] = dot_color
            y0 = border + r * (cell_h + border)
            x0 = border + c * (cell_w + border)
            canvas[y0:y0 + cell_h, x0:x0 + cell_w] = np.clip(cell, 0.0, 1.0)
    if path is not None:
        save_image(path, canvas)
    return canvas


def compare_models(report_with: FootprintReport, report_without: FootprintReport) -> dict:
    """A/B summary: ratio of the baseline's gap to the candidate's."""
    ratio = (report_without.gap_mean / report_with.gap_mean
             if report_with.gap_mean > 0 else float("inf"))
    return {
        "gap_with": report_with.gap_mean,
        "gap_without": report_without.gap_mean,
        "gap_ratio": ratio,
        "chain_error_with": report_with.chain_error,
        "chain_error_without": report_without.chain_error,
        "one_pass_with": report_with.one_pass_error,
        "one_pass_without": report_without.one_pass_error,
    }
