"""Dataset assembly: triplet records, manifests, image I/O, and batch sampling.

A triplet holds three same-identity (image, landmarks) members: the anchor
supplies the input image and its source shape, the target supplies the
reconstruction ground truth and target shape, and the third member supplies
only the extra shape used by the route-independence loss. Unpaired records
pair an image with affine-perturbed copies of itself; the perturbation is
stored so target pixels can be produced on the fly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .geometry import (Affine, AffineJitter, crop_to_landmarks,
                       landmark_crop_transform, sample_affine_jitter, warp_image)

log = logging.getLogger(__name__)

PAIRED_LIKE = ("paired", "synthetic")


@dataclass
class TripletRecord:
    identity: str
    source: str  # "paired" | "unpaired" | "synthetic"
    anchor_image: str
    anchor_points: np.ndarray
    target_image: str
    target_points: np.ndarray
    third_points: np.ndarray
    third_image: str | None = None
    target_affine: np.ndarray | None = None  # 2x3, warps the anchor image into the target

    def to_dict(self) -> dict:
        return {
            "identity": self.identity,
            "source": self.source,
            "anchor_image": self.anchor_image,
            "anchor_points": self.anchor_points.tolist(),
            "target_image": self.target_image,
            "target_points": self.target_points.tolist(),
            "third_points": self.third_points.tolist(),
            "third_image": self.third_image,
            "target_affine": None if self.target_affine is None else self.target_affine.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TripletRecord":
        return cls(
            identity=d["identity"],
            source=d["source"],
            anchor_image=d["anchor_image"],
            anchor_points=np.asarray(d["anchor_points"], dtype=np.float64),
            target_image=d["target_image"],
            target_points=np.asarray(d["target_points"], dtype=np.float64),
            third_points=np.asarray(d["third_points"], dtype=np.float64),
            third_image=d.get("third_image"),
            target_affine=(None if d.get("target_affine") is None
                           else np.asarray(d["target_affine"], dtype=np.float64)),
        )


@dataclass
class DatasetManifest:
    seed: int
    landmark_count: int
    scheme: str
    records: list[TripletRecord]
    root: str = "."
    glyph_specs: dict[str, dict] = field(default_factory=dict)

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for rec in self.records:
            out[rec.source] = out.get(rec.source, 0) + 1
        return out

    def resolve(self, rel_path: str) -> Path:
        return Path(self.root) / rel_path

    def validate(self) -> None:
        n = self.landmark_count
        for rec in self.records:
            for pts in (rec.anchor_points, rec.target_points, rec.third_points):
                if pts.shape != (n, 2):
                    raise ValueError(
                        f"record {rec.identity}: expected ({n}, 2) points, got {pts.shape}")


def save_manifest(manifest: DatasetManifest, path) -> None:
    payload = {
        "schema": 1,
        "seed": manifest.seed,
        "landmark_count": manifest.landmark_count,
        "scheme": manifest.scheme,
        "counts": manifest.counts(),
        "glyph_specs": manifest.glyph_specs,
        "records": [rec.to_dict() for rec in manifest.records],
    }
    with open(path, "w", encoding="ascii") as f:
        json.dump(payload, f, indent=1)
        f.write("\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path, "r", encoding="ascii") as f:
        payload = json.load(f)
    manifest = DatasetManifest(
        seed=payload["seed"],
        landmark_count=payload["landmark_count"],
        scheme=payload["scheme"],
        records=[TripletRecord.from_dict(d) for d in payload["records"]],
        root=str(path.parent),
        glyph_specs=payload.get("glyph_specs", {}),
    )
    manifest.validate()
    return manifest


def load_image(path) -> np.ndarray:
    """Decode to float64 (H, W, 3) in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(path, img: np.ndarray) -> None:
    """Write a float [0, 1] (H, W, 3) array as 8-bit PNG."""
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path, format="PNG")


def build_paired_triplets(videos: dict[str, list[tuple[str, np.ndarray]]], quota: int,
                          rng: np.random.Generator, source: str = "paired"
                          ) -> list[TripletRecord]:
    """Per video, draw `quota` triplets of three distinct annotated frames.

    `videos` maps an identity to its (image path, landmarks) frames. Videos
    with fewer than three frames are skipped with a warning.
    """
    records: list[TripletRecord] = []
    for identity in sorted(videos):
        frames = videos[identity]
        if len(frames) < 3:
            log.warning("skipping video %s: only %d annotated frames", identity, len(frames))
            continue
        for _ in range(quota):
            ia, it, inn = rng.choice(len(frames), size=3, replace=False)
            records.append(TripletRecord(
                identity=identity,
                source=source,
                anchor_image=frames[ia][0],
                anchor_points=np.asarray(frames[ia][1], dtype=np.float64),
                target_image=frames[it][0],
                target_points=np.asarray(frames[it][1], dtype=np.float64),
                third_image=frames[inn][0],
                third_points=np.asarray(frames[inn][1], dtype=np.float64),
            ))
    return records


def build_unpaired_triplets(images: list[tuple[str, np.ndarray]], jitter: AffineJitter,
                            rng: np.random.Generator,
                            image_sizes: dict[str, tuple[int, int]] | None = None,
                            root: str = ".") -> list[TripletRecord]:
    """Pair every image with affine perturbations of its own landmarks.

    The target member reuses the anchor image warped by a stored affine (so
    s_target = A(s_anchor) exactly); the third member contributes an
    independently perturbed shape only.
    """
    records: list[TripletRecord] = []
    perm = (np.asarray(jitter.mirror_permutation)
            if jitter.mirror_permutation is not None else None)
    for path, pts in images:
        pts = np.asarray(pts, dtype=np.float64)
        if image_sizes and path in image_sizes:
            w, h = image_sizes[path]
        else:
            try:
                with Image.open(Path(root) / path) as im:
                    w, h = im.size
            except OSError as exc:
                log.warning("skipping unreadable image %s: %s", path, exc)
                continue
        affine_t, mirrored_t = sample_affine_jitter(jitter, w, h, rng)
        affine_n, mirrored_n = sample_affine_jitter(jitter, w, h, rng)
        target_points = affine_t.apply(pts)
        third_points = affine_n.apply(pts)
        if mirrored_t:
            target_points = target_points[perm]
        if mirrored_n:
            third_points = third_points[perm]
        records.append(TripletRecord(
            identity=Path(path).stem,
            source="unpaired",
            anchor_image=path,
            anchor_points=pts,
            target_image=path,
            target_points=target_points,
            third_points=third_points,
            target_affine=np.asarray(affine_t.matrix),
        ))
    return records


@dataclass
class Batch:
    """Crop-frame tensors for one training step; images live in [-1, 1]."""

    image: torch.Tensor          # (B, 3, S, S) input images at their source shapes
    source_points: np.ndarray    # (B, n, 2) crop-frame landmarks of the inputs
    target_image: torch.Tensor   # (B, 3, S, S) ground-truth targets
    target_points: np.ndarray    # (B, n, 2) crop-frame landmarks of the targets
    third_points: np.ndarray     # (B, n, 2) crop-frame landmarks for the third shape
    identities: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.image.shape[0]


class ImageCache:
    """Decoded-image cache keyed by resolved path; safe because entries are
    treated as read-only."""

    def __init__(self):
        self._store: dict[str, np.ndarray] = {}

    def get(self, path) -> np.ndarray:
        key = str(path)
        if key not in self._store:
            self._store[key] = load_image(key)
        return self._store[key]


def to_unit_range(img: np.ndarray) -> torch.Tensor:
    """(H, W, 3) in [0, 1] float -> (3, H, W) float32 tensor in [-1, 1]."""
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))).float() * 2.0 - 1.0


def from_unit_range(tensor: torch.Tensor) -> np.ndarray:
    """(3, H, W) tensor in [-1, 1] -> (H, W, 3) float64 in [0, 1]."""
    arr = tensor.detach().cpu().numpy().transpose(1, 2, 0).astype(np.float64)
    return np.clip((arr + 1.0) / 2.0, 0.0, 1.0)


def sample_batch(manifest: DatasetManifest, batch_size: int, rng: np.random.Generator,
                 crop_margin: float = 10.0, out_size: int = 128,
                 cache: ImageCache | None = None,
                 mix_weights: tuple[float, float] | None = None) -> Batch:
    """Draw one batch entirely from the paired-like or the unpaired family.

    The family is chosen with probability proportional to record counts unless
    mix_weights (paired-like, unpaired) overrides it. Images are cropped to
    the landmark box with `crop_margin` px margin and rescaled to
    out_size x out_size; heatmaps are encoded downstream.
    """
    if not manifest.records:
        raise ValueError("manifest has no records")
    cache = cache or ImageCache()
    paired = [r for r in manifest.records if r.source in PAIRED_LIKE]
    unpaired = [r for r in manifest.records if r.source == "unpaired"]
    if mix_weights is None:
        mix_weights = (float(len(paired)), float(len(unpaired)))
    total = mix_weights[0] + mix_weights[1]
    if total <= 0:
        raise ValueError("mixing weights must not both be zero")
    use_paired = rng.random() < (mix_weights[0] / total) if unpaired and paired else bool(paired)
    pool = paired if use_paired else unpaired

    images, src_pts, tgt_images, tgt_pts, third_pts, identities = [], [], [], [], [], []
    for idx in rng.integers(0, len(pool), size=batch_size):
        rec = pool[int(idx)]
        anchor = cache.get(manifest.resolve(rec.anchor_image))
        img_c, pts_c, _ = crop_to_landmarks(anchor, rec.anchor_points, crop_margin, out_size)
        if rec.target_affine is not None:
            h, w = anchor.shape[:2]
            target_full = warp_image(anchor, Affine(rec.target_affine), w, h)
        else:
            target_full = cache.get(manifest.resolve(rec.target_image))
        tgt_c, tgt_p, _ = crop_to_landmarks(target_full, rec.target_points, crop_margin, out_size)
        third_map = landmark_crop_transform(rec.third_points, crop_margin, out_size)
        images.append(to_unit_range(img_c))
        src_pts.append(pts_c)
        tgt_images.append(to_unit_range(tgt_c))
        tgt_pts.append(tgt_p)
        third_pts.append(third_map.apply(rec.third_points))
        identities.append(rec.identity)

    return Batch(
        image=torch.stack(images),
        source_points=np.stack(src_pts),
        target_image=torch.stack(tgt_images),
        target_points=np.stack(tgt_pts),
        third_points=np.stack(third_pts),
        identities=identities,
    )
