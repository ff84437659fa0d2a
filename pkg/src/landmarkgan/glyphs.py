"""Synthetic glyph faces: deterministically renderable stand-ins for face data.

Each identity owns a smooth seeded background and a fixed color per landmark;
rendering stamps a Gaussian color glyph at every landmark, so the ground-truth
image for ANY target shape can be produced exactly. A parametric landmark
template (jaw arc, brows, eyes, nose line, mouth ellipse) supplies face-like
shapes for any point count n >= 12, together with the mirror permutation and
a small bank of smooth deformation modes (one of them a yaw-like pose mode).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DatasetManifest, build_paired_triplets, save_image, save_manifest
from .geometry import write_pts


@dataclass(frozen=True)
class GlyphFaceSpec:
    """Identity + renderer parameters; rendering is a pure function of (spec, shape)."""

    background_seed: int
    colors: tuple[tuple[float, float, float], ...]
    glyph_sigma: float = 2.0
    glyph_radius: float = 6.0
    image_size: int = 96

    def to_dict(self) -> dict:
        return {
            "background_seed": self.background_seed,
            "colors": [list(c) for c in self.colors],
            "glyph_sigma": self.glyph_sigma,
            "glyph_radius": self.glyph_radius,
            "image_size": self.image_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GlyphFaceSpec":
        return cls(
            background_seed=d["background_seed"],
            colors=tuple(tuple(c) for c in d["colors"]),
            glyph_sigma=d["glyph_sigma"],
            glyph_radius=d["glyph_radius"],
            image_size=d["image_size"],
        )


def make_glyph_spec(seed: int, n: int, image_size: int = 96, glyph_sigma: float = 2.0,
                    glyph_radius: float = 6.0) -> GlyphFaceSpec:
    rng = np.random.default_rng(seed)
    colors = tuple(tuple(float(v) for v in rng.uniform(0.0, 1.0, 3)) for _ in range(n))
    return GlyphFaceSpec(background_seed=seed, colors=colors, glyph_sigma=glyph_sigma,
                         glyph_radius=glyph_radius, image_size=image_size)


def _smooth_background(seed: int, size: int, grid: int = 5) -> np.ndarray:
    """Bilinearly upsampled low-resolution noise: smooth, seeded, in [0.2, 0.7]."""
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(0.2, 0.7, (grid, grid, 3))
    pos = np.linspace(0.0, grid - 1.0, size)
    i0 = np.clip(np.floor(pos).astype(int), 0, grid - 2)
    frac = pos - i0
    rows = coarse[i0] * (1 - frac)[:, None, None] + coarse[i0 + 1] * frac[:, None, None]
    cols = (rows[:, i0] * (1 - frac)[None, :, None]
            + rows[:, i0 + 1] * frac[None, :, None])
    return cols


def render_glyph_face(spec: GlyphFaceSpec, points: np.ndarray) -> np.ndarray:
    """Render (H, W, 3) float64 in [0, 1]; two calls with equal inputs are bitwise equal."""
    size = spec.image_size
    img = _smooth_background(spec.background_seed, size)
    r = spec.glyph_radius
    denom = 2.0 * spec.glyph_sigma ** 2
    for j, (x, y) in enumerate(np.asarray(points, dtype=np.float64)):
        x0 = max(0, int(math.ceil(x - r)))
        x1 = min(size - 1, int(math.floor(x + r)))
        y0 = max(0, int(math.ceil(y - r)))
        y1 = min(size - 1, int(math.floor(y + r)))
        if x0 > x1 or y0 > y1:
            continue
        dx2 = (np.arange(x0, x1 + 1) - x) ** 2
        dy2 = (np.arange(y0, y1 + 1) - y) ** 2
        d2 = dy2[:, None] + dx2[None, :]
        alpha = np.exp(-d2 / denom)
        alpha[d2 > r * r] = 0.0
        window = img[y0:y1 + 1, x0:x1 + 1]
        color = np.asarray(spec.colors[j])
        img[y0:y1 + 1, x0:x1 + 1] = (1.0 - alpha[:, :, None]) * window + alpha[:, :, None] * color
    return img


def _ellipse_ring(cx: float, cy: float, rx: float, ry: float, count: int) -> np.ndarray:
    """Points at angles -pi/2 + 2*pi*k/count; mirrored by index k -> (count - k) % count."""
    angles = -np.pi / 2 + 2.0 * np.pi * np.arange(count) / count
    return np.column_stack([cx + rx * np.cos(angles), cy + ry * np.sin(angles)])


def _ring_mirror(count: int) -> np.ndarray:
    return (count - np.arange(count)) % count


def face_template(n: int) -> tuple[np.ndarray, np.ndarray, dict[str, np.ndarray]]:
    """Symmetric face-like template with n points in roughly [-1, 1]^2.

    Returns (points, mirror permutation, feature index groups). The template
    is exactly mirror-symmetric: reflecting x and applying the permutation
    reproduces it.
    """
    if n < 12:
        raise ValueError(f"parametric face template needs n >= 12, got {n}")
    n_eye = max(2, round(0.12 * n))
    n_brow = max(1, round(0.08 * n))
    n_nose = max(1, round(0.10 * n))
    n_mouth = max(3, round(0.20 * n))
    n_jaw = n - 2 * n_eye - 2 * n_brow - n_nose - n_mouth
    shrink_order = ["mouth", "eye", "brow", "nose"]
    minimums = {"mouth": 3, "eye": 2, "brow": 1, "nose": 1}
    counts = {"eye": n_eye, "brow": n_brow, "nose": n_nose, "mouth": n_mouth}
    while n_jaw < 2:
        for name in shrink_order:
            if counts[name] > minimums[name]:
                counts[name] -= 1
                break
        else:
            raise ValueError(f"cannot allocate features for n={n}")
        n_jaw = n - 2 * counts["eye"] - 2 * counts["brow"] - counts["nose"] - counts["mouth"]
    n_eye, n_brow, n_nose, n_mouth = counts["eye"], counts["brow"], counts["nose"], counts["mouth"]

    parts: list[np.ndarray] = []
    groups: dict[str, np.ndarray] = {}
    perm = np.zeros(n, dtype=np.int64)
    offset = 0

    def add(name: str, pts: np.ndarray, local_perm: np.ndarray, partner_offset=None):
        nonlocal offset
        groups[name] = np.arange(offset, offset + len(pts))
        base = offset if partner_offset is None else partner_offset
        perm[offset:offset + len(pts)] = base + local_perm
        parts.append(pts)
        offset += len(pts)

    # Jaw: lower face arc, symmetric about the chin.
    u = np.linspace(-1.0, 1.0, n_jaw) if n_jaw > 1 else np.array([0.0])
    phi = u * math.radians(105.0)
    jaw = np.column_stack([np.sin(phi), 0.10 + 0.92 * np.cos(phi)])
    add("jaw", jaw, np.arange(n_jaw)[::-1])

    # Brows: arched segments above each eye; left indices pair with reversed right.
    t = np.linspace(0.0, 1.0, n_brow) if n_brow > 1 else np.array([0.5])
    brow_y = -0.52 - 0.10 * np.sin(np.pi * t)
    brow_left = np.column_stack([-0.62 + 0.42 * t, brow_y])
    left_off = offset
    add("brow_left", brow_left, np.arange(n_brow)[::-1], partner_offset=offset + n_brow)
    brow_right = np.column_stack([-brow_left[::-1, 0], brow_left[::-1, 1]])
    add("brow_right", brow_right, np.arange(n_brow)[::-1], partner_offset=left_off)

    # Eyes: small rings; left ring k pairs with right ring (count - k) % count.
    eye_left = _ellipse_ring(-0.38, -0.27, 0.14, 0.09, n_eye)
    left_off = offset
    add("eye_left", eye_left, _ring_mirror(n_eye), partner_offset=offset + n_eye)
    eye_right = _ellipse_ring(0.38, -0.27, 0.14, 0.09, n_eye)
    add("eye_right", eye_right, _ring_mirror(n_eye), partner_offset=left_off)

    # Nose: points on the vertical center line, self-mirrored.
    nose_y = np.linspace(-0.30, 0.14, n_nose) if n_nose > 1 else np.array([0.0])
    add("nose", np.column_stack([np.zeros(n_nose), nose_y]), np.arange(n_nose))

    # Mouth: ellipse ring below the nose.
    add("mouth", _ellipse_ring(0.0, 0.52, 0.34, 0.15, n_mouth), _ring_mirror(n_mouth))

    points = np.vstack(parts)
    return points, perm, groups


def _similarity_directions(template: np.ndarray) -> np.ndarray:
    """Orthonormal translation/scale/rotation directions at the template."""
    n = template.shape[0]
    centered = template - template.mean(axis=0)
    tx = np.zeros((n, 2)); tx[:, 0] = 1.0
    ty = np.zeros((n, 2)); ty[:, 1] = 1.0
    scale = centered
    rot = np.column_stack([-centered[:, 1], centered[:, 0]])
    dirs = np.stack([d.ravel() / np.linalg.norm(d.ravel()) for d in (tx, ty, scale, rot)])
    # tx/ty/scale/rot are mutually orthogonal for a centered shape already.
    return dirs


def deformation_modes(template: np.ndarray, groups: dict[str, np.ndarray]
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Unit-norm smooth modes (k, 2n) with sampling scales; mode 0 is the
    yaw-like pose mode (x-displacement even in x, flipping sign under mirror).

    Each mode is orthogonalized against the similarity directions so its
    displacement survives Procrustes alignment instead of being absorbed into
    translation, scale, or rotation.
    """
    n = template.shape[0]
    x = template[:, 0]
    modes = []

    pose = np.zeros((n, 2))
    pose[:, 0] = 1.0 - (x / 1.2) ** 2
    modes.append(pose)

    mouth_open = np.zeros((n, 2))
    mouth = groups["mouth"]
    mouth_cy = template[mouth, 1].mean()
    mouth_open[mouth, 1] = template[mouth, 1] - mouth_cy
    modes.append(mouth_open)

    eye_height = np.zeros((n, 2))
    for name in ("eye_left", "eye_right"):
        idx = groups[name]
        eye_height[idx, 1] = template[idx, 1] - template[idx, 1].mean()
    modes.append(eye_height)

    jaw_width = np.zeros((n, 2))
    jaw = groups["jaw"]
    jaw_width[jaw, 0] = template[jaw, 0]
    modes.append(jaw_width)

    rigid = _similarity_directions(template)
    stack = []
    for m in modes:
        v = m.ravel()
        v = v - rigid.T @ (rigid @ v)
        stack.append(v / np.linalg.norm(v))
    scales = np.array([0.50, 0.25, 0.15, 0.25])
    return np.stack(stack), scales


def sample_face_shape(template: np.ndarray, modes: np.ndarray, scales: np.ndarray,
                      image_size: int, rng: np.random.Generator) -> np.ndarray:
    """One image-frame shape: template + random mode mix + mild rigid jitter."""
    coeffs = rng.uniform(-1.0, 1.0, modes.shape[0]) * scales
    shape = template + (modes.T @ coeffs).reshape(-1, 2)
    scale = 0.30 * image_size * (1.0 + rng.uniform(-0.05, 0.05))
    angle = math.radians(rng.uniform(-5.0, 5.0))
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    center = image_size / 2.0 + rng.uniform(-2.0, 2.0, 2)
    return scale * (shape @ rot.T) + center


def make_synthetic_dataset(out_dir, identities: int, shapes_per_identity: int, quota: int,
                           seed: int, n: int = 20, image_size: int = 96,
                           glyph_sigma: float = 2.0, glyph_radius: float = 6.0
                           ) -> DatasetManifest:
    """Render a glyph-face dataset tree and assemble per-identity triplets.

    Writes images/<id>_<frame>.png with matching .pts files plus manifest.json
    under out_dir; the result is a byte-identical function of the arguments.
    """
    out = Path(out_dir)
    images_dir = out / "images"
    try:
        images_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {images_dir}: {exc}") from exc

    rng = np.random.default_rng(seed)
    template, _, groups = face_template(n)
    modes, scales = deformation_modes(template, groups)

    videos: dict[str, list[tuple[str, np.ndarray]]] = {}
    glyph_specs: dict[str, dict] = {}
    for i in range(identities):
        identity = f"id{i:03d}"
        spec = make_glyph_spec(int(rng.integers(0, 2 ** 31 - 1)), n, image_size,
                               glyph_sigma, glyph_radius)
        glyph_specs[identity] = spec.to_dict()
        frames = []
        for j in range(shapes_per_identity):
            shape = sample_face_shape(template, modes, scales, image_size, rng)
            img = render_glyph_face(spec, shape)
            rel = f"images/{identity}_f{j:03d}.png"
            try:
                save_image(out / rel, img)
                write_pts(out / f"images/{identity}_f{j:03d}.pts", shape)
            except OSError as exc:
                raise OSError(f"failed writing {out / rel}: {exc}") from exc
            frames.append((rel, shape))
        videos[identity] = frames

    records = build_paired_triplets(videos, quota, rng, source="synthetic")
    manifest = DatasetManifest(
        seed=seed,
        landmark_count=n,
        scheme=f"parametric-{n}",
        records=records,
        root=str(out),
        glyph_specs=glyph_specs,
    )
    save_manifest(manifest, out / "manifest.json")
    return manifest
