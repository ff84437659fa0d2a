"""Landmark geometry: affine maps, Gaussian heatmap encoding, jitter, crops, pts I/O.

Conventions used across the package: a landmark set is a float array of shape
(n, 2) with columns (x, y) in pixel units, pixel centers at integer
coordinates; images are numpy arrays of shape (height, width) or
(height, width, channels) with float values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class Affine:
    """Immutable 2-D affine map stored as a 2x3 matrix [A | t]."""

    __slots__ = ("matrix",)

    def __init__(self, matrix):
        m = np.array(matrix, dtype=np.float64)
        if m.shape != (2, 3):
            raise ValueError(f"affine matrix must be 2x3, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def __setattr__(self, name, value):
        raise AttributeError("Affine is immutable")

    def __repr__(self):
        return f"Affine({self.matrix.tolist()})"

    @classmethod
    def identity(cls) -> "Affine":
        return cls([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Affine":
        return cls([[1.0, 0.0, tx], [0.0, 1.0, ty]])

    @classmethod
    def scaling(cls, sx: float, sy: float) -> "Affine":
        return cls([[sx, 0.0, 0.0], [0.0, sy, 0.0]])

    @classmethod
    def similarity(cls, scale: float, angle: float, tx: float = 0.0, ty: float = 0.0,
                   center: tuple[float, float] = (0.0, 0.0)) -> "Affine":
        """scale*R(angle) about `center`, then translate by (tx, ty). angle in radians."""
        c, s = math.cos(angle), math.sin(angle)
        a = scale * np.array([[c, -s], [s, c]])
        cx, cy = center
        t = np.array([cx + tx, cy + ty]) - a @ np.array([cx, cy])
        return cls(np.column_stack([a, t]))

    @classmethod
    def mirror_x(cls, width: int) -> "Affine":
        """Horizontal flip about the image's vertical center axis: x -> (width-1) - x."""
        return cls([[-1.0, 0.0, float(width - 1)], [0.0, 1.0, 0.0]])

    @property
    def linear(self) -> np.ndarray:
        return self.matrix[:, :2]

    @property
    def offset(self) -> np.ndarray:
        return self.matrix[:, 2]

    def determinant(self) -> float:
        return float(np.linalg.det(self.linear))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.linear.T + self.offset

    def then(self, other: "Affine") -> "Affine":
        """Composition: (a.then(b)).apply(p) == b.apply(a.apply(p))."""
        a = other.linear @ self.linear
        t = other.linear @ self.offset + other.offset
        return Affine(np.column_stack([a, t]))

    def inverse(self) -> "Affine":
        inv = np.linalg.inv(self.linear)
        return Affine(np.column_stack([inv, -inv @ self.offset]))


def warp_image(img: np.ndarray, affine: Affine, out_width: int, out_height: int) -> np.ndarray:
    """Apply `affine` to image pixels with bilinear interpolation, zero fill outside.

    Output pixel (x, y) samples the input at affine.inverse()(x, y), so points
    and pixels transform consistently: warped landmark positions are
    affine.apply(points).
    """
    arr = np.asarray(img, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w = arr.shape[:2]

    inv = affine.inverse()
    xs, ys = np.meshgrid(np.arange(out_width), np.arange(out_height))
    src = inv.apply(np.column_stack([xs.ravel(), ys.ravel()]))
    sx = src[:, 0].reshape(out_height, out_width)
    sy = src[:, 1].reshape(out_height, out_width)

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0

    out = np.zeros((out_height, out_width, arr.shape[2]), dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            vals = arr[yi.clip(0, h - 1), xi.clip(0, w - 1)]
            out += (wgt * inside)[:, :, None] * vals
    return out[:, :, 0] if squeeze else out


def encode_heatmaps(points: np.ndarray, width: int, height: int, sigma: float,
                    truncate_radius: float = 6.0) -> np.ndarray:
    """Per-landmark Gaussian maps, stacked channel-first as (n, height, width).

    Channel j holds exp(-((x-xj)^2 + (y-yj)^2) / (2*sigma^2)) at each pixel
    center, zeroed where the squared distance exceeds truncate_radius^2.
    Landmarks outside the image contribute only where their truncated support
    intersects it.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"heatmap size must be positive, got {width}x{height}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if truncate_radius <= 0:
        raise ValueError(f"truncate_radius must be positive, got {truncate_radius}")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"points must have shape (n, 2), got {pts.shape}")

    r = float(truncate_radius)
    denom = 2.0 * sigma * sigma
    maps = np.zeros((pts.shape[0], height, width), dtype=np.float64)
    for j, (x, y) in enumerate(pts):
        x0 = max(0, int(math.ceil(x - r)))
        x1 = min(width - 1, int(math.floor(x + r)))
        y0 = max(0, int(math.ceil(y - r)))
        y1 = min(height - 1, int(math.floor(y + r)))
        if x0 > x1 or y0 > y1:
            continue
        dx2 = (np.arange(x0, x1 + 1) - x) ** 2
        dy2 = (np.arange(y0, y1 + 1) - y) ** 2
        d2 = dy2[:, None] + dx2[None, :]
        g = np.exp(-d2 / denom)
        g[d2 > r * r] = 0.0
        maps[j, y0:y1 + 1, x0:x1 + 1] = g
    return maps


# Left/right landmark pairing for the 68-point markup (jaw, brows, nose,
# eyes, outer + inner mouth). perm[i] is the index of i's mirror partner;
# the table is its own inverse.
MIRROR_68 = (
    16, 15, 14, 13, 12, 11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0,
    26, 25, 24, 23, 22, 21, 20, 19, 18, 17,
    27, 28, 29, 30,
    35, 34, 33, 32, 31,
    45, 44, 43, 42, 47, 46,
    39, 38, 37, 36, 41, 40,
    54, 53, 52, 51, 50, 49, 48,
    59, 58, 57, 56, 55,
    64, 63, 62, 61, 60,
    67, 66, 65,
)


@dataclass(frozen=True)
class AffineJitter:
    """Random-transform ranges for paired augmentation.

    rotation: max |degrees|, sampled uniformly in [-rotation, rotation].
    scale: (lo, hi) multiplicative range.
    translation: max |pixels| per axis.
    mirror_prob: probability of a horizontal flip; requires mirror_permutation.
    mirror_permutation: index table applied after a flip so semantic point
        identity is preserved; must be an involution.
    """

    rotation: float = 0.0
    scale: tuple[float, float] = (1.0, 1.0)
    translation: float = 0.0
    mirror_prob: float = 0.0
    mirror_permutation: tuple[int, ...] | None = None

    def __post_init__(self):
        if not (0.0 <= self.mirror_prob <= 1.0):
            raise ValueError(f"mirror_prob must be in [0, 1], got {self.mirror_prob}")
        if self.mirror_prob > 0 and self.mirror_permutation is None:
            raise ValueError("mirror_prob > 0 requires a mirror_permutation")
        if self.mirror_permutation is not None:
            perm = np.asarray(self.mirror_permutation)
            if not np.array_equal(perm[perm], np.arange(perm.size)):
                raise ValueError("mirror_permutation must be an involution")


def sample_affine_jitter(jitter: AffineJitter, width: int, height: int,
                         rng: np.random.Generator) -> tuple[Affine, bool]:
    """Draw one transform from the jitter ranges; degenerate draws are resampled.

    The flip, when it fires, is folded into the returned affine (applied before
    the rotation/scale/translation, about the image center).
    """
    center = ((width - 1) / 2.0, (height - 1) / 2.0)
    for _ in range(100):
        angle = math.radians(rng.uniform(-jitter.rotation, jitter.rotation))
        scale = rng.uniform(jitter.scale[0], jitter.scale[1])
        tx = rng.uniform(-jitter.translation, jitter.translation)
        ty = rng.uniform(-jitter.translation, jitter.translation)
        mirrored = bool(rng.random() < jitter.mirror_prob)
        affine = Affine.similarity(scale, angle, tx, ty, center=center)
        if mirrored:
            affine = Affine.mirror_x(width).then(affine)
        if abs(affine.determinant()) > 1e-8:
            return affine, mirrored
    raise RuntimeError("could not sample a non-degenerate affine transform")


def apply_affine_jitter(img: np.ndarray, points: np.ndarray, affine: Affine,
                        mirrored: bool, permutation=None) -> tuple[np.ndarray, np.ndarray]:
    """Warp pixels and points with the same map; re-index points after a flip."""
    h, w = np.asarray(img).shape[:2]
    out_img = warp_image(img, affine, w, h)
    out_pts = affine.apply(points)
    if mirrored:
        if permutation is None:
            raise ValueError("mirrored transform requires a landmark permutation")
        out_pts = out_pts[np.asarray(permutation)]
    return out_img, out_pts


def random_affine(img: np.ndarray, points: np.ndarray, jitter: AffineJitter,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Jointly jitter an image and its landmarks; points transform exactly."""
    h, w = np.asarray(img).shape[:2]
    affine, mirrored = sample_affine_jitter(jitter, w, h, rng)
    return apply_affine_jitter(img, points, affine, mirrored, jitter.mirror_permutation)


def landmark_crop_transform(points: np.ndarray, margin: float, out_size: int) -> Affine:
    """Affine mapping original coordinates into the out_size x out_size crop frame.

    The landmark bounding box padded by `margin` on each side is rescaled
    (anisotropically) to span out_size pixels per axis.
    """
    pts = np.asarray(points, dtype=np.float64)
    min_xy = pts.min(axis=0)
    max_xy = pts.max(axis=0)
    span = max_xy - min_xy
    if span[0] <= 0 or span[1] <= 0:
        raise ValueError("landmark bounding box must have positive area")
    sx = out_size / (span[0] + 2.0 * margin)
    sy = out_size / (span[1] + 2.0 * margin)
    tx = -(min_xy[0] - margin) * sx
    ty = -(min_xy[1] - margin) * sy
    return Affine([[sx, 0.0, tx], [0.0, sy, ty]])


def crop_to_landmarks(img: np.ndarray, points: np.ndarray, margin: float,
                      out_size: int) -> tuple[np.ndarray, np.ndarray, Affine]:
    """Crop to the padded landmark box and rescale to out_size x out_size.

    Returns (cropped image, points in crop coordinates, crop transform); the
    transform's inverse() maps results back into the source frame.
    """
    to_crop = landmark_crop_transform(points, margin, out_size)
    out_img = warp_image(img, to_crop, out_size, out_size)
    return out_img, to_crop.apply(points), to_crop


def read_pts(path) -> np.ndarray:
    """Parse a pts landmark file (version / n_points header, braced x-y lines)."""
    with open(path, "r", encoding="ascii") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or not lines[0].lower().startswith("version"):
        raise ValueError(f"{path}: missing pts version header")
    if not lines[1].lower().startswith("n_points"):
        raise ValueError(f"{path}: missing n_points header")
    n = int(lines[1].split(":")[1])
    if lines[2] != "{" or lines[-1] != "}":
        raise ValueError(f"{path}: malformed braces")
    body = lines[3:-1]
    if len(body) != n:
        raise ValueError(f"{path}: expected {n} points, found {len(body)}")
    pts = np.array([[float(tok) for tok in ln.split()] for ln in body], dtype=np.float64)
    if pts.shape != (n, 2):
        raise ValueError(f"{path}: points are not 2-D")
    return pts


def write_pts(path, points: np.ndarray) -> None:
    """Emit a pts file; coordinates use shortest round-trip float formatting."""
    pts = np.asarray(points, dtype=np.float64)
    with open(path, "w", encoding="ascii") as f:
        f.write("version: 1\n")
        f.write(f"n_points: {pts.shape[0]}\n")
        f.write("{\n")
        for x, y in pts:
            f.write(f"{float(x)!r} {float(y)!r}\n")
        f.write("}\n")
