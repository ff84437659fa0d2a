"""Statistical landmark shape model: Procrustes alignment, PCA basis,
rigid/non-rigid decomposition, frontalization, and pose sweeps.

The canonical model frame is the Procrustes mean, centered at the origin with
unit Frobenius norm. Rigid parameters (scale, rotation, translation) map the
canonical frame into image coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RigidParams:
    """Similarity transform from the model frame into image coordinates."""

    scale: float
    rotation: float  # radians, counter-clockwise in (x right, y down) coords
    tx: float
    ty: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        rot = np.array([[c, -s], [s, c]])
        return self.scale * (np.asarray(points) @ rot.T) + np.array([self.tx, self.ty])

    def invert(self, points: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        rot = np.array([[c, -s], [s, c]])
        return ((np.asarray(points) - np.array([self.tx, self.ty])) / self.scale) @ rot


@dataclass(frozen=True)
class ShapeModel:
    mean: np.ndarray        # (n, 2) canonical frame
    basis: np.ndarray       # (k, 2n) orthonormal rows
    variances: np.ndarray   # (k,) per-component variance of training coefficients
    pose_index: int

    @property
    def n_points(self) -> int:
        return self.mean.shape[0]

    @property
    def n_components(self) -> int:
        return self.basis.shape[0]

    def component_sigma(self, index: int) -> float:
        return float(np.sqrt(self.variances[index]))


def align_similarity(src: np.ndarray, dst: np.ndarray) -> RigidParams:
    """Least-squares similarity transform T with T(src) ~= dst (closed form)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    src_c = src.mean(axis=0)
    dst_c = dst.mean(axis=0)
    a = src - src_c
    b = dst - dst_c
    denom = (a * a).sum()
    if denom <= 0:
        raise ValueError("cannot align a degenerate (single-point) shape")
    dot = (a * b).sum()
    cross = (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]).sum()
    angle = math.atan2(cross, dot)
    scale = math.hypot(dot, cross) / denom
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    t = dst_c - scale * (rot @ src_c)
    return RigidParams(scale=scale, rotation=angle, tx=float(t[0]), ty=float(t[1]))


def _normalize(shape: np.ndarray) -> np.ndarray:
    centered = shape - shape.mean(axis=0)
    return centered / np.linalg.norm(centered)


def procrustes_mean(shapes: list[np.ndarray], tol: float = 1e-8,
                    max_iter: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Iterative Procrustes mean; returns (mean, aligned stack of shape (N, n, 2)).

    Each iteration aligns every shape to the current mean by a similarity
    transform, then recenters and renormalizes the average; stops when the
    mean moves by less than `tol` in Frobenius norm.
    """
    mean = _normalize(np.asarray(shapes[0], dtype=np.float64))
    aligned = None
    for _ in range(max_iter):
        aligned = np.stack([align_similarity(s, mean).apply(s) for s in shapes])
        new_mean = _normalize(aligned.mean(axis=0))
        if np.linalg.norm(new_mean - mean) < tol:
            mean = new_mean
            break
        mean = new_mean
    aligned = np.stack([align_similarity(s, mean).apply(s) for s in shapes])
    return mean, aligned


def _x_skewness(aligned: np.ndarray) -> float:
    """Signed left-right asymmetry statistic: third moment of centered x-coords."""
    x = aligned[:, 0] - aligned[:, 0].mean()
    return float(np.mean(x ** 3))


def fit_shape_model(shapes: list[np.ndarray], k: int,
                    pose_index: int | None = None) -> ShapeModel:
    """Fit a k-component shape model to Procrustes-aligned residuals.

    pose_index defaults to the component whose training coefficients correlate
    most strongly (in absolute value) with the per-shape x-skewness statistic;
    pass an explicit index to override.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(shapes) < k + 1:
        raise ValueError(f"need at least k+1={k + 1} shapes, got {len(shapes)}")
    n = np.asarray(shapes[0]).shape[0]
    for s in shapes:
        if np.asarray(s).shape != (n, 2):
            raise ValueError("all shapes must share the same landmark count")

    mean, aligned = procrustes_mean(shapes)
    resid = (aligned - mean).reshape(len(shapes), 2 * n)
    # SVD of residuals: rows of vt are principal directions.
    _, svals, vt = np.linalg.svd(resid, full_matrices=False)
    basis = vt[:k]
    variances = (svals[:k] ** 2) / len(shapes)

    if pose_index is None:
        coeffs = resid @ basis.T
        asym = np.array([_x_skewness(a) for a in aligned])
        corr = np.zeros(k)
        a_std = asym.std()
        for i in range(k):
            c_std = coeffs[:, i].std()
            if a_std > 0 and c_std > 0:
                corr[i] = abs(np.mean((asym - asym.mean()) * (coeffs[:, i] - coeffs[:, i].mean()))
                              / (a_std * c_std))
        pose_index = int(np.argmax(corr))
    if not (0 <= pose_index < k):
        raise ValueError(f"pose_index {pose_index} out of range for k={k}")

    return ShapeModel(mean=mean, basis=basis, variances=variances, pose_index=pose_index)


def decompose(points: np.ndarray, model: ShapeModel,
              tol: float = 1e-12, max_iter: int = 30) -> tuple[RigidParams, np.ndarray]:
    """Split a shape into rigid parameters and non-rigid basis coefficients.

    Alternates the closed-form similarity fit of (mean + basis^T c) onto the
    shape with re-projection of the back-warped residual, so that
    compose(decompose(x)) reproduces x up to PCA truncation.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape != (model.n_points, 2):
        raise ValueError(f"expected shape ({model.n_points}, 2), got {pts.shape}")
    coeffs = np.zeros(model.n_components)
    rigid = align_similarity(model.mean, pts)
    for _ in range(max_iter):
        modeled = model.mean + (model.basis.T @ coeffs).reshape(-1, 2)
        rigid = align_similarity(modeled, pts)
        new_coeffs = model.basis @ (rigid.invert(pts) - model.mean).ravel()
        if np.max(np.abs(new_coeffs - coeffs)) < tol:
            coeffs = new_coeffs
            break
        coeffs = new_coeffs
    return rigid, coeffs


def compose(rigid: RigidParams, coeffs: np.ndarray, model: ShapeModel) -> np.ndarray:
    """Rebuild image-frame landmarks from rigid parameters and coefficients."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    modeled = model.mean + (model.basis.T @ coeffs).reshape(-1, 2)
    return rigid.apply(modeled)


def frontalize(points: np.ndarray, model: ShapeModel) -> np.ndarray:
    """Zero the in-plane rotation and pose coefficient, keep everything else."""
    rigid, coeffs = decompose(points, model)
    coeffs = coeffs.copy()
    coeffs[model.pose_index] = 0.0
    upright = RigidParams(scale=rigid.scale, rotation=0.0, tx=rigid.tx, ty=rigid.ty)
    return compose(upright, coeffs, model)


def pose_sweep(points: np.ndarray, model: ShapeModel, pose_values,
               expression_jitter_scale: float = 0.0,
               rng: np.random.Generator | None = None) -> list[np.ndarray]:
    """Frontalized variants of a shape with the pose coefficient overwritten.

    pose_values are raw coefficient values (multiples of
    model.component_sigma(pose_index) give the usual +-k-sigma sweeps). With a
    positive jitter scale, non-pose coefficients receive Gaussian noise of
    that scale in units of their own standard deviation.
    """
    if expression_jitter_scale > 0 and rng is None:
        raise ValueError("expression jitter requires a random generator")
    rigid, coeffs = decompose(points, model)
    upright = RigidParams(scale=rigid.scale, rotation=0.0, tx=rigid.tx, ty=rigid.ty)
    sigmas = np.sqrt(model.variances)
    out = []
    for value in pose_values:
        c = coeffs.copy()
        c[model.pose_index] = value
        if expression_jitter_scale > 0:
            noise = rng.standard_normal(model.n_components) * expression_jitter_scale * sigmas
            noise[model.pose_index] = 0.0
            c = c + noise
        out.append(compose(upright, c, model))
    return out


def save_shape_model(path, model: ShapeModel) -> None:
    """Persist to a single npz archive (keys: n, k, mean, basis, variances, pose_index)."""
    np.savez(
        path,
        n=np.int64(model.n_points),
        k=np.int64(model.n_components),
        mean=model.mean,
        basis=model.basis,
        variances=model.variances,
        pose_index=np.int64(model.pose_index),
    )


def load_shape_model(path) -> ShapeModel:
    with np.load(path) as data:
        model = ShapeModel(
            mean=data["mean"],
            basis=data["basis"],
            variances=data["variances"],
            pose_index=int(data["pose_index"]),
        )
    if model.mean.shape[0] != int(np.asarray(model.basis).shape[1] // 2):
        raise ValueError(f"{path}: inconsistent shape model dimensions")
    return model
