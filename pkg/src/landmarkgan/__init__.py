"""Landmark-guided face-to-face translation with a triple consistency objective."""

from .geometry import (Affine, AffineJitter, MIRROR_68, crop_to_landmarks,
                       encode_heatmaps, random_affine, read_pts, write_pts)
from .losses import LossReport, LossWeights
from .networks import Discriminator, DiscriminatorSpec, Generator, GeneratorSpec
from .shape_model import ShapeModel, decompose, compose, fit_shape_model, frontalize, pose_sweep
from .training import TrainConfig, lr_at, train, train_step

__version__ = "0.1.0"

__all__ = [
    "Affine", "AffineJitter", "MIRROR_68", "crop_to_landmarks", "encode_heatmaps",
    "random_affine", "read_pts", "write_pts",
    "LossReport", "LossWeights",
    "Discriminator", "DiscriminatorSpec", "Generator", "GeneratorSpec",
    "ShapeModel", "decompose", "compose", "fit_shape_model", "frontalize", "pose_sweep",
    "TrainConfig", "lr_at", "train", "train_step",
    "__version__",
]
