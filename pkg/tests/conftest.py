import numpy as np
import pytest
import torch

from landmarkgan.glyphs import deformation_modes, face_template
from landmarkgan.networks import (Discriminator, DiscriminatorSpec, Generator,
                                  GeneratorSpec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_generator():
    """Smallest useful generator: 1 landmark channel, 8x8-capable."""
    return Generator(GeneratorSpec(landmarks=1, base_width=2, res_blocks=1), seed=3)


@pytest.fixture
def tiny_discriminator():
    return Discriminator(DiscriminatorSpec(image_size=8, channels=(4,)), seed=4)


@pytest.fixture
def template20():
    return face_template(20)


def make_shape_family(n=20, count=60, seed=0):
    """Image-frame shapes drawn from the parametric template and its modes."""
    template, _, groups = face_template(n)
    modes, scales = deformation_modes(template, groups)
    rng = np.random.default_rng(seed)
    shapes = []
    for _ in range(count):
        c = rng.uniform(-1, 1, modes.shape[0]) * scales
        s = template + (modes.T @ c).reshape(-1, 2)
        ang = rng.uniform(-0.3, 0.3)
        sc = rng.uniform(25.0, 35.0)
        tr = rng.uniform(40.0, 56.0, 2)
        rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
        shapes.append(sc * (s @ rot.T) + tr)
    return shapes


@pytest.fixture
def shape_family():
    return make_shape_family()


def seeded_image(shape=(3, 8, 8), seed=0, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(*shape, generator=gen, dtype=dtype) * 2.0 - 1.0
