"""Generator and discriminator architectures plus feature-map utilities.

The generator follows the downsample / residual / upsample image-translation
layout, takes the RGB image concatenated with one heatmap channel per
landmark, and splits its last layer into a tanh color head and a sigmoid mask
head combined as out = (1 - M) * C + M * I.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass(frozen=True)
class GeneratorSpec:
    landmarks: int = 68
    base_width: int = 64
    res_blocks: int = 6

    @property
    def in_channels(self) -> int:
        return 3 + self.landmarks


@dataclass(frozen=True)
class DiscriminatorSpec:
    image_size: int = 128
    channels: tuple[int, ...] = (64, 128, 256, 512, 512)
    leak: float = 0.01

    def __post_init__(self):
        blocks = len(self.channels)
        if self.image_size % (2 ** blocks) != 0 or self.image_size // (2 ** blocks) < 1:
            raise ValueError(
                f"image_size {self.image_size} incompatible with {blocks} stride-2 blocks")

    @property
    def final_spatial(self) -> int:
        return self.image_size // (2 ** len(self.channels))


def init_weights(module: nn.Module, generator: torch.Generator) -> None:
    """Normal(0, 0.02) init for conv/linear weights, zero biases, reproducibly."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            with torch.no_grad():
                m.weight.normal_(0.0, 0.02, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class Generator(nn.Module):
    """Heatmap-conditioned translator with mask compositing.

    forward(img, heatmaps) returns (out, color, mask) where
    out = (1 - mask) * color + mask * img. Spatial size is preserved for any
    input whose sides are divisible by 4.
    """

    def __init__(self, spec: GeneratorSpec, seed: int | None = None):
        super().__init__()
        self.spec = spec
        b = spec.base_width
        self.encoder = nn.Sequential(
            nn.ReflectionPad2d(3),
            nn.Conv2d(spec.in_channels, b, kernel_size=7),
            nn.InstanceNorm2d(b),
            nn.ReLU(inplace=True),
            nn.Conv2d(b, 2 * b, kernel_size=3, stride=2, padding=1),
            nn.InstanceNorm2d(2 * b),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * b, 4 * b, kernel_size=3, stride=2, padding=1),
            nn.InstanceNorm2d(4 * b),
            nn.ReLU(inplace=True),
        )
        self.blocks = nn.Sequential(*[ResidualBlock(4 * b) for _ in range(spec.res_blocks)])
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(4 * b, 2 * b, kernel_size=3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(2 * b),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(2 * b, b, kernel_size=3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(b),
            nn.ReLU(inplace=True),
        )
        self.color_head = nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(b, 3, kernel_size=7))
        self.mask_head = nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(b, 1, kernel_size=7))
        if seed is not None:
            gen = torch.Generator().manual_seed(seed)
            init_weights(self, gen)

    def forward(self, img: torch.Tensor, heatmaps: torch.Tensor):
        squeeze = img.dim() == 3
        if squeeze:
            img = img.unsqueeze(0)
            heatmaps = heatmaps.unsqueeze(0)
        if img.dim() != 4 or heatmaps.dim() != 4:
            raise ValueError("generator expects (B, C, H, W) tensors")
        if img.shape[-2:] != heatmaps.shape[-2:]:
            raise ValueError(
                f"image {tuple(img.shape[-2:])} and heatmaps {tuple(heatmaps.shape[-2:])} "
                "must share spatial size")
        if img.shape[1] + heatmaps.shape[1] != self.spec.in_channels:
            raise ValueError(
                f"expected {self.spec.in_channels} input channels, got "
                f"{img.shape[1] + heatmaps.shape[1]}")
        x = torch.cat([img, heatmaps], dim=1)
        h = self.decoder(self.blocks(self.encoder(x)))
        color = torch.tanh(self.color_head(h))
        mask = torch.sigmoid(self.mask_head(h))
        out = (1.0 - mask) * color + mask * img
        if squeeze:
            return out.squeeze(0), color.squeeze(0), mask.squeeze(0)
        return out, color, mask


class Discriminator(nn.Module):
    """Stack of stride-2 conv blocks ending in a dense score head.

    The default spec reduces a 128x128 image to a 4x4x512 volume that a
    single linear layer maps to one unbounded realness score per image.
    """

    def __init__(self, spec: DiscriminatorSpec, seed: int | None = None):
        super().__init__()
        self.spec = spec
        layers = []
        prev = 3
        for ch in spec.channels:
            layers.append(nn.Conv2d(prev, ch, kernel_size=4, stride=2, padding=1))
            layers.append(nn.LeakyReLU(spec.leak, inplace=True))
            prev = ch
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(spec.channels[-1] * spec.final_spatial ** 2, 1)
        if seed is not None:
            gen = torch.Generator().manual_seed(seed)
            init_weights(self, gen)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        squeeze = img.dim() == 3
        if squeeze:
            img = img.unsqueeze(0)
        if img.shape[-2:] != (self.spec.image_size, self.spec.image_size):
            raise ValueError(
                f"discriminator configured for {self.spec.image_size}px inputs, "
                f"got {tuple(img.shape[-2:])}")
        volume = self.features(img)
        score = self.head(volume.flatten(1)).squeeze(1)
        return score.squeeze(0) if squeeze else score


def gram_matrix(features: torch.Tensor) -> torch.Tensor:
    """Channel correlation Gram matrix F F^T / (C*H*W) of a (C,H,W) or (B,C,H,W) map."""
    squeeze = features.dim() == 3
    if squeeze:
        features = features.unsqueeze(0)
    b, c, h, w = features.shape
    flat = features.reshape(b, c, h * w)
    gram = torch.bmm(flat, flat.transpose(1, 2)) / (c * h * w)
    return gram.squeeze(0) if squeeze else gram
