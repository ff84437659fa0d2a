"""Frozen feature extractors backing the identity and perceptual losses.

The interface is a module exposing ordered, named feature maps; parameters
never receive gradients but gradients flow through to the image input. The
shipped implementation is a small convolutional net whose weights are a
deterministic function of a seed, so the whole pipeline stays self-contained;
pretrained extractors can be dropped in by matching the same interface.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn


def _init_scale_preserving(module: nn.Module, generator: torch.Generator) -> None:
    """Kaiming-style normal init so random features keep O(1) magnitude
    through depth; tiny-variance init would make feature losses vanish."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight.shape[1] * (m.weight[0, 0].numel() if m.weight.dim() > 2 else 1)
            with torch.no_grad():
                m.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=generator)
                if m.bias is not None:
                    m.bias.zero_()


class FeatureExtractor(nn.Module):
    """Base class: subclasses set layer_names (ordered) and optionally style_layer."""

    layer_names: tuple[str, ...] = ()
    style_layer: str | None = None

    def forward(self, img: torch.Tensor) -> dict[str, torch.Tensor]:
        raise NotImplementedError


class RandomConvExtractor(FeatureExtractor):
    """Seeded random CNN: stride-2 conv stages with taps at chosen depths.

    `taps` maps layer names to 1-based stage indices; a name may also be
    "pool" (global average of the last stage) or "fc" (linear embedding of the
    pooled features), giving the two deep layers the identity role needs.
    """

    def __init__(self, taps: dict[str, int | str], seed: int, width: int = 16,
                 stages: int = 4, embed_dim: int = 32, style_layer: str | None = None):
        super().__init__()
        self.layer_names = tuple(taps.keys())
        self.style_layer = style_layer
        self._taps = dict(taps)
        convs = []
        prev = 3
        for i in range(stages):
            ch = width * (2 ** i)
            convs.append(nn.Sequential(
                nn.Conv2d(prev, ch, kernel_size=3, stride=2, padding=1),
                nn.ReLU(inplace=True),
            ))
            prev = ch
        self.stages = nn.ModuleList(convs)
        self.fc = nn.Linear(prev, embed_dim)
        _init_scale_preserving(self, torch.Generator().manual_seed(seed))
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, img: torch.Tensor) -> dict[str, torch.Tensor]:
        squeeze = img.dim() == 3
        if squeeze:
            img = img.unsqueeze(0)
        stage_out = []
        x = img
        for stage in self.stages:
            x = stage(x)
            stage_out.append(x)
        pooled = stage_out[-1].mean(dim=(2, 3))
        named = {}
        for name, tap in self._taps.items():
            if tap == "pool":
                feat = pooled
            elif tap == "fc":
                feat = self.fc(pooled)
            else:
                feat = stage_out[int(tap) - 1]
            named[name] = feat.squeeze(0) if squeeze else feat
        return named


def make_identity_extractor(seed: int = 101) -> RandomConvExtractor:
    """Two deep layers (pooled features + linear embedding) for identity distances."""
    return RandomConvExtractor(taps={"pool": "pool", "fc": "fc"}, seed=seed)


def make_perceptual_extractor(seed: int = 202) -> RandomConvExtractor:
    """Four mid-level taps for feature reconstruction; relu3 carries the style term."""
    return RandomConvExtractor(
        taps={"relu1": 1, "relu2": 2, "relu3": 3, "relu4": 4},
        seed=seed,
        style_layer="relu3",
    )


def extract_features(extractor: FeatureExtractor, img: torch.Tensor) -> dict[str, torch.Tensor]:
    """Named features in the extractor's declared order."""
    feats = extractor(img)
    return {name: feats[name] for name in extractor.layer_names}
