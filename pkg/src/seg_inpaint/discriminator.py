"""Three-scale conditional PatchGAN discriminators.

Each scale is a 4-layer stride-2 convolutional stack ending in a 1-channel
sigmoid patch map (input size / 16 per side). The forward pass also returns
the per-layer activation pyramid used by the masked feature-matching loss;
pyramid index 0 is the raw concatenated input.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .generator import _make_norm, init_parameters


@dataclass(frozen=True)
class DiscriminatorConfig:
    input_depth: int  # condition channels + candidate channels
    scales: int = 3
    down_layers: int = 4
    base_channels: int = 64
    max_channels: int = 512
    kernel: int = 4
    stride: int = 2
    norm: str = "instance"

    def __post_init__(self):
        if self.input_depth <= 0 or self.base_channels <= 0:
            raise ValueError("channel counts must be positive")
        if self.scales < 1 or self.down_layers < 1:
            raise ValueError("scales and down_layers must be >= 1")
        if self.norm not in ("instance", "batch", "none"):
            raise ValueError(f"unknown norm {self.norm!r}")


class PatchDiscriminator(nn.Module):
    """Single-scale PatchGAN: stride-2 conv stack, sigmoid patch output."""

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        layers = []
        in_c = config.input_depth
        out_c = config.base_channels
        for i in range(config.down_layers):
            block = [nn.Conv2d(in_c, out_c, config.kernel, stride=config.stride, padding=1)]
            if i > 0:
                block.append(_make_norm(config.norm, out_c))
            block.append(nn.LeakyReLU(0.2, inplace=True))
            layers.append(nn.Sequential(*block))
            in_c = out_c
            out_c = min(out_c * 2, config.max_channels)
        self.layers = nn.ModuleList(layers)
        self.predict = nn.Conv2d(in_c, 1, 3, stride=1, padding=1)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Returns (patch prediction in (0,1), feature pyramid incl. the input)."""
        min_side = 2 ** self.config.down_layers
        if min(x.shape[-2:]) < min_side:
            raise ValueError(
                f"input {tuple(x.shape[-2:])} too small for {self.config.down_layers} "
                f"stride-2 layers; needs at least {min_side} per side")
        pyramid = [x]
        h = x
        for layer in self.layers:
            h = layer(h)
            pyramid.append(h)
        pred = torch.sigmoid(self.predict(h))
        return pred, pyramid


class MultiScaleDiscriminator(nn.Module):
    """Independent same-structure discriminators, one per pyramid scale."""

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        self.scales = nn.ModuleList(PatchDiscriminator(config) for _ in range(config.scales))

    def forward(self, condition: torch.Tensor, candidate: torch.Tensor):
        """Run every scale on pooled versions of concat(condition, candidate).

        Returns (patch predictions, feature pyramids), one entry per scale.
        """
        x = _concat_pair(self.config, condition, candidate)
        preds, pyramids = [], []
        for level, disc in zip(downsample_pyramid(x), self.scales):
            pred, pyr = disc(level)
            preds.append(pred)
            pyramids.append(pyr)
        return preds, pyramids


def build_discriminator(config: DiscriminatorConfig, seed: int = 0) -> MultiScaleDiscriminator:
    model = MultiScaleDiscriminator(config)
    init_parameters(model, seed)
    return model


def downsample_pyramid(x: torch.Tensor) -> list[torch.Tensor]:
    """[x, x pooled by 2, x pooled by 4] via block-mean average pooling."""
    h, w = x.shape[-2:]
    if h % 4 or w % 4:
        raise ValueError(f"spatial size {h}x{w} not divisible by 4")
    return [x, F.avg_pool2d(x, 2), F.avg_pool2d(x, 4)]


def _concat_pair(config: DiscriminatorConfig, condition: torch.Tensor,
                 candidate: torch.Tensor) -> torch.Tensor:
    if condition.shape[-2:] != candidate.shape[-2:]:
        raise ValueError(
            f"condition {tuple(condition.shape)} and candidate {tuple(candidate.shape)} "
            "are not spatially aligned"
        )
    x = torch.cat([condition, candidate], dim=-3)
    if x.shape[-3] != config.input_depth:
        raise ValueError(f"concatenated depth {x.shape[-3]} != configured {config.input_depth}")
    return x


def disc_forward(disc: PatchDiscriminator, condition: torch.Tensor,
                 candidate: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
    """Single-scale conditional forward on already scale-matched inputs."""
    x = _concat_pair(disc.config, condition, candidate)
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    pred, pyramid = disc(x)
    if squeeze:
        pred = pred.squeeze(0)
        pyramid = [p.squeeze(0) for p in pyramid]
    return pred, pyramid
