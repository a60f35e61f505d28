"""Shared fully convolutional generator backbone.

The label-completion network (SP) and the image-synthesis network (SG) use the
same body: four stride-2 down-sampling convolutions, nine dilated residual
blocks, four nearest-neighbor up-sampling convolutions, and a 7x7 output head
(softmax over categories for SP, tanh for SG).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

DOWN_FACTOR = 16  # four stride-2 stages


@dataclass(frozen=True)
class GeneratorConfig:
    input_depth: int
    output_depth: int
    head: str  # 'softmax' | 'tanh'
    down_channels: tuple[int, ...] = (64, 128, 256, 512)
    res_channels: int = 512
    res_dilations: tuple[int, ...] = (2, 2, 2, 4, 4, 4, 8, 8, 8)
    up_channels: tuple[int, ...] = (512, 256, 128, 64)
    first_last_kernel: int = 7
    inner_kernel: int = 3
    base_width_scale: float = 1.0
    norm: str = "instance"  # 'instance' | 'batch' | 'none'

    def __post_init__(self):
        if self.head not in ("softmax", "tanh"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.norm not in ("instance", "batch", "none"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.input_depth <= 0 or self.output_depth <= 0:
            raise ValueError("input/output depth must be positive")
        if len(self.down_channels) != 4 or len(self.up_channels) != 4:
            raise ValueError("expected 4 down-sampling and 4 up-sampling stages")
        if len(self.res_dilations) != 9:
            raise ValueError("expected 9 residual blocks")
        if any(b < a for a, b in zip(self.res_dilations, self.res_dilations[1:])):
            raise ValueError("residual dilations must be non-decreasing")
        if any(c <= 0 for c in (*self.down_channels, self.res_channels, *self.up_channels)):
            raise ValueError("channel counts must be positive")
        if self.res_channels != self.down_channels[-1]:
            raise ValueError("res_channels must equal the last down-sampling width")
        if self.base_width_scale <= 0:
            raise ValueError("base_width_scale must be positive")

    def scaled(self, channels: int) -> int:
        return max(1, math.ceil(channels * self.base_width_scale))


class InstanceNorm(nn.Module):
    """Per-sample, per-channel spatial normalization with affine parameters.

    Same statistics as nn.InstanceNorm2d(affine=True) but tolerates 1x1
    feature maps (the output degrades to the bias, the limit of the formula),
    which the deepest discriminator layers produce on desk-scale inputs.
    """

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.affine = True

    def forward(self, x):
        mean = x.mean(dim=(-2, -1), keepdim=True)
        var = x.var(dim=(-2, -1), keepdim=True, unbiased=False)
        y = (x - mean) / torch.sqrt(var + self.eps)
        return y * self.weight.view(-1, 1, 1) + self.bias.view(-1, 1, 1)


def _make_norm(kind: str, channels: int) -> nn.Module:
    if kind == "instance":
        return InstanceNorm(channels)
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    return nn.Identity()


class SymmetricPad(nn.Module):
    """Reflection padding, falling back to replication when the map is too small."""

    def __init__(self, pad: int):
        super().__init__()
        self.pad = pad

    def forward(self, x):
        if self.pad == 0:
            return x
        mode = "reflect" if min(x.shape[-2:]) > self.pad else "replicate"
        return F.pad(x, (self.pad,) * 4, mode=mode)


class ResidualBlock(nn.Module):
    """conv -> norm -> ReLU -> conv -> norm, plus identity skip.

    Both convolutions run at the given dilation; symmetric padding of size
    `dilation * (kernel // 2)` keeps the spatial size unchanged.
    """

    def __init__(self, channels: int, dilation: int, kernel: int = 3, norm: str = "instance"):
        super().__init__()
        self.dilation = dilation
        self.pad = SymmetricPad((kernel // 2) * dilation)
        self.conv1 = nn.Conv2d(channels, channels, kernel, dilation=dilation)
        self.norm1 = _make_norm(norm, channels)
        self.conv2 = nn.Conv2d(channels, channels, kernel, dilation=dilation)
        self.norm2 = _make_norm(norm, channels)

    def forward(self, x):
        y = F.relu(self.norm1(self.conv1(self.pad(x))))
        y = self.norm2(self.conv2(self.pad(y)))
        return x + y


class Generator(nn.Module):
    """Fully convolutional encoder / dilated-residual / decoder generator."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        norm = config.norm

        downs = []
        in_c = config.input_depth
        for i, width in enumerate(config.down_channels):
            out_c = config.scaled(width)
            k = config.first_last_kernel if i == 0 else config.inner_kernel
            downs += [
                SymmetricPad(k // 2),
                nn.Conv2d(in_c, out_c, k, stride=2),
                _make_norm(norm, out_c),
                nn.ReLU(inplace=True),
            ]
            in_c = out_c
        self.down = nn.Sequential(*downs)

        res_c = config.scaled(config.res_channels)
        self.res = nn.Sequential(*[
            ResidualBlock(res_c, d, config.inner_kernel, norm) for d in config.res_dilations
        ])

        ups = []
        for width in config.up_channels:
            out_c = config.scaled(width)
            ups += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                SymmetricPad(config.inner_kernel // 2),
                nn.Conv2d(in_c, out_c, config.inner_kernel),
                _make_norm(norm, out_c),
                nn.ReLU(inplace=True),
            ]
            in_c = out_c
        self.up = nn.Sequential(*ups)

        self.head = nn.Sequential(
            SymmetricPad(config.first_last_kernel // 2),
            nn.Conv2d(in_c, config.output_depth, config.first_last_kernel),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        if x.dim() != 4:
            raise ValueError(f"expected [B, C, H, W] or [C, H, W], got shape {tuple(x.shape)}")
        if x.shape[1] != self.config.input_depth:
            raise ValueError(f"input depth {x.shape[1]} != configured {self.config.input_depth}")
        h, w = x.shape[-2:]
        if h % DOWN_FACTOR or w % DOWN_FACTOR:
            raise ValueError(f"spatial size {h}x{w} not divisible by {DOWN_FACTOR}; no implicit padding")
        y = self.head(self.up(self.res(self.down(x))))
        if self.config.head == "softmax":
            y = torch.softmax(y, dim=1)
        else:
            y = torch.tanh(y)
        return y.squeeze(0) if squeeze else y


def build_generator(config: GeneratorConfig, seed: int = 0) -> Generator:
    """Construct a generator and initialize conv weights N(0, 0.02), biases 0."""
    model = Generator(config)
    init_parameters(model, seed)
    return model


def init_parameters(model: nn.Module, seed: int) -> None:
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, nn.Conv2d):
                m.weight.normal_(0.0, 0.02, generator=g)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, (InstanceNorm, nn.BatchNorm2d)) and m.affine:
                m.weight.fill_(1.0)
                m.bias.zero_()


def sp_config(num_categories: int, width_scale: float = 1.0, norm: str = "instance") -> GeneratorConfig:
    """Label-completion generator: input one-hot labels + image + mask plane."""
    return GeneratorConfig(
        input_depth=num_categories + 3 + 1,
        output_depth=num_categories,
        head="softmax",
        base_width_scale=width_scale,
        norm=norm,
    )


def sg_config(num_categories: int, width_scale: float = 1.0, norm: str = "instance") -> GeneratorConfig:
    """Image-synthesis generator: input image + label map + mask plane."""
    return GeneratorConfig(
        input_depth=3 + num_categories + 1,
        output_depth=3,
        head="tanh",
        base_width_scale=width_scale,
        norm=norm,
    )


def _with_batch(*tensors: torch.Tensor) -> tuple[list[torch.Tensor], bool]:
    squeeze = tensors[0].dim() == 3
    return [t.unsqueeze(0) if squeeze else t for t in tensors], squeeze


def sp_forward(model: Generator, masked_labels: torch.Tensor, masked_image: torch.Tensor,
               mask: torch.Tensor) -> torch.Tensor:
    """Full-frame category probability map from incomplete labels and image.

    Accepts unbatched ([C,H,W], [3,H,W], [H,W]) or batched inputs with a
    leading batch dimension (mask then [B,1,H,W] or [B,H,W]).
    """
    if masked_labels.dim() == 2:
        raise ValueError("masked_labels must be one-hot [C, H, W], not a raw label map")
    if mask.dim() == masked_labels.dim() - 1:
        mask = mask.unsqueeze(-3)
    (labels_b, image_b, mask_b), squeeze = _with_batch(masked_labels, masked_image, mask)
    x = torch.cat([labels_b, image_b, mask_b.to(image_b.dtype)], dim=1)
    if x.shape[1] != model.config.input_depth:
        raise ValueError(
            f"assembled input depth {x.shape[1]} != generator's {model.config.input_depth}"
        )
    out = model(x)
    return out.squeeze(0) if squeeze else out


def sg_forward(model: Generator, masked_image: torch.Tensor, labels: torch.Tensor,
               mask: torch.Tensor) -> torch.Tensor:
    """Full-frame image prediction in [-1, 1] from image + label map + mask."""
    if mask.dim() == labels.dim() - 1:
        mask = mask.unsqueeze(-3)
    (image_b, labels_b, mask_b), squeeze = _with_batch(masked_image, labels, mask)
    x = torch.cat([image_b, labels_b, mask_b.to(image_b.dtype)], dim=1)
    if x.shape[1] != model.config.input_depth:
        raise ValueError(
            f"assembled input depth {x.shape[1]} != generator's {model.config.input_depth}"
        )
    out = model(x)
    return out.squeeze(0) if squeeze else out
