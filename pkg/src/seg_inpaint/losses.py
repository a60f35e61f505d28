"""Training objectives.

Five pieces: the multi-scale adversarial losses (discriminator and
non-saturating generator forms), the hole-masked feature-matching loss over
discriminator activation pyramids, the layer-weighted perceptual loss on the
cropped hole patch, and the two lambda-weighted combinations (label stage and
image stage).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import mask_bbox

PROB_EPS = 1e-7  # clamp applied wherever a probability is logged

Scalar = Union[torch.Tensor, float]


@dataclass(frozen=True)
class LossWeights:
    lambda_adv: float = 1.0
    lambda_perceptual: float = 10.0
    lambda_alex: float = 10.0

    def __post_init__(self):
        if min(self.lambda_adv, self.lambda_perceptual, self.lambda_alex) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossReport:
    """Named scalar loss terms plus their weighted total, for logging."""

    adversarial: float
    feature_matching: float
    perceptual_patch: Optional[float]
    total: float


def _clamped_log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p.clamp(PROB_EPS, 1.0 - PROB_EPS))


def _as_float(x: Scalar) -> float:
    return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)


def adversarial_loss_D(preds_real: Sequence[torch.Tensor],
                       preds_fake: Sequence[torch.Tensor]) -> torch.Tensor:
    """Mean over patches, averaged over scales, of -[log D(real) + log(1 - D(fake))]."""
    if len(preds_real) != len(preds_fake):
        raise ValueError("real/fake prediction lists differ in scale count")
    terms = []
    for real, fake in zip(preds_real, preds_fake):
        if real.shape != fake.shape:
            raise ValueError(f"patch map shapes differ: {tuple(real.shape)} vs {tuple(fake.shape)}")
        terms.append((-_clamped_log(real) - _clamped_log(1.0 - fake)).mean())
    return torch.stack(terms).mean()


def adversarial_loss_G(preds_fake: Sequence[torch.Tensor]) -> torch.Tensor:
    """Non-saturating generator loss: mean of -log D(fake), averaged over scales."""
    return torch.stack([(-_clamped_log(fake)).mean() for fake in preds_fake]).mean()


def downsample_mask(mask: torch.Tensor, target_h: int, target_w: int) -> torch.Tensor:
    """Nearest-neighbor (floor-index) reduction of a binary mask."""
    h, w = mask.shape[-2:]
    if target_h > h or target_w > w:
        raise ValueError(f"target {target_h}x{target_w} exceeds mask size {h}x{w}")
    rows = torch.div(torch.arange(target_h, device=mask.device) * h, target_h, rounding_mode="floor")
    cols = torch.div(torch.arange(target_w, device=mask.device) * w, target_w, rounding_mode="floor")
    return mask.index_select(-2, rows).index_select(-1, cols)


def masked_feature_matching_loss(pyrs_real: Sequence[Sequence[torch.Tensor]],
                                 pyrs_fake: Sequence[Sequence[torch.Tensor]],
                                 mask: torch.Tensor) -> torch.Tensor:
    """Hole-masked L1 between real and fake discriminator pyramids.

    Per scale and layer: sum over positions of the channel-wise L1 difference,
    masked by the hole downsampled to the layer's grid, normalized by the
    layer's spatial size. Layer 0 is the raw input, so that term is a masked
    reconstruction loss. Terms are summed over layers and scales; batched
    inputs are averaged over the batch.
    """
    if len(pyrs_real) != len(pyrs_fake):
        raise ValueError("pyramid lists differ in scale count")
    mask2d = mask
    while mask2d.dim() > 2 and mask2d.shape[0] == 1:
        mask2d = mask2d.squeeze(0)
    total = None
    for pyr_real, pyr_fake in zip(pyrs_real, pyrs_fake):
        if len(pyr_real) != len(pyr_fake):
            raise ValueError("pyramids differ in layer count")
        for real, fake in zip(pyr_real, pyr_fake):
            if real.shape != fake.shape:
                raise ValueError(f"feature shapes differ: {tuple(real.shape)} vs {tuple(fake.shape)}")
            h, w = real.shape[-2:]
            layer_mask = downsample_mask(_as_spatial(mask, real), h, w)
            diff = (real - fake).abs() * layer_mask
            term = diff.sum(dim=-3).sum(dim=(-2, -1)) / (h * w)
            term = term.mean()  # over batch, if any
            total = term if total is None else total + term
    if total is None:
        raise ValueError("empty pyramid lists")
    return total


def _as_spatial(mask: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """Shape the full-resolution mask to broadcast against [B?, C, h, w] features."""
    m = mask
    if m.dim() == 2:  # [H, W]
        m = m.unsqueeze(0)  # [1, H, W], broadcasts over channels (and batch)
    elif m.dim() == 3 and like.dim() == 4:  # [B, H, W] -> [B, 1, H, W]
        m = m.unsqueeze(1)
    return m.to(like.dtype)


class PerceptualNet(nn.Module):
    """Fixed convolutional feature extractor with learnable per-layer weights.

    Five conv+ReLU stages with 2x average pooling in between, tapping the
    activations after every stage. The default extractor uses seeded random
    weights; externally trained weights can be loaded through the checkpoint
    container. `source` records which of these the instance is.
    """

    STAGE_CHANNELS = (16, 32, 64, 64, 64)

    def __init__(self, input_size: int = 64, trainable_weights: bool = False,
                 source: str = "random"):
        super().__init__()
        self.input_size = input_size
        self.source = source
        convs = []
        in_c = 3
        for out_c in self.STAGE_CHANNELS:
            convs.append(nn.Conv2d(in_c, out_c, 3, padding=1))
            in_c = out_c
        self.convs = nn.ModuleList(convs)
        for p in self.convs.parameters():
            p.requires_grad_(False)
        n = len(self.STAGE_CHANNELS)
        self.layer_weights = nn.Parameter(torch.full((n,), 1.0 / n),
                                          requires_grad=trainable_weights)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        features = []
        h = x
        for i, conv in enumerate(self.convs):
            if i > 0:
                h = F.avg_pool2d(h, 2)
            h = F.relu(conv(h))
            features.append(h)
        return features

    def project_weights(self) -> None:
        """Clamp layer weights to stay non-negative; call after optimizer steps."""
        with torch.no_grad():
            self.layer_weights.clamp_(min=0.0)


def build_perceptual_net(seed: int = 0, input_size: int = 64,
                         trainable_weights: bool = False) -> PerceptualNet:
    net = PerceptualNet(input_size=input_size, trainable_weights=trainable_weights)
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for conv in net.convs:
            fan_in = conv.in_channels * 9
            conv.weight.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=g)
            conv.bias.zero_()
    return net


def _crop_resize(image: torch.Tensor, box: tuple[int, int, int, int], size: int) -> torch.Tensor:
    top, left, h, w = box
    patch = image[..., top:top + h, left:left + w]
    if patch.dim() == 3:
        patch = patch.unsqueeze(0)
    return F.interpolate(patch, size=(size, size), mode="bilinear", align_corners=False)


def perceptual_patch_loss(fake: torch.Tensor, real: torch.Tensor, mask: torch.Tensor,
                          pnet: PerceptualNet) -> torch.Tensor:
    """Layer-weighted squared feature distance between the hole patches.

    The hole's tight bounding rectangle is cropped from both images, resized
    to the extractor's input size, and compared layer by layer:
    sum_l w_l^2 / (H_l * W_l) * sum_{h,w} ||f_l(fake) - f_l(real)||_2^2.
    """
    if fake.shape != real.shape:
        raise ValueError(f"shape mismatch: {tuple(fake.shape)} vs {tuple(real.shape)}")
    if fake.dim() == 4:  # per-sample masks: loop the batch
        masks = mask if mask.dim() >= 3 else mask.unsqueeze(0).expand(fake.shape[0], -1, -1)
        values = [perceptual_patch_loss(f, r, m.squeeze(0) if m.dim() == 3 else m, pnet)
                  for f, r, m in zip(fake, real, masks)]
        return torch.stack(values).mean()

    box = mask_bbox(mask if mask.dim() == 2 else mask.squeeze(0))
    if box is None:
        warnings.warn("perceptual_patch_loss: empty hole, returning 0")
        return fake.sum() * 0.0
    fake_feats = pnet(_crop_resize(fake, box, pnet.input_size))
    real_feats = pnet(_crop_resize(real, box, pnet.input_size))
    total = None
    for w_l, ff, rf in zip(pnet.layer_weights, fake_feats, real_feats):
        h, w = ff.shape[-2:]
        term = (w_l * (ff - rf)).pow(2).sum(dim=-3).sum(dim=(-2, -1)).mean() / (h * w)
        total = term if total is None else total + term
    return total


def sp_objective(adversarial: Scalar, feature_matching: Scalar,
                 weights: LossWeights = LossWeights()) -> tuple[Scalar, LossReport]:
    """Label-stage total: lambda_adv * adv + lambda_perceptual * feature matching."""
    total = weights.lambda_adv * adversarial + weights.lambda_perceptual * feature_matching
    report = LossReport(_as_float(adversarial), _as_float(feature_matching), None, _as_float(total))
    return total, report


def sg_objective(adversarial: Scalar, feature_matching: Scalar, perceptual_patch: Scalar,
                 weights: LossWeights = LossWeights()) -> tuple[Scalar, LossReport]:
    """Image-stage total: adds lambda_alex * perceptual patch term."""
    total = (weights.lambda_adv * adversarial
             + weights.lambda_perceptual * feature_matching
             + weights.lambda_alex * perceptual_patch)
    report = LossReport(_as_float(adversarial), _as_float(feature_matching),
                        _as_float(perceptual_patch), _as_float(total))
    return total, report
