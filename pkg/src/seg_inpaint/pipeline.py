"""End-to-end inference: segmentation -> label completion -> guided synthesis.

The external segmenter is pluggable: a ground-truth stub serves desk-scale
runs and tests, and a subprocess adapter lets any segmentation tool that
reads/writes PNG files slot in without linking.
"""

from __future__ import annotations

import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol

import torch

from . import data
from .generator import Generator, sg_forward, sp_forward


class Segmenter(Protocol):
    def segment(self, image: torch.Tensor) -> torch.Tensor:
        """[3, H, W] image -> [H, W] label map of the same spatial size."""
        ...


class GroundTruthSegmenter:
    """Returns stored labels regardless of image content (desk-scale stub)."""

    def __init__(self, labels: torch.Tensor):
        self.labels = labels.clone()

    def segment(self, image: torch.Tensor) -> torch.Tensor:
        if image.shape[-2:] != self.labels.shape:
            raise ValueError(
                f"image {tuple(image.shape[-2:])} does not match stored labels "
                f"{tuple(self.labels.shape)}"
            )
        return self.labels.clone()


def ground_truth_stub_segmenter(sample: data.Sample) -> GroundTruthSegmenter:
    return GroundTruthSegmenter(sample.labels)


class SubprocessSegmenter:
    """File-drop adapter: runs `command` with {image} and {labels} placeholders.

    The command must read the image PNG at {image} and write a single-channel
    label-id PNG to {labels}.
    """

    def __init__(self, command: list[str]):
        self.command = list(command)

    def segment(self, image: torch.Tensor) -> torch.Tensor:
        with tempfile.TemporaryDirectory(prefix="seg_inpaint_") as tmp:
            image_path = Path(tmp) / "input.png"
            labels_path = Path(tmp) / "labels.png"
            data.save_image(image, image_path)
            argv = [a.format(image=image_path, labels=labels_path) for a in self.command]
            result = subprocess.run(argv, capture_output=True, text=True)
            if result.returncode != 0:
                raise RuntimeError(f"segmenter command failed ({result.returncode}): {result.stderr.strip()}")
            labels = data.load_labels(labels_path)
        if labels.shape != image.shape[-2:]:
            raise ValueError(
                f"segmenter returned {tuple(labels.shape)} labels for a "
                f"{tuple(image.shape[-2:])} image"
            )
        return labels


class ColorPrototypeSegmenter:
    """Assigns each pixel the category with the nearest palette color.

    A desk-scale stand-in for an external segmentation model; exact on the
    synthetic demo scenes, whose textures are palette colors plus mild noise.
    """

    def __init__(self, palette=data.PALETTE_8):
        # palette colors mapped into [-1, 1] model space, [C, 3]
        colors = torch.as_tensor(palette, dtype=torch.float32) / 127.5 - 1.0
        self.prototypes = colors

    def segment(self, image: torch.Tensor) -> torch.Tensor:
        diff = image.unsqueeze(0) - self.prototypes.view(-1, 3, 1, 1)
        return diff.pow(2).sum(dim=1).argmin(dim=0)


@dataclass
class InpaintResult:
    predicted_labels: torch.Tensor  # [H, W] completed label map
    image: torch.Tensor             # [3, H, W] completed image
    intermediate: torch.Tensor      # [C, H, W] label probability map


def composite(pred: torch.Tensor, known: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Select `pred` where mask = 1 and `known` where mask = 0, bit-exactly."""
    m = mask
    while m.dim() < pred.dim():
        m = m.unsqueeze(0)
    return torch.where(m > 0.5, pred, known)


def inpaint(
    masked_image: torch.Tensor,
    mask: torch.Tensor,
    segmenter: Segmenter,
    sp: Generator,
    sg: Generator,
    edited_labels: Optional[torch.Tensor] = None,
) -> InpaintResult:
    """Complete the label map inside the hole, then synthesize the image.

    When `edited_labels` is given, its in-hole values replace the network's
    own label completion (the interactive-editing path); the known region
    always comes from the segmenter.
    """
    num_categories = sp.config.output_depth
    s0_labels = segmenter.segment(masked_image)
    if s0_labels.shape != masked_image.shape[-2:]:
        raise ValueError("segmenter output size does not match the image")
    incomplete = data.one_hot(s0_labels, num_categories, hole=mask)
    with torch.no_grad():
        probs = sp_forward(sp, incomplete, masked_image, mask)
        hole_labels = probs.argmax(dim=0)
        if edited_labels is not None:
            if edited_labels.shape != s0_labels.shape:
                raise ValueError("edited labels size does not match the image")
            if edited_labels.numel() and int(edited_labels.max()) >= num_categories:
                raise ValueError(
                    f"edited label id {int(edited_labels.max())} >= C={num_categories}"
                )
            hole_labels = edited_labels.long()
        labels = composite(hole_labels, s0_labels, mask)
        synthesized = sg_forward(sg, masked_image, data.one_hot(labels, num_categories), mask)
        image = composite(synthesized, masked_image, mask)
    return InpaintResult(predicted_labels=labels, image=image, intermediate=probs)


def run_batch(
    input_dir: Path,
    output_dir: Path,
    sp: Generator,
    sg: Generator,
    segmenter_command: Optional[list[str]] = None,
    use_sp_hole: bool = False,
) -> list[str]:
    """Batch inference over `<input>/images`, `<input>/masks` and optional
    `<input>/labels` triples.

    A labels PNG, when present, provides the segmenter output for its item
    (ground-truth-stub behavior) and, unless `use_sp_hole` is set, also the
    in-hole label edit. Items without labels require `segmenter_command`.
    Writes `<name>_labels.png` (ids), `<name>_labels_color.png` (palette) and
    `<name>_inpainted.png` per item; returns processed names.
    """
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    image_dir = input_dir / "images"
    if not image_dir.is_dir():
        raise OSError(f"missing image directory: {image_dir}")
    output_dir.mkdir(parents=True, exist_ok=True)
    processed = []
    for image_path in sorted(p for p in image_dir.iterdir()
                             if p.suffix.lower() in data.IMAGE_EXTENSIONS):
        name = image_path.stem
        mask_path = input_dir / "masks" / f"{name}.png"
        if not mask_path.exists():
            raise OSError(f"missing mask for {name}: {mask_path}")
        image = data.load_image(image_path)
        mask = data.load_mask_png(mask_path)
        labels_path = input_dir / "labels" / f"{name}.png"
        edited = None
        if labels_path.exists():
            labels = data.load_labels(labels_path)
            segmenter: Segmenter = GroundTruthSegmenter(labels)
            if not use_sp_hole:
                edited = labels
        elif segmenter_command:
            segmenter = SubprocessSegmenter(segmenter_command)
        else:
            raise OSError(f"no labels for {name} and no segmenter command configured")
        masked = data.apply_hole(image, mask)
        result = inpaint(masked, mask, segmenter, sp, sg, edited_labels=edited)
        data.save_labels_png(result.predicted_labels, output_dir / f"{name}_labels.png")
        data.save_labels_color_png(result.predicted_labels, output_dir / f"{name}_labels_color.png")
        data.save_image(result.image, output_dir / f"{name}_inpainted.png")
        processed.append(name)
    return processed
