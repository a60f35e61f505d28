"""Dataset ingestion, label remapping, one-hot encoding and hole-mask generation.

Conventions used throughout the package:
  * images are float32 tensors [3, H, W] with values in [-1, 1]
  * label maps are int64 tensors [H, W] with values in [0, C-1]
  * one-hot labels are float32 tensors [C, H, W]; hole pixels are all-zero
  * hole masks are float32 tensors [H, W] with values {0, 1}, 1 = missing
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import torch
from PIL import Image as PILImage

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")

# Target categories used for Cityscapes-style street scenes.
TARGET_CATEGORIES = (
    "road", "building", "sign", "vegetation", "sky", "person", "vehicle", "unlabeled",
)

PALETTE_8 = (
    (128, 64, 128),   # road
    (70, 70, 70),     # building
    (220, 220, 0),    # sign
    (107, 142, 35),   # vegetation
    (70, 130, 180),   # sky
    (220, 20, 60),    # person
    (0, 0, 142),      # vehicle
    (0, 0, 0),        # unlabeled
)


@dataclass(frozen=True)
class CategoryMapping:
    """Total mapping from raw category ids to a smaller target id set."""

    source_count: int
    target_count: int
    table: tuple[int, ...]

    def __post_init__(self):
        if len(self.table) != self.source_count:
            raise ValueError(
                f"mapping table has {len(self.table)} entries, expected {self.source_count}"
            )
        for src, dst in enumerate(self.table):
            if not 0 <= dst < self.target_count:
                raise ValueError(f"source id {src} maps to {dst}, outside [0, {self.target_count})")
        missing = set(range(self.target_count)) - set(self.table)
        if missing:
            raise ValueError(f"mapping is not surjective; unused target ids: {sorted(missing)}")


def identity_mapping(n: int) -> CategoryMapping:
    return CategoryMapping(n, n, tuple(range(n)))


def cityscapes_mapping() -> CategoryMapping:
    """35 raw Cityscapes ids grouped into the 8 street-scene categories."""
    groups = {
        "road": (7, 8, 9, 10),                      # road, sidewalk, parking, rail track
        "building": (11, 12, 13, 15, 16),           # building, wall, fence, bridge, tunnel
        "sign": (17, 19, 20),                       # pole, traffic light, traffic sign
        "vegetation": (21, 22),                     # vegetation, terrain
        "sky": (23,),
        "person": (24, 25),                         # person, rider
        "vehicle": (26, 27, 28, 29, 30, 31, 32, 33),
    }
    table = [TARGET_CATEGORIES.index("unlabeled")] * 35
    for name, raw_ids in groups.items():
        for raw in raw_ids:
            table[raw] = TARGET_CATEGORIES.index(name)
    return CategoryMapping(35, 8, tuple(table))


@dataclass
class Sample:
    """One training/evaluation item: ground truth plus its masked variants."""

    image: torch.Tensor          # [3, H, W] in [-1, 1]
    labels: torch.Tensor         # [H, W] int64
    mask: torch.Tensor           # [H, W] float {0, 1}
    masked_image: torch.Tensor   # [3, H, W], hole filled
    masked_labels: torch.Tensor  # [C, H, W] one-hot, all-zero inside hole
    name: str = ""


def remap_labels(raw: torch.Tensor, mapping: CategoryMapping) -> torch.Tensor:
    """Apply the category table per pixel; raw ids must be < source_count."""
    if raw.numel() and int(raw.max()) >= mapping.source_count:
        bad = int(raw.max())
        raise ValueError(f"raw label id {bad} is not covered by mapping (source_count={mapping.source_count})")
    if raw.numel() and int(raw.min()) < 0:
        raise ValueError(f"raw label id {int(raw.min())} is negative")
    lut = torch.as_tensor(mapping.table, dtype=torch.int64, device=raw.device)
    return lut[raw.long()]


def one_hot(labels: torch.Tensor, num_categories: int, hole: Optional[torch.Tensor] = None) -> torch.Tensor:
    """One-hot encode a label map; pixels inside `hole` become all-zero vectors."""
    if labels.dim() != 2:
        raise ValueError(f"labels must be [H, W], got shape {tuple(labels.shape)}")
    if hole is not None and hole.shape != labels.shape:
        raise ValueError(f"hole shape {tuple(hole.shape)} does not match labels {tuple(labels.shape)}")
    if labels.numel() and int(labels.max()) >= num_categories:
        raise ValueError(f"label id {int(labels.max())} >= C={num_categories}")
    enc = torch.nn.functional.one_hot(labels.long(), num_categories)
    enc = enc.permute(2, 0, 1).to(torch.float32)
    if hole is not None:
        enc = enc * (1.0 - hole.to(torch.float32))
    return enc


def generate_hole_mask(
    height: int,
    width: int,
    fraction_range: tuple[float, float] = (1 / 8, 1 / 2),
    rng: Optional[np.random.Generator] = None,
) -> torch.Tensor:
    """Draw a single axis-aligned rectangular hole.

    Each side length is uniform over [ceil(lo*dim), floor(hi*dim)] and the
    top-left corner uniform over positions that keep the rectangle in-frame.
    """
    lo, hi = fraction_range
    if not 0 < lo <= hi <= 1:
        raise ValueError(f"invalid fraction range ({lo}, {hi})")
    if rng is None:
        rng = np.random.default_rng()
    mask = torch.zeros(height, width, dtype=torch.float32)
    sides = []
    for dim in (height, width):
        low, high = int(np.ceil(lo * dim)), int(np.floor(hi * dim))
        if low > high:
            raise ValueError(f"degenerate side range [{low}, {high}] for dimension {dim}")
        sides.append(int(rng.integers(low, high + 1)))
    h, w = sides
    top = int(rng.integers(0, height - h + 1))
    left = int(rng.integers(0, width - w + 1))
    mask[top:top + h, left:left + w] = 1.0
    return mask


def apply_hole(image: torch.Tensor, mask: torch.Tensor, fill: float = 0.0) -> torch.Tensor:
    """Replace pixels under the mask with a constant fill value."""
    if image.shape[-2:] != mask.shape:
        raise ValueError(f"image {tuple(image.shape)} and mask {tuple(mask.shape)} disagree")
    if not -1.0 <= fill <= 1.0:
        raise ValueError(f"fill {fill} outside [-1, 1]")
    return image * (1.0 - mask) + fill * mask


def mask_bbox(mask: torch.Tensor) -> Optional[tuple[int, int, int, int]]:
    """Tight bounding box (top, left, height, width) of the hole, None if empty."""
    ys, xs = torch.nonzero(mask > 0.5, as_tuple=True)
    if ys.numel() == 0:
        return None
    top, left = int(ys.min()), int(xs.min())
    return top, left, int(ys.max()) - top + 1, int(xs.max()) - left + 1


def is_single_rectangle(mask: torch.Tensor) -> bool:
    """True when the mask's hole region is exactly one filled rectangle."""
    box = mask_bbox(mask)
    if box is None:
        return False
    top, left, h, w = box
    region = mask[top:top + h, left:left + w]
    return bool((region > 0.5).all()) and float(mask.sum()) == float(h * w)


def make_sample(image: torch.Tensor, labels: torch.Tensor, num_categories: int,
                mask: torch.Tensor, fill: float = 0.0, name: str = "") -> Sample:
    return Sample(
        image=image,
        labels=labels,
        mask=mask,
        masked_image=apply_hole(image, mask, fill),
        masked_labels=one_hot(labels, num_categories, hole=mask),
        name=name,
    )


# ---------------------------------------------------------------------------
# File I/O

def to_display(image: torch.Tensor) -> np.ndarray:
    """[-1, 1] tensor [3, H, W] -> uint8 array [H, W, 3]."""
    arr = image.detach().cpu().numpy().transpose(1, 2, 0)
    return np.clip(np.rint((arr + 1.0) / 2.0 * 255.0), 0, 255).astype(np.uint8)


def from_display(arr: np.ndarray) -> torch.Tensor:
    """uint8 array [H, W, 3] -> [-1, 1] tensor [3, H, W]."""
    t = torch.from_numpy(np.asarray(arr).astype(np.float32)) / 127.5 - 1.0
    return t.permute(2, 0, 1)


def load_image(path: Path, size: Optional[int] = None) -> torch.Tensor:
    try:
        with PILImage.open(path) as img:
            img = img.convert("RGB")
            if size is not None and img.size != (size, size):
                img = img.resize((size, size), PILImage.BILINEAR)
            arr = np.asarray(img, dtype=np.uint8)
    except OSError as e:
        raise OSError(f"cannot read image file: {path}") from e
    return from_display(arr)


def load_labels(path: Path, size: Optional[int] = None) -> torch.Tensor:
    try:
        with PILImage.open(path) as img:
            img = img.convert("L")
            if size is not None and img.size != (size, size):
                img = img.resize((size, size), PILImage.NEAREST)
            arr = np.asarray(img, dtype=np.uint8)
    except OSError as e:
        raise OSError(f"cannot read label file: {path}") from e
    return torch.from_numpy(arr.astype(np.int64))


def save_image(image: torch.Tensor, path: Path) -> None:
    PILImage.fromarray(to_display(image)).save(path)


def save_labels_png(labels: torch.Tensor, path: Path) -> None:
    PILImage.fromarray(labels.cpu().numpy().astype(np.uint8), mode="L").save(path)


def save_mask_png(mask: torch.Tensor, path: Path) -> None:
    arr = (mask.cpu().numpy() > 0.5).astype(np.uint8) * 255  # 255 = hole
    PILImage.fromarray(arr, mode="L").save(path)


def load_mask_png(path: Path) -> torch.Tensor:
    try:
        with PILImage.open(path) as img:
            arr = np.asarray(img.convert("L"))
    except OSError as e:
        raise OSError(f"cannot read mask file: {path}") from e
    return torch.from_numpy((arr > 127).astype(np.float32))


def labels_to_color(labels: torch.Tensor, palette: Sequence[tuple[int, int, int]] = PALETTE_8) -> np.ndarray:
    lut = np.asarray(palette, dtype=np.uint8)
    return lut[labels.cpu().numpy()]


def save_labels_color_png(labels: torch.Tensor, path: Path,
                          palette: Sequence[tuple[int, int, int]] = PALETTE_8) -> None:
    PILImage.fromarray(labels_to_color(labels, palette)).save(path)


# ---------------------------------------------------------------------------
# Dataset

def _item_seed(base_seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{base_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class InpaintDataset:
    """Paired image/label directory dataset with per-item hole masks.

    Layout: `<root>/<split>/images/<name>.(png|jpg)` paired with
    `<root>/<split>/labels/<name>.png` (single-channel raw category ids).

    Train split draws a fresh mask from the shared `rng` on every access, so
    masks change across epochs; test split derives a fixed per-item seed from
    `seed` and the item name, giving bit-identical masks on every pass.
    """

    def __init__(
        self,
        root: Path,
        split: str,
        mapping: CategoryMapping,
        image_size: int = 256,
        rng: Optional[np.random.Generator] = None,
        seed: int = 0,
        hole_fraction: tuple[float, float] = (1 / 8, 1 / 2),
        fill: float = 0.0,
    ):
        if split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {split!r}")
        self.root = Path(root)
        self.split = split
        self.mapping = mapping
        self.image_size = image_size
        self.seed = seed
        self.hole_fraction = hole_fraction
        self.fill = fill
        self.rng = rng if rng is not None else np.random.default_rng(seed)

        image_dir = self.root / split / "images"
        label_dir = self.root / split / "labels"
        if not image_dir.is_dir():
            raise OSError(f"missing image directory: {image_dir}")
        self.items: list[tuple[Path, Path]] = []
        for img_path in sorted(p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS):
            label_path = label_dir / (img_path.stem + ".png")
            if not label_path.exists():
                warnings.warn(f"skipping {img_path.name}: no label pair at {label_path}")
                continue
            self.items.append((img_path, label_path))

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, index: int) -> Sample:
        img_path, label_path = self.items[index]
        image = load_image(img_path, self.image_size)
        raw = load_labels(label_path, self.image_size)
        labels = remap_labels(raw, self.mapping)
        if self.split == "test":
            item_rng = np.random.default_rng(_item_seed(self.seed, img_path.stem))
            mask = generate_hole_mask(self.image_size, self.image_size, self.hole_fraction, item_rng)
        else:
            mask = generate_hole_mask(self.image_size, self.image_size, self.hole_fraction, self.rng)
        return make_sample(image, labels, self.mapping.target_count, mask, self.fill, name=img_path.stem)

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    def rng_state(self) -> dict:
        return self.rng.bit_generator.state

    def set_rng_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state


class ListDataset:
    """In-memory dataset over precomputed samples, for overfit and smoke runs."""

    split = "train"

    def __init__(self, samples: Sequence[Sample], seed: int = 0):
        self.samples = list(samples)
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, index: int) -> Sample:
        return self.samples[index]

    def rng_state(self) -> dict:
        return self.rng.bit_generator.state

    def set_rng_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state


# ---------------------------------------------------------------------------
# Synthetic street scenes for demos, smoke runs and tests

def make_synthetic_scene(size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Generate a toy street scene: (uint8 image [H, W, 3], uint8 labels [H, W]).

    Labels use the 8-category target ids directly; image colors follow the
    palette with mild deterministic shading so label->texture is learnable.
    """
    h = w = size
    labels = np.full((h, w), TARGET_CATEGORIES.index("unlabeled"), dtype=np.uint8)
    horizon = int(h * rng.uniform(0.35, 0.5))
    road_top = int(h * rng.uniform(0.6, 0.75))
    labels[:horizon] = TARGET_CATEGORIES.index("sky")
    labels[horizon:road_top] = TARGET_CATEGORIES.index("building")
    labels[road_top:] = TARGET_CATEGORIES.index("road")

    # vegetation strip on one side of the building band
    veg_w = int(w * rng.uniform(0.1, 0.25))
    if rng.integers(0, 2):
        labels[horizon:road_top, :veg_w] = TARGET_CATEGORIES.index("vegetation")
    else:
        labels[horizon:road_top, -veg_w:] = TARGET_CATEGORIES.index("vegetation")

    # one or two vehicles on the road
    for _ in range(int(rng.integers(1, 3))):
        vh = int(h * rng.uniform(0.08, 0.15))
        vw = int(w * rng.uniform(0.12, 0.25))
        top = int(rng.integers(road_top - vh // 2, h - vh))
        left = int(rng.integers(0, w - vw))
        labels[top:top + vh, left:left + vw] = TARGET_CATEGORIES.index("vehicle")

    # occasional sign post
    if rng.integers(0, 2):
        px = int(rng.integers(w // 8, w - w // 8))
        labels[horizon - h // 10:road_top, px:px + max(1, w // 64)] = TARGET_CATEGORIES.index("sign")

    base = np.asarray(PALETTE_8, dtype=np.float32)
    image = base[labels]
    shade = np.linspace(-20, 20, h, dtype=np.float32)[:, None, None]
    image = image + shade + rng.normal(0, 4, size=image.shape).astype(np.float32)
    return np.clip(image, 0, 255).astype(np.uint8), labels


def write_demo_dataset(root: Path, n_train: int, n_test: int, size: int = 64, seed: int = 0) -> None:
    """Write a synthetic dataset in the standard directory layout."""
    rng = np.random.default_rng(seed)
    for split, count in (("train", n_train), ("test", n_test)):
        img_dir = Path(root) / split / "images"
        lab_dir = Path(root) / split / "labels"
        img_dir.mkdir(parents=True, exist_ok=True)
        lab_dir.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            image, labels = make_synthetic_scene(size, rng)
            name = f"scene_{i:04d}"
            PILImage.fromarray(image).save(img_dir / f"{name}.png")
            PILImage.fromarray(labels, mode="L").save(lab_dir / f"{name}.png")
