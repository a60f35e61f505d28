"""Image quality metrics: l1 / l2 error, SSIM and PSNR.

All metrics operate in 8-bit display space (values in [0, 255]); use
`data.to_display` to convert model-space images first. l1/l2 are reported in
two forms: the canonical per-pixel mean, and a "table scale" variant
multiplied by the 256 image rows of the standard protocol, whose magnitude is
comparable with published full-protocol numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image as PILImage
from scipy.signal import correlate2d

PSNR_CAP_DB = 100.0
TABLE_SCALE = 256  # rows of the 256x256 protocol
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # ITU-R 601


@dataclass
class MetricReport:
    l1: float
    l2: float
    ssim: float
    psnr: float
    n_images: int
    l1_table: float = 0.0
    l2_table: float = 0.0
    unpaired: list[str] = field(default_factory=list)
    per_image: list[tuple[str, dict]] = field(default_factory=list)


def _paired(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    return p, g


def l1_error(pred, gt, mask: Optional[np.ndarray] = None) -> float:
    """Mean absolute difference in 8-bit units (over `mask` pixels if given)."""
    p, g = _paired(pred, gt)
    diff = np.abs(p - g)
    return float(_region_mean(diff, mask))


def l2_error(pred, gt, mask: Optional[np.ndarray] = None) -> float:
    """Mean squared difference in 8-bit units."""
    p, g = _paired(pred, gt)
    diff = (p - g) ** 2
    return float(_region_mean(diff, mask))


def _region_mean(values: np.ndarray, mask: Optional[np.ndarray]) -> float:
    if mask is None:
        return float(values.mean())
    m = np.asarray(mask, dtype=bool)
    if m.shape != values.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match image {values.shape[:2]}")
    if not m.any():
        raise ValueError("empty mask region")
    region = values[m] if values.ndim == 2 else values[m, :]
    return float(region.mean())


def psnr(pred, gt, mask: Optional[np.ndarray] = None) -> float:
    """10 log10(255^2 / MSE) in dB, capped at 100 for identical inputs."""
    mse = l2_error(pred, gt, mask)
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(255.0 ** 2 / mse)))


def _luma(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 3:
        r, g, b = LUMA_WEIGHTS
        return r * arr[..., 0] + g * arr[..., 1] + b * arr[..., 2]
    raise ValueError(f"expected [H, W] or [H, W, 3], got {arr.shape}")


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(coords[:, None] ** 2 + coords[None, :] ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def ssim(pred, gt) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5) on the luma."""
    p, g = _paired(pred, gt)
    x = _luma(p)
    y = _luma(g)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    w = _gaussian_window()
    c1 = (SSIM_K1 * 255.0) ** 2
    c2 = (SSIM_K2 * 255.0) ** 2
    mu_x = correlate2d(x, w, mode="valid")
    mu_y = correlate2d(y, w, mode="valid")
    var_x = correlate2d(x * x, w, mode="valid") - mu_x ** 2
    var_y = correlate2d(y * y, w, mode="valid") - mu_y ** 2
    cov = correlate2d(x * y, w, mode="valid") - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float((num / den).mean())


def _load_display(path: Path) -> np.ndarray:
    try:
        with PILImage.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except OSError as e:
        raise OSError(f"cannot read image file: {path}") from e


def evaluate(pred_dir: Path, gt_dir: Path, mask_dir: Optional[Path] = None,
             hole_only: bool = False) -> MetricReport:
    """Average per-image metrics over same-named file pairs.

    Unpaired files on either side are listed in the report and excluded from
    the averages. With `hole_only`, l1/l2/psnr are restricted to the hole
    pixels of the matching mask PNG (255 = hole); SSIM stays full-frame since
    its sliding window is not defined over an arbitrary region.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    if hole_only and mask_dir is None:
        raise ValueError("hole_only evaluation requires mask_dir")
    preds = {p.stem: p for p in sorted(pred_dir.iterdir()) if p.suffix.lower() in (".png", ".jpg", ".jpeg")}
    gts = {p.stem: p for p in sorted(gt_dir.iterdir()) if p.suffix.lower() in (".png", ".jpg", ".jpeg")}
    names = sorted(preds.keys() & gts.keys())
    unpaired = sorted(preds.keys() ^ gts.keys())

    per_image = []
    for name in names:
        pred = _load_display(preds[name])
        gt = _load_display(gts[name])
        mask = None
        if hole_only:
            mask_path = Path(mask_dir) / f"{name}.png"
            if not mask_path.exists():
                unpaired.append(f"{name} (missing mask)")
                continue
            with PILImage.open(mask_path) as m:
                mask = np.asarray(m.convert("L")) > 127
        row = {
            "l1": l1_error(pred, gt, mask),
            "l2": l2_error(pred, gt, mask),
            "ssim": ssim(pred, gt),
            "psnr": psnr(pred, gt, mask),
        }
        per_image.append((name, row))

    n = len(per_image)
    mean = lambda key: float(np.mean([row[key] for _, row in per_image])) if n else 0.0
    return MetricReport(
        l1=mean("l1"),
        l2=mean("l2"),
        ssim=mean("ssim"),
        psnr=mean("psnr"),
        n_images=n,
        l1_table=mean("l1") * TABLE_SCALE,
        l2_table=mean("l2") * TABLE_SCALE,
        unpaired=unpaired,
        per_image=per_image,
    )


def render_report(report: MetricReport) -> str:
    """Key-value text rendering: one block per image plus the aggregate block."""
    lines = []
    for name, row in report.per_image:
        lines.append(f"image {name}")
        for key in ("l1", "l2", "ssim", "psnr"):
            lines.append(f"  {key} {row[key]:.6f}")
    lines.append("aggregate")
    lines.append(f"  n_images {report.n_images}")
    for key in ("l1", "l2", "ssim", "psnr"):
        lines.append(f"  {key} {getattr(report, key):.6f}")
    lines.append(f"  l1_table_scale {report.l1_table:.4f}")
    lines.append(f"  l2_table_scale {report.l2_table:.4f}")
    if report.unpaired:
        lines.append("unpaired")
        for name in report.unpaired:
            lines.append(f"  {name}")
    return "\n".join(lines) + "\n"
