"""Full-reference quality metrics (PSNR, SSIM) and the Perceptual Index."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class MetricScores:
    psnr: float
    ssim: float
    ma: Optional[float] = None
    niqe: Optional[float] = None

    @property
    def pi(self) -> Optional[float]:
        if self.ma is None or self.niqe is None:
            return None
        return pi_score(self.ma, self.niqe)


def _as_array(img) -> np.ndarray:
    return np.asarray(getattr(img, "pixels", img), dtype=np.float64)


def crop_border(img: np.ndarray, border: int) -> np.ndarray:
    if border <= 0:
        return img
    return img[border:-border, border:-border]


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); identical inputs give +inf."""
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma on [0, 1] input, studio range (16-235)/255."""
    img = _as_array(img)
    return (16.0 + 65.481 * img[..., 0] + 128.553 * img[..., 1] + 24.966 * img[..., 2]) / 255.0


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    y = correlate1d(correlate1d(x, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return y[r:-r, r:-r]


def ssim_map(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> np.ndarray:
    g = _gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return num / den


def ssim(a, b, peak: float = 1.0, luminance: bool = False) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5) over the valid region.

    Colour inputs are scored per channel and averaged, or on BT.601 luma
    when ``luminance`` is set.
    """
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape[:2]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    if luminance and a.ndim == 3:
        a, b = rgb_to_y(a), rgb_to_y(b)
    if a.ndim == 2:
        return float(ssim_map(a, b, peak).mean())
    return float(np.mean([ssim_map(a[..., c], b[..., c], peak).mean() for c in range(a.shape[2])]))


def pi_score(ma: float, niqe: float) -> float:
    """Perceptual Index ((10 - MA) + NIQE) / 2; lower is better."""
    if not (math.isfinite(ma) and math.isfinite(niqe)):
        raise ValueError("MA and NIQE scores must be finite")
    return ((10 - ma) + niqe) / 2


def read_score_sidecar(path) -> dict[str, tuple[float, float]]:
    """Parse an ``image_id,ma,niqe`` CSV into {image_id: (ma, niqe)}."""
    path = Path(path)
    out = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"image_id", "ma", "niqe"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header image_id,ma,niqe")
        for row in reader:
            out[row["image_id"]] = (float(row["ma"]), float(row["niqe"]))
    return out
