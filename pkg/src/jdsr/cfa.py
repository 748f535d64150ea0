"""Bayer CFA synthesis and representation.

Images are float arrays in [0, 1] with layout H x W x 3. A CFA frame is a
single plane plus the Bayer phase naming the colour at pixel (0, 0) and its
2 x 2 neighbours.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor
from .seeding import derive_rng

PHASES = ("RGGB", "GRBG", "GBRG", "BGGR")
_CHANNEL = {"R": 0, "G": 1, "B": 2}


class CfaError(ValueError):
    pass


@dataclass
class RgbImage:
    pixels: np.ndarray  # H x W x 3

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] * px.shape[1] == 0:
            raise CfaError(f"expected a non-empty H x W x 3 image, got shape {px.shape}")
        if not np.issubdtype(px.dtype, np.floating):
            px = px.astype(np.float64)
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def planes(self) -> list[np.ndarray]:
        return [self.pixels[..., c] for c in range(3)]

    def clamped(self) -> "RgbImage":
        return RgbImage(np.clip(self.pixels, 0.0, 1.0))


@dataclass
class CfaFrame:
    plane: np.ndarray  # H x W
    phase: str = "RGGB"

    def __post_init__(self):
        if self.phase not in PHASES:
            raise CfaError(f"unknown Bayer phase {self.phase!r}; expected one of {PHASES}")
        self.plane = np.asarray(self.plane)
        if self.plane.ndim != 2:
            raise CfaError(f"CFA plane must be 2-D, got shape {self.plane.shape}")

    @property
    def height(self) -> int:
        return self.plane.shape[0]

    @property
    def width(self) -> int:
        return self.plane.shape[1]


@dataclass
class PatchBatch:
    cfa: list[CfaFrame]
    hr: list[np.ndarray]
    origins: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.cfa)


def phase_tile(phase: str) -> np.ndarray:
    """2 x 2 array of channel indices (0=R, 1=G, 2=B) for ``phase``."""
    if phase not in PHASES:
        raise CfaError(f"unknown Bayer phase {phase!r}")
    return np.array([[_CHANNEL[phase[0]], _CHANNEL[phase[1]]],
                     [_CHANNEL[phase[2]], _CHANNEL[phase[3]]]])


def tile_phase(tile: np.ndarray) -> str:
    names = "RGB"
    return "".join(names[int(v)] for v in np.asarray(tile).reshape(-1))


def channel_masks(phase: str, h: int, w: int) -> np.ndarray:
    """Boolean 3 x H x W array; mask[c, i, j] is set where pixel (i, j) samples channel c."""
    tile = phase_tile(phase)
    idx = np.tile(tile, ((h + 1) // 2, (w + 1) // 2))[:h, :w]
    return np.stack([idx == c for c in range(3)])


def mosaic(img: RgbImage, phase: str = "RGGB") -> CfaFrame:
    if img.height % 2 or img.width % 2:
        raise CfaError(f"mosaic needs even dimensions, got {img.height}x{img.width}")
    masks = channel_masks(phase, img.height, img.width)
    px = img.pixels
    plane = np.where(masks[0], px[..., 0], np.where(masks[1], px[..., 1], px[..., 2]))
    return CfaFrame(plane, phase)


def expand_three_channel(cfa: CfaFrame, dtype=None) -> Tensor:
    """Zero-padded three-channel representation, shape (1, 3, H, W)."""
    masks = channel_masks(cfa.phase, cfa.height, cfa.width)
    planes = np.where(masks, cfa.plane[None], 0).astype(dtype or cfa.plane.dtype)
    return Tensor(planes[None], dtype=planes.dtype)


def collapse_one_channel(cfa: CfaFrame, dtype=None) -> Tensor:
    """The raw mosaic as a single-channel image, shape (1, 1, H, W)."""
    plane = cfa.plane.astype(dtype or cfa.plane.dtype)
    return Tensor(plane[None, None], dtype=plane.dtype)


# -- bicubic resampling --------------------------------------------------------

def cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    inner = (a + 2) * ax3 - (a + 3) * ax2 + 1
    outer = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, inner, np.where(ax < 2, outer, 0.0))


def _resize_matrix(n_in: int, n_out: int, antialias: bool, a: float) -> np.ndarray:
    scale = n_out / n_in
    stretch = scale if (antialias and scale < 1) else 1.0
    width = 4.0 / stretch
    taps = int(math.ceil(width)) + 2
    centres = (np.arange(n_out) + 0.5) / scale - 0.5
    left = np.floor(centres - width / 2).astype(int)
    idx = left[:, None] + np.arange(taps)[None, :]
    wts = stretch * cubic_kernel(stretch * (centres[:, None] - idx), a)
    wts /= wts.sum(axis=1, keepdims=True)
    mat = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), taps)
    np.add.at(mat, (rows, np.clip(idx, 0, n_in - 1).reshape(-1)), wts.reshape(-1))
    return mat


def bicubic_resize(img: RgbImage, out_h: int, out_w: int, antialias: bool = True,
                   a: float = -0.5, clamp: bool = True) -> RgbImage:
    """Separable bicubic resampling with edge clamping.

    When shrinking with ``antialias`` the kernel is widened by the scale
    factor (imresize convention).
    """
    mh = _resize_matrix(img.height, out_h, antialias, a)
    mw = _resize_matrix(img.width, out_w, antialias, a)
    px = img.pixels.astype(np.float64)
    out = np.einsum("oh,hwc->owc", mh, px)
    out = np.einsum("pw,owc->opc", mw, out)
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return RgbImage(out)


def bicubic_downsample(img: RgbImage, factor: int, antialias: bool = True) -> RgbImage:
    if factor not in (2, 3, 4):
        raise CfaError(f"factor must be 2, 3 or 4, got {factor}")
    if img.height % factor or img.width % factor:
        raise CfaError(f"{img.height}x{img.width} image is not divisible by {factor}")
    return bicubic_resize(img, img.height // factor, img.width // factor, antialias=antialias)


def crop_to_multiple(img: RgbImage, m: int) -> RgbImage:
    """Centre-crop so both dimensions are multiples of ``m``."""
    h, w = img.height - img.height % m, img.width - img.width % m
    if h == 0 or w == 0:
        raise CfaError(f"image {img.height}x{img.width} is smaller than {m}")
    top, left = (img.height - h) // 2, (img.width - w) // 2
    return RgbImage(img.pixels[top:top + h, left:left + w])


# -- training pairs ------------------------------------------------------------

@dataclass
class PairedImage:
    """HR image cropped to a multiple of 2*factor with its LR CFA mosaic."""

    hr: RgbImage
    cfa: CfaFrame
    factor: int

    @classmethod
    def from_hr(cls, hr: RgbImage, factor: int, phase: str = "RGGB") -> "PairedImage":
        hr = crop_to_multiple(hr, 2 * factor)
        lr = bicubic_downsample(hr, factor)
        return cls(hr, mosaic(lr, phase), factor)


def sample_patches(hr, factor: int, count: int, seed: int, patch: int = 48,
                   phase: str = "RGGB") -> PatchBatch:
    """Random aligned (CFA, HR) crops.

    CFA origins are even so the Bayer phase of every patch equals the
    frame's; the HR crop starts at ``factor`` times the CFA origin.
    """
    pair = hr if isinstance(hr, PairedImage) else PairedImage.from_hr(hr, factor, phase)
    if pair.factor != factor:
        raise CfaError(f"paired image was built for factor {pair.factor}, not {factor}")
    cfa = pair.cfa
    if cfa.height < patch or cfa.width < patch:
        raise CfaError(f"LR image {cfa.height}x{cfa.width} is smaller than patch {patch}")
    if patch % 2:
        raise CfaError("patch size must be even")
    rng = derive_rng(seed, "patches")
    rows = 2 * rng.integers(0, (cfa.height - patch) // 2 + 1, size=count)
    cols = 2 * rng.integers(0, (cfa.width - patch) // 2 + 1, size=count)
    out = PatchBatch([], [], [])
    hp = patch * factor
    for r, c in zip(rows.tolist(), cols.tolist()):
        out.cfa.append(CfaFrame(cfa.plane[r:r + patch, c:c + patch].copy(), cfa.phase))
        out.hr.append(pair.hr.pixels[factor * r:factor * r + hp, factor * c:factor * c + hp].copy())
        out.origins.append((r, c))
    return out


# -- geometric augmentation ----------------------------------------------------
# Transform k in 0..7: optional horizontal flip (k >= 4) followed by k % 4
# counter-clockwise quarter turns.

def dihedral(arr: np.ndarray, k: int) -> np.ndarray:
    if k >= 4:
        arr = arr[:, ::-1]
    return np.ascontiguousarray(np.rot90(arr, k % 4, axes=(0, 1)))


def dihedral_inverse(k: int) -> int:
    return k if k >= 4 else (4 - k) % 4


def transform_frame(cfa: CfaFrame, k: int) -> CfaFrame:
    if cfa.height % 2 or cfa.width % 2:
        raise CfaError("phase relabelling needs even-sized frames")
    return CfaFrame(dihedral(cfa.plane, k), tile_phase(dihedral(phase_tile(cfa.phase), k)))


def augment(batch: PatchBatch, seed: int, choices: Sequence[int] | None = None) -> PatchBatch:
    """Apply one random dihedral transform per pair, identically to CFA and HR."""
    rng = derive_rng(seed, "augment")
    ks = rng.integers(0, 8, size=len(batch)) if choices is None else np.asarray(choices)
    out = PatchBatch([], [], list(batch.origins))
    for cfa, hr, k in zip(batch.cfa, batch.hr, ks.tolist()):
        if cfa.height != cfa.width or hr.shape[0] != hr.shape[1]:
            raise CfaError("augmentation needs square patches")
        out.cfa.append(transform_frame(cfa, k))
        out.hr.append(dihedral(hr, k))
    return out
