"""Model-based demosaicing used as the initial estimate fed to PDNet.

``bilinear`` is plain normalised-convolution interpolation. ``residual-refine``
is a residual-interpolation scheme: colour differences
are smoother than the colours themselves, so interpolating R-G / B-G (and
G-R / G-B) and adding back the guide channel recovers edges that bilinear
interpolation blurs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate

from .cfa import CfaFrame, RgbImage, channel_masks

# Same-colour neighbour stencils. Weights are renormalised by the number of
# available samples, so border pixels average only the neighbours that exist.
_K_G = np.array([[0.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 0.0]])
_K_RB = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]])

METHODS = ("bilinear", "residual-refine")


@dataclass(frozen=True)
class DemosaicMethod:
    identifier: str = "bilinear"
    iterations: int = 2

    def __post_init__(self):
        if self.identifier not in METHODS:
            raise ValueError(f"unknown demosaic method {self.identifier!r}; expected one of {METHODS}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")

    def __call__(self, cfa: CfaFrame) -> RgbImage:
        if self.identifier == "bilinear":
            return bilinear_demosaic(cfa)
        return residual_refine_demosaic(cfa, self.iterations)


def _interp(values: np.ndarray, mask: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Fill unsampled pixels with the weighted mean of sampled neighbours."""
    num = correlate(np.where(mask, values, 0.0), kernel, mode="constant")
    den = correlate(mask.astype(np.float64), kernel, mode="constant")
    out = num / den
    return np.where(mask, values, out)


def bilinear_demosaic(cfa: CfaFrame) -> RgbImage:
    plane = cfa.plane.astype(np.float64)
    masks = channel_masks(cfa.phase, cfa.height, cfa.width)
    kernels = (_K_RB, _K_G, _K_RB)
    return RgbImage(np.stack([_interp(plane, masks[c], kernels[c]) for c in range(3)], axis=-1))


def residual_refine_demosaic(cfa: CfaFrame, iterations: int = 2) -> RgbImage:
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    plane = cfa.plane.astype(np.float64)
    mr, mg, mb = channel_masks(cfa.phase, cfa.height, cfa.width)
    rgb = bilinear_demosaic(cfa).pixels
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    for _ in range(iterations):
        # chroma from native R/B sites, guided by the current green
        r = g + _interp(plane - g, mr, _K_RB)
        b = g + _interp(plane - g, mb, _K_RB)
        # green at R/B sites from G-R / G-B differences sampled at G sites
        g_from_r = r + _interp(plane - r, mg, _K_G)
        g_from_b = b + _interp(plane - b, mg, _K_G)
        g = np.where(mg, plane, np.where(mr, g_from_r, g_from_b))
    # re-impose exact samples
    r = np.where(mr, plane, r)
    b = np.where(mb, plane, b)
    return RgbImage(np.stack([r, g, b], axis=-1))


def demosaic(cfa: CfaFrame, method: str = "bilinear", iterations: int = 2) -> RgbImage:
    return DemosaicMethod(method, iterations)(cfa)
