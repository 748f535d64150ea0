import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jdsr.cfa import PHASES, CfaFrame, RgbImage, channel_masks, mosaic
from jdsr.demosaic import DemosaicMethod, bilinear_demosaic, demosaic, residual_refine_demosaic
from jdsr.imageio import synthetic_image
from jdsr.metrics import psnr


def correlated_ramp(seed: int, n: int = 64) -> RgbImage:
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:n, 0:n] / n
    a, b = rng.uniform(0.2, 0.5, 2)
    tint, off = rng.uniform(0.6, 1.0, 3), rng.uniform(0, 0.2, 3)
    return RgbImage(np.clip((a * x + b * y)[..., None] * tint + off, 0, 1))


CORPUS = ([correlated_ramp(s) for s in range(3)]
          + [synthetic_image(64, s, "texture") for s in range(3)]
          + [synthetic_image(64, s, "smooth") for s in range(3)])


@pytest.mark.parametrize("phase", PHASES)
@pytest.mark.parametrize("method", ["bilinear", "residual-refine"])
def test_constant_round_trip_is_exact(phase, method):
    img = RgbImage(np.full((10, 12, 3), 0.6))
    for iters in (1, 2, 5):
        out = demosaic(mosaic(img, phase), method, iters)
        assert np.array_equal(out.pixels, img.pixels)


def test_bilinear_green_at_red_site():
    img = np.zeros((6, 6, 3))
    img[..., 0], img[..., 1], img[..., 2] = 0.1, 0.2, 0.3
    cfa = mosaic(RgbImage(img), "RGGB")
    i, j = 2, 2  # interior R site
    oracle = np.mean([cfa.plane[i - 1, j], cfa.plane[i + 1, j], cfa.plane[i, j - 1], cfa.plane[i, j + 1]])
    assert oracle == pytest.approx(0.2, abs=1e-15)
    assert bilinear_demosaic(cfa).pixels[i, j, 1] == pytest.approx(oracle, abs=1e-15)


def test_bilinear_interior_stencils(rng):
    cfa = CfaFrame(rng.uniform(size=(8, 8)), "RGGB")
    out = bilinear_demosaic(cfa).pixels
    p = cfa.plane
    # R at a B site (odd, odd): four diagonal R samples
    assert out[3, 3, 0] == pytest.approx((p[2, 2] + p[2, 4] + p[4, 2] + p[4, 4]) / 4)
    # R at a G site on an R row (even, odd): two horizontal R samples
    assert out[2, 3, 0] == pytest.approx((p[2, 2] + p[2, 4]) / 2)
    # B at a G site on an R row (even, odd): two vertical B samples
    assert out[2, 3, 2] == pytest.approx((p[1, 3] + p[3, 3]) / 2)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), phase=st.sampled_from(PHASES),
       method=st.sampled_from(["bilinear", "residual-refine"]))
def test_data_consistency_at_sample_sites(seed, phase, method):
    cfa = CfaFrame(np.random.default_rng(seed).uniform(size=(10, 8)), phase)
    out = DemosaicMethod(method)(cfa).pixels
    masks = channel_masks(phase, 10, 8)
    for c in range(3):
        assert np.array_equal(out[..., c][masks[c]], cfa.plane[masks[c]])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_bilinear_range_is_convex(seed):
    cfa = CfaFrame(np.random.default_rng(seed).uniform(0.2, 0.7, size=(8, 10)))
    out = bilinear_demosaic(cfa).pixels
    assert out.min() >= cfa.plane.min() - 1e-15 and out.max() <= cfa.plane.max() + 1e-15


@pytest.mark.parametrize("iters", [1, 2, 3])
def test_grey_ramp_residuals_vanish(iters):
    n = 32
    y, x = np.mgrid[0:n, 0:n] / n
    ramp = 0.2 + 0.3 * x + 0.2 * y
    img = RgbImage(np.repeat(ramp[..., None], 3, axis=2))
    cfa = mosaic(img)
    bil = bilinear_demosaic(cfa).pixels
    out = residual_refine_demosaic(cfa, iters).pixels
    m = 2 * iters + 2  # border effects move inward one stencil radius per pass
    core = (slice(m, -m), slice(m, -m))
    np.testing.assert_allclose(out[core][..., 0], out[core][..., 1], atol=1e-12)
    np.testing.assert_allclose(out[core][..., 2], out[core][..., 1], atol=1e-12)
    np.testing.assert_allclose(out[core], bil[core], atol=1e-12)
    g_sites = channel_masks("RGGB", n, n)[1]
    assert np.array_equal(out[..., 1][g_sites], bil[..., 1][g_sites])


@pytest.mark.parametrize("idx", range(len(CORPUS)))
def test_refinement_updates_shrink(idx):
    cfa = mosaic(CORPUS[idx])
    prev = bilinear_demosaic(cfa).pixels
    deltas = []
    for k in range(1, 5):
        cur = residual_refine_demosaic(cfa, k).pixels
        deltas.append(np.abs(cur - prev).max())
        prev = cur
    assert all(b <= a for a, b in zip(deltas, deltas[1:])), deltas


@pytest.mark.parametrize("idx", range(len(CORPUS)))
def test_refine_beats_bilinear_on_corpus(idx):
    img = CORPUS[idx]
    cfa = mosaic(img)
    assert psnr(residual_refine_demosaic(cfa, 2), img) >= psnr(bilinear_demosaic(cfa), img)


def test_method_validation():
    with pytest.raises(ValueError):
        DemosaicMethod("ahd")
    with pytest.raises(ValueError):
        DemosaicMethod("residual-refine", 0)
