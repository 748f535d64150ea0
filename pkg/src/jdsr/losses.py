"""Training objectives: pixel, perceptual, and (relativistic) adversarial losses.

All reductions are means over the batch. Critic scores are raw
(pre-sigmoid) discriminator outputs of shape (N,).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import DimensionError, Tensor, as_tensor
from .autodiff import checkpoint
from .autodiff import functional as F
from .nn import Conv2d, Module
from .seeding import derive_rng

DEFAULT_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    adversarial: float = 5e-3   # lambda_1
    l1: float = 1e-2            # lambda_2
    gamma: float = 1.0
    perceptual: float = 1.0
    clamp_eps: float = DEFAULT_CLAMP

    def __post_init__(self):
        if min(self.adversarial, self.l1, self.gamma, self.perceptual) < 0:
            raise ValueError("loss weights and gamma must be non-negative")
        if not 0 < self.clamp_eps < 0.5:
            raise ValueError("clamp_eps must lie in (0, 0.5)")


@dataclass
class CriticScores:
    real: Tensor
    fake: Tensor

    def __post_init__(self):
        self.real = as_tensor(self.real)
        self.fake = as_tensor(self.fake, like=self.real)
        if self.real.size == 0 or self.fake.size == 0:
            raise ValueError("real and fake score batches must be non-empty")
        self.real = F.reshape(self.real, (self.real.size,))
        self.fake = F.reshape(self.fake, (self.fake.size,))


def _check_same(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")


def l1_loss(sr: Tensor, hr) -> Tensor:
    hr = as_tensor(hr, like=sr)
    _check_same(sr, hr)
    return F.mean(F.abs(sr - hr))


def mse_loss(a: Tensor, b) -> Tensor:
    b = as_tensor(b, like=a)
    _check_same(a, b)
    return F.mean(F.square(a - b))


def perceptual_loss(sr: Tensor, hr, extractor: Callable[[Tensor], Tensor]) -> Tensor:
    """MSE between extractor features of SR and HR (HR features carry no gradient)."""
    hr = as_tensor(hr, like=sr)
    f_sr = extractor(sr)
    f_hr = extractor(hr.detach())
    if f_sr.shape != f_hr.shape:
        raise DimensionError(f"extractor produced {f_sr.shape} and {f_hr.shape}")
    return mse_loss(f_sr, f_hr.detach())


# -- adversarial ---------------------------------------------------------------

def relativistic_logits(scores: CriticScores) -> tuple[Tensor, Tensor]:
    """sigmoid(C(x_r) - mean C(x_f)) and sigmoid(C(x_f) - mean C(x_r))."""
    d_real = F.sigmoid(scores.real - F.mean(scores.fake))
    d_fake = F.sigmoid(scores.fake - F.mean(scores.real))
    return d_real, d_fake


def _safe_log(p: Tensor, eps: float) -> Tensor:
    return F.log(F.clamp(p, eps, 1 - eps))


def _safe_log1m(p: Tensor, eps: float) -> Tensor:
    return F.log(1 - F.clamp(p, eps, 1 - eps))


def d_loss_ragan(scores: CriticScores, eps: float = DEFAULT_CLAMP) -> Tensor:
    d_real, d_fake = relativistic_logits(scores)
    return -F.mean(_safe_log(d_real, eps)) - F.mean(_safe_log1m(d_fake, eps))


def g_loss_ragan(scores: CriticScores, eps: float = DEFAULT_CLAMP) -> Tensor:
    d_real, d_fake = relativistic_logits(scores)
    return -F.mean(_safe_log1m(d_real, eps)) - F.mean(_safe_log(d_fake, eps))


def g_loss_tragan(scores: CriticScores, gamma: float = 1.0, eps: float = DEFAULT_CLAMP) -> Tensor:
    """RaGAN generator loss with per-sample weights D(x_r)^gamma and (1 - D(x_f))^gamma.

    Confident (easy) samples get weights near zero, so the generator's
    gradient concentrates on the samples the critic still separates poorly.
    gamma = 0 recovers :func:`g_loss_ragan`.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    d_real, d_fake = relativistic_logits(scores)
    w_real = F.pow(F.clamp(d_real, eps, 1 - eps), gamma)
    w_fake = F.pow(1 - F.clamp(d_fake, eps, 1 - eps), gamma)
    return (-F.mean(w_real * _safe_log1m(d_real, eps))
            - F.mean(w_fake * _safe_log(d_fake, eps)))


def d_loss_standard_gan(scores: CriticScores, eps: float = DEFAULT_CLAMP) -> Tensor:
    return (-F.mean(_safe_log(F.sigmoid(scores.real), eps))
            - F.mean(_safe_log1m(F.sigmoid(scores.fake), eps)))


def g_loss_standard_gan(scores: CriticScores, eps: float = DEFAULT_CLAMP) -> Tensor:
    """Non-saturating generator loss -mean log sigmoid(C(x_f))."""
    return -F.mean(_safe_log(F.sigmoid(scores.fake), eps))


def total_generator_loss(sr: Tensor, hr, scores: CriticScores, weights: LossWeights,
                         extractor: Callable[[Tensor], Tensor], parts: dict | None = None) -> Tensor:
    """perceptual + lambda_1 * TRaGAN + lambda_2 * L1.

    ``weights.perceptual`` scales the first term (1.0 by default). When
    ``parts`` is given it receives the unweighted component values.
    """
    l_vgg = perceptual_loss(sr, hr, extractor)
    l_adv = g_loss_tragan(scores, weights.gamma, weights.clamp_eps)
    l_pix = l1_loss(sr, hr)
    if parts is not None:
        parts.update(perceptual=l_vgg.item(), adversarial=l_adv.item(), l1=l_pix.item())
    return weights.perceptual * l_vgg + weights.adversarial * l_adv + weights.l1 * l_pix


# -- feature extractors --------------------------------------------------------

def identity_extractor(x: Tensor) -> Tensor:
    return x


class ConvFeatureExtractor(Module):
    """Frozen conv stack returning the pre-activation output of conv ``layer`` (1-based).

    ``pool_after`` lists conv indices followed by 2x2 max pooling, and
    ``post_activation`` returns the ReLU output instead (the "before pooling"
    reading of the layer choice).
    """

    def __init__(self, convs: list[Conv2d], layer: int, pool_after=(), post_activation: bool = False,
                 mean=None, std=None):
        if not 1 <= layer <= len(convs):
            raise ValueError(f"layer must be in 1..{len(convs)}, got {layer}")
        self.convs = convs
        self.layer = layer
        self.pool_after = set(pool_after)
        self.post_activation = post_activation
        self.mean = None if mean is None else np.asarray(mean).reshape(1, 3, 1, 1)
        self.std = None if std is None else np.asarray(std).reshape(1, 3, 1, 1)
        for p in self.parameters():
            p.requires_grad = False

    def forward(self, x: Tensor) -> Tensor:
        if self.mean is not None:
            x = (x - self.mean.astype(x.dtype)) * (1.0 / self.std).astype(x.dtype)
        for k, conv in enumerate(self.convs[:self.layer], start=1):
            x = conv(x)
            if k == self.layer:
                return F.relu(x) if self.post_activation else x
            x = F.relu(x)
            if k in self.pool_after:
                x = F.max_pool2d(x, 2)
        raise AssertionError("unreachable")

    def to_dtype(self, dtype):
        super().to_dtype(dtype)
        for p in self.parameters():
            p.requires_grad = False
        return self


def random_conv_extractor(seed: int = 0, layer: int = 4, widths=(16, 16, 32, 32),
                          dtype=np.float32) -> ConvFeatureExtractor:
    """Seeded 4-layer random conv extractor with a pool after the second conv.

    Weights use the ReLU gain so feature energy stays comparable to the
    input's; with the smaller default init the deep features (and hence the
    perceptual term) would shrink by orders of magnitude.
    """
    rng = derive_rng(seed, "extractor")
    chans = (3,) + tuple(widths)
    convs = [Conv2d(chans[i], chans[i + 1], 3, rng=rng, dtype=dtype, init_slope=0.0) for i in range(len(widths))]
    return ConvFeatureExtractor(convs, layer, pool_after=(2,))


VGG19_PLAN = (64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M",
              512, 512, 512, 512, "M", 512, 512, 512, 512, "M")
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def vgg19_extractor(path, layer: int = 4, post_activation: bool = False,
                    dtype=np.float32) -> ConvFeatureExtractor:
    """Load exported VGG19 conv weights from a tensor container.

    Names follow the torchvision layout ``features.<i>.weight`` /
    ``features.<i>.bias``; only the convs up to ``layer`` are required.
    """
    arrays = checkpoint.load(path)
    convs, pools = [], []
    idx, cin = 0, 3
    for item in VGG19_PLAN:
        if item == "M":
            pools.append(len(convs))
            idx += 1
            continue
        if len(convs) < layer:
            w = arrays.get(f"features.{idx}.weight")
            b = arrays.get(f"features.{idx}.bias")
            if w is None or b is None:
                raise KeyError(f"missing features.{idx} weights for conv {len(convs) + 1}")
            if w.shape != (item, cin, 3, 3):
                raise ValueError(f"features.{idx}.weight has shape {w.shape}, expected {(item, cin, 3, 3)}")
            conv = Conv2d(cin, item, 3, dtype=dtype)
            conv.weight.data = w.astype(dtype)
            conv.bias.data = b.astype(dtype)
            convs.append(conv)
        cin = item
        idx += 2  # conv + relu
    return ConvFeatureExtractor(convs, layer, pool_after=pools, post_activation=post_activation,
                                mean=IMAGENET_MEAN, std=IMAGENET_STD)
