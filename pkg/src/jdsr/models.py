"""Generator (PDNet + RDSEN) and the VGG-style critic."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .autodiff import DimensionError, Tensor, no_grad
from .autodiff import functional as F
from .cfa import CfaFrame, expand_three_channel
from .demosaic import DemosaicMethod
from .nn import BatchNorm2d, Conv2d, Linear, Module
from .seeding import derive_rng

LONG_SKIP = ("before_conv", "after_conv")
ACTIVATION_POSITIONS = ("after_conv", "none")


@dataclass(frozen=True)
class NetworkConfig:
    num_blocks: int = 16
    modules_per_block: int = 6
    channels: int = 64
    reduction: int = 16
    scale: int = 4
    pdnet_channels: int = 32
    use_pdnet: bool = True
    long_skip: str = "before_conv"
    activation_position: str = "after_conv"
    disc_channels: int = 64
    disc_dense: int = 1024
    disc_batch_norm: bool = True

    def __post_init__(self):
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3 or 4, got {self.scale}")
        if min(self.num_blocks, self.modules_per_block, self.channels, self.reduction) < 1:
            raise ValueError("block counts, channels and reduction must be >= 1")
        if self.channels % self.reduction:
            raise ValueError(f"channels {self.channels} not divisible by reduction {self.reduction}")
        if self.long_skip not in LONG_SKIP:
            raise ValueError(f"long_skip must be one of {LONG_SKIP}")
        if self.activation_position not in ACTIVATION_POSITIONS:
            raise ValueError(f"activation_position must be one of {ACTIVATION_POSITIONS}")

    @classmethod
    def full(cls, scale: int = 4) -> "NetworkConfig":
        return cls(scale=scale)

    @classmethod
    def toy(cls, scale: int = 2, **overrides) -> "NetworkConfig":
        base = dict(num_blocks=2, modules_per_block=2, channels=8, reduction=4, scale=scale,
                    pdnet_channels=4, disc_channels=8, disc_dense=32)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **kw) -> "NetworkConfig":
        return replace(self, **kw)


def upscale_stages(scale: int) -> tuple[int, ...]:
    return (2, 2) if scale == 4 else (scale,)


class ChannelAttention(Module):
    """Squeeze (C -> C/r) and excite (C/r -> C) gating on pooled channel means."""

    def __init__(self, channels: int, reduction: int, rng, dtype=np.float32):
        self.squeeze = Conv2d(channels, channels // reduction, 1, rng=rng, dtype=dtype)
        self.excite = Conv2d(channels // reduction, channels, 1, rng=rng, dtype=dtype)

    def forward(self, u: Tensor) -> tuple[Tensor, Tensor]:
        if u.shape[1] != self.excite.weight.shape[0]:
            raise DimensionError(f"features have {u.shape[1]} channels, attention expects "
                                 f"{self.excite.weight.shape[0]}")
        z = F.global_avg_pool(u)
        s = F.sigmoid(self.excite(F.relu(self.squeeze(z))))
        return s, F.scale_channels(u, s)


def ca_forward(u: Tensor, att: ChannelAttention) -> tuple[Tensor, Tensor]:
    return att(u)


class RDSEB(Module):
    """Residual-dense squeeze-and-excitation block.

    Stage i computes U = conv(M_{i-1}) (+ReLU), gates it with channel
    attention and adds the block input: M_i = s * U + M_1. All stage outputs
    are concatenated, fused back to C channels by a 1x1 conv, and the block
    input is added once more.
    """

    def __init__(self, channels: int, n: int, reduction: int, rng,
                 activation_position: str = "after_conv", dtype=np.float32):
        self.activation_position = activation_position
        self.convs = [Conv2d(channels, channels, 3, rng=rng, dtype=dtype) for _ in range(n - 1)]
        self.attention = [ChannelAttention(channels, reduction, rng, dtype) for _ in range(n - 1)]
        self.fusion = Conv2d(n * channels, channels, 1, rng=rng, dtype=dtype)
        self.last_gates: list[np.ndarray] = []

    def forward(self, m1: Tensor) -> Tensor:
        feats = [m1]
        gates = []
        for conv, att in zip(self.convs, self.attention):
            u = conv(feats[-1])
            if self.activation_position == "after_conv":
                u = F.relu(u)
            s, u_hat = att(u)
            gates.append(s.data)
            feats.append(u_hat + m1)
        self.last_gates = gates
        fused = self.fusion(F.concat_channels(feats))
        return fused + m1


class Upsampler(Module):
    def __init__(self, channels: int, scale: int, rng, dtype=np.float32):
        self.factors = upscale_stages(scale)
        self.convs = [Conv2d(channels, r * r * channels, 3, rng=rng, dtype=dtype) for r in self.factors]

    def forward(self, x: Tensor) -> Tensor:
        for conv, r in zip(self.convs, self.factors):
            x = F.pixel_shuffle(conv(x), r)
        return x


class RDSEN(Module):
    def __init__(self, cfg: NetworkConfig, rng, dtype=np.float32):
        c = cfg.channels
        self.long_skip = cfg.long_skip
        self.head = Conv2d(3, c, 3, rng=rng, dtype=dtype)
        self.blocks = [RDSEB(c, cfg.modules_per_block, cfg.reduction, rng, cfg.activation_position, dtype)
                       for _ in range(cfg.num_blocks)]
        self.body_conv = Conv2d(c, c, 3, rng=rng, dtype=dtype)
        self.upsample = Upsampler(c, cfg.scale, rng, dtype)
        self.tail = Conv2d(c, 3, 3, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        shallow = self.head(x)
        h = shallow
        for block in self.blocks:
            h = block(h)
        if self.long_skip == "before_conv":
            h = self.body_conv(h + shallow)
        else:
            h = self.body_conv(h) + shallow
        return self.tail(self.upsample(h))


class PDNet(Module):
    """Pre-demosaicing refinement of a model-based initial estimate.

    R and B planes are shrunk 4x by strided convs and upsampled 2x; G is
    shrunk 2x. The half-resolution maps are concatenated, fused by a 1x1
    conv, upsampled back to full size and projected to a 3-channel residual
    added onto the initial demosaic.
    """

    def __init__(self, width: int, rng, dtype=np.float32):
        w = width
        self.conv_r = Conv2d(1, w, 3, stride=4, padding=1, rng=rng, dtype=dtype)
        self.up_r = Conv2d(w, 4 * w, 3, rng=rng, dtype=dtype)
        self.conv_g = Conv2d(1, w, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.conv_b = Conv2d(1, w, 3, stride=4, padding=1, rng=rng, dtype=dtype)
        self.up_b = Conv2d(w, 4 * w, 3, rng=rng, dtype=dtype)
        self.fuse = Conv2d(3 * w, w, 1, rng=rng, dtype=dtype)
        self.up = Conv2d(w, 4 * w, 3, rng=rng, dtype=dtype)
        self.proj = Conv2d(w, 3, 3, rng=rng, dtype=dtype)

    def forward(self, cfa3: Tensor, init: Tensor) -> Tensor:
        n, c, h, w = cfa3.shape
        if c != 3:
            raise DimensionError(f"PDNet expects the three-channel CFA expansion, got {c} channels")
        if h % 4 or w % 4:
            raise DimensionError(f"PDNet input {h}x{w} must be divisible by 4")
        if init.shape != cfa3.shape:
            raise DimensionError(f"initial demosaic shape {init.shape} != CFA shape {cfa3.shape}")
        r = F.pixel_shuffle(self.up_r(F.relu(self.conv_r(cfa3[:, 0:1]))), 2)
        g = F.relu(self.conv_g(cfa3[:, 1:2]))
        b = F.pixel_shuffle(self.up_b(F.relu(self.conv_b(cfa3[:, 2:3]))), 2)
        fused = F.relu(self.fuse(F.concat_channels([r, g, b])))
        residual = self.proj(F.pixel_shuffle(self.up(fused), 2))
        return init + residual


class Generator(Module):
    def __init__(self, cfg: NetworkConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        rng = derive_rng(seed, "generator")
        self.pdnet = PDNet(cfg.pdnet_channels, rng, dtype) if cfg.use_pdnet else None
        self.rdsen = RDSEN(cfg, rng, dtype)

    def forward(self, cfa3: Tensor, init: Tensor | None = None) -> Tensor:
        x = self.pdnet(cfa3, init) if self.pdnet is not None else cfa3
        return self.rdsen(x)

    @property
    def dtype(self):
        return self.rdsen.head.weight.dtype


class Discriminator(Module):
    """Strided VGG-style critic returning the raw (pre-sigmoid) score C(x)."""

    def __init__(self, cfg: NetworkConfig, input_size: int, seed: int = 0, dtype=np.float32):
        if input_size % 16:
            raise ValueError(f"discriminator input size {input_size} must be divisible by 16")
        rng = derive_rng(seed, "discriminator")
        b = cfg.disc_channels
        plan = [(3, b, 1), (b, b, 2), (b, 2 * b, 1), (2 * b, 2 * b, 2),
                (2 * b, 4 * b, 1), (4 * b, 4 * b, 2), (4 * b, 8 * b, 1), (8 * b, 8 * b, 2)]
        self.input_size = input_size
        self.convs = [Conv2d(ci, co, 3, stride=s, padding=1, rng=rng, dtype=dtype) for ci, co, s in plan]
        self.norms = ([BatchNorm2d(co, dtype=dtype) for _, co, _ in plan[1:]]
                      if cfg.disc_batch_norm else [])
        side = input_size // 16
        self.dense1 = Linear(8 * b * side * side, cfg.disc_dense, rng=rng, dtype=dtype)
        self.dense2 = Linear(cfg.disc_dense, 1, rng=rng, dtype=dtype)

    def forward(self, img: Tensor) -> Tensor:
        if img.ndim != 4 or img.shape[1] != 3 or img.shape[2:] != (self.input_size, self.input_size):
            raise DimensionError(f"discriminator expects (N, 3, {self.input_size}, {self.input_size}), "
                                 f"got {img.shape}")
        x = img
        for k, conv in enumerate(self.convs):
            x = conv(x)
            if k > 0 and self.norms:
                x = self.norms[k - 1](x)
            x = F.leaky_relu(x, 0.2)
        x = F.leaky_relu(self.dense1(F.flatten(x)), 0.2)
        return F.reshape(self.dense2(x), (img.shape[0],))


def zero_weights(module: Module) -> Module:
    for p in module.parameters():
        p.data[...] = 0
    return module


def generator_inputs(frames: Sequence[CfaFrame], method: DemosaicMethod | None = None,
                     dtype=np.float32) -> tuple[Tensor, Tensor]:
    """Stack CFA frames into the (three-channel CFA, initial demosaic) network inputs."""
    method = method or DemosaicMethod()
    cfa3 = np.concatenate([expand_three_channel(f, dtype=dtype).data for f in frames])
    init = np.stack([method(f).pixels.transpose(2, 0, 1) for f in frames]).astype(dtype)
    return Tensor(cfa3, dtype=dtype), Tensor(init, dtype=dtype)


def images_to_tensor(images: Sequence[np.ndarray], dtype=np.float32) -> Tensor:
    return Tensor(np.stack([np.asarray(im).transpose(2, 0, 1) for im in images]).astype(dtype), dtype=dtype)


def tensor_to_images(t: Tensor) -> list[np.ndarray]:
    return [np.asarray(x).transpose(1, 2, 0) for x in t.data]


def _pad_to_multiple(plane: np.ndarray, m: int) -> np.ndarray:
    """Extend bottom/right by repeating the last Bayer period, so the phase is kept."""
    h, w = plane.shape
    ph, pw = (-h) % m, (-w) % m
    if ph:
        rows = np.arange(h, h + ph)
        plane = np.concatenate([plane, plane[h - 2 + (rows - h) % 2]], axis=0)
    if pw:
        cols = np.arange(w, w + pw)
        plane = np.concatenate([plane, plane[:, w - 2 + (cols - w) % 2]], axis=1)
    return plane


def super_resolve(gen: Generator, cfa: CfaFrame, method: DemosaicMethod | None = None) -> np.ndarray:
    """Reconstruct one full CFA frame; returns an (sH, sW, 3) array clipped to [0, 1].

    Frames whose sides are not multiples of 4 are extended by whole Bayer
    periods and the output is cropped back.
    """
    if cfa.height % 2 or cfa.width % 2:
        raise DimensionError(f"CFA frame {cfa.height}x{cfa.width} must have even sides")
    s = gen.cfg.scale
    padded = CfaFrame(_pad_to_multiple(cfa.plane, 4), cfa.phase)
    with no_grad():
        cfa3, init = generator_inputs([padded], method, gen.dtype)
        out = gen(cfa3, init)
    img = out.data[0].transpose(1, 2, 0)[: s * cfa.height, : s * cfa.width]
    return np.clip(img.astype(np.float64), 0.0, 1.0)
