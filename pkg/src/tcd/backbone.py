"""Shared-weight encoder: residual stages, FPN refinement, positional encoding.

The encoder halves the spatial resolution three times and hands back the
three-scale pyramid used by the correlation and attention stages. Source and
target images go through the same parameter set (Siamese).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import ChannelAffine, Conv2d, Module, ResidualBlock
from .tensor import Tensor


@dataclass
class BackboneConfig:
    channels: tuple[int, int, int] = (64, 64, 512)
    blocks_per_stage: tuple[int, int, int] = (1, 1, 1)
    input_channels: int = 3
    reference_scale: bool = False

    def __post_init__(self):
        if self.reference_scale:
            self.channels = (64, 64, 512)

    @property
    def c1(self):
        return self.channels[0]

    @property
    def c2(self):
        return self.channels[1]

    @property
    def c3(self):
        return self.channels[2]


@dataclass
class FeaturePyramid:
    f1: Tensor  # [N, c1, H/2, W/2]
    f2: Tensor  # [N, c2, H/4, W/4]
    f3: Tensor  # [N, c3, H/8, W/8]

    def shapes(self):
        return (self.f1.shape, self.f2.shape, self.f3.shape)


class _Stage(Module):
    def __init__(self, cin: int, cout: int, blocks: int, rng: np.random.Generator):
        self.down = Conv2d(cin, cout, 3, rng, stride=2, pad=1)
        self.aff = ChannelAffine(cout)
        self.blocks = [ResidualBlock(cout, rng) for _ in range(blocks)]

    def __call__(self, x: Tensor) -> Tensor:
        h = T.relu(self.aff(self.down(x)))
        for b in self.blocks:
            h = b(h)
        return h


class Encoder(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        self.cfg = cfg
        c1, c2, c3 = cfg.channels
        b1, b2, b3 = cfg.blocks_per_stage
        self.stage1 = _Stage(cfg.input_channels, c1, b1, rng)
        self.stage2 = _Stage(c1, c2, b2, rng)
        self.stage3 = _Stage(c2, c3, b3, rng)

    def __call__(self, image: Tensor) -> FeaturePyramid:
        n, c, h, w = image.shape
        if h % 8 or w % 8:
            raise ValueError(
                f"input spatial size ({h}, {w}) must be divisible by 8; pad the image first")
        f1 = self.stage1(image)
        f2 = self.stage2(f1)
        f3 = self.stage3(f2)
        return FeaturePyramid(f1, f2, f3)


class FPN(Module):
    """Top-down refinement that keeps every level's shape unchanged."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        c1, c2, c3 = cfg.channels
        self.lateral1 = Conv2d(c1, c1, 1, rng)
        self.lateral2 = Conv2d(c2, c2, 1, rng)
        self.lateral3 = Conv2d(c3, c3, 1, rng)
        self.proj32 = Conv2d(c3, c2, 1, rng)
        self.proj21 = Conv2d(c2, c1, 1, rng)
        self.smooth1 = Conv2d(c1, c1, 3, rng)
        self.smooth2 = Conv2d(c2, c2, 3, rng)
        self.smooth3 = Conv2d(c3, c3, 3, rng)

    def __call__(self, p: FeaturePyramid) -> FeaturePyramid:
        t3 = self.lateral3(p.f3)
        t2 = self.lateral2(p.f2) + T.upsample_nearest2x(self.proj32(t3))
        t1 = self.lateral1(p.f1) + T.upsample_nearest2x(self.proj21(t2))
        return FeaturePyramid(self.smooth1(t1), self.smooth2(t2), self.smooth3(t3))


_POS_CACHE: dict[tuple, np.ndarray] = {}


def positional_encoding(c: int, h: int, w: int, dtype) -> np.ndarray:
    """Fixed 2D sine/cosine grid encoding, shape [1, c, h, w], values in [-1, 1].

    First c/2 channels encode the row index, last c/2 the column index; each
    half is split sine then cosine with frequency base 10000.
    """
    if c % 4:
        raise ValueError(f"channel count {c} must be divisible by 4")
    key = (c, h, w, np.dtype(dtype).name)
    if key not in _POS_CACHE:
        q = c // 4
        freqs = 1.0 / (10000.0 ** (np.arange(q) / q))
        ys = np.arange(h)[:, None] * freqs[None, :]  # h, q
        xs = np.arange(w)[:, None] * freqs[None, :]
        enc = np.zeros((c, h, w))
        enc[0:q] = np.sin(ys).T[:, :, None]
        enc[q:2 * q] = np.cos(ys).T[:, :, None]
        enc[2 * q:3 * q] = np.sin(xs).T[:, None, :]
        enc[3 * q:] = np.cos(xs).T[:, None, :]
        _POS_CACHE[key] = enc[None].astype(dtype)
    return _POS_CACHE[key]


def positional_encode(f3: Tensor) -> Tensor:
    """Add the fixed positional grid to the deepest feature map."""
    n, c, h, w = f3.shape
    enc = positional_encoding(c, h, w, f3.data.dtype)
    return f3 + Tensor(enc)
