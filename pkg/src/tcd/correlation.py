"""Windowed cosine correlation volumes and their marginalized 3D form.

For each spatial position the correlation against a (2*kv+1) x (2*kh+1)
neighborhood of the other image is flattened into channels, giving one
3D tensor per direction (cs: source->target, ct: target->source). Channel
ch corresponds to offset (dy, dx) = (ch // (2*kh+1) - kv, ch % (2*kh+1) - kh),
row-major over (dy, dx). A brute-force nested-loop oracle implements the
same definition independently for verification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import ConvTranspose2d, Module
from .tensor import Tensor

# instrumentation for the sparsity check: number of shifted-product slices
# touched by the last windowed_correlation call
debug_counters = {"shift_products": 0}


@dataclass(frozen=True)
class WindowSpec:
    kv: int
    kh: int

    def __post_init__(self):
        if self.kv < 0 or self.kh < 0:
            raise ValueError("window half-extents must be non-negative")

    @property
    def channels(self) -> int:
        return (2 * self.kh + 1) * (2 * self.kv + 1)

    def offset(self, ch: int) -> tuple[int, int]:
        kw = 2 * self.kh + 1
        return ch // kw - self.kv, ch % kw - self.kh


@dataclass
class MarginalizedCorrelation:
    cs: Tensor  # [N, Cc, Hl, Wl]
    ct: Tensor
    level: int
    win: WindowSpec


def windowed_correlation(fs: Tensor, ft: Tensor, win: WindowSpec,
                         level: int = 0, eps: float = 1e-8) -> MarginalizedCorrelation:
    """Differentiable windowed ReLU-cosine correlation in both directions.

    Features are L2-normalized along channels, zero-padded by (kv, kh), and
    multiplied against the window offsets of the other (padded) map, so a
    border partner outside the image contributes similarity 0.
    """
    if fs.shape != ft.shape:
        raise ValueError(f"feature shapes differ: {fs.shape} vs {ft.shape}")
    n, c, h, w = fs.shape
    kv, kh = win.kv, win.kh
    fs_n = T.channel_l2_normalize(fs, eps)
    ft_n = T.channel_l2_normalize(ft, eps)
    fs_p = T.pad2d(fs_n, kv, kh)
    ft_p = T.pad2d(ft_n, kv, kh)
    cs_chans = []
    ct_chans = []
    count = 0
    for dy in range(-kv, kv + 1):
        for dx in range(-kh, kh + 1):
            ys = slice(dy + kv, dy + kv + h)
            xs = slice(dx + kh, dx + kh + w)
            ft_shift = ft_p[:, :, ys, xs]
            fs_shift = fs_p[:, :, ys, xs]
            cs_chans.append(T.relu((fs_n * ft_shift).sum(axis=1, keepdims=True)))
            ct_chans.append(T.relu((ft_n * fs_shift).sum(axis=1, keepdims=True)))
            count += 1
    debug_counters["shift_products"] = count
    cs = T.concat(cs_chans, axis=1)
    ct = T.concat(ct_chans, axis=1)
    return MarginalizedCorrelation(cs, ct, level, win)


def dense_oracle(fs: Tensor | np.ndarray, ft: Tensor | np.ndarray,
                 win: WindowSpec, eps: float = 1e-8) -> MarginalizedCorrelation:
    """Brute-force 64-bit reference: loops every in-window 4-tuple (i,j,m,n)."""
    fs = fs.data if isinstance(fs, Tensor) else np.asarray(fs)
    ft = ft.data if isinstance(ft, Tensor) else np.asarray(ft)
    fs = fs.astype(np.float64)
    ft = ft.astype(np.float64)
    n, c, h, w = fs.shape
    if h > 32 or w > 32:
        raise ValueError("dense_oracle is for small inputs only (<= 32x32)")
    kv, kh = win.kv, win.kh
    kw = 2 * kh + 1
    cs = np.zeros((n, win.channels, h, w))
    ct = np.zeros((n, win.channels, h, w))

    def cosine(a, b):
        na = np.sqrt((a * a).sum())
        nb = np.sqrt((b * b).sum())
        return float((a * b).sum() / (max(na, eps) * max(nb, eps)))

    for ni in range(n):
        for i in range(h):
            for j in range(w):
                for dy in range(-kv, kv + 1):
                    for dx in range(-kh, kh + 1):
                        m, nn_ = i + dy, j + dx
                        ch = (dy + kv) * kw + (dx + kh)
                        if 0 <= m < h and 0 <= nn_ < w:
                            cs[ni, ch, i, j] = max(0.0, cosine(fs[ni, :, i, j], ft[ni, :, m, nn_]))
                            ct[ni, ch, i, j] = max(0.0, cosine(ft[ni, :, i, j], fs[ni, :, m, nn_]))
    return MarginalizedCorrelation(Tensor(cs), Tensor(ct), 0, win)


class CorrelationUpsampler(Module):
    """Shared transposed-conv stages lifting both levels to H/2 x W/2.

    The level-2 maps pass one x2 stage; the level-3 maps pass two. Each
    stage's weights are shared between the cs and ct directions.
    """

    def __init__(self, cc2: int, cc3: int, rng: np.random.Generator):
        self.up2 = ConvTranspose2d(cc2, cc2, rng, stride=2)
        self.up3a = ConvTranspose2d(cc3, cc3, rng, stride=2)
        self.up3b = ConvTranspose2d(cc3, cc3, rng, stride=2)

    def __call__(self, corr2: MarginalizedCorrelation, corr3: MarginalizedCorrelation):
        h2, w2 = corr2.cs.shape[2:]
        h3, w3 = corr3.cs.shape[2:]
        if (h3 * 2, w3 * 2) != (h2, w2):
            raise ValueError(
                f"level resolutions inconsistent: level2 {h2}x{w2}, level3 {h3}x{w3}")
        cs2 = self.up2(corr2.cs)
        ct2 = self.up2(corr2.ct)
        cs3 = self.up3b(self.up3a(corr3.cs))
        ct3 = self.up3b(self.up3a(corr3.ct))
        return cs2, cs3, ct2, ct3
