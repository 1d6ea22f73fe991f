"""Scaled dot-product attention and the two cross-self block types.

FeatureCrossSelf operates between the source/target feature maps of one
pyramid level; CorrCrossSelf operates between an upsampled correlation map
and the top-level feature map of the same image. One weight set per level is
shared across the s->t and t->s directions, which keeps the whole model
exactly symmetric under swapping the two inputs.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module
from .tensor import Tensor


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(Q K^T / sqrt(dk)) V over flattened sequence positions."""
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    dk = q.shape[-1]
    logits = T.matmul(q, T.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(dk))
    return T.matmul(T.softmax_rows(logits), v)


def _to_seq(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    return T.transpose(x.reshape(n, c, h * w), (0, 2, 1))  # N, HW, C


def _to_map(x: Tensor, h: int, w: int) -> Tensor:
    n, hw, c = x.shape
    return T.transpose(x, (0, 2, 1)).reshape(n, c, h, w)


class FeatureCrossSelf(Module):
    """Cross-attention from one stream into the other, then self-attention."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.q_cross = Conv2d(channels, channels, 1, rng)
        self.k_cross = Conv2d(channels, channels, 1, rng)
        self.v_cross = Conv2d(channels, channels, 1, rng)
        self.out_cross = Conv2d(channels, channels, 1, rng, zero_init=True)
        self.q_self = Conv2d(channels, channels, 1, rng)
        self.k_self = Conv2d(channels, channels, 1, rng)
        self.v_self = Conv2d(channels, channels, 1, rng)
        self.out_self = Conv2d(channels, channels, 1, rng, zero_init=True)

    def __call__(self, fa: Tensor, fb: Tensor) -> Tensor:
        if fa.shape != fb.shape:
            raise ValueError(f"feature shapes differ: {fa.shape} vs {fb.shape}")
        n, c, h, w = fa.shape
        att = scaled_dot_attention(
            _to_seq(self.q_cross(fa)), _to_seq(self.k_cross(fb)), _to_seq(self.v_cross(fb)))
        x = fa + self.out_cross(_to_map(att, h, w))
        att = scaled_dot_attention(
            _to_seq(self.q_self(x)), _to_seq(self.k_self(x)), _to_seq(self.v_self(x)))
        return x + self.out_self(_to_map(att, h, w))


class CorrCrossSelf(Module):
    """Cross-self attention between a correlation map and the F1 feature map.

    The feature map is channel-squeezed to the correlation channel count to
    form keys and values; the attended values are merged with the input map
    by a 1x1 conv on their concatenation and added residually.
    """

    def __init__(self, corr_channels: int, feat_channels: int, rng: np.random.Generator):
        cc = corr_channels
        self.q_cross = Conv2d(cc, cc, 1, rng)
        self.k_feat = Conv2d(feat_channels, cc, 1, rng)
        self.v_feat = Conv2d(feat_channels, cc, 1, rng)
        self.merge_cross = Conv2d(2 * cc, cc, 1, rng, zero_init=True)
        self.q_self = Conv2d(cc, cc, 1, rng)
        self.k_self = Conv2d(cc, cc, 1, rng)
        self.v_self = Conv2d(cc, cc, 1, rng)
        self.merge_self = Conv2d(2 * cc, cc, 1, rng, zero_init=True)

    def __call__(self, corr: Tensor, f1: Tensor) -> Tensor:
        if corr.shape[2:] != f1.shape[2:]:
            raise ValueError(
                f"correlation spatial {corr.shape[2:]} != feature spatial {f1.shape[2:]}")
        n, cc, h, w = corr.shape
        att = scaled_dot_attention(
            _to_seq(self.q_cross(corr)), _to_seq(self.k_feat(f1)), _to_seq(self.v_feat(f1)))
        x = corr + self.merge_cross(T.concat([_to_map(att, h, w), corr], axis=1))
        att = scaled_dot_attention(
            _to_seq(self.q_self(x)), _to_seq(self.k_self(x)), _to_seq(self.v_self(x)))
        return x + self.merge_self(T.concat([_to_map(att, h, w), x], axis=1))
