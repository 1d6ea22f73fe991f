"""Full change-detection model: decoders, losses, and end-to-end wiring.

The network is exactly symmetric under swapping source and target: the
encoder, per-level attention blocks, correlation, upsampler and (by default)
the decoder are all shared between the two directions, so
forward(It, Is) == swap(forward(Is, It)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import CorrCrossSelf, FeatureCrossSelf
from .backbone import BackboneConfig, Encoder, FPN, positional_encode
from .correlation import CorrelationUpsampler, MarginalizedCorrelation, WindowSpec, windowed_correlation
from .nn import Conv2d, ConvTranspose2d, Module
from .tensor import Tensor


@dataclass
class SegPair:
    s_st: Tensor  # [N, 1, H, W], sigmoid outputs
    s_ts: Tensor


@dataclass
class LossBreakdown:
    dice_st: float
    bce_st: float
    dice_ts: float
    bce_ts: float
    l_st: float
    l_ts: float
    l_seg: float
    w_d: float
    loss: Tensor = None  # scalar graph node for backprop


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    win2: WindowSpec = field(default_factory=lambda: WindowSpec(2, 4))
    win3: WindowSpec = field(default_factory=lambda: WindowSpec(1, 2))
    decoder_channels: int = 32
    # ablation switches (Table-4-style variants)
    no_cm: bool = False
    no_fa: bool = False
    no_ca: bool = False
    one_way: bool = False
    independent_decoders: bool = False


class Decoder(Module):
    """Concatenated correlation maps -> full-resolution sigmoid change map."""

    def __init__(self, cin: int, mid: int, rng: np.random.Generator):
        self.conv = Conv2d(cin, mid, 3, rng)
        self.up = ConvTranspose2d(mid, mid, rng, stride=2)
        self.head = Conv2d(mid, 1, 1, rng)
        # start near the changed-pixel prior instead of 0.5: without this the
        # first training phase just drives every output down, and some seeds
        # stall on that plateau for hundreds of steps
        self.head.bias.tensor.data[:] = -1.7

    def __call__(self, c2: Tensor, c3: Tensor) -> Tensor:
        if c2.shape[2:] != c3.shape[2:]:
            raise ValueError(
                f"decoder inputs at different resolutions: {c2.shape[2:]} vs {c3.shape[2:]}")
        h = T.relu(self.conv(T.concat([c2, c3], axis=1)))
        h = T.relu(self.up(h))
        return T.sigmoid(self.head(h))


class ConvCorrReplacement(Module):
    """Ablation stand-in for correlation: conv stack on concatenated features."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.conv1 = Conv2d(2 * cin, cout, 3, rng)
        self.conv2 = Conv2d(cout, cout, 3, rng)

    def __call__(self, fa: Tensor, fb: Tensor) -> Tensor:
        return T.relu(self.conv2(T.relu(self.conv1(T.concat([fa, fb], axis=1)))))


class TCDModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        bb = cfg.backbone
        c1, c2, c3 = bb.channels
        cc2, cc3 = cfg.win2.channels, cfg.win3.channels
        self.encoder = Encoder(bb, rng)
        self.fpn = FPN(bb, rng)
        if not cfg.no_fa:
            self.fa2 = FeatureCrossSelf(c2, rng)
            self.fa3 = FeatureCrossSelf(c3, rng)
        if cfg.no_cm:
            self.cm2 = ConvCorrReplacement(c2, cc2, rng)
            self.cm3 = ConvCorrReplacement(c3, cc3, rng)
        self.upsampler = CorrelationUpsampler(cc2, cc3, rng)
        if not cfg.no_ca:
            self.ca2 = CorrCrossSelf(cc2, c1, rng)
            self.ca3 = CorrCrossSelf(cc3, c1, rng)
        self.decoder = Decoder(cc2 + cc3, cfg.decoder_channels, rng)
        if cfg.independent_decoders:
            self.decoder_ts = Decoder(cc2 + cc3, cfg.decoder_channels, rng)
        self.finalize_names("model")

    # -- forward -------------------------------------------------------------

    def encode_one(self, image: Tensor):
        p = self.fpn(self.encoder(image))
        return p.f1, p.f2, positional_encode(p.f3)

    def forward(self, i_s: Tensor, i_t: Tensor) -> SegPair:
        if i_s.shape != i_t.shape:
            raise ValueError(f"source/target shapes differ: {i_s.shape} vs {i_t.shape}")
        cfg = self.cfg
        f1s, f2s, f3s = self.encode_one(i_s)
        f1t, f2t, f3t = self.encode_one(i_t)

        if not cfg.no_fa:
            f2s, f2t = self.fa2(f2s, f2t), self.fa2(f2t, f2s)
            f3s, f3t = self.fa3(f3s, f3t), self.fa3(f3t, f3s)

        if cfg.no_cm:
            corr2 = MarginalizedCorrelation(
                self.cm2(f2s, f2t), self.cm2(f2t, f2s), 2, cfg.win2)
            corr3 = MarginalizedCorrelation(
                self.cm3(f3s, f3t), self.cm3(f3t, f3s), 3, cfg.win3)
        else:
            corr2 = windowed_correlation(f2s, f2t, cfg.win2, level=2)
            corr3 = windowed_correlation(f3s, f3t, cfg.win3, level=3)

        cs2, cs3, ct2, ct3 = self.upsampler(corr2, corr3)

        if not cfg.no_ca:
            cs2 = self.ca2(cs2, f1s)
            cs3 = self.ca3(cs3, f1s)
            ct2 = self.ca2(ct2, f1t)
            ct3 = self.ca3(ct3, f1t)

        dec_ts = self.decoder_ts if cfg.independent_decoders else self.decoder
        return SegPair(self.decoder(cs2, cs3), dec_ts(ct2, ct3))

    __call__ = forward


# -- losses ------------------------------------------------------------------


def _check_binary(y: Tensor):
    vals = y.data
    if not np.all((vals == 0) | (vals == 1)):
        raise ValueError("ground truth must be {0,1}-valued")


def dice_loss(p: Tensor, y: Tensor) -> Tensor:
    """Per-pixel smoothed dice 1 - (2yp+1)/(y+p+1), averaged over pixels."""
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {y.shape}")
    _check_binary(y)
    per_pixel = 1.0 - (2.0 * p * y + 1.0) / (p + y + 1.0)
    return per_pixel.mean()


def dice_loss_global(p: Tensor, y: Tensor) -> Tensor:
    """Global-sum dice variant, kept for comparison with the per-pixel form."""
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {y.shape}")
    _check_binary(y)
    inter = (p * y).sum()
    return 1.0 - (2.0 * inter + 1.0) / (p.sum() + y.sum() + 1.0)


def bce_loss(p: Tensor, y: Tensor, clip: float = 1e-7) -> Tensor:
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {y.shape}")
    _check_binary(y)
    pc = T.clamp(p, clip, 1.0 - clip)
    per_pixel = -(y * T.log(pc) + (1.0 - y) * T.log(1.0 - pc))
    return per_pixel.mean()


def _direction_loss(p: Tensor, y: Tensor, w_d: float, global_dice: bool):
    d = (dice_loss_global if global_dice else dice_loss)(p, y)
    b = bce_loss(p, y)
    return d, b, w_d * d + b


def total_loss(pred: SegPair, gt_st: Tensor, gt_ts: Tensor, w_d: float = 10.0,
               one_way: bool = False, global_dice: bool = False) -> LossBreakdown:
    """Combined dice+BCE loss averaged over the two directions.

    ``one_way`` trains the max-fused map against the max-fused ground truth
    with a single-map loss (ablation variant).
    """
    if one_way:
        fused = fuse_two_way(pred)
        gt = T.maximum(gt_st, gt_ts)
        d, b, l = _direction_loss(fused, gt, w_d, global_dice)
        lf = float(l.data)
        return LossBreakdown(float(d.data), float(b.data), float(d.data), float(b.data),
                             lf, lf, lf, w_d, loss=l)
    d_st, b_st, l_st = _direction_loss(pred.s_st, gt_st, w_d, global_dice)
    d_ts, b_ts, l_ts = _direction_loss(pred.s_ts, gt_ts, w_d, global_dice)
    l_seg = 0.5 * l_st + 0.5 * l_ts
    return LossBreakdown(float(d_st.data), float(b_st.data), float(d_ts.data),
                         float(b_ts.data), float(l_st.data), float(l_ts.data),
                         float(l_seg.data), w_d, loss=l_seg)


def fuse_two_way(pred: SegPair) -> Tensor:
    """Elementwise max of the two directional maps (binary-decision view)."""
    return T.maximum(pred.s_st, pred.s_ts)
