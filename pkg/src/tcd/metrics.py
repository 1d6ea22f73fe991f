"""Pixel segmentation metrics and pair-level identical/different scoring.

Tallies are plain counters that merge with `+`, so evaluation can shard a
dataset across workers and combine results independent of order. Padding
columns must be excluded by the caller (pass the unpadded width).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SegPair, fuse_two_way


def binarize(m: np.ndarray, threshold: float) -> np.ndarray:
    """Threshold with the >= convention: a pixel exactly at the threshold is 1."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0,1), got {threshold}")
    return (np.asarray(m) >= threshold).astype(np.uint8)


@dataclass
class PixelTally:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def add(self, pred: np.ndarray, gt: np.ndarray):
        pred = np.asarray(pred).astype(bool)
        gt = np.asarray(gt).astype(bool)
        if pred.shape != gt.shape:
            raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
        self.tp += int(np.count_nonzero(pred & gt))
        self.fp += int(np.count_nonzero(pred & ~gt))
        self.fn += int(np.count_nonzero(~pred & gt))
        self.tn += int(np.count_nonzero(~pred & ~gt))

    def __add__(self, other: "PixelTally") -> "PixelTally":
        return PixelTally(self.tp + other.tp, self.fp + other.fp,
                          self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def pixel_metrics(t: PixelTally) -> dict:
    """Precision, recall, F1, IoU, and overall accuracy; 0/0 counts as 0."""
    p = _ratio(t.tp, t.tp + t.fp)
    r = _ratio(t.tp, t.tp + t.fn)
    f1 = _ratio(2 * t.tp, 2 * t.tp + t.fp + t.fn)
    return {
        "precision": p,
        "recall": r,
        "f1": f1,
        "iou": _ratio(t.tp, t.tp + t.fp + t.fn),
        "oa": _ratio(t.tp + t.tn, t.total),
    }


@dataclass
class PairTally:
    """Confusion counts with "different" as the positive class."""
    tp: int = 0  # different, predicted different
    fp: int = 0  # identical, predicted different
    fn: int = 0  # different, predicted identical
    tn: int = 0  # identical, predicted identical

    def add(self, predicted: str, actual: str):
        for v in (predicted, actual):
            if v not in ("identical", "different"):
                raise ValueError(f"label must be identical or different, got {v!r}")
        if actual == "different":
            if predicted == "different":
                self.tp += 1
            else:
                self.fn += 1
        else:
            if predicted == "different":
                self.fp += 1
            else:
                self.tn += 1

    def __add__(self, other: "PairTally") -> "PairTally":
        return PairTally(self.tp + other.tp, self.fp + other.fp,
                         self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def pair_decide(pred: SegPair, threshold: float = 0.5, min_pixels: int = 0) -> str:
    """Fuse the two maps, binarize, and call the pair identical when at most
    min_pixels survive (the literal rule is min_pixels=0: any changed pixel
    means different)."""
    fused = fuse_two_way(pred)
    count = int(binarize(fused.data, threshold).sum())
    return "identical" if count <= min_pixels else "different"


def changed_pixel_count(pred: SegPair, threshold: float = 0.5) -> int:
    return int(binarize(fuse_two_way(pred).data, threshold).sum())


def classification_metrics(t: PairTally) -> dict:
    p = _ratio(t.tp, t.tp + t.fp)
    r = _ratio(t.tp, t.tp + t.fn)
    return {
        "precision": p,
        "recall": r,
        "f1": _ratio(2 * t.tp, 2 * t.tp + t.fp + t.fn),
        "accuracy": _ratio(t.tp + t.tn, t.total),
    }
