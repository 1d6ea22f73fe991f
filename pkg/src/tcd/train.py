"""Training loop: on-the-fly balanced batches, per-epoch validation,
best-F1 checkpointing, and a line-per-epoch CSV log."""

from __future__ import annotations

import csv
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as T
from .config import RunConfig
from .datagen import Corpus, DEFAULT_CHARSET, GeneratorConfig, collate, make_sample
from .metrics import PixelTally, binarize, pair_decide, pixel_metrics
from .model import SegPair, TCDModel, total_loss
from .tensor import OptimizerState, Tensor, adam_step, no_grad


class TrainingDiverged(RuntimeError):
    pass


def random_words(count: int, rng: np.random.Generator, min_len: int = 3,
                 max_len: int = 8, charset: str = DEFAULT_CHARSET) -> list[str]:
    """Deterministic pseudo-word list; no duplicates."""
    words = set()
    while len(words) < count:
        n = int(rng.integers(min_len, max_len + 1))
        words.add("".join(charset[i] for i in rng.integers(len(charset), size=n)))
    return sorted(words)


def build_corpora(cfg: RunConfig) -> tuple[Corpus, Corpus]:
    """Corpora from the configured files, or generated ones when unset."""
    d = cfg.data
    if d.train_corpus:
        train = Corpus.from_file(d.train_corpus, seed=cfg.train.seed)
    else:
        rng = np.random.default_rng(cfg.train.seed + 101)
        train = Corpus(random_words(200, rng, d.word_min_len, d.word_max_len),
                       seed=cfg.train.seed)
    if d.val_corpus:
        val = Corpus.from_file(d.val_corpus, seed=cfg.train.seed + 1)
    else:
        rng = np.random.default_rng(cfg.train.seed + 202)
        held_out = random_words(250, rng, d.word_min_len, d.word_max_len)
        val_words = [w for w in held_out if w not in set(train.words)][:50]
        val = Corpus(val_words, seed=cfg.train.seed + 1)
    return train, val


def val_batches(corpus: Corpus, cfg: RunConfig, batch_size: int = 8):
    """Fixed validation set: deterministic samples in deterministic batches."""
    gen_cfg = GeneratorConfig(augment=cfg.augment_params())
    n = cfg.train.val_samples
    samples = [make_sample(corpus, cfg.train.seed + 7919, i, gen_cfg) for i in range(n)]
    for i in range(0, n, batch_size):
        yield collate(samples[i:i + batch_size])


@dataclass
class ValResult:
    l_seg: float
    pixel: dict
    pair_accuracy: float


def validate(model: TCDModel, corpus: Corpus, cfg: RunConfig) -> ValResult:
    tally = PixelTally()
    pairs_ok = 0
    pairs_total = 0
    loss_sum = 0.0
    loss_n = 0
    thr, minpx = cfg.eval.threshold, cfg.eval.min_pixels
    with no_grad():
        for batch in val_batches(corpus, cfg, cfg.train.batch_size):
            pred = model(Tensor(batch.sources), Tensor(batch.targets))
            lb = total_loss(pred, Tensor(batch.g_st), Tensor(batch.g_ts),
                            w_d=cfg.train.w_d, one_way=cfg.model.one_way)
            loss_sum += lb.l_seg * len(batch.labels)
            loss_n += len(batch.labels)
            for i, (ws, wt) in enumerate(batch.widths):
                s_st = pred.s_st.data[i, :, :, :ws]
                s_ts = pred.s_ts.data[i, :, :, :wt]
                tally.add(binarize(s_st, thr), batch.g_st[i, :, :, :ws] >= 0.5)
                tally.add(binarize(s_ts, thr), batch.g_ts[i, :, :, :wt] >= 0.5)
                w = max(ws, wt)
                item = SegPair(Tensor(pred.s_st.data[i:i + 1, :, :, :w]),
                               Tensor(pred.s_ts.data[i:i + 1, :, :, :w]))
                pairs_ok += pair_decide(item, thr, minpx) == batch.labels[i]
                pairs_total += 1
    return ValResult(loss_sum / max(loss_n, 1), pixel_metrics(tally),
                     pairs_ok / max(pairs_total, 1))


def train(cfg: RunConfig, out_dir, log=None) -> dict:
    """Train per the config; writes best.ckpt, last.ckpt, and train_log.csv.

    Returns a summary dict with the best validation metrics.
    """
    if log is None:
        log = lambda msg: print(msg, file=sys.stderr)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tc = cfg.train
    rng = np.random.default_rng(tc.seed)
    model = TCDModel(cfg.model_config(), np.random.default_rng(tc.seed + 1))
    params = model.parameters()
    opt = OptimizerState(params, lr=tc.lr)
    train_corpus, val_corpus = build_corpora(cfg)
    gen_cfg = GeneratorConfig(augment=cfg.augment_params())
    steps = max(1, tc.samples_per_epoch // tc.batch_size)

    best = {"f1": -1.0, "epoch": -1}
    log_path = out / "train_log.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "l_seg", "dice", "bce", "val_l_seg",
                         "val_f1", "val_pair_acc", "seconds"])
        for epoch in range(1, tc.epochs + 1):
            t0 = time.time()
            dice_sum = bce_sum = loss_epoch = 0.0
            for step in range(steps):
                seed = int(rng.integers(2 ** 31))
                samples = [make_sample(train_corpus, seed, i, gen_cfg)
                           for i in range(tc.batch_size)]
                order = rng.permutation(tc.batch_size)
                batch = collate([samples[i] for i in order])
                model.zero_grad()
                pred = model(Tensor(batch.sources), Tensor(batch.targets))
                lb = total_loss(pred, Tensor(batch.g_st), Tensor(batch.g_ts),
                                w_d=tc.w_d, one_way=cfg.model.one_way)
                if not np.isfinite(lb.l_seg):
                    raise TrainingDiverged(
                        f"non-finite loss {lb.l_seg} at epoch {epoch} step {step + 1} "
                        f"(dice_st={lb.dice_st}, bce_st={lb.bce_st})")
                lb.loss.backward()
                adam_step(params, opt)
                loss_epoch += lb.l_seg
                dice_sum += 0.5 * (lb.dice_st + lb.dice_ts)
                bce_sum += 0.5 * (lb.bce_st + lb.bce_ts)
            vr = validate(model, val_corpus, cfg)
            seconds = time.time() - t0
            row = [epoch, f"{loss_epoch / steps:.6f}", f"{dice_sum / steps:.6f}",
                   f"{bce_sum / steps:.6f}", f"{vr.l_seg:.6f}",
                   f"{vr.pixel['f1']:.6f}", f"{vr.pair_accuracy:.6f}",
                   f"{seconds:.1f}"]
            writer.writerow(row)
            fh.flush()
            log(f"epoch {epoch}/{tc.epochs} l_seg {loss_epoch / steps:.4f} "
                f"val_f1 {vr.pixel['f1']:.4f} pair_acc {vr.pair_accuracy:.4f} "
                f"({seconds:.0f}s)")
            if vr.pixel["f1"] > best["f1"]:
                best = {"f1": vr.pixel["f1"], "epoch": epoch,
                        "pair_accuracy": vr.pair_accuracy, "val_l_seg": vr.l_seg,
                        "pixel": vr.pixel}
                checkpoint.save(out / "best.ckpt", model, cfg.dumps())
            checkpoint.save(out / "last.ckpt", model, cfg.dumps())
    return best
