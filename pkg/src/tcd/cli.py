"""Command-line surface: data generation, training, evaluation, comparison."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import checkpoint as ckpt
from .config import RunConfig, load_config, parse_config_text
from .datagen import (GeneratorConfig, load_image, map_from_rects, read_dataset,
                      write_dataset)
from .metrics import (PairTally, PixelTally, binarize, changed_pixel_count,
                      classification_metrics, pair_decide, pixel_metrics)
from .model import SegPair, TCDModel, fuse_two_way
from .tensor import Tensor, no_grad
from .train import build_corpora
from . import train as train_mod


def _fail(msg: str, code: int = 1):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _load_run_config(config_path, seed):
    try:
        cfg = load_config(config_path)
    except (OSError, ValueError) as e:
        _fail(str(e))
    if seed is not None:
        from dataclasses import replace
        cfg = RunConfig(cfg.model, replace(cfg.train, seed=seed), cfg.data, cfg.eval)
    return cfg


def _apply_ablations(cfg: RunConfig, **flags) -> RunConfig:
    from dataclasses import replace
    active = {k: True for k, v in flags.items() if v}
    if active:
        cfg = RunConfig(replace(cfg.model, **active), cfg.train, cfg.data, cfg.eval)
    return cfg


def _model_from_checkpoint(path):
    try:
        config_text, _ = ckpt.read(path)
    except ckpt.CheckpointError as e:
        _fail(str(e))
    cfg = parse_config_text(config_text)
    model = TCDModel(cfg.model_config(), np.random.default_rng(0))
    try:
        ckpt.load(path, model)
    except ckpt.CheckpointError as e:
        _fail(str(e))
    return model, cfg


def _prepare_pair(src: np.ndarray, tgt: np.ndarray):
    """Resize both to height 32 and right-pad widths to a shared multiple of 8."""
    def fit(img):
        c, h, w = img.shape
        if h != 32:
            pil = Image.fromarray((img.transpose(1, 2, 0) * 255).astype(np.uint8))
            neww = max(8, int(round(w * 32 / h)))
            img = np.asarray(pil.resize((neww, 32), Image.BILINEAR),
                             dtype=np.float32).transpose(2, 0, 1) / 255.0
        return img

    src, tgt = fit(src), fit(tgt)
    wmax = max(src.shape[2], tgt.shape[2])
    wmax = ((wmax + 7) // 8) * 8

    def pad(img):
        bg = float(np.median([img[:, 0, 0], img[:, 0, -1], img[:, -1, -1]]))
        out = np.full((3, 32, wmax), bg, dtype=np.float32)
        out[:, :, :img.shape[2]] = img
        return out

    return pad(src), pad(tgt), src.shape[2], tgt.shape[2]


@click.group()
def main():
    """Text change detection: generate data, train, evaluate, compare."""


@main.command("gen-data")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", required=True, type=click.Path())
@click.option("--count", type=int, default=100, show_default=True)
@click.option("--split", type=click.Choice(["train", "val"]), default="val",
              show_default=True, help="which corpus to draw words from")
def gen_data(config_path, seed, out, count, split):
    """Write COUNT synthetic pairs as PNGs plus JSON metadata."""
    cfg = _load_run_config(config_path, seed)
    if count < 0:
        _fail("count must be non-negative")
    train_corpus, val_corpus = build_corpora(cfg)
    corpus = train_corpus if split == "train" else val_corpus
    gen_cfg = GeneratorConfig(augment=cfg.augment_params())
    try:
        manifest = write_dataset(out, corpus, count, cfg.train.seed, gen_cfg)
    except OSError as e:
        _fail(str(e))
    click.echo(json.dumps({"out": str(out), "count": manifest["count"],
                           "hash": manifest["hash"]}))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", required=True, type=click.Path())
@click.option("--no-cm", is_flag=True, help="replace correlation with plain convs")
@click.option("--no-fa", is_flag=True, help="disable feature attention")
@click.option("--no-ca", is_flag=True, help="disable correlation attention")
@click.option("--one-way", is_flag=True, help="single fused-map training loss")
@click.option("--independent-decoders", is_flag=True, help="unshared decoder weights")
def train(config_path, seed, out, no_cm, no_fa, no_ca, one_way, independent_decoders):
    """Train a model; writes best.ckpt, last.ckpt, train_log.csv, curves."""
    cfg = _load_run_config(config_path, seed)
    cfg = _apply_ablations(cfg, no_cm=no_cm, no_fa=no_fa, no_ca=no_ca,
                           one_way=one_way, independent_decoders=independent_decoders)
    try:
        best = train_mod.train(cfg, out)
    except train_mod.TrainingDiverged as e:
        _fail(str(e), code=2)
    from .plots import training_curves
    training_curves(Path(out) / "train_log.csv", Path(out) / "train_curves.png")
    click.echo(json.dumps({"best_epoch": best["epoch"], "val_f1": best["f1"],
                           "val_pair_acc": best.get("pair_accuracy"),
                           "checkpoint": str(Path(out) / "best.ckpt")}))


@main.command()
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None,
              help="directory for metrics.json and figures")
@click.option("--threshold", type=float, default=None)
@click.option("--min-pixels", type=int, default=None)
def eval(ckpt_path, data_dir, out, threshold, min_pixels):
    """Evaluate a checkpoint on a generated dataset; JSON report to stdout."""
    model, cfg = _model_from_checkpoint(ckpt_path)
    thr = cfg.eval.threshold if threshold is None else threshold
    minpx = cfg.eval.min_pixels if min_pixels is None else min_pixels
    if not (Path(data_dir) / "manifest.json").exists():
        _fail(f"{data_dir}: no manifest.json; not a generated dataset")
    pixel = PixelTally()
    pairs = PairTally()
    by_language: dict[str, PairTally] = {}
    n = 0
    with no_grad():
        for src, tgt, meta in read_dataset(data_dir):
            src_p, tgt_p, ws, wt = _prepare_pair(src, tgt)
            pred = model(Tensor(src_p[None]), Tensor(tgt_p[None]))
            gt_st = map_from_rects(meta["gt_st_rects"], ws)
            gt_ts = map_from_rects(meta["gt_ts_rects"], wt)
            pixel.add(binarize(pred.s_st.data[0, :, :, :ws], thr), gt_st >= 0.5)
            pixel.add(binarize(pred.s_ts.data[0, :, :, :wt], thr), gt_ts >= 0.5)
            w = max(ws, wt)
            item = SegPair(Tensor(pred.s_st.data[:, :, :, :w]),
                           Tensor(pred.s_ts.data[:, :, :, :w]))
            decision = pair_decide(item, thr, minpx)
            pairs.add(decision, meta["label"])
            if "language" in meta:
                by_language.setdefault(meta["language"], PairTally()).add(
                    decision, meta["label"])
            n += 1
    report = {
        "pairs": n,
        "pixel": pixel_metrics(pixel),
        "classification": classification_metrics(pairs),
        "config": {"threshold": thr, "min_pixels": minpx,
                   "checkpoint": str(ckpt_path), "data": str(data_dir)},
    }
    if by_language:
        report["by_language"] = {
            lang: classification_metrics(t) for lang, t in sorted(by_language.items())}
    if out:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.json").write_text(json.dumps(report, indent=1))
        from .plots import metrics_bars
        metrics_bars(report, out_dir / "metrics.png")
    click.echo(json.dumps(report, indent=1))


@main.command()
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.argument("src_png", type=click.Path())
@click.argument("tgt_png", type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--threshold", type=float, default=None)
@click.option("--min-pixels", type=int, default=None)
def compare(ckpt_path, src_png, tgt_png, out, threshold, min_pixels):
    """Compare two word images; writes the change maps and prints a verdict."""
    model, cfg = _model_from_checkpoint(ckpt_path)
    thr = cfg.eval.threshold if threshold is None else threshold
    minpx = cfg.eval.min_pixels if min_pixels is None else min_pixels
    try:
        src = load_image(src_png)
        tgt = load_image(tgt_png)
    except (OSError, ValueError) as e:
        _fail(f"cannot read input image: {e}")
    src_p, tgt_p, ws, wt = _prepare_pair(src, tgt)
    with no_grad():
        pred = model(Tensor(src_p[None]), Tensor(tgt_p[None]))
    fused = fuse_two_way(pred)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, arr in (("s_st", pred.s_st.data), ("s_ts", pred.s_ts.data),
                      ("fused", fused.data)):
        gray = np.clip(arr[0, 0] * 255.0, 0, 255).astype(np.uint8)
        Image.fromarray(gray, "L").save(out_dir / f"{name}.png")
    w = max(ws, wt)
    item = SegPair(Tensor(pred.s_st.data[:, :, :, :w]),
                   Tensor(pred.s_ts.data[:, :, :, :w]))
    click.echo(json.dumps({
        "verdict": pair_decide(item, thr, minpx),
        "changed_pixels": changed_pixel_count(item, thr),
        "threshold": thr,
        "min_pixels": minpx,
    }))


if __name__ == "__main__":
    main()
