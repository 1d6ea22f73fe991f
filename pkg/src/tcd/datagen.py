"""Synthetic word-pair generator with scan-like degradations.

Words are rasterized at height 32 from a monospaced bitmap atlas (16 px per
glyph) built once from Pillow's embedded default font, so the generator has
no system font dependency. Sources use a fixed light background; targets get
a randomized background plus augmentations. Ground truth is a pair of
pseudo-segmentation maps marking the column boxes of edited characters,
full image height, one map per direction.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont
from scipy import ndimage

GLYPH_W = 16
GLYPH_H = 32

DEFAULT_CHARSET = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789"

_ATLAS: dict[str, np.ndarray] = {}


def glyph_mask(ch: str) -> np.ndarray:
    """Ink mask in [0,1] for one character, shape (32, 16)."""
    if ch not in _ATLAS:
        font = ImageFont.load_default(size=24)
        img = Image.new("L", (GLYPH_W * 3, GLYPH_H * 2), 0)
        d = ImageDraw.Draw(img)
        d.text((GLYPH_W * 3 // 2, GLYPH_H), ch, fill=255, font=font, anchor="mm")
        a = np.asarray(img, dtype=np.float32) / 255.0
        ys, xs = np.nonzero(a > 0.1)
        if ys.size == 0:
            raise ValueError(f"character {ch!r} is not renderable by the bundled font")
        crop = a[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
        # fit into the cell with a small margin, preserving aspect ratio
        max_h, max_w = GLYPH_H - 6, GLYPH_W - 4
        scale = min(max_h / crop.shape[0], max_w / crop.shape[1])
        out_h = max(1, int(round(crop.shape[0] * scale)))
        out_w = max(1, int(round(crop.shape[1] * scale)))
        pil = Image.fromarray((crop * 255).astype(np.uint8)).resize((out_w, out_h), Image.BILINEAR)
        cell = np.zeros((GLYPH_H, GLYPH_W), dtype=np.float32)
        y0 = (GLYPH_H - out_h) // 2
        x0 = (GLYPH_W - out_w) // 2
        cell[y0:y0 + out_h, x0:x0 + out_w] = np.asarray(pil, dtype=np.float32) / 255.0
        _ATLAS[ch] = cell
    return _ATLAS[ch]


@dataclass
class Corpus:
    words: list[str]
    charset: str = DEFAULT_CHARSET
    seed: int = 0

    def __post_init__(self):
        if not self.words:
            raise ValueError("corpus is empty")
        cs = set(self.charset)
        for w in self.words:
            bad = set(w) - cs
            if bad:
                raise ValueError(f"word {w!r} uses characters outside the charset: {sorted(bad)}")

    @classmethod
    def from_file(cls, path, charset: str = DEFAULT_CHARSET, seed: int = 0) -> "Corpus":
        words = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()
                 if ln.strip()]
        return cls(words, charset, seed)


@dataclass
class RenderStyle:
    background: float = 0.95
    ink: float = 0.08


@dataclass
class RenderedWord:
    image: np.ndarray  # [3, 32, W] in [0,1]
    char_boxes: list[tuple[int, int]]
    text: str
    background: float = 0.95


def render_word(text: str, style: RenderStyle | None = None) -> RenderedWord:
    """Rasterize a word left to right at height 32, 16 columns per glyph."""
    if not text:
        raise ValueError("cannot render an empty word")
    style = style or RenderStyle()
    w = GLYPH_W * len(text)
    img = np.full((GLYPH_H, w), style.background, dtype=np.float32)
    boxes = []
    for i, ch in enumerate(text):
        mask = glyph_mask(ch)
        x0 = i * GLYPH_W
        img[:, x0:x0 + GLYPH_W] = (style.background * (1 - mask) + style.ink * mask)
        boxes.append((x0, x0 + GLYPH_W))
    rgb = np.repeat(img[None], 3, axis=0)
    return RenderedWord(rgb, boxes, text, style.background)


# -- text mutation -----------------------------------------------------------


def levenshtein(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _draw_edits(text: str, rng: np.random.Generator, charset: str):
    """One random edit set: script entries are (op, src_pos, tgt_pos)."""
    k = int(rng.integers(1, 5))
    ops = []
    for _ in range(k):
        r = rng.random()
        op = "sub" if r < 0.8 else ("ins" if r < 0.9 else "del")
        if op != "sub" and any(o != "sub" for o in ops):
            op = "sub"  # one indel at most, keeps |len diff| <= 1
        ops.append(op)
    indel = next((o for o in ops if o != "sub"), None)
    if indel == "del" and len(text) == 1:
        indel = None
    n_sub = min(len([o for o in ops if o == "sub"]), len(text))
    if n_sub == 0 and indel is None:
        n_sub = 1

    sub_src = sorted(rng.choice(len(text), size=n_sub, replace=False).tolist())
    if indel == "del":
        free = [p for p in range(len(text)) if p not in sub_src]
        dpos = free[int(rng.integers(len(free)))] if free else None
        if dpos is None:
            indel = None  # every position already substituted
    chars = list(text)
    for pos in sub_src:
        choices = [c for c in charset if c != text[pos]]
        chars[pos] = choices[int(rng.integers(len(choices)))]

    script = []
    if indel == "ins":
        ipos = int(rng.integers(0, len(chars) + 1))
        chars.insert(ipos, charset[int(rng.integers(len(charset)))])
        script = [("sub", sp, sp if sp < ipos else sp + 1) for sp in sub_src]
        script.append(("ins", None, ipos))
    elif indel == "del":
        del chars[dpos]
        script = [("sub", sp, sp if sp < dpos else sp - 1) for sp in sub_src]
        script.append(("del", dpos, None))
    else:
        script = [("sub", sp, sp) for sp in sub_src]
    return "".join(chars), script


def mutate(text: str, rng: np.random.Generator, charset: str = DEFAULT_CHARSET):
    """Random character edits: ~80% substitutions, at most one insertion or
    deletion, so the length difference never exceeds 1. The returned script
    entries are (op, source_pos, target_pos); Levenshtein distance equals the
    script length (resampled otherwise)."""
    if not text:
        raise ValueError("cannot mutate an empty word")
    for _ in range(64):
        new_text, script = _draw_edits(text, rng, charset)
        if new_text != text and levenshtein(text, new_text) == len(script):
            return new_text, script
    raise RuntimeError(f"could not draw a clean edit for {text!r}")


# -- ground truth ------------------------------------------------------------


def make_ground_truth(src: RenderedWord, tgt: RenderedWord, script):
    """Bidirectional pseudo-segmentation rectangles from an edit script.

    g_st marks source characters that are substituted or deleted; g_ts marks
    target characters that are substituted or inserted. Rectangles span the
    character's column box at full height.
    """
    g_st = np.zeros((1, GLYPH_H, src.image.shape[2]), dtype=np.float32)
    g_ts = np.zeros((1, GLYPH_H, tgt.image.shape[2]), dtype=np.float32)
    for op, sp, tp in script:
        if op not in ("sub", "ins", "del"):
            raise ValueError(f"unknown edit op {op!r}")
        if op in ("sub", "del"):
            if sp is None or not (0 <= sp < len(src.char_boxes)):
                raise ValueError(f"script position {sp} inconsistent with source {src.text!r}")
            x0, x1 = src.char_boxes[sp]
            g_st[:, :, x0:x1] = 1.0
        if op in ("sub", "ins"):
            if tp is None or not (0 <= tp < len(tgt.char_boxes)):
                raise ValueError(f"script position {tp} inconsistent with target {tgt.text!r}")
            x0, x1 = tgt.char_boxes[tp]
            g_ts[:, :, x0:x1] = 1.0
    return g_st, g_ts


# -- augmentation ------------------------------------------------------------


@dataclass
class AugmentParams:
    p_bleed: float = 0.3
    p_blur: float = 0.3
    p_noise: float = 0.5
    p_scale: float = 0.3
    p_underline: float = 0.1
    p_overline: float = 0.1
    p_cross: float = 0.1
    p_rotate: float = 0.3
    noise_sigma: float = 0.05

    @classmethod
    def off(cls) -> "AugmentParams":
        return cls(0, 0, 0, 0, 0, 0, 0, 0, 0.0)


def augment(img: np.ndarray, rng: np.random.Generator,
            params: AugmentParams | None = None,
            bleed_source: np.ndarray | None = None,
            background: float = 1.0) -> np.ndarray:
    """Apply scan-like degradations; the output stays clamped to [0,1].

    Ground-truth rectangles are not transformed: edits remain described in the
    clean character geometry.
    """
    params = params or AugmentParams()
    out = img.copy()
    if bleed_source is not None and rng.random() < params.p_bleed:
        # faint mirrored text showing through from the back of the page
        flipped = bleed_source[:, :, ::-1]
        w = min(out.shape[2], flipped.shape[2])
        strength = rng.uniform(0.1, 0.25)
        ghost = flipped[:, :, :w] * 0.3 + background * 0.7
        out[:, :, :w] = out[:, :, :w] * (1 - strength) + ghost * strength
    if rng.random() < params.p_scale:
        factor = rng.uniform(0.9, 1.1)
        h, w = out.shape[1], out.shape[2]
        zoomed = ndimage.zoom(out, (1, factor, factor), order=1, mode="nearest")
        fixed = np.full_like(out, background)
        zh, zw = zoomed.shape[1], zoomed.shape[2]
        if zh >= h:
            y0, x0 = (zh - h) // 2, max(0, (zw - w) // 2)
            fixed = zoomed[:, y0:y0 + h, x0:x0 + w]
            if fixed.shape[2] < w:
                fixed = np.pad(fixed, ((0, 0), (0, 0), (0, w - fixed.shape[2])),
                               constant_values=background)
        else:
            y0, x0 = (h - zh) // 2, (w - zw) // 2 if zw < w else 0
            fixed[:, y0:y0 + zh, x0:x0 + min(zw, w)] = zoomed[:, :, :min(zw, w)]
        out = np.ascontiguousarray(fixed)
    if rng.random() < params.p_rotate:
        angle = rng.uniform(-3.0, 3.0)
        out = ndimage.rotate(out, angle, axes=(1, 2), reshape=False, order=1,
                             mode="constant", cval=background)
    if rng.random() < params.p_blur:
        out = ndimage.gaussian_filter(out, sigma=(0, rng.uniform(0.4, 0.9), rng.uniform(0.4, 0.9)))
    for p, row in ((params.p_underline, GLYPH_H - 3), (params.p_overline, 1),
                   (params.p_cross, GLYPH_H // 2)):
        if rng.random() < p:
            thickness = int(rng.integers(1, 3))
            out[:, row:row + thickness, :] = 0.1
    if rng.random() < params.p_noise:
        sigma = min(params.noise_sigma, 0.1)
        out = out + rng.normal(0, sigma, size=out.shape).astype(np.float32)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# -- sample and batch assembly -----------------------------------------------


@dataclass
class ChangeSample:
    source: RenderedWord
    target: RenderedWord
    g_st: np.ndarray  # [1, 32, W_s]
    g_ts: np.ndarray  # [1, 32, W_t]
    label: str  # "identical" | "different"
    edit_script: list


@dataclass
class GeneratorConfig:
    augment: AugmentParams = field(default_factory=AugmentParams)
    source_noise: bool = False  # light source-side noise when enabled
    charset: str = DEFAULT_CHARSET


def make_sample(corpus: Corpus, seed: int, index: int,
                cfg: GeneratorConfig | None = None) -> ChangeSample:
    """Pure function of (corpus, seed, index): reproducible across workers."""
    cfg = cfg or GeneratorConfig()
    rng = np.random.default_rng(np.random.SeedSequence([corpus.seed, seed, index]))
    word = corpus.words[int(rng.integers(len(corpus.words)))]
    changed = index % 2 == 1  # even indices identical, odd different
    src = render_word(word, RenderStyle())
    if cfg.source_noise:
        src.image = augment(src.image, rng, AugmentParams(0, 0, 1.0, 0, 0, 0, 0, 0, 0.02),
                            background=src.background)
    if changed:
        new_text, script = mutate(word, rng, cfg.charset)
        label = "different"
    else:
        new_text, script = word, []
        label = "identical"
    tgt_style = RenderStyle(background=float(rng.uniform(0.75, 1.0)),
                            ink=float(rng.uniform(0.02, 0.25)))
    tgt = render_word(new_text, tgt_style)
    g_st, g_ts = make_ground_truth(src, tgt, script)
    bleed_word = corpus.words[int(rng.integers(len(corpus.words)))]
    bleed = render_word(bleed_word, tgt_style).image
    tgt.image = augment(tgt.image, rng, cfg.augment, bleed_source=bleed,
                        background=tgt.background)
    return ChangeSample(src, tgt, g_st, g_ts, label, script)


@dataclass
class Batch:
    sources: np.ndarray  # [B, 3, 32, Wmax]
    targets: np.ndarray
    g_st: np.ndarray  # [B, 1, 32, Wmax]
    g_ts: np.ndarray
    labels: list[str]
    widths: list[tuple[int, int]]  # (source width, target width) per item


def _pad_right(img: np.ndarray, w: int, value: float) -> np.ndarray:
    pad = w - img.shape[-1]
    if pad == 0:
        return img
    return np.pad(img, [(0, 0)] * (img.ndim - 1) + [(0, pad)], constant_values=value)


def collate(samples: list[ChangeSample], pad_multiple: int = 8) -> Batch:
    wmax = max(max(s.source.image.shape[2], s.target.image.shape[2]) for s in samples)
    wmax = ((wmax + pad_multiple - 1) // pad_multiple) * pad_multiple
    sources = np.stack([_pad_right(s.source.image, wmax, s.source.background) for s in samples])
    targets = np.stack([_pad_right(s.target.image, wmax, s.target.background) for s in samples])
    g_st = np.stack([_pad_right(s.g_st, wmax, 0.0) for s in samples])
    g_ts = np.stack([_pad_right(s.g_ts, wmax, 0.0) for s in samples])
    widths = [(s.source.image.shape[2], s.target.image.shape[2]) for s in samples]
    return Batch(sources, targets, g_st, g_ts, [s.label for s in samples], widths)


def make_batch(corpus: Corpus, batch_size: int, rng: np.random.Generator,
               cfg: GeneratorConfig | None = None, base_index: int = 0) -> Batch:
    """Balanced batch: exactly half identical, half different, shuffled."""
    if batch_size % 2:
        raise ValueError(f"batch size must be even, got {batch_size}")
    seed = int(rng.integers(2 ** 31))
    samples = [make_sample(corpus, seed, base_index + i, cfg) for i in range(batch_size)]
    order = rng.permutation(batch_size)
    return collate([samples[i] for i in order])


# -- on-disk datasets --------------------------------------------------------


def save_image(path, img: np.ndarray):
    arr = np.clip(img * 255.0, 0, 255).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(arr, "RGB").save(path)


def load_image(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def _rects_from_map(g: np.ndarray) -> list[list[int]]:
    cols = np.nonzero(g[0].max(axis=0) > 0.5)[0]
    rects = []
    if cols.size:
        start = prev = int(cols[0])
        for c in cols[1:]:
            if c != prev + 1:
                rects.append([start, prev + 1])
                start = int(c)
            prev = int(c)
        rects.append([start, prev + 1])
    return rects


def map_from_rects(rects, width: int) -> np.ndarray:
    g = np.zeros((1, GLYPH_H, width), dtype=np.float32)
    for x0, x1 in rects:
        g[:, :, x0:x1] = 1.0
    return g


def write_dataset(out_dir, corpus: Corpus, count: int, seed: int,
                  cfg: GeneratorConfig | None = None, language: str | None = None):
    """Dump count samples as PNG pairs plus per-pair JSON metadata."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        s = make_sample(corpus, seed, i, cfg)
        stem = f"{i:05d}"
        save_image(out / f"{stem}_src.png", s.source.image)
        save_image(out / f"{stem}_tgt.png", s.target.image)
        meta = {
            "source_text": s.source.text,
            "target_text": s.target.text,
            "label": s.label,
            "edit_script": [[op, sp, tp] for op, sp, tp in s.edit_script],
            "source_boxes": [list(b) for b in s.source.char_boxes],
            "target_boxes": [list(b) for b in s.target.char_boxes],
            "gt_st_rects": _rects_from_map(s.g_st),
            "gt_ts_rects": _rects_from_map(s.g_ts),
        }
        if language:
            meta["language"] = language
        (out / f"{stem}_meta.json").write_text(json.dumps(meta, indent=1), encoding="utf-8")
        entries.append({"id": stem, "label": s.label})
    digest = hashlib.sha256(
        json.dumps(entries, sort_keys=True).encode()).hexdigest()
    manifest = {"count": count, "seed": seed, "entries": entries, "hash": digest}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return manifest


def read_dataset(dataset_dir):
    """Yield (source image, target image, meta dict) per manifest entry."""
    root = Path(dataset_dir)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    for entry in manifest["entries"]:
        stem = entry["id"]
        meta = json.loads((root / f"{stem}_meta.json").read_text(encoding="utf-8"))
        yield load_image(root / f"{stem}_src.png"), load_image(root / f"{stem}_tgt.png"), meta
