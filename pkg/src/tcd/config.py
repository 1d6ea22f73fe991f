"""Run configuration: a plain-text file of dotted key-value pairs.

Grammar, one entry per line::

    # comment
    section.key = value          e.g. train.epochs = 20
    model.channels = 16,16,64    tuples are comma-separated
    model.no_cm = true           booleans are true/false

Unknown keys are rejected so typos fail loudly. The TCD_CONFIG environment
variable may point at a default config file.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .backbone import BackboneConfig
from .correlation import WindowSpec
from .datagen import AugmentParams
from .model import ModelConfig

ENV_VAR = "TCD_CONFIG"


@dataclass
class ModelSection:
    channels: tuple = (64, 64, 512)
    blocks_per_stage: tuple = (1, 1, 1)
    decoder_channels: int = 32
    win2: tuple = (2, 4)
    win3: tuple = (1, 2)
    no_cm: bool = False
    no_fa: bool = False
    no_ca: bool = False
    one_way: bool = False
    independent_decoders: bool = False


@dataclass
class TrainSection:
    epochs: int = 200
    batch_size: int = 8
    lr: float = 1e-4
    w_d: float = 10.0
    seed: int = 0
    samples_per_epoch: int = 3000
    val_samples: int = 200


@dataclass
class DataSection:
    train_corpus: str = ""
    val_corpus: str = ""
    word_min_len: int = 3
    word_max_len: int = 8
    p_bleed: float = 0.3
    p_blur: float = 0.3
    p_noise: float = 0.5
    p_scale: float = 0.3
    p_underline: float = 0.1
    p_overline: float = 0.1
    p_cross: float = 0.1
    p_rotate: float = 0.3
    noise_sigma: float = 0.05


@dataclass
class EvalSection:
    threshold: float = 0.5
    min_pixels: int = 0


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def model_config(self) -> ModelConfig:
        m = self.model
        return ModelConfig(
            backbone=BackboneConfig(channels=tuple(m.channels),
                                    blocks_per_stage=tuple(m.blocks_per_stage)),
            win2=WindowSpec(*m.win2), win3=WindowSpec(*m.win3),
            decoder_channels=m.decoder_channels,
            no_cm=m.no_cm, no_fa=m.no_fa, no_ca=m.no_ca,
            one_way=m.one_way, independent_decoders=m.independent_decoders)

    def augment_params(self) -> AugmentParams:
        d = self.data
        return AugmentParams(d.p_bleed, d.p_blur, d.p_noise, d.p_scale,
                             d.p_underline, d.p_overline, d.p_cross, d.p_rotate,
                             d.noise_sigma)

    def to_flat(self) -> dict:
        out = {}
        for section, values in asdict(self).items():
            for key, v in values.items():
                if isinstance(v, tuple):
                    v = ",".join(str(x) for x in v)
                elif isinstance(v, bool):
                    v = "true" if v else "false"
                out[f"{section}.{key}"] = str(v)
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.to_flat().items()))


def _parse_value(raw: str, current):
    if isinstance(current, bool):
        low = raw.lower()
        if low not in ("true", "false"):
            raise ValueError(f"expected true/false, got {raw!r}")
        return low == "true"
    if isinstance(current, tuple):
        return tuple(int(x) for x in raw.split(","))
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def apply_entries(cfg: RunConfig, entries: dict) -> RunConfig:
    """Return a copy of cfg with the dotted-key entries applied."""
    sections = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for dotted, raw in entries.items():
        if "." not in dotted:
            raise ValueError(f"config key {dotted!r} is missing its section prefix")
        section, key = dotted.split(".", 1)
        if section not in sections:
            raise ValueError(f"unknown config section {section!r} in {dotted!r}")
        sec = sections[section]
        if not any(f.name == key for f in fields(sec)):
            raise ValueError(f"unknown config key {dotted!r}")
        try:
            value = _parse_value(str(raw).strip(), getattr(sec, key))
        except ValueError as e:
            raise ValueError(f"bad value for {dotted!r}: {e}") from e
        sections[section] = replace(sec, **{key: value})
    return RunConfig(**sections)


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        entries[key.strip()] = value.strip()
    return apply_entries(base or RunConfig(), entries)


def load_config(path=None, base: RunConfig | None = None) -> RunConfig:
    """Load from path, falling back to $TCD_CONFIG, else defaults."""
    if path is None:
        path = os.environ.get(ENV_VAR)
    if path is None:
        return base or RunConfig()
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base)
