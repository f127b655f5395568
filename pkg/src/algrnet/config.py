"""Run configuration: INI-style ``key = value`` text with sections.

Sections map onto the dataclasses below; every field has a default so an
empty file is a valid configuration. Defaults follow the published
training recipe; the ``desk`` preset shrinks the network for CPU runs.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError


@dataclass
class ModelConfig:
    mode: str = "au"
    rules: str = "bp4d"
    input_size: int = 176
    in_channels: int = 3
    stem_width: int = 32
    channels: int = 64
    hidden: int = 64
    align_dim: int = 512
    region_hidden: int = 128
    head_hidden: int = 256
    fused_channels: int = 64
    refined_channels: int = 64
    num_landmarks: int = 49
    e_max: float = 0.3
    offset_max: float = 0.1
    init_scale: float = 0.14
    sigma_ratio: float = 0.5
    skip_bilstm: bool = True
    plain_bilstm: bool = False
    fusion_refine: bool = True
    fixed_scale: Optional[float] = None
    cell_state_mode: str = "aggregate"
    gate_sharing: str = "shared"

    @property
    def map_size(self):
        return self.input_size // 4


@dataclass
class DataConfig:
    manifest: str = ""
    source_size: int = 200
    flip: bool = True
    folds: int = 3
    fold: int = 0
    ocular: tuple = (19, 28)
    flip_table: str = ""


@dataclass
class TrainConfig:
    seed: int = 0
    optimizer: str = "sgd"
    lr: float = 0.01
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 0.0005
    lr_decay: float = 0.5
    decay_every: int = 2
    epochs: int = 20
    max_steps: int = 0
    batch_size: int = 8
    clip_grad: float = 0.0
    mean_shape_init: bool = True
    lambda_align: float = 0.5
    tau: float = 1.0
    dice_denominator: str = "sum_squares"
    out_dir: str = "runs/default"


@dataclass
class SynthConfig:
    mode: str = "au"
    rules: str = "bp4d"
    subjects: int = 12
    samples_per_subject: int = 8
    image_size: int = 200
    seed: int = 0
    au_rate: float = 0.4
    blob_amplitude: float = 110.0
    noise: float = 4.0


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    SECTIONS = ("model", "data", "train", "synth")

    def to_text(self) -> str:
        out = []
        for name in self.SECTIONS:
            out.append(f"[{name}]")
            for f in dataclasses.fields(getattr(self, name)):
                out.append(f"{f.name} = {_format(getattr(getattr(self, name), f.name))}")
            out.append("")
        return "\n".join(out)

    def model_hash(self) -> str:
        lines = [f"{f.name}={_format(getattr(self.model, f.name))}"
                 for f in dataclasses.fields(self.model)]
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()

    def validate(self):
        m = self.model
        if m.mode not in ("au", "palsy"):
            raise ConfigError(f"unknown mode {m.mode!r}")
        if m.input_size % 4:
            raise ConfigError("input_size must be divisible by the stem stride (4)")
        if not 0 < m.init_scale < m.e_max:
            raise ConfigError("init_scale must lie in (0, e_max)")
        if m.fixed_scale is not None and not m.fixed_scale > 0:
            raise ConfigError("fixed_scale must be positive")
        if self.data.source_size < m.input_size:
            raise ConfigError("source_size must be at least input_size")
        if self.train.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.train.optimizer!r}")
        if self.train.batch_size < 1 or self.train.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")
        if not 0 <= self.data.fold < self.data.folds:
            raise ConfigError(f"fold {self.data.fold} outside 0..{self.data.folds - 1}")
        return self


def _format(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return " ".join(str(v) for v in value)
    return str(value)


def _convert(raw: str, default, annotation: str):
    raw = raw.strip()
    if "Optional" in annotation:
        return None if raw in ("", "none", "None") else float(raw)
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(t) for t in raw.replace(",", " ").split())
    return raw


def apply_overrides(cfg: Config, section: str, values: dict) -> Config:
    target = getattr(cfg, section)
    known = {f.name: f for f in dataclasses.fields(target)}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown key [{section}] {key}")
        f = known[key]
        try:
            value = raw if not isinstance(raw, str) else _convert(raw, getattr(target, key), str(f.type))
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None
        setattr(target, key, value)
    return cfg


def parse_config(text: str) -> Config:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = Config()
    for section in parser.sections():
        if section not in Config.SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        apply_overrides(cfg, section, dict(parser[section]))
    seed = os.environ.get("ALGRNET_SEED")
    if seed:
        try:
            cfg.train.seed = int(seed)
            cfg.synth.seed = int(seed)
        except ValueError:
            raise ConfigError(f"ALGRNET_SEED must be an integer, got {seed!r}") from None
    return cfg.validate()


def load_config(path) -> Config:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config(path.read_text())
    # relative paths inside the file resolve against the file's directory
    for section, key in (("data", "manifest"), ("train", "out_dir"), ("data", "flip_table")):
        value = getattr(getattr(cfg, section), key)
        if value and not Path(value).is_absolute():
            setattr(getattr(cfg, section), key, str(path.parent / value))
    if cfg.model.rules not in ("bp4d", "disfa", "palsy") and not Path(cfg.model.rules).is_absolute():
        cfg.model.rules = str(path.parent / cfg.model.rules)
    return cfg


def desk_preset(mode="au", rules=None) -> Config:
    """Small CPU-friendly network (64 px input, 16 px maps, 16 channels)."""
    cfg = Config()
    rules = rules or ("palsy" if mode == "palsy" else "bp4d")
    apply_overrides(cfg, "model", dict(
        mode=mode, rules=rules, input_size=64, stem_width=16, channels=16, hidden=16,
        align_dim=64, region_hidden=32, head_hidden=64, fused_channels=16,
        refined_channels=16))
    apply_overrides(cfg, "data", dict(source_size=72))
    apply_overrides(cfg, "synth", dict(mode=mode, rules=rules, image_size=72,
                                       blob_amplitude=110.0))
    return cfg
