"""Training configuration with defaults for the full-size model."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # architecture
    m_regions: int = 50          # regions per image (M)
    d_raw: int = 4096            # raw detector feature width (D0)
    d_region: int = 1024         # embedded region feature width (D1)
    d_attn: int = 512            # attention hidden width (D3)
    d_word: int = 512            # word embedding width
    hidden: int = 1000           # LSTM hidden width (H)
    conv_width: int = 26         # topic conv filter width (C1)
    conv_stride: int = 2         # topic conv stride (C2)
    max_sentences: int = 6       # topic count / sentence cap (K)
    max_words: int = 20          # per-sentence token cap
    # training
    beta: float = 8.0            # coverage reward weight
    lr_phase1: float = 1e-4
    lr_phase2: float = 5e-6
    min_count: int = 4
    dropout: float = 0.5
    seed: int = 0
    batch_size: int = 8
    epochs_phase1: int = 30
    updates_phase2: int = 3000
    patience: int = 5
    lambda_rec: float = 1.0
    lambda_stop: float = 1.0
    lexicon_size: int = 1000

    def __post_init__(self):
        self.validate()

    @property
    def d_topic(self) -> int:
        """Topic vector width implied by the conv geometry."""
        return (self.d_region - self.conv_width) // self.conv_stride + 1

    def validate(self) -> None:
        if self.d_region < self.conv_width:
            raise ConfigError("region width smaller than conv filter width")
        if (self.d_region - self.conv_width) % self.conv_stride != 0:
            raise ConfigError(
                f"(d_region - conv_width) = {self.d_region - self.conv_width}"
                f" not divisible by stride {self.conv_stride}")
        for name in ("m_regions", "d_raw", "d_region", "d_attn", "d_word",
                     "hidden", "conv_width", "conv_stride", "max_sentences",
                     "max_words", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("lr_phase1", "lr_phase2"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def reduced(cls, **kw) -> "TrainConfig":
        """Desk-scale dims for tests and quick experiments."""
        base = dict(
            m_regions=4, d_raw=8, d_region=16, d_attn=8, d_word=8, hidden=8,
            conv_width=6, conv_stride=2, max_sentences=3, max_words=20,
            dropout=0.0, min_count=1, batch_size=8,
        )
        base.update(kw)
        return cls(**base)
