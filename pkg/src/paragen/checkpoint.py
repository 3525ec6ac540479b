"""Versioned binary checkpoint container.

Layout: magic bytes, format version (u32), header length (u64), JSON
header, then the named tensors as raw little-endian float64 in header
order. The header carries the config snapshot, vocabulary, lexicon,
step counter, rng state, and tensor names/shapes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from paragen.config import TrainConfig
from paragen.corpus import Vocabulary
from paragen.metrics import ObjectLexicon

MAGIC = b"PGCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    vocab: Vocabulary
    lexicon: ObjectLexicon
    arrays: dict                 # name -> np.ndarray (params, bn stats, adam)
    step: int = 0
    phase: str = "1"
    rng_state: dict = None
    best_val: float = None
    extra: dict = field(default_factory=dict)

    def save(self, path) -> None:
        names = sorted(self.arrays)
        header = {
            "config": self.config.to_dict(),
            "vocab": self.vocab.to_json(),
            "lexicon": {"tokens": self.lexicon.tokens,
                        "frequencies": self.lexicon.frequencies},
            "step": self.step,
            "phase": self.phase,
            "rng_state": self.rng_state,
            "best_val": self.best_val,
            "extra": self.extra,
            "tensors": [{"name": n, "shape": list(self.arrays[n].shape)}
                        for n in names],
        }
        blob = json.dumps(header).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", VERSION))
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            for n in names:
                fh.write(np.ascontiguousarray(self.arrays[n], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            if fh.read(4) != MAGIC:
                raise CheckpointError(f"{path}: bad magic bytes")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != VERSION:
                raise CheckpointError(f"{path}: unsupported version {version}")
            (hlen,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(hlen).decode("utf-8"))
            arrays = {}
            for spec in header["tensors"]:
                shape = tuple(spec["shape"])
                count = int(np.prod(shape)) if shape else 1
                buf = fh.read(8 * count)
                if len(buf) != 8 * count:
                    raise CheckpointError(f"{path}: truncated tensor {spec['name']}")
                arrays[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        return cls(
            config=TrainConfig.from_dict(header["config"]),
            vocab=Vocabulary.from_json(header["vocab"]),
            lexicon=ObjectLexicon(tokens=header["lexicon"]["tokens"],
                                  frequencies=header["lexicon"]["frequencies"]),
            arrays=arrays,
            step=header["step"],
            phase=header["phase"],
            rng_state=header["rng_state"],
            best_val=header["best_val"],
            extra=header.get("extra", {}),
        )

    def copy(self) -> "Checkpoint":
        return Checkpoint(
            config=self.config, vocab=self.vocab, lexicon=self.lexicon,
            arrays={n: a.copy() for n, a in self.arrays.items()},
            step=self.step, phase=self.phase,
            rng_state=json.loads(json.dumps(self.rng_state)),
            best_val=self.best_val,
            extra=json.loads(json.dumps(self.extra)),
        )
