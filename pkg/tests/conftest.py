import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from paragen.config import TrainConfig
from paragen.corpus import (Dataset, GrammarSpec, build_vocab, make_split,
                            normalize_regions, synthesize_dataset)
from paragen.tensor import RngStream


def make_synthetic_dataset(cfg: TrainConfig, n_images: int, seed: int = 7,
                           n_val: int = 1, n_test: int = 1,
                           objects_per_image: int = 3,
                           n_object_types: int = 8,
                           noise: float = 0.05) -> Dataset:
    rng = RngStream(seed)
    spec = GrammarSpec(objects_per_image=objects_per_image,
                       n_object_types=n_object_types,
                       d_raw=cfg.d_raw, m_regions=cfg.m_regions, noise=noise)
    data = synthesize_dataset(rng, n_images, spec)
    records = {r.image_id: r for r in data.records}
    features = {rs.image_id: normalize_regions(rs, cfg.m_regions)
                for rs in data.region_sets}
    vocab = build_vocab(records.values(), min_count=cfg.min_count)
    split = make_split(list(records), n_val, n_test)
    return Dataset(records=records, features=features, split=split, vocab=vocab)


@pytest.fixture
def reduced_cfg():
    return TrainConfig.reduced()


@pytest.fixture
def tiny_dataset(reduced_cfg):
    return make_synthetic_dataset(reduced_cfg, 8)
