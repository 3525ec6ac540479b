"""Sklearn-style estimator facade over the full pipeline.

`fit` takes per-image region features plus gold paragraph texts, builds
the vocabulary and lexicon, and runs the two training phases; `predict`
greedily decodes paragraphs for new feature sets.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from paragen.config import TrainConfig
from paragen.corpus import (Dataset, DatasetRecord, RawRegionSet, SplitSpec,
                            build_vocab, normalize_regions)
from paragen.training import (Phase1Trainer, Phase2Trainer, build_cider,
                              model_from_checkpoint)


def _as_region_set(x, idx: int) -> RawRegionSet:
    if isinstance(x, RawRegionSet):
        return x
    feats = np.asarray(x, dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError(f"X[{idx}] must be a 2-D (regions, features) array")
    # descending pseudo-objectness preserves the given row order
    obj = np.linspace(1.0, 0.5, feats.shape[0]).tolist()
    return RawRegionSet(f"x{idx:06d}", feats, obj)


class ParagraphCaptioner(BaseEstimator):
    """Topic-conditioned paragraph generator with a fit/predict surface.

    Parameters mirror `TrainConfig`; anything not listed here keeps its
    config default.
    """

    def __init__(self, m_regions=50, d_raw=4096, d_region=1024, d_attn=512,
                 d_word=512, hidden=1000, conv_width=26, conv_stride=2,
                 max_sentences=6, max_words=20, beta=8.0, lr_phase1=1e-4,
                 lr_phase2=5e-6, min_count=4, dropout=0.5, seed=0,
                 batch_size=8, phase1_epochs=10, phase2_updates=0,
                 val_fraction=0.0):
        self.m_regions = m_regions
        self.d_raw = d_raw
        self.d_region = d_region
        self.d_attn = d_attn
        self.d_word = d_word
        self.hidden = hidden
        self.conv_width = conv_width
        self.conv_stride = conv_stride
        self.max_sentences = max_sentences
        self.max_words = max_words
        self.beta = beta
        self.lr_phase1 = lr_phase1
        self.lr_phase2 = lr_phase2
        self.min_count = min_count
        self.dropout = dropout
        self.seed = seed
        self.batch_size = batch_size
        self.phase1_epochs = phase1_epochs
        self.phase2_updates = phase2_updates
        self.val_fraction = val_fraction

    def _config(self) -> TrainConfig:
        return TrainConfig(
            m_regions=self.m_regions, d_raw=self.d_raw, d_region=self.d_region,
            d_attn=self.d_attn, d_word=self.d_word, hidden=self.hidden,
            conv_width=self.conv_width, conv_stride=self.conv_stride,
            max_sentences=self.max_sentences, max_words=self.max_words,
            beta=self.beta, lr_phase1=self.lr_phase1, lr_phase2=self.lr_phase2,
            min_count=self.min_count, dropout=self.dropout, seed=self.seed,
            batch_size=self.batch_size)

    def fit(self, X, y):
        """X: list of (M, D0) arrays or RawRegionSet; y: paragraph strings."""
        if len(X) != len(y):
            raise ValueError("X and y must have the same length")
        if len(X) == 0:
            raise ValueError("cannot fit on an empty dataset")
        cfg = self._config()
        region_sets, records = {}, {}
        for i, (x, text) in enumerate(zip(X, y)):
            rs = normalize_regions(_as_region_set(x, i), cfg.m_regions)
            region_sets[rs.image_id] = rs
            records[rs.image_id] = DatasetRecord(rs.image_id, text)
        ids = list(records)
        n_val = int(round(self.val_fraction * len(ids)))
        split = SplitSpec(train=ids[:len(ids) - n_val],
                          val=ids[len(ids) - n_val:], test=[])
        vocab = build_vocab(records.values(), min_count=cfg.min_count)
        dataset = Dataset(records=records, features=region_sets,
                          split=split, vocab=vocab)
        trainer = Phase1Trainer(cfg, dataset)
        ckpt = trainer.run(epochs=self.phase1_epochs,
                           select_best=bool(split.val))
        if self.phase2_updates:
            ckpt = Phase2Trainer(cfg, dataset, ckpt).run(self.phase2_updates)
        self.checkpoint_ = ckpt
        self.model_ = model_from_checkpoint(ckpt)
        self.cider_ = build_cider(dataset)
        return self

    def predict(self, X):
        """Greedy-decoded paragraph strings, one per feature set."""
        check_is_fitted(self, "model_")
        cfg = self.checkpoint_.config
        out = []
        for i, x in enumerate(X):
            rs = normalize_regions(_as_region_set(x, i), cfg.m_regions)
            out.append(self.model_.decode(rs, mode="greedy").paragraph.text)
        return out

    def score(self, X, y):
        """Mean CIDEr-D of greedy decodes against the gold paragraphs."""
        check_is_fitted(self, "model_")
        from paragen.corpus import CorpusError, tokenize
        scores = []
        for text, gold in zip(self.predict(X), y):
            try:
                cand = [t for s in tokenize(text) for t in s]
            except CorpusError:   # decode produced no words yet
                cand = []
            ref = [t for s in tokenize(gold, max_sentences=10 ** 9,
                                       max_words=10 ** 9) for t in s]
            scores.append(self.cider_.score(cand, [ref]))
        return float(np.mean(scores)) if scores else 0.0
